//! Compares every analytic gradient against central differences on the architecture grid.

use dpglab::agent::gradient_suite;
use dpglab::numcore::gradcheck::{architecture_grid, check_architecture};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:<32} {:>12} {:>12}", "architecture", "params", "inputs");
    for (i, arch) in architecture_grid().iter().enumerate() {
        let r = check_architecture(arch, i as u64)?;
        println!("{:<32} {:>12.2e} {:>12.2e}", r.label, r.param_rel_err, r.input_rel_err);
    }
    let reports = gradient_suite(0)?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let worst = reports.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).expect("non-empty grid");
    println!("\n{} operation checks, {failed} failed", reports.len());
    println!("worst: {} on {} at {:.2e}", worst.op.name(), worst.architecture, worst.rel_err);
    Ok(())
}
