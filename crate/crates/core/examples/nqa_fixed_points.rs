//! Simulated fixed points of the three update rules on the noisy quadratic model.

use dpglab::nqa::{closed_form, verify, QuadraticSpec, RuleTag};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = QuadraticSpec::reference_scalar();
    for rule in RuleTag::ALL {
        let l = closed_form(&spec, rule)?;
        println!("{:<14} mean {:.6} var {:.6}", rule.name(), l.mean[0], l.var[0]);
    }
    let report = verify(&spec, 5_000, 1_000, 0)?;
    println!("\n{}", report.summary());
    println!("all limits matched: {}", report.passed());
    Ok(())
}
