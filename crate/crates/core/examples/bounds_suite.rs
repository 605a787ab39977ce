//! Exact bound checks on random finite MDPs.

use std::collections::BTreeMap;

use dpglab::bounds::run_instance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: u64 = std::env::args().nth(1).map_or(Ok(50), |s| s.parse())?;
    let mut worst: BTreeMap<&str, (f64, u64)> = BTreeMap::new();
    let mut failed = 0;
    for seed in 0..n {
        let rep = run_instance(seed, 0.1, 50)?;
        for c in &rep.checks {
            failed += usize::from(!c.passed());
            let e = worst.entry(c.id).or_insert((f64::INFINITY, seed));
            if c.slack() < e.0 {
                *e = (c.slack(), seed);
            }
        }
    }
    println!("{n} instances, {failed} failed checks");
    for (id, (slack, seed)) in worst {
        println!("{id:<18} min slack {slack:>11.3e} (seed {seed})");
    }
    Ok(())
}
