//! Drives the harness from a config text, as the binary does.

use dpglab::cli::{parse_config, run, RunConfig};

const CONFIG: &str = "
# quick bound and gradient sweep
command = bounds
seeds = 0,1
bounds_instances = 25
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, CONFIG)?;
    let out = format!("--out={}", dir.path().join("out").display());
    let cfg: RunConfig = parse_config(Some(&path), &[out])?;
    let outcome = run(&cfg)?;
    print!("{}", outcome.summary);
    for f in &outcome.files {
        println!("wrote {}", f.strip_prefix(dir.path())?.display());
    }
    Ok(())
}
