//! Spread of the three gradient estimators at a training checkpoint.

use dpglab::agent::{dpg_variance_probe, Agent, MergeConfig, Variant};
use dpglab::envs::{PointMassConfig, PointMassEnv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map_or(Ok(5_000), |s| s.parse())?;
    let mut env = PointMassEnv::new(PointMassConfig::default())?;
    let mut agent = Agent::new(MergeConfig::default(), Variant::Td3TwoStep, 2, 1, 0)?;
    agent.train(&mut env, steps)?;
    let p = dpg_variance_probe(&agent, 256, 0)?;
    println!("step {} over {} resamples", p.step, p.resamples);
    println!("conventional  {:.6e}", p.conventional);
    println!("interpolation {:.6e}", p.interpolation);
    println!("two-step      {:.6e}", p.two_step);
    Ok(())
}
