//! Trains one variant on the point mass and prints its learning curve.
//!
//! `cargo run --release --example train_point_mass -- td3_2m 30000 0`

use dpglab::agent::{Agent, MergeConfig, Variant};
use dpglab::envs::{lqr_oracle_return, PointMassConfig, PointMassEnv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = Variant::parse(args.first().map_or("td3_2m", String::as_str)).ok_or("unknown variant")?;
    let steps: u64 = args.get(1).map_or(Ok(10_000), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;

    let cfg = PointMassConfig::default();
    let mut env = PointMassEnv::new(cfg.clone())?;
    let mut agent = Agent::new(MergeConfig::default(), variant, PointMassEnv::STATE_DIM, PointMassEnv::ACTION_DIM, seed)?;
    let curve = agent.train(&mut env, steps)?;
    for (step, ret) in curve.eval_points() {
        println!("step {step:>6} eval {ret:>12.3}");
    }
    println!("lqr oracle {:.3}", lqr_oracle_return(&cfg)?);
    println!("{} policy updates, {} elite trajectories", agent.policy_updates(), agent.elite.len());
    Ok(())
}
