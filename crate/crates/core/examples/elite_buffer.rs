//! Keeps the highest-return trajectories of a random controller.

use dpglab::envs::{PointMassConfig, PointMassEnv, Trajectory};
use dpglab::replay::{EliteErb, FullErb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut env = PointMassEnv::new(PointMassConfig { horizon: 50, ..Default::default() })?;
    let mut full = FullErb::new(10_000, 2, 1)?;
    let mut elite = EliteErb::new(5)?;
    for episode in 0..40 {
        let gain: f64 = rng.random_range(0.0..3.0);
        let mut s = env.reset(&mut rng);
        let mut traj = Trajectory::new();
        loop {
            let a = (-gain * s[0] - 0.5 * s[1]).clamp(-1.0, 1.0);
            let tr = env.step(&[a])?;
            full.push(&tr)?;
            s = tr.next_state.clone();
            let done = tr.terminal;
            traj.push(tr);
            if done {
                break;
            }
        }
        let ret = traj.episodic_return();
        if elite.end_trajectory(traj)? {
            println!("episode {episode:>2}: return {ret:>9.3} admitted");
        }
    }
    println!("\nfull buffer: {} transitions", full.len());
    for e in elite.entries() {
        println!("elite #{:<3} return {:>9.3}", e.sequence, e.episodic_return);
    }
    let batch = elite.sample(8, &mut rng)?;
    println!("sampled {} elite transitions", batch.len());
    Ok(())
}
