//! The point-mass task and its saturated LQR reference controller.

use dpglab::envs::{lqr_gain, lqr_oracle_return, PointMassConfig, PointMassEnv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = PointMassConfig::default();
    let k = lqr_gain(&cfg)?;
    println!("gain: a = -({:.4}·x + {:.4}·v)", k[0], k[1]);
    println!("oracle return: {:.4}", lqr_oracle_return(&cfg)?);

    let mut env = PointMassEnv::new(cfg)?;
    let mut s = env.reset_to(1.0, 0.0);
    let mut total = 0.0;
    for t in 0.. {
        let a = (-(k[0] * s[0] + k[1] * s[1])).clamp(-1.0, 1.0);
        let tr = env.step(&[a])?;
        total += tr.reward;
        if t % 40 == 0 {
            println!("t={t:>3} x={:+.4} v={:+.4} a={a:+.4}", s[0], s[1]);
        }
        s = tr.next_state;
        if tr.terminal {
            break;
        }
    }
    println!("return from x=1: {total:.4}, clipped actions: {}", env.clip_count());
    Ok(())
}
