//! Fits the conditional VAE to a state-dependent behavior and decodes its reference actions.

use dpglab::envs::Transition;
use dpglab::genmodel::{vae_train_step, VaeConfig, VaeModel};
use dpglab::replay::{Batch, Source};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn behavior(s: &[f64]) -> f64 {
    (-1.5 * s[0] - 0.4 * s[1]).tanh()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut vae = VaeModel::new(2, 1, &VaeConfig::default(), &mut rng)?;
    for step in 0..=3000 {
        let items: Vec<Transition> = (0..64)
            .map(|_| {
                let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let a = behavior(&s);
                Transition { next_state: s.clone(), state: s, action: vec![a], reward: 0.0, terminal: false, truncated: false }
            })
            .collect();
        let batch = Batch::from_transitions(Source::Elite, &items)?;
        let loss = vae_train_step(&mut vae, &batch, &mut rng)?;
        if step % 500 == 0 {
            println!("step {step:>4} loss {loss:.5}");
        }
    }
    for s in [[0.5, 0.0], [-0.3, 0.8], [0.0, -1.0]] {
        println!("s={s:?} behavior {:+.4} reference {:+.4}", behavior(&s), vae.reference_action(&s)?[0]);
    }
    Ok(())
}
