//! Conventional, elite, interpolated and two-step policy gradients on an analytic critic.

use dpglab::agent::{conventional_dpg, elite_dpg, interpolation_merge, two_step_merge, QuadraticCritic};
use dpglab::numcore::{Activation, NetworkParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut policy = NetworkParams::mlp(2, &[8], 2, Activation::Tanh, Activation::Tanh)?;
    policy.init_uniform(&mut rng);
    let critic = QuadraticCritic::tracking(2);
    let full: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let elite: Vec<f64> = (0..16).map(|_| rng.random_range(-0.5..0.5)).collect();
    let refs: Vec<f64> = elite.iter().map(|s| 0.9 * s).collect();

    let (lambda, alpha, upsilon) = (0.1, 0.001, 0.25);
    let g_c = conventional_dpg(&policy, &critic, &full)?;
    let g_e = elite_dpg(&policy, &critic, &elite, Some(&refs), lambda)?;
    let g_im = interpolation_merge(&g_c, &g_e, upsilon)?;
    let g_2m = two_step_merge(&policy, &critic, &full, &elite, Some(&refs), lambda, alpha, upsilon)?;
    for (name, g) in [("conventional", &g_c), ("elite", &g_e), ("interpolation", &g_im), ("two-step", &g_2m)] {
        println!("{name:<14} ‖g‖₁ = {:.6}  max|g| = {:.6}", g.l1_norm(), g.max_abs());
    }
    let diff: f64 = g_im.values.iter().zip(&g_2m.values).map(|(a, b)| (a - b).abs()).sum();
    println!("‖g_IM − g_2M‖₁ = {diff:.3e}");
    Ok(())
}
