use dpglab::agent::{
    conventional_dpg, dpg_variance_probe, elite_dpg, interpolation_merge, two_step_merge, Agent, MergeConfig,
    QuadraticCritic, Variant,
};
use dpglab::bounds::{lemma1_check, lemma2_check, monotone_surrogate_check, BoundInstance};
use dpglab::envs::{exact_j, visitation, FiniteMdp, PointMassConfig, PointMassEnv, TabularPolicy, Transition};
use dpglab::genmodel::{VaeConfig, VaeModel};
use dpglab::numcore::{Activation, NetworkParams};
use dpglab::replay::{Batch, Source};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chain() -> FiniteMdp {
    let trans = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    FiniteMdp::new(2, 2, 0.5, 1.0, vec![1.0, 0.0], vec![0.0, 0.0, 1.0, 1.0], trans).unwrap()
}

#[test]
fn chain_discounted_visitation_is_half_half() {
    let v = visitation(&chain(), &TabularPolicy::constant(2, 0.0).unwrap(), 60).unwrap();
    assert!((v.discounted[0] - 0.5).abs() < 1e-12);
    assert!((v.discounted[1] - 0.5).abs() < 1e-12);
    for rho in &v.per_step {
        assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn value_is_invariant_to_state_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let n = rng.random_range(2..=6);
        let mdp = FiniteMdp::random(n, 7, 0.9, 2.0, &mut rng).unwrap();
        let pi = TabularPolicy::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut moved = vec![0.0; n];
        for s in 0..n {
            moved[perm[s]] = pi.actions[s];
        }
        let j0 = exact_j(&mdp, &pi).unwrap();
        let j1 = exact_j(&mdp.relabel(&perm).unwrap(), &TabularPolicy::new(moved).unwrap()).unwrap();
        assert!((j0 - j1).abs() < 1e-10, "{j0} vs {j1}");
    }
}

#[test]
fn two_step_approaches_interpolation_linearly_in_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut policy = NetworkParams::mlp(2, &[6], 2, Activation::Tanh, Activation::Tanh).unwrap();
    policy.init_uniform(&mut rng);
    let critic = QuadraticCritic::tracking(2);
    let full: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let elite: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let refs: Vec<f64> = elite.iter().map(|s| 0.5 * s).collect();
    let g_c = conventional_dpg(&policy, &critic, &full).unwrap();
    let g_e = elite_dpg(&policy, &critic, &elite, Some(&refs), 0.1).unwrap();
    let g_im = interpolation_merge(&g_c, &g_e, 0.25).unwrap();
    let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&alpha| {
            let g = two_step_merge(&policy, &critic, &full, &elite, Some(&refs), 0.1, alpha, 0.25).unwrap();
            g.values.iter().zip(&g_im.values).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .collect();
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 10.0).abs() < 0.5, "gap ratio {ratio} from {gaps:?}");
    }
}

#[test]
fn vae_loss_moving_average_does_not_increase() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut vae = VaeModel::new(2, 1, &VaeConfig::default(), &mut rng).unwrap();
    let items: Vec<Transition> = (0..64)
        .map(|_| {
            let s: Vec<f64> = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = vec![(0.8 * s[0] - 0.3 * s[1]).tanh()];
            Transition { next_state: s.clone(), state: s, action: a, reward: 0.0, terminal: false, truncated: false }
        })
        .collect();
    let batch = Batch::from_transitions(Source::Elite, &items).unwrap();
    let losses: Vec<f64> = (0..500).map(|_| dpglab::genmodel::vae_train_step(&mut vae, &batch, &mut rng).unwrap()).collect();
    let averages: Vec<f64> = losses.chunks(100).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for w in averages.windows(2) {
        assert!(w[1] <= w[0], "{averages:?}");
    }
}

fn trained(variant: Variant, steps: u64, seed: u64) -> Agent {
    let mut env = PointMassEnv::new(PointMassConfig::default()).unwrap();
    let cfg = MergeConfig { warmup_steps: 500, ..Default::default() };
    let mut agent = Agent::new(cfg, variant, 2, 1, seed).unwrap();
    agent.train(&mut env, steps).unwrap();
    agent
}

#[test]
fn probe_estimate_is_stable_under_doubling() {
    let agent = trained(Variant::Td3TwoStep, 1500, 3);
    let a = dpg_variance_probe(&agent, 256, 1).unwrap();
    let b = dpg_variance_probe(&agent, 512, 2).unwrap();
    for (x, y) in [(a.conventional, b.conventional), (a.interpolation, b.interpolation), (a.two_step, b.two_step)] {
        assert!((x - y).abs() / y < 0.1, "{x} vs {y}");
    }
}

#[test]
fn policy_gradient_leaves_vae_untouched() {
    let agent = trained(Variant::Td3TwoStep, 1200, 0);
    let vae_before = agent.vae.clone().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let full = agent.full.sample(64, &mut rng).unwrap();
    let elite = agent.elite.sample(64, &mut rng).unwrap();
    agent.policy_gradient(&full, Some(&elite)).unwrap();
    let vae = agent.vae.as_ref().unwrap();
    assert_eq!(vae.encoder.values(), vae_before.encoder.values());
    assert_eq!(vae.decoder.values(), vae_before.decoder.values());
}

#[test]
fn lemma1_identity_over_random_instances() {
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let inst = BoundInstance::random(seed, 0.1).unwrap();
        for beta in [&inst.beta1, &inst.beta2] {
            let c = lemma1_check(&inst.mdp, &inst.pi, beta).unwrap();
            worst = worst.max((c.lhs - c.rhs).abs());
        }
    }
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn lemma2_over_random_instances() {
    for seed in 0..100 {
        let inst = BoundInstance::random(1000 + seed, 0.1).unwrap();
        for c in lemma2_check(&inst.mdp, &inst.pi, &inst.beta2, 50).unwrap() {
            assert!(c.passed(), "seed {seed}: {c:?}");
        }
    }
}

#[test]
fn exhaustive_updates_never_decrease_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let n = rng.random_range(2..=4);
        let g = rng.random_range(2..=5);
        let mdp = FiniteMdp::random(n, g, 0.9, 2.0, &mut rng).unwrap();
        let pi = TabularPolicy::new((0..n).map(|_| mdp.grid_action(rng.random_range(0..g))).collect()).unwrap();
        let rep = monotone_surrogate_check(&mdp, &pi, 5).unwrap();
        assert!(rep.passed());
        for st in &rep.steps {
            assert!(st.j_next >= st.j_current - 1e-9);
            assert!((st.m_current - st.j_current).abs() < 1e-12);
        }
    }
}
