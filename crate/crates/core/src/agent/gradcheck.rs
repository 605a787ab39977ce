//! Finite-difference checks of every policy and critic gradient the agent uses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    conventional_dpg, critic_loss_gradient, elite_dpg, interpolation_merge, two_step_merge, Critic, NetworkCritic,
    Result,
};
use crate::genmodel::{VaeConfig, VaeModel};
use crate::numcore::gradcheck::{architecture_grid, relu_margin, Architecture, FD_STEP, KINK_MARGIN};
use crate::numcore::{finite_diff_grad, relative_error, Activation, NetworkParams};

pub const NETWORK_TOL: f64 = 1e-4;
pub const VAE_TOL: f64 = 1e-3;

const BATCH: usize = 4;
const LAMBDA: f64 = 0.1;
const UPSILON: f64 = 0.25;
const LOOK_AHEAD: f64 = 0.1;
const MAX_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    Conventional,
    EliteSampledAction,
    EliteVae,
    Interpolation,
    TwoStep,
    CriticLoss,
    VaeElbo,
}

impl GradOp {
    pub const ALL: [GradOp; 7] = [
        GradOp::Conventional,
        GradOp::EliteSampledAction,
        GradOp::EliteVae,
        GradOp::Interpolation,
        GradOp::TwoStep,
        GradOp::CriticLoss,
        GradOp::VaeElbo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Conventional => "conventional_dpg",
            GradOp::EliteSampledAction => "elite_dpg_sampled_action",
            GradOp::EliteVae => "elite_dpg_vae",
            GradOp::Interpolation => "interpolation_merge",
            GradOp::TwoStep => "two_step_merge",
            GradOp::CriticLoss => "critic_loss",
            GradOp::VaeElbo => "vae_elbo",
        }
    }

    pub fn tolerance(self) -> f64 {
        if self == GradOp::VaeElbo {
            VAE_TOL
        } else {
            NETWORK_TOL
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub architecture: String,
    pub op: GradOp,
    pub rel_err: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.rel_err.is_finite() && self.rel_err < self.op.tolerance()
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn batch_margin(net: &NetworkParams, inputs: &[f64]) -> Result<f64> {
    let d = net.input_dim();
    let mut m = f64::INFINITY;
    for row in inputs.chunks_exact(d) {
        m = m.min(relu_margin(net, row)?);
    }
    Ok(m)
}

fn paired(states: &[f64], sd: usize, actions: &[f64], ad: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(states.len() + actions.len());
    for (s, a) in states.chunks_exact(sd).zip(actions.chunks_exact(ad)) {
        out.extend_from_slice(s);
        out.extend_from_slice(a);
    }
    out
}

/// `mean_i Q(s_i, π(s_i)) − λ‖π(s_i) − ref_i‖²`.
fn policy_objective(policy: &NetworkParams, critic: &NetworkCritic, states: &[f64], refs: Option<&[f64]>) -> f64 {
    let n = states.len() / policy.input_dim();
    let actions = policy.forward_batch(states, n).expect("shape checked").into_output();
    let q = critic.values(states, &actions).expect("shape checked");
    let mut total: f64 = q.iter().sum();
    if let Some(r) = refs {
        total -= LAMBDA * actions.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    total / n as f64
}

fn fd_policy(policy: &NetworkParams, critic: &NetworkCritic, states: &[f64], refs: Option<&[f64]>) -> Result<Vec<f64>> {
    let g = finite_diff_grad(
        |theta| policy_objective(&policy.with_values(theta.to_vec()).expect("same shape"), critic, states, refs),
        policy.values(),
        FD_STEP,
    )?;
    Ok(g.values)
}

struct Draw {
    policy: NetworkParams,
    critic: NetworkParams,
    full: Vec<f64>,
    elite: Vec<f64>,
    sampled: Vec<f64>,
    actions: Vec<f64>,
    targets: Vec<f64>,
}

/// Redraws parameters and inputs until every ReLU pre-activation touched by
/// the policy and critic checks clears the kink margin.
fn draw_networks(arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<Draw> {
    let (sd, ad) = (arch.input, arch.output);
    let mut policy = arch.build()?;
    let mut critic = NetworkParams::mlp(sd + ad, &arch.hidden, 1, arch.hidden_act, Activation::Identity)?;
    let mut best = None;
    for _ in 0..MAX_DRAWS {
        policy.init_uniform(rng);
        critic.init_uniform(rng);
        let full = uniform(rng, BATCH * sd);
        let elite = uniform(rng, BATCH * sd);
        let sampled = uniform(rng, BATCH * ad);
        let actions = uniform(rng, BATCH * ad);
        let targets = uniform(rng, BATCH);
        let mut margin = batch_margin(&policy, &full)?.min(batch_margin(&policy, &elite)?);
        let on_full = policy.forward_batch(&full, BATCH)?.into_output();
        let on_elite = policy.forward_batch(&elite, BATCH)?.into_output();
        margin = margin
            .min(batch_margin(&critic, &paired(&full, sd, &on_full, ad))?)
            .min(batch_margin(&critic, &paired(&elite, sd, &on_elite, ad))?)
            .min(batch_margin(&critic, &paired(&full, sd, &actions, ad))?);
        let cand = Draw { policy: policy.clone(), critic: critic.clone(), full, elite, sampled, actions, targets };
        if margin >= KINK_MARGIN {
            return Ok(cand);
        }
        best = Some(cand);
    }
    Ok(best.expect("at least one draw"))
}

/// Checks every gradient operation on one architecture; the policy takes the
/// architecture's shape and the critic mirrors its hidden layers.
pub fn check_operations(arch: &Architecture, seed: u64) -> Result<Vec<OpReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sd, ad) = (arch.input, arch.output);
    let d = draw_networks(arch, &mut rng)?;
    let critic = NetworkCritic::new(&d.critic, ad)?;
    let label = arch.label();
    let mut out = Vec::new();
    let mut push = |op: GradOp, a: &[f64], b: &[f64]| {
        out.push(OpReport { architecture: label.clone(), op, rel_err: relative_error(a, b) });
    };

    let g_c = conventional_dpg(&d.policy, &critic, &d.full)?;
    let f_c = fd_policy(&d.policy, &critic, &d.full, None)?;
    push(GradOp::Conventional, &g_c.values, &f_c);

    let g_s = elite_dpg(&d.policy, &critic, &d.elite, Some(&d.sampled), LAMBDA)?;
    push(GradOp::EliteSampledAction, &g_s.values, &fd_policy(&d.policy, &critic, &d.elite, Some(&d.sampled))?);

    let vae_cfg = VaeConfig { hidden: if arch.hidden.is_empty() { vec![8] } else { arch.hidden.clone() }, ..Default::default() };
    let vae = VaeModel::new(sd, ad, &vae_cfg, &mut rng)?;
    let vae_refs = vae.reference_actions(&d.elite)?;
    let g_v = elite_dpg(&d.policy, &critic, &d.elite, Some(&vae_refs), LAMBDA)?;
    let f_v = fd_policy(&d.policy, &critic, &d.elite, Some(&vae_refs))?;
    push(GradOp::EliteVae, &g_v.values, &f_v);

    let g_im = interpolation_merge(&g_c, &g_v, UPSILON)?;
    let f_im: Vec<f64> = f_c.iter().zip(&f_v).map(|(c, e)| (1.0 - UPSILON) * c + UPSILON * e).collect();
    push(GradOp::Interpolation, &g_im.values, &f_im);

    let g_2m = two_step_merge(&d.policy, &critic, &d.full, &d.elite, Some(&vae_refs), LAMBDA, LOOK_AHEAD, UPSILON)?;
    let step = LOOK_AHEAD * (1.0 - UPSILON);
    let ahead = d.policy.with_values(d.policy.values().iter().zip(&f_c).map(|(t, g)| t + step * g).collect())?;
    let f_ahead = fd_policy(&ahead, &critic, &d.elite, Some(&vae_refs))?;
    let f_2m: Vec<f64> = f_c.iter().zip(&f_ahead).map(|(c, e)| (1.0 - UPSILON) * c + UPSILON * e).collect();
    push(GradOp::TwoStep, &g_2m.values, &f_2m);

    let (_, g_l) = critic_loss_gradient(&d.critic, &d.full, &d.actions, &d.targets)?;
    let f_l = finite_diff_grad(
        |w| {
            let net = d.critic.with_values(w.to_vec()).expect("same shape");
            critic_loss_gradient(&net, &d.full, &d.actions, &d.targets).expect("shape checked").0
        },
        d.critic.values(),
        FD_STEP,
    )?;
    push(GradOp::CriticLoss, &g_l.values, &f_l.values);

    let noise = vae.draw_noise(BATCH, &mut rng);
    let (_, ge, gd) = vae.elbo_gradient(&d.elite, &d.sampled, &noise)?;
    let fe = finite_diff_grad(
        |p| {
            let mut m = vae.clone();
            m.encoder.set_values(p).expect("same shape");
            m.elbo(&d.elite, &d.sampled, &noise).expect("shape checked").loss
        },
        vae.encoder.values(),
        FD_STEP,
    )?;
    let fdec = finite_diff_grad(
        |p| {
            let mut m = vae.clone();
            m.decoder.set_values(p).expect("same shape");
            m.elbo(&d.elite, &d.sampled, &noise).expect("shape checked").loss
        },
        vae.decoder.values(),
        FD_STEP,
    )?;
    let analytic: Vec<f64> = ge.iter().chain(&gd).copied().collect();
    let numeric: Vec<f64> = fe.values.iter().chain(&fdec.values).copied().collect();
    push(GradOp::VaeElbo, &analytic, &numeric);
    Ok(out)
}

/// Every operation on every architecture of the grid.
pub fn gradient_suite(seed: u64) -> Result<Vec<OpReport>> {
    let mut out = Vec::new();
    for (i, arch) in architecture_grid().iter().enumerate() {
        out.extend(check_operations(arch, seed.wrapping_add(i as u64))?);
    }
    Ok(out)
}
