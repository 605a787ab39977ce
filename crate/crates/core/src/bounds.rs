//! Exact verification of the surrogate-objective and gradient-bias bounds on
//! finite MDPs with tabular policies.
//!
//! Every expectation over trajectories is an occupancy-weighted sum
//! `Σ_s d^β(s) f(s)` with `d^β = Σ_t γ^t ρ_t^β` solved exactly, so no
//! truncation error enters the comparisons.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::envs::{
    exact_j, exact_j_from, exact_q, occupancy, tv_distance, visitation_from, EnvError, FiniteMdp, QTable, TabularPolicy,
};

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("gradient oracles disagree: max |analytic − finite difference| = {max_diff:e}")]
    GradientOracle { max_diff: f64 },
    #[error("non-finite constant {0}")]
    NonFinite(&'static str),
    #[error("search space of {0} policies exceeds the limit")]
    SearchTooLarge(u128),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T> = std::result::Result<T, BoundError>;

/// Inequalities pass when `rhs − lhs ≥ −SLACK_TOL`.
pub const SLACK_TOL: f64 = 1e-9;
/// Identities pass when `|lhs − rhs| ≤ IDENTITY_TOL`.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Analytic and finite-difference policy gradients must agree to this (relative to `max(1, ‖g‖∞)`).
pub const GRAD_ORACLE_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-6;
/// Minimum distance of tabular actions from grid points and the action bounds.
pub const GRID_MARGIN: f64 = 1e-4;
pub const MAX_SEARCH: u128 = 100_000;

/// A deterministic tabular policy together with the initial-state
/// distribution its trajectories start from.
#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    pub policy: TabularPolicy,
    pub rho0: Vec<f64>,
}

impl Behavior {
    pub fn new(policy: TabularPolicy, rho0: Vec<f64>) -> Self {
        Self { policy, rho0 }
    }

    pub fn action(&self, s: usize) -> f64 {
        self.policy.action(s)
    }

    /// Unnormalised discounted occupancy of this behavior.
    pub fn occupancy(&self, mdp: &FiniteMdp) -> Result<Vec<f64>> {
        Ok(occupancy(mdp, &self.policy, &self.rho0)?)
    }

    pub fn value(&self, mdp: &FiniteMdp) -> Result<f64> {
        Ok(exact_j_from(mdp, &self.policy, &self.rho0)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Identity,
    Upper,
}

/// One evaluated bound: `lhs ≤ rhs` or `lhs = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: &'static str,
    pub kind: CheckKind,
    pub lhs: f64,
    pub rhs: f64,
}

impl Check {
    fn upper(id: &'static str, lhs: f64, rhs: f64) -> Self {
        Self { id, kind: CheckKind::Upper, lhs, rhs }
    }

    fn identity(id: &'static str, lhs: f64, rhs: f64) -> Self {
        Self { id, kind: CheckKind::Identity, lhs, rhs }
    }

    /// `rhs − lhs` for inequalities, `−|lhs − rhs|` for identities.
    pub fn slack(&self) -> f64 {
        match self.kind {
            CheckKind::Upper => self.rhs - self.lhs,
            CheckKind::Identity => -(self.lhs - self.rhs).abs(),
        }
    }

    pub fn passed(&self) -> bool {
        let tol = match self.kind {
            CheckKind::Upper => SLACK_TOL,
            CheckKind::Identity => IDENTITY_TOL,
        };
        self.lhs.is_finite() && self.rhs.is_finite() && self.slack() >= -tol
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `J(β) + E_{τ∼β}[Q(s, target(s)) − Q(s, β(s))]` with the critic `q` held fixed.
pub fn surrogate(mdp: &FiniteMdp, q: &QTable, target: &TabularPolicy, beta: &Behavior) -> Result<f64> {
    let d = beta.occupancy(mdp)?;
    let adv: Vec<f64> =
        (0..mdp.n_states()).map(|s| q.at(s, target.action(s)) - q.at(s, beta.action(s))).collect();
    Ok(beta.value(mdp)? + dot(&d, &adv))
}

/// `[g]_s = d^β(s) · ∂_a q(s, target(s))`: the DPG of a tabular policy
/// collected along `β`'s trajectories.
pub fn tabular_dpg(mdp: &FiniteMdp, q: &QTable, target: &TabularPolicy, beta: &Behavior) -> Result<Vec<f64>> {
    let d = beta.occupancy(mdp)?;
    Ok((0..mdp.n_states()).map(|s| d[s] * q.action_slope(s, target.action(s))).collect())
}

/// Central finite differences of `exact_j` with respect to each state's action.
pub fn fd_policy_gradient(mdp: &FiniteMdp, pi: &TabularPolicy, h: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pi.len());
    for s in 0..pi.len() {
        let mut plus = pi.clone();
        let mut minus = pi.clone();
        plus.actions[s] = (pi.actions[s] + h).min(1.0);
        minus.actions[s] = (pi.actions[s] - h).max(-1.0);
        let width = plus.actions[s] - minus.actions[s];
        out.push((exact_j(mdp, &plus)? - exact_j(mdp, &minus)?) / width);
    }
    Ok(out)
}

/// Exact `∇J(π)` for a tabular policy, cross-checked against finite differences.
pub fn policy_gradient(mdp: &FiniteMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    let q = exact_q(mdp, pi)?;
    let on_policy = Behavior::new(pi.clone(), mdp.rho0().to_vec());
    let g = tabular_dpg(mdp, &q, pi, &on_policy)?;
    let fd = fd_policy_gradient(mdp, pi, FD_STEP)?;
    let scale = g.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let max_diff = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if max_diff > GRAD_ORACLE_TOL * scale {
        return Err(BoundError::GradientOracle { max_diff });
    }
    Ok(g)
}

/// `E_{ρ0^β}[Q^π(s, π(s))]` against `J(β) + E_{τ∼β}[A(s, π(s))]`.
pub fn lemma1_check(mdp: &FiniteMdp, pi: &TabularPolicy, beta: &Behavior) -> Result<Check> {
    let q = exact_q(mdp, pi)?;
    let lhs = dot(&beta.rho0, q.state_values());
    Ok(Check::identity("lemma1", lhs, surrogate(mdp, &q, pi, beta)?))
}

/// `D_TV(ρ_t^π, ρ_t^β) ≤ (t·c/2)·Δ + D_TV(ρ_0^π, ρ_0^β)` for `t = 0..=t_max`, with
/// `π` started from the MDP's `ρ0` and `c` the measured continuity constant.
pub fn lemma2_check(mdp: &FiniteMdp, pi: &TabularPolicy, beta: &Behavior, t_max: usize) -> Result<Vec<Check>> {
    let vp = visitation_from(mdp, pi, mdp.rho0(), t_max)?;
    let vb = visitation_from(mdp, &beta.policy, &beta.rho0, t_max)?;
    let c = mdp.measured_lipschitz();
    let delta = pi.max_deviation(&beta.policy);
    let dtv0 = tv_distance(mdp.rho0(), &beta.rho0)?;
    (0..=t_max)
        .map(|t| {
            let lhs = tv_distance(&vp.per_step[t], &vb.per_step[t])?;
            Ok(Check::upper("lemma2", lhs, t as f64 * c / 2.0 * delta + dtv0))
        })
        .collect()
}

/// Every quantity the bound checks need.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInstance {
    pub seed: u64,
    pub mdp: FiniteMdp,
    pub pi: TabularPolicy,
    /// One normalised conventional step from `pi`, largest shift `α(1−υ)`.
    pub pi_prime: TabularPolicy,
    pub beta1: Behavior,
    pub beta2: Behavior,
    pub upsilon: f64,
    pub alpha: f64,
    /// Critic error `Q̃ − Q` on the action grid, `[s * g + k]`.
    pub perturbation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConstants {
    pub zeta: f64,
    pub chi1: f64,
    pub chi2: f64,
    pub chi3: f64,
    pub chi4: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    pub c: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub dtv1: f64,
    pub dtv2: f64,
}

impl BoundConstants {
    pub const NAMES: [&'static str; 13] =
        ["zeta", "chi1", "chi2", "chi3", "chi4", "psi1", "psi2", "psi3", "c", "delta1", "delta2", "dtv1", "dtv2"];

    pub fn values(&self) -> [f64; 13] {
        [
            self.zeta, self.chi1, self.chi2, self.chi3, self.chi4, self.psi1, self.psi2, self.psi3, self.c,
            self.delta1, self.delta2, self.dtv1, self.dtv2,
        ]
    }
}

/// Exact values of `J` and the surrogates built on the exact critic (`tilde`)
/// and on the perturbed critic (`hat`).
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValues {
    pub j: f64,
    pub j_tilde_e: f64,
    pub j_tilde_im: f64,
    pub j_tilde_2m: f64,
    pub j_hat_e: f64,
    pub j_hat_im: f64,
    pub j_hat_2m: f64,
}

/// `g` rescaled so that its largest entry is one; zero stays zero.
fn unit_step(g: &[f64]) -> Vec<f64> {
    let m = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 {
        vec![0.0; g.len()]
    } else {
        g.iter().map(|x| x / m).collect()
    }
}

/// Uniform action at least `GRID_MARGIN` from every grid point.
fn off_grid_action<R: Rng + ?Sized>(mdp: &FiniteMdp, rng: &mut R) -> f64 {
    loop {
        let a: f64 = rng.random_range(-1.0 + GRID_MARGIN..1.0 - GRID_MARGIN);
        if mdp.action_grid().iter().all(|g| (a - g).abs() >= GRID_MARGIN) {
            return a;
        }
    }
}

fn snap_off_grid(mdp: &FiniteMdp, a: f64) -> f64 {
    let a = a.clamp(-1.0 + GRID_MARGIN, 1.0 - GRID_MARGIN);
    for g in mdp.action_grid() {
        if (a - g).abs() < GRID_MARGIN {
            return if a >= g { g + GRID_MARGIN } else { g - GRID_MARGIN };
        }
    }
    a
}

impl BoundInstance {
    /// Assembles an instance, deriving `π′` from a normalised conventional step on `Q̃`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        seed: u64,
        mdp: FiniteMdp,
        pi: TabularPolicy,
        beta1: Behavior,
        beta2: Behavior,
        upsilon: f64,
        alpha: f64,
        perturbation: Vec<f64>,
    ) -> Result<Self> {
        let n = mdp.n_states();
        if pi.len() != n || beta1.policy.len() != n || beta2.policy.len() != n {
            return Err(BoundError::InvalidInstance("policies must cover every state".into()));
        }
        if perturbation.len() != n * mdp.grid_size() {
            return Err(BoundError::InvalidInstance("perturbation must cover the action grid".into()));
        }
        if !(0.0..1.0).contains(&upsilon) || !(0.0..1.0).contains(&alpha) {
            return Err(BoundError::InvalidInstance(format!("need υ, α in [0, 1), got {upsilon}, {alpha}")));
        }
        let q_tilde = exact_q(&mdp, &pi)?.perturbed(&perturbation)?;
        let g = tabular_dpg(&mdp, &q_tilde, &pi, &beta1)?;
        let step = alpha * (1.0 - upsilon);
        let actions = pi.actions.iter().zip(unit_step(&g)).map(|(a, u)| (a + step * u).clamp(-1.0, 1.0)).collect();
        let pi_prime = TabularPolicy::new(actions)?;
        Ok(Self { seed, mdp, pi, pi_prime, beta1, beta2, upsilon, alpha, perturbation })
    }

    /// Random instance: `n ≤ 6` states, `g ≤ 11` grid actions, `γ = 0.9`, `α = 1e-3`.
    ///
    /// `β1` averages `π` with three noisy copies and starts from the MDP's `ρ0`.
    /// `β2` is the empirical policy of the five best of twenty sampled
    /// trajectories of a noisier behavior: its `ρ0` is their empirical start
    /// distribution and states they never visit keep `π`'s action.
    pub fn random(seed: u64, perturbation_scale: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=6);
        let g = rng.random_range(2..=11);
        let mdp = FiniteMdp::random(n, g, 0.9, 2.0, &mut rng)?;
        let pi = TabularPolicy::new((0..n).map(|_| off_grid_action(&mdp, &mut rng)).collect())?;
        let mut mixed = pi.actions.clone();
        for _ in 0..3 {
            for a in mixed.iter_mut().zip(&pi.actions) {
                let noisy = (a.1 + 0.1 * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0);
                *a.0 += noisy;
            }
        }
        let beta1_actions = mixed.iter().map(|a| snap_off_grid(&mdp, a / 4.0)).collect();
        let beta1 = Behavior::new(TabularPolicy::new(beta1_actions)?, mdp.rho0().to_vec());
        let beta2 = elite_behavior(&mdp, &pi, 20, 5, 15, 0.3, &mut rng)?;
        let upsilon = rng.random_range(0.05..0.95);
        let perturbation = (0..n * g).map(|_| rng.random_range(-perturbation_scale..=perturbation_scale)).collect();
        Self::new(seed, mdp, pi, beta1, beta2, upsilon, 1e-3, perturbation)
    }

    pub fn q(&self) -> Result<QTable> {
        Ok(exact_q(&self.mdp, &self.pi)?)
    }

    pub fn q_tilde(&self) -> Result<QTable> {
        Ok(self.q()?.perturbed(&self.perturbation)?)
    }

    pub fn constants(&self) -> Result<BoundConstants> {
        let q = self.q()?;
        let qt = self.q_tilde()?;
        let n = self.mdp.n_states();
        let slope_gap = |s: usize| (q.action_slope(s, self.pi.action(s)) - qt.action_slope(s, self.pi.action(s))).abs();
        let mut psi3 = 0.0f64;
        for s in 0..n {
            let (a, b) = (self.pi.action(s), self.pi_prime.action(s));
            if a != b {
                psi3 = psi3.max((qt.action_slope(s, a) - qt.action_slope(s, b)).abs() / (a - b).abs());
            }
        }
        let shift = self.pi.max_deviation(&self.pi_prime);
        let chi2 = if self.alpha > 0.0 { shift / self.alpha } else { 0.0 };
        let k = BoundConstants {
            zeta: q.state_values().iter().fold(0.0f64, |m, v| m.max(v.abs())),
            chi1: q.action_lipschitz(),
            chi2,
            chi3: self.perturbation.iter().fold(0.0f64, |m, d| m.max(d.abs())),
            chi4: qt.action_lipschitz(),
            psi1: (0..n).map(slope_gap).fold(0.0, f64::max),
            psi2: (0..n).map(|s| qt.action_slope(s, self.pi.action(s)).abs()).fold(0.0, f64::max),
            psi3,
            c: self.mdp.measured_lipschitz(),
            delta1: self.pi.max_deviation(&self.beta1.policy),
            delta2: self.pi.max_deviation(&self.beta2.policy),
            dtv1: tv_distance(self.mdp.rho0(), &self.beta1.rho0)?,
            dtv2: tv_distance(self.mdp.rho0(), &self.beta2.rho0)?,
        };
        for (name, v) in BoundConstants::NAMES.iter().zip(k.values()) {
            if !v.is_finite() {
                return Err(BoundError::NonFinite(name));
            }
        }
        Ok(k)
    }

    pub fn surrogates(&self) -> Result<SurrogateValues> {
        let (m, u) = (&self.mdp, self.upsilon);
        let q = self.q()?;
        let qt = self.q_tilde()?;
        let j = exact_j(m, &self.pi)?;
        let t1 = surrogate(m, &q, &self.pi, &self.beta1)?;
        let t2 = surrogate(m, &q, &self.pi, &self.beta2)?;
        let t2p = surrogate(m, &q, &self.pi_prime, &self.beta2)?;
        let h1 = surrogate(m, &qt, &self.pi, &self.beta1)?;
        let h2 = surrogate(m, &qt, &self.pi, &self.beta2)?;
        let h2p = surrogate(m, &qt, &self.pi_prime, &self.beta2)?;
        Ok(SurrogateValues {
            j,
            j_tilde_e: t2,
            j_tilde_im: (1.0 - u) * t1 + u * t2,
            j_tilde_2m: (1.0 - u) * t1 + u * t2p,
            j_hat_e: h2,
            j_hat_im: (1.0 - u) * h1 + u * h2,
            j_hat_2m: (1.0 - u) * h1 + u * h2p,
        })
    }
}

/// Samples `n_traj` trajectories of `horizon` steps from `ρ0` under a noisy
/// copy of `pi`, keeps the `kappa` with the highest discounted return and
/// returns the behavior they embody.
pub fn elite_behavior<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    pi: &TabularPolicy,
    n_traj: usize,
    kappa: usize,
    horizon: usize,
    noise: f64,
    rng: &mut R,
) -> Result<Behavior> {
    let n = mdp.n_states();
    let behavior: Vec<f64> = pi
        .actions
        .iter()
        .map(|a| snap_off_grid(mdp, a + noise * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let draw = |p: &[f64], rng: &mut R| -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, x) in p.iter().enumerate() {
            acc += x;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let mut trajectories: Vec<(f64, Vec<usize>)> = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let mut s = draw(mdp.rho0(), rng);
        let mut states = vec![s];
        let mut ret = 0.0;
        let mut w = 1.0;
        for _ in 0..horizon {
            let a = behavior[s];
            ret += w * mdp.reward(s, a);
            w *= mdp.gamma();
            s = draw(&mdp.transition_row(s, a), rng);
            states.push(s);
        }
        trajectories.push((ret, states));
    }
    trajectories.sort_by(|a, b| b.0.total_cmp(&a.0));
    let elite = &trajectories[..kappa.min(n_traj)];
    let mut rho0 = vec![0.0; n];
    let mut visited = vec![false; n];
    for (_, states) in elite {
        rho0[states[0]] += 1.0 / elite.len() as f64;
        for &s in states {
            visited[s] = true;
        }
    }
    let actions = (0..n).map(|s| if visited[s] { behavior[s] } else { pi.action(s) }).collect();
    Ok(Behavior::new(TabularPolicy::new(actions)?, rho0))
}

/// `|J − J̃|` for the elite, interpolated and two-step surrogates on the exact critic.
pub fn prop1_check(inst: &BoundInstance) -> Result<[Check; 3]> {
    let k = inst.constants()?;
    let v = inst.surrogates()?;
    let (u, g) = (inst.upsilon, inst.mdp.gamma());
    let im_rhs = 2.0 * k.zeta * ((1.0 - u) * k.dtv1 + u * k.dtv2);
    Ok([
        Check::upper("prop1_e", (v.j - v.j_tilde_e).abs(), 2.0 * k.zeta * k.dtv2),
        Check::upper("prop1_im", (v.j - v.j_tilde_im).abs(), im_rhs),
        Check::upper("prop1_2m", (v.j - v.j_tilde_2m).abs(), im_rhs + u * k.chi1 * k.chi2 * inst.alpha / (1.0 - g)),
    ])
}

/// `|J − Ĵ|` for the three surrogates on the perturbed critic.
pub fn prop3_check(inst: &BoundInstance) -> Result<[Check; 3]> {
    let k = inst.constants()?;
    let v = inst.surrogates()?;
    let (u, g) = (inst.upsilon, inst.mdp.gamma());
    let critic = 2.0 * k.chi3 / (1.0 - g);
    let im_rhs = 2.0 * k.zeta * ((1.0 - u) * k.dtv1 + u * k.dtv2) + critic;
    Ok([
        Check::upper("prop3_e", (v.j - v.j_hat_e).abs(), 2.0 * k.zeta * k.dtv2 + critic),
        Check::upper("prop3_im", (v.j - v.j_hat_im).abs(), im_rhs),
        Check::upper("prop3_2m", (v.j - v.j_hat_2m).abs(), im_rhs + u * k.chi2 * k.chi4 * inst.alpha / (1.0 - g)),
    ])
}

/// The three policy gradients compared with `∇J`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub true_grad: Vec<f64>,
    pub elite: Vec<f64>,
    pub interpolation: Vec<f64>,
    pub two_step: Vec<f64>,
}

pub fn gradient_set(inst: &BoundInstance) -> Result<GradientSet> {
    let m = &inst.mdp;
    let qt = inst.q_tilde()?;
    let true_grad = policy_gradient(m, &inst.pi)?;
    let full = tabular_dpg(m, &qt, &inst.pi, &inst.beta1)?;
    let elite = tabular_dpg(m, &qt, &inst.pi, &inst.beta2)?;
    let elite_ahead = tabular_dpg(m, &qt, &inst.pi_prime, &inst.beta2)?;
    let u = inst.upsilon;
    let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - u) * x + u * y).collect::<Vec<f64>>();
    Ok(GradientSet {
        interpolation: mix(&full, &elite),
        two_step: mix(&full, &elite_ahead),
        elite,
        true_grad,
    })
}

fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    l1(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

/// `‖∇J − ∇^e Ĵ‖₁ ≤ ψ1/(1−γ) + γcψ2Δ/(1−γ)² + 2ψ2 D_TV/(1−γ)`.
pub fn prop4_check(inst: &BoundInstance) -> Result<Check> {
    let k = inst.constants()?;
    let gs = gradient_set(inst)?;
    let g = inst.mdp.gamma();
    let rhs = k.psi1 / (1.0 - g) + g * k.c * k.psi2 * k.delta2 / (1.0 - g).powi(2) + 2.0 * k.psi2 * k.dtv2 / (1.0 - g);
    Ok(Check::upper("prop4", l1_gap(&gs.true_grad, &gs.elite), rhs))
}

/// Interpolated and two-step gradient bias bounds, plus the direct
/// comparison `‖∇J − ∇^{2M}Ĵ‖₁ ≤ ‖∇J − ∇^{IM}Ĵ‖₁ + ψ3χ2α/(1−γ)`.
pub fn merged_grad_bounds_check(inst: &BoundInstance) -> Result<[Check; 3]> {
    let k = inst.constants()?;
    let gs = gradient_set(inst)?;
    let (u, g) = (inst.upsilon, inst.mdp.gamma());
    let drift = |delta: f64| g * k.c * k.psi2 * delta / (1.0 - g).powi(2);
    let im_rhs = k.psi1 / (1.0 - g)
        + (1.0 - u) * drift(k.delta1)
        + u * drift(k.delta2)
        + 2.0 * k.psi2 * ((1.0 - u) * k.dtv1 + u * k.dtv2) / (1.0 - g);
    let ahead = k.psi3 * k.chi2 * inst.alpha / (1.0 - g);
    let im_lhs = l1_gap(&gs.true_grad, &gs.interpolation);
    let tm_lhs = l1_gap(&gs.true_grad, &gs.two_step);
    Ok([
        Check::upper("merged_im", im_lhs, im_rhs),
        Check::upper("merged_2m", tm_lhs, im_rhs + u * ahead),
        Check::upper("merged_2m_vs_im", tm_lhs, im_lhs + ahead),
    ])
}

/// `M(π, β) = E_{ρ0^β}[Q^π(s, π(s))] − 2ζ_π D_TV(ρ0^π, ρ0^β)`.
pub fn surrogate_m(mdp: &FiniteMdp, q: &QTable, beta: &Behavior) -> Result<f64> {
    let zeta = q.state_values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(dot(&beta.rho0, q.state_values()) - 2.0 * zeta * tv_distance(mdp.rho0(), &beta.rho0)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneStep {
    pub j_current: f64,
    pub j_next: f64,
    pub m_next: f64,
    pub m_current: f64,
    /// Policies attaining the maximal `M`.
    pub ties: usize,
    /// Lowest `J` among the tied maximisers.
    pub worst_tie_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneReport {
    pub steps: Vec<MonotoneStep>,
    pub policies: Vec<TabularPolicy>,
}

impl MonotoneReport {
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for st in &self.steps {
            out.push(Check::upper("monotone_j_ge_m", st.m_next, st.j_next));
            out.push(Check::upper("monotone_m_ge_m", st.m_current, st.m_next));
            out.push(Check::identity("monotone_m_eq_j", st.m_current, st.j_current));
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(Check::passed)
    }
}

/// Iterates `π_{i+1} = argmax_β M(π_i, β)` over every grid policy.
///
/// Candidates start from the MDP's `ρ0`, so `M(π_i, ·)` is constant and every
/// policy ties; ties go to the highest `J(β)`, then to the lowest index.
pub fn monotone_surrogate_check(mdp: &FiniteMdp, pi: &TabularPolicy, iterations: usize) -> Result<MonotoneReport> {
    let n = mdp.n_states();
    let g = mdp.grid_size();
    let total = (g as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > MAX_SEARCH {
        return Err(BoundError::SearchTooLarge(total));
    }
    let grid = mdp.action_grid();
    let candidates: Vec<TabularPolicy> = (0..total as usize)
        .map(|mut idx| {
            let actions = (0..n)
                .map(|_| {
                    let a = grid[idx % g];
                    idx /= g;
                    a
                })
                .collect();
            TabularPolicy { actions }
        })
        .collect();
    let values: Vec<f64> = candidates.iter().map(|b| exact_j(mdp, b)).collect::<std::result::Result<_, _>>()?;
    let mut current = pi.clone();
    let mut policies = vec![current.clone()];
    let mut steps = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let q = exact_q(mdp, &current)?;
        let j_current = exact_j(mdp, &current)?;
        let m_current = surrogate_m(mdp, &q, &Behavior::new(current.clone(), mdp.rho0().to_vec()))?;
        let scores: Vec<f64> = candidates
            .iter()
            .map(|b| surrogate_m(mdp, &q, &Behavior::new(b.clone(), mdp.rho0().to_vec())))
            .collect::<Result<_>>()?;
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..candidates.len()).filter(|&i| scores[i] == best).collect();
        let pick = tied.iter().copied().fold(tied[0], |b, i| if values[i] > values[b] { i } else { b });
        let worst_tie_j = tied.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        steps.push(MonotoneStep {
            j_current,
            j_next: values[pick],
            m_next: best,
            m_current,
            ties: tied.len(),
            worst_tie_j,
        });
        current = candidates[pick].clone();
        policies.push(current.clone());
    }
    Ok(MonotoneReport { steps, policies })
}

/// All checks on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceReport {
    pub seed: u64,
    pub constants: BoundConstants,
    pub checks: Vec<Check>,
}

impl InstanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn worst(&self, id: &str) -> Option<&Check> {
        self.checks.iter().filter(|c| c.id == id).min_by(|a, b| a.slack().total_cmp(&b.slack()))
    }
}

pub const CSV_HEADER_PREFIX: &str = "instance_seed,bound_id,lhs,rhs,slack,passed";

/// Runs every check on the instance generated from `seed`; the monotone
/// chain runs on a tiny MDP drawn from the same seed.
pub fn run_instance(seed: u64, perturbation_scale: f64, t_max: usize) -> Result<InstanceReport> {
    let inst = BoundInstance::random(seed, perturbation_scale)?;
    let mut checks = Vec::new();
    checks.push(lemma1_check(&inst.mdp, &inst.pi, &inst.beta1)?);
    checks.push(lemma1_check(&inst.mdp, &inst.pi, &inst.beta2)?);
    let lemma2 = lemma2_check(&inst.mdp, &inst.pi, &inst.beta2, t_max)?;
    checks.push(lemma2.into_iter().min_by(|a, b| a.slack().total_cmp(&b.slack())).expect("t_max ≥ 0"));
    checks.extend(prop1_check(&inst)?);
    checks.extend(prop3_check(&inst)?);
    checks.push(prop4_check(&inst)?);
    checks.extend(merged_grad_bounds_check(&inst)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_0000_0000);
    let n = rng.random_range(2..=4);
    let g = rng.random_range(2..=5);
    let tiny = FiniteMdp::random(n, g, 0.9, 2.0, &mut rng)?;
    let start = TabularPolicy::new((0..n).map(|_| tiny.grid_action(rng.random_range(0..g))).collect())?;
    let mono = monotone_surrogate_check(&tiny, &start, 5)?;
    checks.extend(mono.checks());
    Ok(InstanceReport { seed, constants: inst.constants()?, checks })
}

pub fn suite_csv(reports: &[InstanceReport]) -> String {
    let mut out = String::from(CSV_HEADER_PREFIX);
    for name in BoundConstants::NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for r in reports {
        let consts: Vec<String> = r.constants.values().iter().map(|v| v.to_string()).collect();
        for c in &r.checks {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.seed,
                c.id,
                c.lhs,
                c.rhs,
                c.slack(),
                c.passed(),
                consts.join(",")
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::FiniteMdp;

    fn chain(gamma: f64) -> FiniteMdp {
        // s0 → s1 → s1, reward 1 only at s1, two grid actions with identical dynamics.
        let trans = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        FiniteMdp::new(2, 2, gamma, 1.0, vec![1.0, 0.0], vec![0.0, 0.0, 1.0, 1.0], trans).unwrap()
    }

    #[test]
    fn lemma1_trivial_cases() {
        let inst = BoundInstance::random(3, 0.1).unwrap();
        let same = Behavior::new(inst.pi.clone(), inst.mdp.rho0().to_vec());
        let c = lemma1_check(&inst.mdp, &inst.pi, &same).unwrap();
        let j = exact_j(&inst.mdp, &inst.pi).unwrap();
        assert!((c.lhs - j).abs() < 1e-10 && (c.rhs - j).abs() < 1e-10);
        let single = FiniteMdp::new(1, 3, 0.5, 1.0, vec![1.0], vec![0.2, 0.4, 1.0], vec![1.0; 3]).unwrap();
        let pi = TabularPolicy::constant(1, 0.3).unwrap();
        let beta = Behavior::new(TabularPolicy::constant(1, -0.7).unwrap(), vec![1.0]);
        let c = lemma1_check(&single, &pi, &beta).unwrap();
        let q = exact_q(&single, &pi).unwrap();
        assert!((c.lhs - q.at(0, 0.3)).abs() < 1e-12 && c.passed());
    }

    #[test]
    fn lemma2_equal_policies_are_tight() {
        let inst = BoundInstance::random(5, 0.1).unwrap();
        let same = Behavior::new(inst.pi.clone(), inst.mdp.rho0().to_vec());
        for c in lemma2_check(&inst.mdp, &inst.pi, &same, 20).unwrap() {
            assert!(c.lhs.abs() < 1e-15 && c.rhs == 0.0);
        }
    }

    #[test]
    fn matched_start_gives_zero_elite_gap() {
        let inst = BoundInstance::random(7, 0.1).unwrap();
        let beta2 = Behavior::new(inst.beta2.policy.clone(), inst.mdp.rho0().to_vec());
        let inst = BoundInstance::new(7, inst.mdp.clone(), inst.pi.clone(), inst.beta1.clone(), beta2, 0.3, 1e-3, inst.perturbation.clone()).unwrap();
        let [e, _, _] = prop1_check(&inst).unwrap();
        assert_eq!(e.rhs, 0.0);
        assert!(e.lhs < 1e-12);
    }

    #[test]
    fn zero_upsilon_reduces_to_full_buffer_term() {
        let base = BoundInstance::random(9, 0.1).unwrap();
        let inst = BoundInstance { upsilon: 0.0, ..base };
        let inst = BoundInstance::new(inst.seed, inst.mdp, inst.pi, inst.beta1, inst.beta2, 0.0, 1e-3, inst.perturbation).unwrap();
        let [_, im, tm] = prop1_check(&inst).unwrap();
        assert_eq!(im.lhs, tm.lhs);
        assert!(im.lhs < 1e-12 && im.rhs == 0.0);
        let [mi, m2, _] = merged_grad_bounds_check(&inst).unwrap();
        assert_eq!(mi.lhs, m2.lhs);
        assert_eq!(mi.rhs, m2.rhs);
    }

    #[test]
    fn zero_alpha_removes_look_ahead_term() {
        let b = BoundInstance::random(11, 0.1).unwrap();
        let inst = BoundInstance::new(b.seed, b.mdp, b.pi, b.beta1, b.beta2, b.upsilon, 0.0, b.perturbation).unwrap();
        assert_eq!(inst.pi, inst.pi_prime);
        let [mi, m2, cmp] = merged_grad_bounds_check(&inst).unwrap();
        assert_eq!(mi.rhs, m2.rhs);
        assert_eq!(cmp.rhs, mi.lhs);
    }

    #[test]
    fn zero_perturbation_matches_exact_critic() {
        let b = BoundInstance::random(13, 0.1).unwrap();
        let n = b.perturbation.len();
        let inst = BoundInstance::new(b.seed, b.mdp, b.pi, b.beta1, b.beta2, b.upsilon, b.alpha, vec![0.0; n]).unwrap();
        let p1 = prop1_check(&inst).unwrap();
        let p3 = prop3_check(&inst).unwrap();
        for (a, b) in p1.iter().zip(&p3) {
            assert!((a.lhs - b.lhs).abs() < 1e-12);
        }
        assert!((p1[0].rhs - p3[0].rhs).abs() < 1e-12);
    }

    #[test]
    fn constant_perturbation_only_moves_rhs() {
        let b = BoundInstance::random(17, 0.0).unwrap();
        let n = b.perturbation.len();
        let k = 0.5;
        let shifted =
            BoundInstance::new(b.seed, b.mdp.clone(), b.pi.clone(), b.beta1.clone(), b.beta2.clone(), b.upsilon, b.alpha, vec![k; n])
                .unwrap();
        let p0 = prop3_check(&b).unwrap();
        let p1 = prop3_check(&shifted).unwrap();
        let g = b.mdp.gamma();
        for (a, c) in p0.iter().zip(&p1) {
            assert!((a.lhs - c.lhs).abs() < 1e-10);
            assert!((c.rhs - a.rhs - 2.0 * k / (1.0 - g)).abs() < 1e-10);
        }
    }

    #[test]
    fn matched_everything_zero_gradient_gap() {
        let b = BoundInstance::random(19, 0.0).unwrap();
        let on = Behavior::new(b.pi.clone(), b.mdp.rho0().to_vec());
        let inst = BoundInstance::new(b.seed, b.mdp, b.pi, b.beta1, on, b.upsilon, b.alpha, b.perturbation).unwrap();
        let c = prop4_check(&inst).unwrap();
        assert!(c.lhs < 1e-10 && c.passed());
    }

    #[test]
    fn reward_scaling_is_homogeneous() {
        let b = BoundInstance::random(23, 0.1).unwrap();
        let scaled = BoundInstance::new(
            b.seed,
            b.mdp.scale_rewards(2.0).unwrap(),
            b.pi.clone(),
            b.beta1.clone(),
            b.beta2.clone(),
            b.upsilon,
            b.alpha,
            b.perturbation.iter().map(|d| 2.0 * d).collect(),
        )
        .unwrap();
        let (c1, c2) = (prop4_check(&b).unwrap(), prop4_check(&scaled).unwrap());
        assert!((c2.lhs - 2.0 * c1.lhs).abs() < 1e-8 * (1.0 + c1.lhs));
        assert!((c2.rhs - 2.0 * c1.rhs).abs() < 1e-8 * (1.0 + c1.rhs));
        let (k1, k2) = (b.constants().unwrap(), scaled.constants().unwrap());
        for (x, y) in [(k1.zeta, k2.zeta), (k1.chi1, k2.chi1), (k1.chi3, k2.chi3), (k1.chi4, k2.chi4), (k1.psi2, k2.psi2)] {
            assert!((y - 2.0 * x).abs() < 1e-9 * (1.0 + x));
        }
        for (x, y) in [(k1.c, k2.c), (k1.delta2, k2.delta2), (k1.dtv2, k2.dtv2), (k1.chi2, k2.chi2)] {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let inst = BoundInstance::random(29, 0.1).unwrap();
        let g = policy_gradient(&inst.mdp, &inst.pi).unwrap();
        assert_eq!(g.len(), inst.mdp.n_states());
    }

    #[test]
    fn monotone_chain_from_optimal_is_flat() {
        let mdp = chain(0.5);
        let pi = TabularPolicy::constant(2, -1.0).unwrap();
        let rep = monotone_surrogate_check(&mdp, &pi, 3).unwrap();
        for st in &rep.steps {
            assert!((st.j_next - st.j_current).abs() < 1e-8);
            assert!((st.m_current - st.j_current).abs() < 1e-12);
        }
        assert!(rep.passed());
    }

    #[test]
    fn monotone_search_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let big = FiniteMdp::random(8, 21, 0.9, 2.0, &mut rng).unwrap();
        let pi = TabularPolicy::constant(8, 0.0).unwrap();
        assert!(matches!(monotone_surrogate_check(&big, &pi, 1), Err(BoundError::SearchTooLarge(_))));
    }

    #[test]
    fn instances_pass_every_check() {
        for seed in 0..20 {
            let rep = run_instance(seed, 0.1, 50).unwrap();
            for c in &rep.checks {
                assert!(c.passed(), "seed {seed}: {c:?}");
            }
        }
    }

    #[test]
    fn csv_has_constant_columns() {
        let rep = run_instance(1, 0.1, 10).unwrap();
        let csv = suite_csv(&[rep]);
        let header_cols = csv.lines().next().unwrap().split(',').count();
        assert_eq!(header_cols, 6 + 13);
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == header_cols));
    }
}
