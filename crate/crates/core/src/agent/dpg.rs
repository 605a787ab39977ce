use rand::Rng;
use rand_distr::StandardNormal;

use super::{AgentError, Result};
use crate::numcore::{GradVector, NetworkParams};

/// A differentiable action-value function.
pub trait Critic {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// `Q(s, a)` for each of the `n` rows.
    fn values(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>>;

    /// `∇_a Q(s, a)` for each row, row-major `(n, action_dim)`.
    fn action_gradients(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>>;
}

fn rows(len: usize, dim: usize, what: &str) -> Result<usize> {
    if dim == 0 || !len.is_multiple_of(dim) {
        return Err(AgentError::Shape(format!("{len} {what} values do not split into rows of {dim}")));
    }
    Ok(len / dim)
}

pub(crate) fn concat_rows(a: &[f64], da: usize, b: &[f64], db: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * (da + db));
    for i in 0..n {
        out.extend_from_slice(&a[i * da..(i + 1) * da]);
        out.extend_from_slice(&b[i * db..(i + 1) * db]);
    }
    out
}

/// A network read as a critic: input is the `(state, action)` row, output one value.
#[derive(Debug, Clone, Copy)]
pub struct NetworkCritic<'a> {
    pub net: &'a NetworkParams,
    pub action_dim: usize,
}

impl<'a> NetworkCritic<'a> {
    pub fn new(net: &'a NetworkParams, action_dim: usize) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() <= action_dim {
            return Err(AgentError::Shape(format!(
                "critic network maps {} → {}, cannot take {action_dim} actions",
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(Self { net, action_dim })
    }

    fn input(&self, states: &[f64], actions: &[f64]) -> Result<(usize, Vec<f64>)> {
        let ad = self.action_dim;
        let sd = self.state_dim();
        let n = rows(states.len(), sd, "state")?;
        if actions.len() != n * ad {
            return Err(AgentError::Shape(format!("{} action values for {n} states", actions.len())));
        }
        Ok((n, concat_rows(states, sd, actions, ad, n)))
    }
}

impl Critic for NetworkCritic<'_> {
    fn state_dim(&self) -> usize {
        self.net.input_dim() - self.action_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn values(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        let (n, input) = self.input(states, actions)?;
        Ok(self.net.forward_batch(&input, n)?.into_output())
    }

    fn action_gradients(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        let (n, input) = self.input(states, actions)?;
        let sd = self.state_dim();
        let tape = self.net.forward_batch(&input, n)?;
        let mut gin = vec![0.0; n * (sd + self.action_dim)];
        self.net.backward(&tape, &vec![1.0; n], None, Some(&mut gin))?;
        let mut out = Vec::with_capacity(n * self.action_dim);
        for row in gin.chunks_exact(sd + self.action_dim) {
            out.extend_from_slice(&row[sd..]);
        }
        Ok(out)
    }
}

/// `Q(s, a) = −scale·‖a − (W s + b)‖²`, an analytic critic with a known maximiser.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCritic {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Row-major `(action_dim, state_dim)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub scale: f64,
}

impl QuadraticCritic {
    /// `Q(s, a) = −Σ_i (a_i − s_i)²` with matching state and action dims.
    pub fn tracking(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self { state_dim: dim, action_dim: dim, weight, bias: vec![0.0; dim], scale: 1.0 }
    }

    pub fn zero(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            weight: vec![0.0; state_dim * action_dim],
            bias: vec![0.0; action_dim],
            scale: 0.0,
        }
    }

    /// The per-state maximiser `W s + b`.
    pub fn argmax(&self, state: &[f64]) -> Vec<f64> {
        (0..self.action_dim)
            .map(|i| {
                self.bias[i]
                    + self.weight[i * self.state_dim..(i + 1) * self.state_dim]
                        .iter()
                        .zip(state)
                        .map(|(w, s)| w * s)
                        .sum::<f64>()
            })
            .collect()
    }

    fn residuals(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        let n = rows(states.len(), self.state_dim, "state")?;
        if actions.len() != n * self.action_dim {
            return Err(AgentError::Shape(format!("{} action values for {n} states", actions.len())));
        }
        let mut out = Vec::with_capacity(n * self.action_dim);
        for b in 0..n {
            let target = self.argmax(&states[b * self.state_dim..(b + 1) * self.state_dim]);
            for i in 0..self.action_dim {
                out.push(actions[b * self.action_dim + i] - target[i]);
            }
        }
        Ok(out)
    }
}

impl Critic for QuadraticCritic {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn values(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        let r = self.residuals(states, actions)?;
        Ok(r.chunks_exact(self.action_dim).map(|row| -self.scale * row.iter().map(|x| x * x).sum::<f64>()).collect())
    }

    fn action_gradients(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        Ok(self.residuals(states, actions)?.into_iter().map(|x| -2.0 * self.scale * x).collect())
    }
}

/// `π(s) + N(0, std²)` per dimension, clipped to `[−1, 1]`.
pub fn behavior_action<R: Rng + ?Sized>(
    policy: &NetworkParams,
    state: &[f64],
    exploration_std: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut a = policy.forward(state)?;
    for x in &mut a {
        let noise: f64 = rng.sample(StandardNormal);
        *x = (*x + exploration_std * noise).clamp(-1.0, 1.0);
    }
    Ok(a)
}

/// `clip(target_action + clip(noise, ±noise_clip), ±1)`.
pub fn smoothed_target_action(target_action: f64, raw_noise: f64, noise_clip: f64) -> f64 {
    (target_action + raw_noise.clamp(-noise_clip, noise_clip)).clamp(-1.0, 1.0)
}

/// `r + γ·(1 − done)·min(q1, q2)`.
pub fn bellman_target(reward: f64, gamma: f64, done: bool, q1: f64, q2: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

fn policy_gradient_with<C: Critic + ?Sized>(
    policy: &NetworkParams,
    critic: &C,
    states: &[f64],
    reference: Option<(&[f64], f64)>,
) -> Result<GradVector> {
    let sd = policy.input_dim();
    let ad = policy.output_dim();
    if critic.state_dim() != sd || critic.action_dim() != ad {
        return Err(AgentError::Shape(format!(
            "policy maps {sd} → {ad} but critic expects ({}, {})",
            critic.state_dim(),
            critic.action_dim()
        )));
    }
    let n = rows(states.len(), sd, "state")?;
    if n == 0 {
        return Err(AgentError::EmptyBatch);
    }
    let tape = policy.forward_batch(states, n)?;
    let actions = tape.output();
    let mut upstream = critic.action_gradients(states, actions)?;
    if let Some((refs, lambda)) = reference {
        if refs.len() != n * ad {
            return Err(AgentError::Shape(format!("{} reference values for {n} states", refs.len())));
        }
        if lambda != 0.0 {
            for ((u, a), r) in upstream.iter_mut().zip(actions).zip(refs) {
                *u -= lambda * 2.0 * (a - r);
            }
        }
    }
    let inv = 1.0 / n as f64;
    for u in &mut upstream {
        *u *= inv;
    }
    let mut grad = vec![0.0; policy.len()];
    policy.backward(&tape, &upstream, Some(&mut grad), None)?;
    Ok(GradVector::params(grad))
}

/// Batch mean of `∇θπ(s)·∇aQ(s, a)|_{a=π(s)}`; an ascent direction.
pub fn conventional_dpg<C: Critic + ?Sized>(policy: &NetworkParams, critic: &C, states: &[f64]) -> Result<GradVector> {
    policy_gradient_with(policy, critic, states, None)
}

/// Batch mean of `∇θπ(s)·∇aQ(s, a)|_{a=π(s)} − λ∇θ‖π(s) − ref(s)‖²`.
///
/// `references` holds one reference action per state and is treated as a
/// constant; `None` drops the penalty.
pub fn elite_dpg<C: Critic + ?Sized>(
    policy: &NetworkParams,
    critic: &C,
    states: &[f64],
    references: Option<&[f64]>,
    lambda: f64,
) -> Result<GradVector> {
    policy_gradient_with(policy, critic, states, references.map(|r| (r, lambda)))
}

/// `(1 − υ)·g_c + υ·g_e`.
pub fn interpolation_merge(g_c: &GradVector, g_e: &GradVector, upsilon: f64) -> Result<GradVector> {
    if g_c.len() != g_e.len() || g_c.wrt != g_e.wrt {
        return Err(AgentError::Shape(format!("cannot merge gradients of length {} and {}", g_c.len(), g_e.len())));
    }
    let values = g_c.values.iter().zip(&g_e.values).map(|(c, e)| (1.0 - upsilon) * c + upsilon * e).collect();
    Ok(GradVector { values, wrt: g_c.wrt })
}

/// Two-step merge over abstract gradient oracles.
///
/// `g_c = conventional(θ)`, `θ′ = θ + α(1−υ)·g_c`, result
/// `(1−υ)·g_c + υ·elite(θ′)`. With `υ = 0` the elite oracle is not called.
pub fn two_step_merge_with<Fc, Fe>(theta: &[f64], conventional: Fc, elite: Fe, alpha: f64, upsilon: f64) -> Result<GradVector>
where
    Fc: FnOnce(&[f64]) -> Result<GradVector>,
    Fe: FnOnce(&[f64]) -> Result<GradVector>,
{
    let g_c = conventional(theta)?;
    if g_c.len() != theta.len() {
        return Err(AgentError::Shape(format!("gradient length {} for {} parameters", g_c.len(), theta.len())));
    }
    if upsilon == 0.0 {
        return Ok(g_c);
    }
    let step = alpha * (1.0 - upsilon);
    let theta_prime: Vec<f64> = theta.iter().zip(&g_c.values).map(|(t, g)| t + step * g).collect();
    let g_e = elite(&theta_prime)?;
    interpolation_merge(&g_c, &g_e, upsilon)
}

/// Two-step merge of the conventional gradient on `full_states` and the
/// elite gradient on `elite_states` evaluated at the look-ahead parameters.
#[allow(clippy::too_many_arguments)]
pub fn two_step_merge<C: Critic + ?Sized>(
    policy: &NetworkParams,
    critic: &C,
    full_states: &[f64],
    elite_states: &[f64],
    references: Option<&[f64]>,
    lambda: f64,
    alpha: f64,
    upsilon: f64,
) -> Result<GradVector> {
    two_step_merge_with(
        policy.values(),
        |_| conventional_dpg(policy, critic, full_states),
        |theta_prime| {
            let shifted = policy.with_values(theta_prime.to_vec())?;
            elite_dpg(&shifted, critic, elite_states, references, lambda)
        },
        alpha,
        upsilon,
    )
}

/// Loss `mean_i (Q(s_i, a_i) − y_i)²` and its gradient with respect to the critic parameters.
pub fn critic_loss_gradient(
    critic: &NetworkParams,
    states: &[f64],
    actions: &[f64],
    targets: &[f64],
) -> Result<(f64, GradVector)> {
    let n = targets.len();
    if n == 0 {
        return Err(AgentError::EmptyBatch);
    }
    let ad = actions.len() / n;
    let sd = states.len() / n;
    if sd * n != states.len() || ad * n != actions.len() || sd + ad != critic.input_dim() || critic.output_dim() != 1 {
        return Err(AgentError::Shape(format!(
            "critic takes {} inputs; batch has {} states and {} actions for {n} targets",
            critic.input_dim(),
            states.len(),
            actions.len()
        )));
    }
    let input = concat_rows(states, sd, actions, ad, n);
    let tape = critic.forward_batch(&input, n)?;
    let q = tape.output();
    let mut loss = 0.0;
    let mut upstream = Vec::with_capacity(n);
    for (qi, yi) in q.iter().zip(targets) {
        let d = qi - yi;
        loss += d * d;
        upstream.push(2.0 * d / n as f64);
    }
    loss /= n as f64;
    let mut grad = vec![0.0; critic.len()];
    critic.backward(&tape, &upstream, Some(&mut grad), None)?;
    Ok((loss, GradVector::params(grad)))
}
