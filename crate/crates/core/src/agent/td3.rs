use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dpg::{
    behavior_action, bellman_target, concat_rows, conventional_dpg, critic_loss_gradient, elite_dpg,
    interpolation_merge, smoothed_target_action, two_step_merge, NetworkCritic,
};
use super::{AgentError, MergeConfig, RegularizerMode, Result, Variant};
use crate::envs::{PointMassEnv, Trajectory};
use crate::genmodel::{vae_train_step, VaeConfig, VaeModel};
use crate::numcore::{Activation, AdamState, Direction, GradVector, NetworkParams};
use crate::replay::{Batch, EliteErb, FullErb};

pub const CURVE_HEADER: &str = "step,episode,train_return,eval_return,critic_loss,vae_loss,policy_update_count";

/// Independent random streams, one per consumer, all derived from the run seed.
#[derive(Debug, Clone)]
struct Streams {
    explore: ChaCha8Rng,
    reset: ChaCha8Rng,
    full: ChaCha8Rng,
    elite: ChaCha8Rng,
    smooth: ChaCha8Rng,
    vae: ChaCha8Rng,
    eval: ChaCha8Rng,
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const PROBE_STREAM: u64 = 8;

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            explore: stream(seed, 1),
            reset: stream(seed, 2),
            full: stream(seed, 3),
            elite: stream(seed, 4),
            smooth: stream(seed, 5),
            vae: stream(seed, 6),
            eval: stream(seed, 7),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub episode: u64,
    pub train_return: Option<f64>,
    pub eval_return: Option<f64>,
    pub critic_loss: Option<f64>,
    pub vae_loss: Option<f64>,
    pub policy_update_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                r.episode,
                cell(r.train_return),
                cell(r.eval_return),
                cell(r.critic_loss),
                cell(r.vae_loss),
                r.policy_update_count
            );
        }
        out
    }

    pub fn final_eval_return(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.eval_return)
    }

    /// `(step, eval_return)` for every evaluation point.
    pub fn eval_points(&self) -> Vec<(u64, f64)> {
        self.rows.iter().filter_map(|r| r.eval_return.map(|e| (r.step, e))).collect()
    }
}

/// Progress passed to the training hook after every environment step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub step: u64,
    pub episode: u64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: MergeConfig,
    variant: Variant,
    state_dim: usize,
    action_dim: usize,
    pub policy: NetworkParams,
    pub policy_target: NetworkParams,
    policy_adam: AdamState,
    pub critics: [NetworkParams; 2],
    pub critic_targets: [NetworkParams; 2],
    critic_adams: [AdamState; 2],
    pub full: FullErb,
    pub elite: EliteErb,
    pub vae: Option<VaeModel>,
    streams: Streams,
    seed: u64,
    env_steps: u64,
    critic_updates: u64,
    policy_updates: u64,
    episodes: u64,
}

#[derive(Default)]
struct EpisodeStats {
    critic_sum: f64,
    critic_n: u64,
    vae_sum: f64,
    vae_n: u64,
}

impl EpisodeStats {
    fn take(&mut self) -> (Option<f64>, Option<f64>) {
        let c = (self.critic_n > 0).then(|| self.critic_sum / self.critic_n as f64);
        let v = (self.vae_n > 0).then(|| self.vae_sum / self.vae_n as f64);
        *self = Self::default();
        (c, v)
    }
}

impl Agent {
    pub fn new(config: MergeConfig, variant: Variant, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || action_dim == 0 {
            return Err(AgentError::Shape("state and action dims must be positive".into()));
        }
        let mut init = stream(seed, INIT_STREAM);
        let mut policy = NetworkParams::mlp(state_dim, &config.hidden, action_dim, Activation::Relu, Activation::Tanh)?;
        policy.init_uniform(&mut init);
        let mut critics = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut net =
                NetworkParams::mlp(state_dim + action_dim, &config.hidden, 1, Activation::Relu, Activation::Identity)?;
            net.init_uniform(&mut init);
            critics.push(net);
        }
        let critics: [NetworkParams; 2] = critics.try_into().expect("two critics");
        let mut streams = Streams::new(seed);
        let vae_used = config.regularizer_mode == RegularizerMode::Vae && config.lambda > 0.0 && config.upsilon > 0.0;
        let vae = if variant.uses_elite() && vae_used {
            let vc = VaeConfig { hidden: config.vae_hidden.clone(), kl_weight: config.kl_weight, rate: config.vae_rate };
            Some(VaeModel::new(state_dim, action_dim, &vc, &mut streams.vae)?)
        } else {
            None
        };
        Ok(Self {
            policy_adam: AdamState::new(policy.len(), config.alpha)?,
            critic_adams: [AdamState::new(critics[0].len(), config.critic_rate)?, AdamState::new(critics[1].len(), config.critic_rate)?],
            policy_target: policy.clone(),
            critic_targets: critics.clone(),
            policy,
            critics,
            full: FullErb::new(config.buffer_capacity, state_dim, action_dim)?,
            elite: EliteErb::new(config.kappa)?,
            vae,
            streams,
            seed,
            state_dim,
            action_dim,
            config,
            variant,
            env_steps: 0,
            critic_updates: 0,
            policy_updates: 0,
            episodes: 0,
        })
    }

    pub fn config(&self) -> &MergeConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn policy_updates(&self) -> u64 {
        self.policy_updates
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn critic(&self, i: usize) -> NetworkCritic<'_> {
        NetworkCritic { net: &self.critics[i], action_dim: self.action_dim }
    }

    /// Deterministic action `π(s)`.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.policy.forward(state)?)
    }

    /// One TD3 critic step on `batch`; returns the summed pre-step loss of both critics.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        let n = batch.len();
        if n == 0 {
            return Err(AgentError::EmptyBatch);
        }
        let ad = self.action_dim;
        let mut next_actions = self.policy_target.forward_batch(&batch.next_states, n)?.into_output();
        for a in &mut next_actions {
            let raw: f64 = self.config.smoothing_std * self.streams.smooth.sample::<f64, _>(StandardNormal);
            *a = smoothed_target_action(*a, raw, self.config.smoothing_clip);
        }
        let next_in = concat_rows(&batch.next_states, self.state_dim, &next_actions, ad, n);
        let q1 = self.critic_targets[0].forward_batch(&next_in, n)?.into_output();
        let q2 = self.critic_targets[1].forward_batch(&next_in, n)?.into_output();
        let targets: Vec<f64> = (0..n)
            .map(|i| bellman_target(batch.rewards[i], self.config.gamma, batch.ends_bootstrap(i), q1[i], q2[i]))
            .collect();
        let mut total = 0.0;
        for k in 0..2 {
            let (loss, grad) = critic_loss_gradient(&self.critics[k], &batch.states, &batch.actions, &targets)?;
            if !loss.is_finite() {
                return Err(AgentError::NonFinite { step: self.env_steps, what: "critic loss" });
            }
            self.critic_adams[k].step(&mut self.critics[k], &grad, Direction::Descent)?;
            total += loss;
        }
        self.critic_updates += 1;
        Ok(total)
    }

    fn references(&self, batch: &Batch) -> Result<Option<Vec<f64>>> {
        if self.config.lambda == 0.0 {
            return Ok(None);
        }
        Ok(match self.config.regularizer_mode {
            RegularizerMode::Vae => match &self.vae {
                Some(v) => Some(v.reference_actions(&batch.states)?),
                None => None,
            },
            RegularizerMode::SampledAction => Some(batch.actions.clone()),
            RegularizerMode::None => None,
        })
    }

    /// The variant's policy gradient at the current parameters.
    ///
    /// Without an elite batch every variant falls back to the conventional gradient.
    pub fn policy_gradient(&self, full: &Batch, elite: Option<&Batch>) -> Result<GradVector> {
        self.policy_gradient_as(self.variant, full, elite)
    }

    /// The gradient `variant` would produce from this agent's networks and batches.
    pub fn policy_gradient_as(&self, variant: Variant, full: &Batch, elite: Option<&Batch>) -> Result<GradVector> {
        let critic = self.critic(0);
        let elite = match (variant, elite) {
            (Variant::Td3, _) | (_, None) => return conventional_dpg(&self.policy, &critic, &full.states),
            (_, Some(e)) => e,
        };
        let refs = self.references(elite)?;
        let (lambda, upsilon) = (self.config.lambda, self.config.upsilon);
        match variant {
            Variant::Td3Im => {
                let g_c = conventional_dpg(&self.policy, &critic, &full.states)?;
                if upsilon == 0.0 {
                    return Ok(g_c);
                }
                let g_e = elite_dpg(&self.policy, &critic, &elite.states, refs.as_deref(), lambda)?;
                interpolation_merge(&g_c, &g_e, upsilon)
            }
            Variant::Td3TwoStep => two_step_merge(
                &self.policy,
                &critic,
                &full.states,
                &elite.states,
                refs.as_deref(),
                lambda,
                self.config.alpha,
                upsilon,
            ),
            Variant::Td3 => unreachable!(),
        }
    }

    fn policy_update(&mut self, full: &Batch, elite: Option<&Batch>) -> Result<()> {
        let g = self.policy_gradient(full, elite)?;
        if g.first_non_finite().is_some() {
            return Err(AgentError::NonFinite { step: self.env_steps, what: "policy gradient" });
        }
        self.policy_adam.step(&mut self.policy, &g, Direction::Ascent)?;
        if self.policy.first_non_finite().is_some() {
            return Err(AgentError::NonFinite { step: self.env_steps, what: "policy parameters" });
        }
        self.policy_updates += 1;
        let tau = self.config.polyak;
        self.policy_target.polyak_from(&self.policy, tau)?;
        for k in 0..2 {
            self.critic_targets[k].polyak_from(&self.critics[k], tau)?;
        }
        Ok(())
    }

    /// Critic step, VAE step and, every `policy_delay` critic steps, a policy step.
    /// Returns `(critic_loss, vae_loss)`.
    pub fn update(&mut self) -> Result<(f64, Option<f64>)> {
        let full = self.full.sample(self.config.batch_size, &mut self.streams.full)?;
        let elite = if self.variant.uses_elite() && !self.elite.is_empty() {
            Some(self.elite.sample(self.config.batch_size, &mut self.streams.elite)?)
        } else {
            None
        };
        let critic_loss = self.critic_update(&full)?;
        let mut vae_loss = None;
        if let (Some(vae), Some(batch)) = (self.vae.as_mut(), elite.as_ref()) {
            let l = vae_train_step(vae, batch, &mut self.streams.vae)?;
            if !l.is_finite() {
                return Err(AgentError::NonFinite { step: self.env_steps, what: "vae loss" });
            }
            vae_loss = Some(l);
        }
        if self.critic_updates.is_multiple_of(self.config.policy_delay) {
            self.policy_update(&full, elite.as_ref())?;
        }
        Ok((critic_loss, vae_loss))
    }

    /// Mean return of the deterministic policy over `episodes` fresh episodes.
    pub fn evaluate<R: Rng + ?Sized>(&self, env: &PointMassEnv, episodes: usize, rng: &mut R) -> Result<f64> {
        let snapshot = self.policy.clone();
        let mut env = env.clone();
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut s = env.reset(rng);
            loop {
                let a = snapshot.forward(&s)?;
                let t = env.step(&a)?;
                total += t.reward;
                if t.terminal {
                    break;
                }
                s = t.next_state;
            }
        }
        Ok(total / episodes as f64)
    }

    pub fn train(&mut self, env: &mut PointMassEnv, total_steps: u64) -> Result<LearningCurve> {
        self.train_with_hook(env, total_steps, |_, _| Ok(()))
    }

    /// Runs the training loop for `total_steps` environment steps, calling
    /// `hook` after every step.
    pub fn train_with_hook<H>(&mut self, env: &mut PointMassEnv, total_steps: u64, mut hook: H) -> Result<LearningCurve>
    where
        H: FnMut(&Agent, StepInfo) -> Result<()>,
    {
        let mut curve = LearningCurve::default();
        let mut stats = EpisodeStats::default();
        let mut traj = Trajectory::new();
        let mut state = env.reset(&mut self.streams.reset);
        for _ in 0..total_steps {
            let action = behavior_action(&self.policy, &state, self.config.exploration_std, &mut self.streams.explore)?;
            let t = env.step(&action)?;
            self.full.push(&t)?;
            let done = t.terminal;
            state = t.next_state.clone();
            traj.push(t);
            let post_warmup = self.env_steps >= self.config.warmup_steps;
            self.env_steps += 1;
            let mut episode_return = None;
            if done {
                let finished = std::mem::take(&mut traj);
                episode_return = Some(finished.episodic_return());
                self.elite.end_trajectory(finished)?;
                self.episodes += 1;
                state = env.reset(&mut self.streams.reset);
            }
            if post_warmup {
                let (c, v) = self.update()?;
                stats.critic_sum += c;
                stats.critic_n += 1;
                if let Some(v) = v {
                    stats.vae_sum += v;
                    stats.vae_n += 1;
                }
            }
            let eval_due = self.env_steps.is_multiple_of(self.config.eval_every) || self.env_steps == total_steps;
            let eval_return = if eval_due {
                let mut rng = std::mem::replace(&mut self.streams.eval, ChaCha8Rng::seed_from_u64(0));
                let r = self.evaluate(env, self.config.eval_episodes, &mut rng);
                self.streams.eval = rng;
                Some(r?)
            } else {
                None
            };
            if episode_return.is_some() || eval_return.is_some() {
                let (critic_loss, vae_loss) = if episode_return.is_some() { stats.take() } else { (None, None) };
                curve.rows.push(CurveRow {
                    step: self.env_steps,
                    episode: self.episodes,
                    train_return: episode_return,
                    eval_return,
                    critic_loss,
                    vae_loss,
                    policy_update_count: self.policy_updates,
                });
            }
            hook(self, StepInfo { step: self.env_steps, episode: self.episodes })?;
        }
        Ok(curve)
    }
}
