//! TD3 with conventional, interpolation-merged and two-step-merged policy gradients.

mod dpg;
pub mod gradcheck;
mod probe;
mod td3;

pub use dpg::{
    behavior_action, bellman_target, conventional_dpg, critic_loss_gradient, elite_dpg, interpolation_merge,
    smoothed_target_action, two_step_merge, two_step_merge_with, Critic, NetworkCritic, QuadraticCritic,
};
pub use gradcheck::{check_operations, gradient_suite, GradOp, OpReport};
pub use probe::{dpg_variance_probe, ProbeReport};
pub use td3::{Agent, CurveRow, LearningCurve, StepInfo, CURVE_HEADER};

use thiserror::Error;

use crate::envs::EnvError;
use crate::genmodel::GenError;
use crate::numcore::NumError;
use crate::replay::ReplayError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: &'static str },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("elite buffer is empty; use the conventional gradient")]
    EliteUnavailable,
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T> = std::result::Result<T, AgentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Td3,
    Td3Im,
    Td3TwoStep,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Td3, Variant::Td3Im, Variant::Td3TwoStep];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Td3 => "td3",
            Variant::Td3Im => "td3_im",
            Variant::Td3TwoStep => "td3_2m",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "td3" => Some(Variant::Td3),
            "td3_im" => Some(Variant::Td3Im),
            "td3_2m" => Some(Variant::Td3TwoStep),
            _ => None,
        }
    }

    pub fn uses_elite(self) -> bool {
        self != Variant::Td3
    }
}

/// Reference action used by the elite regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerMode {
    /// Zero-latent VAE decode.
    Vae,
    /// The action stored with the elite transition.
    SampledAction,
    None,
}

impl RegularizerMode {
    pub fn name(self) -> &'static str {
        match self {
            RegularizerMode::Vae => "vae",
            RegularizerMode::SampledAction => "sampled_action",
            RegularizerMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "vae" => Some(RegularizerMode::Vae),
            "sampled_action" => Some(RegularizerMode::SampledAction),
            "none" => Some(RegularizerMode::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    pub upsilon: f64,
    pub lambda: f64,
    /// Policy learning rate; also the plain inner step of two-step merging.
    pub alpha: f64,
    pub critic_rate: f64,
    pub kappa: usize,
    pub gamma: f64,
    pub exploration_std: f64,
    pub smoothing_std: f64,
    pub smoothing_clip: f64,
    pub policy_delay: u64,
    pub polyak: f64,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub regularizer_mode: RegularizerMode,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub vae_hidden: Vec<usize>,
    pub vae_rate: f64,
    pub kl_weight: f64,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            upsilon: 0.25,
            lambda: 0.1,
            alpha: 0.001,
            critic_rate: 0.001,
            kappa: 30,
            gamma: 0.99,
            exploration_std: 0.2,
            smoothing_std: 0.2,
            smoothing_clip: 0.5,
            policy_delay: 2,
            polyak: 0.005,
            batch_size: 256,
            warmup_steps: 1000,
            regularizer_mode: RegularizerMode::Vae,
            hidden: vec![64, 64],
            buffer_capacity: 100_000,
            vae_hidden: vec![32, 32],
            vae_rate: 0.001,
            kl_weight: 1.0,
            eval_every: 5000,
            eval_episodes: 10,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.upsilon) {
            return bad(format!("upsilon must lie in [0, 1), got {}", self.upsilon));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.critic_rate > 0.0 && self.critic_rate < 1.0) {
            return bad(format!("critic_rate must lie in (0, 1), got {}", self.critic_rate));
        }
        if self.kappa == 0 {
            return bad("kappa must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        for (name, v) in [
            ("exploration_std", self.exploration_std),
            ("smoothing_std", self.smoothing_std),
            ("smoothing_clip", self.smoothing_clip),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad(format!("polyak must lie in [0, 1], got {}", self.polyak));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.hidden.contains(&0) || self.vae_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive".into());
        }
        if !(self.vae_rate > 0.0 && self.vae_rate < 1.0) {
            return bad(format!("vae_rate must lie in (0, 1), got {}", self.vae_rate));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad(format!("kl_weight must be non-negative, got {}", self.kl_weight));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive".into());
        }
        Ok(())
    }
}
