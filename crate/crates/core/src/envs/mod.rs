//! Environments and exact oracles.
//!
//! [`PointMassEnv`] is the continuous control task used for training.
//! [`FiniteMdp`] is a small tabular MDP whose transitions interpolate linearly
//! between grid actions, so values, visitations and policy gradients can be
//! computed exactly.

mod finite_mdp;
pub(crate) mod linalg;
mod point_mass;

pub use finite_mdp::{
    exact_j, exact_j_from, exact_q, occupancy, visitation, visitation_from, FiniteMdp, QTable, TabularPolicy,
    Visitation,
};
pub use point_mass::{lqr_gain, lqr_oracle_return, PointMassConfig, PointMassEnv};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("riccati iteration did not converge within {iterations} iterations")]
    RiccatiDiverged { iterations: usize },
    #[error("linear system is singular")]
    Singular,
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// One environment step.
///
/// `truncated` marks a terminal produced by the time limit rather than by the
/// task itself; bootstrapped targets keep the successor value for those.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

impl Transition {
    /// True when the Bellman target should drop the successor value.
    pub fn ends_bootstrap(&self) -> bool {
        self.terminal && !self.truncated
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) {
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Undiscounted sum of rewards.
    pub fn episodic_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }
}

/// `½ Σ |p_i − q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(EnvError::Shape(format!("distributions have {} and {} entries", p.len(), q.len())));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        let d = tv_distance(&[0.2, 0.3, 0.5], &[0.3, 0.3, 0.4]).unwrap();
        assert!((d - 0.1).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn trajectory_return_sums_rewards() {
        let mut tr = Trajectory::new();
        for r in [1.0, -2.0, 0.5] {
            tr.push(Transition {
                state: vec![0.0],
                action: vec![0.0],
                reward: r,
                next_state: vec![0.0],
                terminal: false,
                truncated: false,
            });
        }
        assert_eq!(tr.episodic_return(), -0.5);
    }
}
