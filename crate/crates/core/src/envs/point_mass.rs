use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Result, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Multiplies the whole reward; 0 gives the zero-cost variant.
    pub reward_scale: f64,
    pub action_cost: f64,
    /// Initial position is drawn from `Uniform[−init_range, init_range]`.
    pub init_range: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self { dt: 0.05, horizon: 200, reward_scale: 1.0, action_cost: 0.1, init_range: 1.0 }
    }
}

impl PointMassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(EnvError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(EnvError::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.reward_scale >= 0.0 && self.action_cost >= 0.0 && self.init_range >= 0.0) {
            return Err(EnvError::InvalidConfig("reward scale, action cost and init range must be non-negative".into()));
        }
        Ok(())
    }
}

/// A unit mass on a line pushed by a bounded force.
///
/// State `(position, velocity)`, action in `[−1, 1]`. Reward is
/// `−scale·(pos² + action_cost·a²)` using the position before the step.
#[derive(Debug, Clone)]
pub struct PointMassEnv {
    config: PointMassConfig,
    position: f64,
    velocity: f64,
    step_index: usize,
    clip_count: u64,
}

impl PointMassEnv {
    pub const STATE_DIM: usize = 2;
    pub const ACTION_DIM: usize = 1;

    pub fn new(config: PointMassConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, position: 0.0, velocity: 0.0, step_index: 0, clip_count: 0 })
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.config
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let r = self.config.init_range;
        let pos = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        self.reset_to(pos, 0.0)
    }

    pub fn reset_to(&mut self, position: f64, velocity: f64) -> Vec<f64> {
        self.position = position;
        self.velocity = velocity;
        self.step_index = 0;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Number of actions that had to be clipped into `[−1, 1]` so far.
    pub fn clip_count(&self) -> u64 {
        self.clip_count
    }

    /// Euler step and reward for one `(state, action)` pair.
    pub fn dynamics(config: &PointMassConfig, position: f64, velocity: f64, action: f64) -> ((f64, f64), f64) {
        let next = (position + config.dt * velocity, velocity + config.dt * action);
        let reward = -config.reward_scale * (position * position + config.action_cost * action * action);
        (next, reward)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if action.len() != Self::ACTION_DIM {
            return Err(EnvError::Shape(format!("point mass takes 1 action, got {}", action.len())));
        }
        let raw = action[0];
        if !raw.is_finite() {
            return Err(EnvError::InvalidConfig(format!("non-finite action {raw}")));
        }
        let a = raw.clamp(-1.0, 1.0);
        if a != raw {
            self.clip_count += 1;
        }
        let state = self.observation();
        let ((p, v), reward) = Self::dynamics(&self.config, self.position, self.velocity, a);
        self.position = p;
        self.velocity = v;
        self.step_index += 1;
        let terminal = self.step_index >= self.config.horizon;
        Ok(Transition {
            state,
            action: vec![a],
            reward,
            next_state: self.observation(),
            terminal,
            truncated: terminal,
        })
    }
}

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITERS: usize = 1_000_000;
const ORACLE_SAMPLES: usize = 10_000;
const ORACLE_SEED: u64 = 0x5eed_1a2;

/// Infinite-horizon discrete LQR gain `K` for `u = −K·(pos, vel)`.
pub fn lqr_gain(config: &PointMassConfig) -> Result<[f64; 2]> {
    config.validate()?;
    let dt = config.dt;
    let q0 = config.reward_scale;
    let r = config.reward_scale * config.action_cost;
    if q0 == 0.0 {
        return Ok([0.0, 0.0]);
    }
    // A = [[1, dt], [0, 1]], B = [0, dt]ᵀ, P symmetric [[p00, p01], [p01, p11]].
    let (mut p00, mut p01, mut p11) = (q0, 0.0, 0.0);
    for _ in 0..RICCATI_MAX_ITERS {
        // AᵀPA
        let a00 = p00;
        let a01 = p00 * dt + p01;
        let a11 = p00 * dt * dt + 2.0 * p01 * dt + p11;
        // BᵀPA and BᵀPB
        let bpa0 = dt * p01;
        let bpa1 = dt * (p01 * dt + p11);
        let bpb = dt * dt * p11;
        let s = r + bpb;
        let n00 = q0 + a00 - bpa0 * bpa0 / s;
        let n01 = a01 - bpa0 * bpa1 / s;
        let n11 = a11 - bpa1 * bpa1 / s;
        let change = (n00 - p00).abs().max((n01 - p01).abs()).max((n11 - p11).abs());
        let scale = n00.abs().max(n01.abs()).max(n11.abs()).max(1.0);
        p00 = n00;
        p01 = n01;
        p11 = n11;
        if change < RICCATI_TOL * scale {
            let s = r + dt * dt * p11;
            return Ok([dt * p01 / s, dt * (p01 * dt + p11) / s]);
        }
    }
    Err(EnvError::RiccatiDiverged { iterations: RICCATI_MAX_ITERS })
}

/// Mean episodic return of the clipped linear controller `u = clip(−K·x)`
/// over `n_samples` initial positions drawn with `seed`.
pub fn linear_policy_return(config: &PointMassConfig, gain: [f64; 2], n_samples: usize, seed: u64) -> Result<f64> {
    let mut env = PointMassEnv::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_samples {
        let mut s = env.reset(&mut rng);
        loop {
            let u = (-(gain[0] * s[0] + gain[1] * s[1])).clamp(-1.0, 1.0);
            let t = env.step(&[u])?;
            total += t.reward;
            if t.terminal {
                break;
            }
            s = t.next_state;
        }
    }
    Ok(total / n_samples as f64)
}

/// Average return of the saturated LQR controller over a fixed 10,000-sample
/// Monte Carlo draw of initial states.
pub fn lqr_oracle_return(config: &PointMassConfig) -> Result<f64> {
    let gain = lqr_gain(config)?;
    linear_policy_return(config, gain, ORACLE_SAMPLES, ORACLE_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> PointMassEnv {
        PointMassEnv::new(PointMassConfig::default()).unwrap()
    }

    #[test]
    fn equilibrium() {
        let mut e = env();
        e.reset_to(0.0, 0.0);
        let t = e.step(&[0.0]).unwrap();
        assert_eq!(t.next_state, vec![0.0, 0.0]);
        assert_eq!(t.reward, 0.0);
    }

    #[test]
    fn displaced_at_rest() {
        let mut e = env();
        e.reset_to(1.0, 0.0);
        let t = e.step(&[0.0]).unwrap();
        assert_eq!(t.next_state, vec![1.0, 0.0]);
        assert_eq!(t.reward, -1.0);
    }

    #[test]
    fn moving_from_origin() {
        let mut e = env();
        e.reset_to(0.0, 1.0);
        let t = e.step(&[0.0]).unwrap();
        assert_eq!(t.next_state, vec![0.05, 1.0]);
        assert_eq!(t.reward, 0.0);
    }

    #[test]
    fn out_of_range_action_is_clipped_and_counted() {
        let mut e = env();
        e.reset_to(0.0, 0.0);
        let t = e.step(&[3.0]).unwrap();
        assert_eq!(t.action, vec![1.0]);
        assert_eq!(e.clip_count(), 1);
        assert!((t.next_state[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn terminal_at_horizon_only() {
        let mut e = PointMassEnv::new(PointMassConfig { horizon: 3, ..Default::default() }).unwrap();
        e.reset_to(0.2, 0.0);
        assert!(!e.step(&[0.0]).unwrap().terminal);
        assert!(!e.step(&[0.0]).unwrap().terminal);
        let last = e.step(&[0.0]).unwrap();
        assert!(last.terminal && last.truncated && !last.ends_bootstrap());
    }

    #[test]
    fn zero_cost_oracle_is_zero() {
        let cfg = PointMassConfig { reward_scale: 0.0, ..Default::default() };
        assert_eq!(lqr_oracle_return(&cfg).unwrap(), 0.0);
    }

    #[test]
    fn lqr_beats_zero_controller_and_is_deterministic() {
        let cfg = PointMassConfig::default();
        let a = lqr_oracle_return(&cfg).unwrap();
        let b = lqr_oracle_return(&cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a >= linear_policy_return(&cfg, [0.0, 0.0], ORACLE_SAMPLES, ORACLE_SEED).unwrap());
        let k = lqr_gain(&cfg).unwrap();
        assert!((k[0] - 2.9695).abs() < 1e-3 && (k[1] - 2.5124).abs() < 1e-3, "{k:?}");
    }
}
