use super::{GradVector, GradWrt, NetworkParams, NumError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, rate: f64) -> Result<Self> {
        Self::with_betas(len, rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(len: usize, rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(NumError::InvalidArgument(format!("adam rate must be positive, got {rate}")));
        }
        if !(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) {
            return Err(NumError::InvalidArgument(format!(
                "adam betas must lie in (0,1), got {beta1}, {beta2}"
            )));
        }
        if !(epsilon > 0.0 && epsilon <= 1e-4) {
            return Err(NumError::InvalidArgument(format!(
                "adam epsilon must lie in (0, 1e-4], got {epsilon}"
            )));
        }
        Ok(Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            rate,
            beta1,
            beta2,
            epsilon,
        })
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// An all-zero gradient still advances the step counter and decays the
    /// moments but leaves the parameters untouched.
    pub fn step_slice(&mut self, params: &mut [f64], grad: &[f64], direction: Direction) -> Result<()> {
        if grad.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(NumError::Shape(format!(
                "adam state has {} moments, parameters {}, gradient {}",
                self.first_moment.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NumError::NonFinite { index, context: "adam gradient" });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let sign = match direction {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        };
        let all_zero = grad.iter().all(|&g| g == 0.0);
        for i in 0..params.len() {
            let g = grad[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            if !all_zero {
                let m_hat = self.first_moment[i] / bc1;
                let v_hat = self.second_moment[i] / bc2;
                params[i] += sign * self.rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, net: &mut NetworkParams, grad: &GradVector, direction: Direction) -> Result<()> {
        if grad.wrt != GradWrt::Parameters {
            return Err(NumError::InvalidArgument("adam step needs a parameter gradient".into()));
        }
        self.step_slice(net.values_mut(), &grad.values, direction)
    }
}
