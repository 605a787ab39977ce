use super::td3::{stream, PROBE_STREAM};
use super::{Agent, AgentError, Result, Variant};
use crate::numcore::GradVector;

/// Mean per-coordinate variance of each gradient estimator over minibatch resamples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    pub step: u64,
    pub resamples: usize,
    pub conventional: f64,
    pub interpolation: f64,
    pub two_step: f64,
}

fn mean_coordinate_variance(samples: &[GradVector]) -> f64 {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mut total = 0.0;
    for j in 0..dim {
        let mean = samples.iter().map(|g| g.values[j]).sum::<f64>() / n;
        total += samples.iter().map(|g| (g.values[j] - mean).powi(2)).sum::<f64>() / n;
    }
    total / dim as f64
}

/// Resamples `B^f` and `B^e` `resamples` times from the agent's buffers and
/// measures the spread of the three policy-gradient estimators at the current
/// parameters. The agent is not modified.
pub fn dpg_variance_probe(agent: &Agent, resamples: usize, seed: u64) -> Result<ProbeReport> {
    if resamples < 2 {
        return Err(AgentError::InvalidConfig("the probe needs at least two resamples".into()));
    }
    if agent.full.is_empty() || agent.elite.is_empty() {
        return Err(AgentError::InsufficientData("both buffers must hold transitions".into()));
    }
    let mut rng = stream(seed, PROBE_STREAM);
    let n = agent.config().batch_size;
    let mut sets: [Vec<GradVector>; 3] = Default::default();
    for _ in 0..resamples {
        let full = agent.full.sample(n, &mut rng)?;
        let elite = agent.elite.sample(n, &mut rng)?;
        for (k, v) in Variant::ALL.into_iter().enumerate() {
            sets[k].push(agent.policy_gradient_as(v, &full, Some(&elite))?);
        }
    }
    Ok(ProbeReport {
        step: agent.env_steps(),
        resamples,
        conventional: mean_coordinate_variance(&sets[0]),
        interpolation: mean_coordinate_variance(&sets[1]),
        two_step: mean_coordinate_variance(&sets[2]),
    })
}
