//! Finite-difference checks of the MLP gradients over a fixed architecture grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finite_diff_grad, relative_error, Activation, NetworkParams, Result};

/// Step used by every finite-difference comparison in the crate.
pub const FD_STEP: f64 = 1e-5;

/// Minimum distance of any ReLU pre-activation from its kink before a sample is accepted.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub hidden_act: Activation,
    pub output_act: Activation,
}

impl Architecture {
    pub fn new(input: usize, hidden: &[usize], output: usize, hidden_act: Activation, output_act: Activation) -> Self {
        Self { input, hidden: hidden.to_vec(), output, hidden_act, output_act }
    }

    pub fn build(&self) -> Result<NetworkParams> {
        NetworkParams::mlp(self.input, &self.hidden, self.output, self.hidden_act, self.output_act)
    }

    pub fn label(&self) -> String {
        let mut dims = vec![self.input.to_string()];
        dims.extend(self.hidden.iter().map(|h| h.to_string()));
        dims.push(self.output.to_string());
        format!("{}[{}/{}]", dims.join("-"), self.hidden_act.name(), self.output_act.name())
    }
}

/// Twenty architectures spanning 1–3 layers, widths 1–64 and every activation tag.
pub fn architecture_grid() -> Vec<Architecture> {
    use Activation::*;
    vec![
        Architecture::new(1, &[], 1, Identity, Identity),
        Architecture::new(3, &[], 2, Tanh, Tanh),
        Architecture::new(4, &[], 1, Relu, Relu),
        Architecture::new(2, &[1], 1, Relu, Identity),
        Architecture::new(2, &[1], 1, Tanh, Tanh),
        Architecture::new(3, &[8], 1, Relu, Identity),
        Architecture::new(3, &[16], 2, Tanh, Tanh),
        Architecture::new(5, &[64], 1, Relu, Identity),
        Architecture::new(2, &[64], 3, Identity, Tanh),
        Architecture::new(6, &[32], 4, Tanh, Identity),
        Architecture::new(3, &[4, 4], 1, Relu, Identity),
        Architecture::new(3, &[16, 16], 1, Relu, Tanh),
        Architecture::new(2, &[32, 32], 1, Tanh, Identity),
        Architecture::new(3, &[64, 64], 1, Relu, Identity),
        Architecture::new(4, &[64, 64], 2, Relu, Tanh),
        Architecture::new(2, &[1, 8], 2, Tanh, Identity),
        Architecture::new(5, &[8, 1], 1, Relu, Relu),
        Architecture::new(7, &[12, 9], 3, Identity, Identity),
        Architecture::new(1, &[64, 2], 1, Tanh, Tanh),
        Architecture::new(8, &[24, 48], 5, Relu, Tanh),
    ]
}

/// Smallest |pre-activation| over all ReLU units for one input row.
pub fn relu_margin(net: &NetworkParams, input: &[f64]) -> Result<f64> {
    let tape = net.forward_batch(input, 1)?;
    let mut margin = f64::INFINITY;
    for (pre, act) in tape.pre_activations().iter().zip(net.activations()) {
        if *act == Activation::Relu {
            for z in pre {
                margin = margin.min(z.abs());
            }
        }
    }
    Ok(margin)
}

#[derive(Debug, Clone)]
pub struct ArchReport {
    pub label: String,
    pub n_params: usize,
    pub param_rel_err: f64,
    pub input_rel_err: f64,
}

impl ArchReport {
    pub fn max_rel_err(&self) -> f64 {
        self.param_rel_err.max(self.input_rel_err)
    }
}

/// Draws a random network and input away from ReLU kinks and compares the
/// analytic parameter and input gradients with central differences.
pub fn check_architecture(arch: &Architecture, seed: u64) -> Result<ArchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = arch.build()?;
    let mut input = vec![0.0; arch.input];
    for _ in 0..10_000 {
        net.init_uniform(&mut rng);
        for x in &mut input {
            *x = rng.random_range(-1.0..1.0);
        }
        if relu_margin(&net, &input)? >= KINK_MARGIN {
            break;
        }
    }
    let upstream: Vec<f64> = (0..arch.output).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dot = |out: Vec<f64>| out.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>();

    let gp = net.grad_params(&input, &upstream)?;
    let probe = net.clone();
    let fp = finite_diff_grad(
        |theta| {
            let n = probe.with_values(theta.to_vec()).expect("same architecture");
            dot(n.forward(&input).expect("shape checked"))
        },
        net.values(),
        FD_STEP,
    )?;
    let gi = net.grad_input(&input, &upstream)?;
    let fi = finite_diff_grad(|x| dot(net.forward(x).expect("shape checked")), &input, FD_STEP)?;
    Ok(ArchReport {
        label: arch.label(),
        n_params: net.len(),
        param_rel_err: relative_error(&gp.values, &fp.values),
        input_rel_err: relative_error(&gi.values, &fi.values),
    })
}
