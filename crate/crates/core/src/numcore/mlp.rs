use rand::Rng;

use super::{GradVector, NumError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `y`. ReLU at exactly 0 is 0.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

/// Parameters of a fully connected network.
///
/// `values` holds, layer by layer, the row-major `(out, in)` weight matrix
/// followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layer_shapes: Vec<(usize, usize)>,
    activations: Vec<Activation>,
    values: Vec<f64>,
    offsets: Vec<usize>,
}

/// Intermediate values of a batched forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Row-major `(batch, out_dim)` network output.
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.post.pop().unwrap_or(self.input)
    }

    /// Pre-activations of every layer, row-major `(batch, out_dim)` each.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

fn param_count(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|&(i, o)| i * o + o).sum()
}

impl NetworkParams {
    /// All-zero parameters for the given layer shapes and activations.
    pub fn zeros(layer_shapes: Vec<(usize, usize)>, activations: Vec<Activation>) -> Result<Self> {
        let len = param_count(&layer_shapes);
        Self::from_values(layer_shapes, activations, vec![0.0; len])
    }

    pub fn from_values(
        layer_shapes: Vec<(usize, usize)>,
        activations: Vec<Activation>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if layer_shapes.is_empty() {
            return Err(NumError::Shape("network needs at least one layer".into()));
        }
        if layer_shapes.len() != activations.len() {
            return Err(NumError::Shape(format!(
                "{} layers but {} activation tags",
                layer_shapes.len(),
                activations.len()
            )));
        }
        for (l, &(i, o)) in layer_shapes.iter().enumerate() {
            if i == 0 || o == 0 {
                return Err(NumError::Shape(format!("layer {l} has a zero dimension ({i}, {o})")));
            }
        }
        for (l, pair) in layer_shapes.windows(2).enumerate() {
            if pair[0].1 != pair[1].0 {
                return Err(NumError::Shape(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].1,
                    l + 1,
                    pair[1].0
                )));
            }
        }
        let expected = param_count(&layer_shapes);
        if values.len() != expected {
            return Err(NumError::Shape(format!(
                "expected {expected} parameter values, got {}",
                values.len()
            )));
        }
        let mut offsets = Vec::with_capacity(layer_shapes.len());
        let mut at = 0;
        for &(i, o) in &layer_shapes {
            offsets.push(at);
            at += i * o + o;
        }
        Ok(Self { layer_shapes, activations, values, offsets })
    }

    /// `input → hidden… → output`, `hidden_act` on hidden layers, `output_act` on the last.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Result<Self> {
        let mut shapes = Vec::with_capacity(hidden.len() + 1);
        let mut acts = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            shapes.push((prev, h));
            acts.push(hidden_act);
            prev = h;
        }
        shapes.push((prev, output));
        acts.push(output_act);
        Self::zeros(shapes, acts)
    }

    /// Uniform in `[−1/√fan_in, 1/√fan_in]` for weights and biases alike.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for l in 0..self.layer_shapes.len() {
            let (fan_in, out) = self.layer_shapes[l];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let start = self.offsets[l];
            for v in &mut self.values[start..start + fan_in * out + out] {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.layer_shapes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(NumError::Shape(format!(
                "expected {} parameter values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    /// Same architecture, different parameter values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.layer_shapes.clone(), self.activations.clone(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_shapes[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.layer_shapes[self.layer_shapes.len() - 1].1
    }

    fn weights(&self, l: usize) -> &[f64] {
        let (i, o) = self.layer_shapes[l];
        &self.values[self.offsets[l]..self.offsets[l] + i * o]
    }

    fn biases(&self, l: usize) -> &[f64] {
        let (i, o) = self.layer_shapes[l];
        let start = self.offsets[l] + i * o;
        &self.values[start..start + o]
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.into_output())
    }

    /// Forward pass over `batch` row-major input rows.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Tape> {
        let in_dim = self.input_dim();
        if inputs.len() != batch * in_dim {
            return Err(NumError::Shape(format!(
                "input has {} values, expected batch {batch} × in-dim {in_dim}",
                inputs.len()
            )));
        }
        let mut pre = Vec::with_capacity(self.layer_shapes.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layer_shapes.len());
        for l in 0..self.layer_shapes.len() {
            let (i, o) = self.layer_shapes[l];
            let x = if l == 0 { inputs } else { post[l - 1].as_slice() };
            let bias = self.biases(l);
            let mut z = Vec::with_capacity(batch * o);
            for _ in 0..batch {
                z.extend_from_slice(bias);
            }
            // Z = X · Wᵀ + Z
            gemm(batch, i, o, x, (i, 1), self.weights(l), (1, i), 1.0, &mut z, (o, 1));
            let act = self.activations[l];
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            post.push(y);
        }
        Ok(Tape { batch, input: inputs.to_vec(), pre, post })
    }

    /// Reverse pass for `Σ_b upstream_bᵀ · f(x_b)`.
    ///
    /// Parameter gradients are accumulated into `param_grad`; input gradients
    /// overwrite `input_grad` (row-major `(batch, in_dim)`).
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &[f64],
        mut param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let batch = tape.batch;
        let out_dim = self.output_dim();
        if upstream.len() != batch * out_dim {
            return Err(NumError::Shape(format!(
                "upstream has {} values, expected batch {batch} × out-dim {out_dim}",
                upstream.len()
            )));
        }
        if let Some(g) = param_grad.as_deref() {
            if g.len() != self.values.len() {
                return Err(NumError::Shape(format!(
                    "parameter gradient buffer has {} entries, network has {}",
                    g.len(),
                    self.values.len()
                )));
            }
        }
        if let Some(g) = input_grad.as_deref() {
            if g.len() != batch * self.input_dim() {
                return Err(NumError::Shape(format!(
                    "input gradient buffer has {} entries, expected {}",
                    g.len(),
                    batch * self.input_dim()
                )));
            }
        }
        let want_input = input_grad.is_some();
        let mut delta = upstream.to_vec();
        let n_layers = self.layer_shapes.len();
        for l in (0..n_layers).rev() {
            let (i, o) = self.layer_shapes[l];
            let act = self.activations[l];
            if act != Activation::Identity {
                for ((d, &z), &y) in delta.iter_mut().zip(&tape.pre[l]).zip(&tape.post[l]) {
                    *d *= act.derivative(z, y);
                }
            }
            let x = if l == 0 { tape.input.as_slice() } else { tape.post[l - 1].as_slice() };
            if let Some(g) = param_grad.as_deref_mut() {
                let start = self.offsets[l];
                let (gw, gb) = g[start..start + i * o + o].split_at_mut(i * o);
                // dW += dZᵀ · X
                gemm(o, batch, i, &delta, (1, o), x, (i, 1), 1.0, gw, (i, 1));
                for row in delta.chunks_exact(o) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            if l > 0 || want_input {
                // dX = dZ · W
                let mut dx = vec![0.0; batch * i];
                gemm(batch, o, i, &delta, (o, 1), self.weights(l), (i, 1), 0.0, &mut dx, (i, 1));
                delta = dx;
            }
        }
        if let Some(g) = input_grad {
            g.copy_from_slice(&delta);
        }
        Ok(())
    }

    /// Gradient of `upstreamᵀ · forward(input)` with respect to the parameters.
    pub fn grad_params(&self, input: &[f64], upstream: &[f64]) -> Result<GradVector> {
        let tape = self.forward_batch(input, 1)?;
        let mut g = vec![0.0; self.values.len()];
        self.backward(&tape, upstream, Some(&mut g), None)?;
        Ok(GradVector::params(g))
    }

    /// Gradient of `upstreamᵀ · forward(input)` with respect to the input.
    pub fn grad_input(&self, input: &[f64], upstream: &[f64]) -> Result<GradVector> {
        let tape = self.forward_batch(input, 1)?;
        let mut g = vec![0.0; self.input_dim()];
        self.backward(&tape, upstream, None, Some(&mut g))?;
        Ok(GradVector::inputs(g))
    }

    /// `self ← τ·source + (1−τ)·self`.
    pub fn polyak_from(&mut self, source: &NetworkParams, tau: f64) -> Result<()> {
        if source.values.len() != self.values.len() || source.layer_shapes != self.layer_shapes {
            return Err(NumError::Shape("polyak update between different architectures".into()));
        }
        if tau == 1.0 {
            self.values.copy_from_slice(&source.values);
        } else if tau != 0.0 {
            for (t, s) in self.values.iter_mut().zip(&source.values) {
                *t = tau * s + (1.0 - tau) * *t;
            }
        }
        Ok(())
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// `C = A·B + beta·C` with explicit (row, column) strides for each operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let extent = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(k == 0 || a.len() >= extent(m, k, a_strides));
    assert!(k == 0 || b.len() >= extent(k, n, b_strides));
    assert!(c.len() >= extent(m, n, c_strides));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let net = NetworkParams::from_values(
            vec![(2, 2)],
            vec![Activation::Identity],
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn scalar_affine_layer() {
        let net = NetworkParams::from_values(vec![(1, 1)], vec![Activation::Identity], vec![2.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn relu_clips_negative() {
        let net = NetworkParams::from_values(vec![(1, 1)], vec![Activation::Relu], vec![-1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let net = NetworkParams::from_values(vec![(1, 1)], vec![Activation::Relu], vec![1.0, 0.0]).unwrap();
        let g = net.grad_input(&[0.0], &[1.0]).unwrap();
        assert_eq!(g.values, vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = NetworkParams::mlp(3, &[4], 1, Activation::Relu, Activation::Identity).unwrap();
        let err = net.forward(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, NumError::Shape(_)), "{err}");
        assert!(net.grad_params(&[1.0, 2.0, 3.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn non_composing_shapes_rejected() {
        let err = NetworkParams::zeros(vec![(2, 3), (4, 1)], vec![Activation::Relu, Activation::Identity]);
        assert!(err.is_err());
    }

    #[test]
    fn linear_param_gradient_is_input() {
        // y = θ·s with zero bias; d(θs)/dθ = s
        let net = NetworkParams::from_values(vec![(1, 1)], vec![Activation::Identity], vec![0.7, 0.0]).unwrap();
        let g = net.grad_params(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.values[0], 2.0);
        assert_eq!(g.values[1], 1.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut net = NetworkParams::mlp(3, &[5, 4], 2, Activation::Tanh, Activation::Identity).unwrap();
        net.init_uniform(&mut ChaCha8Rng::seed_from_u64(1));
        let g = net.grad_params(&[0.1, -0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_network_has_zero_input_gradient() {
        let mut net = NetworkParams::mlp(2, &[3], 1, Activation::Tanh, Activation::Identity).unwrap();
        // zero weights, nonzero biases: output constant in the input
        let n = net.len();
        net.values_mut()[n - 1] = 3.0;
        let g = net.grad_input(&[0.4, -1.2], &[1.0]).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0]);
    }

    #[test]
    fn batched_forward_matches_single_rows() {
        let mut net = NetworkParams::mlp(3, &[8, 8], 2, Activation::Relu, Activation::Tanh).unwrap();
        net.init_uniform(&mut ChaCha8Rng::seed_from_u64(3));
        let rows = [[0.1, 0.2, -0.3], [1.0, -1.0, 0.5], [0.0, 0.3, 0.9]];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let out = net.forward_batch(&flat, 3).unwrap().into_output();
        for (b, row) in rows.iter().enumerate() {
            let single = net.forward(row).unwrap();
            for j in 0..2 {
                assert!((single[j] - out[b * 2 + j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut net = NetworkParams::mlp(16, &[4], 1, Activation::Relu, Activation::Identity).unwrap();
        net.init_uniform(&mut ChaCha8Rng::seed_from_u64(9));
        assert!(net.values()[..16 * 4 + 4].iter().all(|v| v.abs() <= 0.25));
        assert!(net.values()[16 * 4 + 4..].iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn polyak_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut online = NetworkParams::mlp(2, &[3], 1, Activation::Relu, Activation::Identity).unwrap();
        online.init_uniform(&mut rng);
        let mut target = online.clone();
        target.init_uniform(&mut rng);
        let before = target.clone();
        target.polyak_from(&online, 0.0).unwrap();
        assert_eq!(target, before);
        target.polyak_from(&online, 1.0).unwrap();
        assert_eq!(target.values(), online.values());
    }
}
