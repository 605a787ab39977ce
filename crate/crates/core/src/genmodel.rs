//! Conditional VAE over elite `(state, action)` pairs. The zero-latent decode
//! of a state is the reference action used by the elite regularizer.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::numcore::{self, Activation, AdamState, Direction, NetworkParams, NumError};
use crate::replay::{Batch, Source};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("vae batch is empty")]
    EmptyBatch,
    #[error("vae trains on elite batches, got a {0} batch")]
    WrongSource(Source),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed vae snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GenError>;

pub const LOGVAR_MIN: f64 = -8.0;
pub const LOGVAR_MAX: f64 = 8.0;
pub const VAE_MAGIC: &[u8; 4] = b"VAE0";

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub hidden: Vec<usize>,
    pub kl_weight: f64,
    pub rate: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { hidden: vec![32, 32], kl_weight: 1.0, rate: 1e-3 }
    }
}

/// Loss split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub kl: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub encoder: NetworkParams,
    pub decoder: NetworkParams,
    state_dim: usize,
    action_dim: usize,
    latent_dim: usize,
    pub kl_weight: f64,
    enc_adam: AdamState,
    dec_adam: AdamState,
}

struct Pass {
    terms: ElboTerms,
    enc_grad: Vec<f64>,
    dec_grad: Vec<f64>,
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, config: &VaeConfig, rng: &mut R) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(GenError::Shape("state and action dims must be positive".into()));
        }
        let latent_dim = 2 * action_dim;
        let mut encoder = NetworkParams::mlp(
            state_dim + action_dim,
            &config.hidden,
            2 * latent_dim,
            Activation::Relu,
            Activation::Identity,
        )?;
        let mut decoder =
            NetworkParams::mlp(state_dim + latent_dim, &config.hidden, action_dim, Activation::Relu, Activation::Tanh)?;
        encoder.init_uniform(rng);
        decoder.init_uniform(rng);
        let enc_adam = AdamState::new(encoder.len(), config.rate)?;
        let dec_adam = AdamState::new(decoder.len(), config.rate)?;
        Ok(Self { encoder, decoder, state_dim, action_dim, latent_dim, kl_weight: config.kl_weight, enc_adam, dec_adam })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Decodes `(state, z)` rows.
    pub fn decode(&self, states: &[f64], latents: &[f64]) -> Result<Vec<f64>> {
        let n = self.rows(states)?;
        if latents.len() != n * self.latent_dim {
            return Err(GenError::Shape(format!("{} latent values for {n} states", latents.len())));
        }
        let input = concat_rows(states, self.state_dim, latents, self.latent_dim);
        Ok(self.decoder.forward_batch(&input, n)?.into_output())
    }

    /// `decode(state, 0)` for every row of `states`.
    pub fn reference_actions(&self, states: &[f64]) -> Result<Vec<f64>> {
        let n = self.rows(states)?;
        self.decode(states, &vec![0.0; n * self.latent_dim])
    }

    pub fn reference_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.reference_actions(state)
    }

    fn rows(&self, states: &[f64]) -> Result<usize> {
        if !states.len().is_multiple_of(self.state_dim) {
            return Err(GenError::Shape(format!("{} state values for state dim {}", states.len(), self.state_dim)));
        }
        Ok(states.len() / self.state_dim)
    }

    /// Standard-normal latent noise for `n` items.
    pub fn draw_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n * self.latent_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn pass(&self, states: &[f64], actions: &[f64], noise: &[f64], want_grad: bool) -> Result<Pass> {
        let n = self.rows(states)?;
        if n == 0 {
            return Err(GenError::EmptyBatch);
        }
        let (sd, ad, ld) = (self.state_dim, self.action_dim, self.latent_dim);
        if actions.len() != n * ad || noise.len() != n * ld {
            return Err(GenError::Shape(format!(
                "{n} states need {} actions and {} noise values, got {} and {}",
                n * ad,
                n * ld,
                actions.len(),
                noise.len()
            )));
        }
        let enc_in = concat_rows(states, sd, actions, ad);
        let enc_tape = self.encoder.forward_batch(&enc_in, n)?;
        let enc_out = enc_tape.output();
        let mut mu = vec![0.0; n * ld];
        let mut logvar = vec![0.0; n * ld];
        let mut inside = vec![true; n * ld];
        let mut z = vec![0.0; n * ld];
        let mut kl = 0.0;
        for b in 0..n {
            for l in 0..ld {
                let i = b * ld + l;
                let m = enc_out[b * 2 * ld + l];
                let raw = enc_out[b * 2 * ld + ld + l];
                let lv = raw.clamp(LOGVAR_MIN, LOGVAR_MAX);
                inside[i] = raw > LOGVAR_MIN && raw < LOGVAR_MAX;
                mu[i] = m;
                logvar[i] = lv;
                z[i] = m + (0.5 * lv).exp() * noise[i];
                kl += 0.5 * (m * m + lv.exp() - 1.0 - lv);
            }
        }
        kl /= n as f64;
        let dec_in = concat_rows(states, sd, &z, ld);
        let dec_tape = self.decoder.forward_batch(&dec_in, n)?;
        let recon = dec_tape.output();
        let denom = (n * ad) as f64;
        let mut rec = 0.0;
        for (r, a) in recon.iter().zip(actions) {
            rec += (r - a) * (r - a);
        }
        rec /= denom;
        let terms = ElboTerms { reconstruction: rec, kl, loss: rec + self.kl_weight * kl };
        if !want_grad {
            return Ok(Pass { terms, enc_grad: Vec::new(), dec_grad: Vec::new() });
        }
        let upstream: Vec<f64> = recon.iter().zip(actions).map(|(r, a)| 2.0 * (r - a) / denom).collect();
        let mut dec_grad = vec![0.0; self.decoder.len()];
        let mut d_dec_in = vec![0.0; n * (sd + ld)];
        self.decoder.backward(&dec_tape, &upstream, Some(&mut dec_grad), Some(&mut d_dec_in))?;
        let mut enc_up = vec![0.0; n * 2 * ld];
        let kw = self.kl_weight / n as f64;
        for b in 0..n {
            for l in 0..ld {
                let i = b * ld + l;
                let dz = d_dec_in[b * (sd + ld) + sd + l];
                let sigma = (0.5 * logvar[i]).exp();
                enc_up[b * 2 * ld + l] = dz + kw * mu[i];
                let dlv = dz * noise[i] * 0.5 * sigma + kw * 0.5 * (logvar[i].exp() - 1.0);
                enc_up[b * 2 * ld + ld + l] = if inside[i] { dlv } else { 0.0 };
            }
        }
        let mut enc_grad = vec![0.0; self.encoder.len()];
        self.encoder.backward(&enc_tape, &enc_up, Some(&mut enc_grad), None)?;
        Ok(Pass { terms, enc_grad, dec_grad })
    }

    /// ELBO loss terms at fixed latent noise.
    pub fn elbo(&self, states: &[f64], actions: &[f64], noise: &[f64]) -> Result<ElboTerms> {
        Ok(self.pass(states, actions, noise, false)?.terms)
    }

    /// Loss and its gradients with respect to encoder and decoder parameters at fixed noise.
    pub fn elbo_gradient(&self, states: &[f64], actions: &[f64], noise: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let p = self.pass(states, actions, noise, true)?;
        Ok((p.terms.loss, p.enc_grad, p.dec_grad))
    }

    /// One Adam step on `states`/`actions` with the given noise; returns the
    /// loss after the step at that same noise.
    pub fn train_step_with_noise(&mut self, states: &[f64], actions: &[f64], noise: &[f64]) -> Result<f64> {
        let p = self.pass(states, actions, noise, true)?;
        self.enc_adam.step_slice(self.encoder.values_mut(), &p.enc_grad, Direction::Descent)?;
        self.dec_adam.step_slice(self.decoder.values_mut(), &p.dec_grad, Direction::Descent)?;
        Ok(self.pass(states, actions, noise, false)?.terms.loss)
    }

    pub fn step_count(&self) -> u64 {
        self.enc_adam.step_count
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(VAE_MAGIC)?;
        w.write_all(&(self.latent_dim as u32).to_le_bytes())?;
        w.write_all(&self.kl_weight.to_le_bytes())?;
        numcore::write_snapshot(&mut w, &self.encoder)?;
        numcore::write_snapshot(&mut w, &self.decoder)?;
        Ok(())
    }

    /// Restores a model written by [`write`](Self::write); optimizer state starts fresh.
    pub fn read<R: Read>(mut r: R, rate: f64) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != VAE_MAGIC {
            return Err(GenError::Snapshot(format!("bad magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let latent_dim = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let kl_weight = f64::from_le_bytes(b8);
        let encoder = numcore::read_snapshot(&mut r)?;
        let decoder = numcore::read_snapshot(&mut r)?;
        let action_dim = decoder.output_dim();
        let state_dim = decoder
            .input_dim()
            .checked_sub(latent_dim)
            .filter(|&sd| sd > 0 && encoder.input_dim() == sd + action_dim && encoder.output_dim() == 2 * latent_dim)
            .ok_or_else(|| GenError::Snapshot("encoder and decoder shapes disagree".into()))?;
        let enc_adam = AdamState::new(encoder.len(), rate)?;
        let dec_adam = AdamState::new(decoder.len(), rate)?;
        Ok(Self { encoder, decoder, state_dim, action_dim, latent_dim, kl_weight, enc_adam, dec_adam })
    }
}

fn concat_rows(a: &[f64], da: usize, b: &[f64], db: usize) -> Vec<f64> {
    let n = if da == 0 { b.len() / db.max(1) } else { a.len() / da };
    let mut out = Vec::with_capacity(n * (da + db));
    for i in 0..n {
        out.extend_from_slice(&a[i * da..(i + 1) * da]);
        out.extend_from_slice(&b[i * db..(i + 1) * db]);
    }
    out
}

/// One training step on an elite batch with freshly drawn latent noise.
pub fn vae_train_step<R: Rng + ?Sized>(model: &mut VaeModel, batch: &Batch, rng: &mut R) -> Result<f64> {
    if batch.source != Source::Elite {
        return Err(GenError::WrongSource(batch.source));
    }
    if batch.is_empty() {
        return Err(GenError::EmptyBatch);
    }
    let noise = model.draw_noise(batch.len(), rng);
    model.train_step_with_noise(&batch.states, &batch.actions, &noise)
}
