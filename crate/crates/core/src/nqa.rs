//! Noisy quadratic analysis of the three merging rules.
//!
//! On `J(θ) = J* − ½(θ − c)ᵀA(θ − c)` the conventional and elite gradients are
//! `−A(θ − c1)` and `−A(θ − c2)` with `c1 ~ N(0, Σ1)` and `c2 ~ N(ε, Σ2)` drawn
//! fresh every iteration. Everything is diagonal, so each coordinate evolves
//! independently.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NqaError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid run: {0}")]
    InvalidRun(String),
}

pub type Result<T> = std::result::Result<T, NqaError>;

/// Fraction of final iterations averaged when estimating limits.
pub const TAIL_FRACTION: f64 = 0.1;
/// Relative tolerance of the limit comparison.
pub const REL_TOL: f64 = 0.05;
/// Standard-error multiple of the limit comparison.
pub const SE_TOL: f64 = 4.0;
/// Absolute floor so noise-free specs compare at round-off scale.
pub const ABS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub a: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub alpha: f64,
    pub upsilon: f64,
    pub j_star: f64,
}

impl QuadraticSpec {
    pub fn scalar(a: f64, alpha: f64, upsilon: f64, epsilon: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        let spec = Self {
            a: vec![a],
            epsilon: vec![epsilon],
            sigma1: vec![sigma1],
            sigma2: vec![sigma2],
            alpha,
            upsilon,
            j_star: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A=1, α=0.1, υ=0.25, ε=1, Σ1=1, Σ2=0.01.
    pub fn reference_scalar() -> Self {
        Self::scalar(1.0, 0.1, 0.25, 1.0, 1.0, 0.01).expect("valid reference spec")
    }

    /// Three coordinates with distinct curvature, bias and noise.
    pub fn reference_diagonal() -> Self {
        let sigma1 = vec![1.0, 0.5, 2.0];
        let spec = Self {
            a: vec![1.0, 2.0, 0.5],
            epsilon: vec![1.0, -0.5, 2.0],
            sigma2: sigma1.iter().map(|s| 0.01 * s).collect(),
            sigma1,
            alpha: 0.1,
            upsilon: 0.25,
            j_star: 0.0,
        };
        spec.validate().expect("valid reference spec");
        spec
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Checks shapes, `αA < 1`, `0 ≤ υ < 1` and `0 ≤ Σ2 ≤ Σ1`.
    ///
    /// Zero noise is allowed so the noise-free contraction can be studied.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |m: String| Err(NqaError::InvalidSpec(m));
        if d == 0 {
            return bad("dimension must be positive".into());
        }
        if self.epsilon.len() != d || self.sigma1.len() != d || self.sigma2.len() != d {
            return bad(format!("all diagonals must have length {d}"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.upsilon) {
            return bad(format!("upsilon must lie in [0, 1), got {}", self.upsilon));
        }
        for j in 0..d {
            let a = self.a[j];
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("A[{j}] must be positive, got {a}"));
            }
            if self.alpha * a >= 1.0 {
                return bad(format!("alpha·A[{j}] = {} must be below 1", self.alpha * a));
            }
            if !self.epsilon[j].is_finite() {
                return bad(format!("epsilon[{j}] must be finite"));
            }
            let (s1, s2) = (self.sigma1[j], self.sigma2[j]);
            if !(s1 >= 0.0 && s1.is_finite() && s2 >= 0.0 && s2 <= s1) {
                return bad(format!("need 0 ≤ sigma2[{j}] ≤ sigma1[{j}], got {s2} and {s1}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleTag {
    Conventional,
    Interpolation,
    TwoStep,
}

impl RuleTag {
    pub const ALL: [RuleTag; 3] = [RuleTag::Conventional, RuleTag::Interpolation, RuleTag::TwoStep];

    pub fn name(self) -> &'static str {
        match self {
            RuleTag::Conventional => "conventional",
            RuleTag::Interpolation => "interpolation",
            RuleTag::TwoStep => "two_step",
        }
    }
}

/// Per-coordinate fixed points of mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn closed_form(spec: &QuadraticSpec, rule: RuleTag) -> Result<Limits> {
    spec.validate()?;
    let (al, u) = (spec.alpha, spec.upsilon);
    let mut mean = Vec::with_capacity(spec.dim());
    let mut var = Vec::with_capacity(spec.dim());
    for j in 0..spec.dim() {
        let (a, e, s1, s2) = (spec.a[j], spec.epsilon[j], spec.sigma1[j], spec.sigma2[j]);
        let plain = 1.0 - (1.0 - al * a).powi(2);
        let gain = al * al * a * a;
        match rule {
            RuleTag::Conventional => {
                mean.push(0.0);
                var.push(gain * s1 / plain);
            }
            RuleTag::Interpolation => {
                mean.push(u * e);
                var.push(gain * ((1.0 - u).powi(2) * s1 + u * u * s2) / plain);
            }
            RuleTag::TwoStep => {
                let inner = 1.0 - al * u * a;
                let m = inner * (1.0 - al * (1.0 - u) * a);
                mean.push(al * u * a * e / (1.0 - m));
                var.push(gain * ((1.0 - u).powi(2) * inner * inner * s1 + u * u * s2) / (1.0 - m * m));
            }
        }
    }
    Ok(Limits { mean, var })
}

/// Cross-seed statistics after every iteration; index `t * dim + j` holds
/// iteration `t + 1`, coordinate `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub rule: RuleTag,
    pub n_seeds: usize,
    pub n_iters: usize,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl SimTrace {
    pub fn mean_at(&self, iter: usize, coord: usize) -> f64 {
        self.mean[(iter - 1) * self.dim + coord]
    }

    pub fn var_at(&self, iter: usize, coord: usize) -> f64 {
        self.var[(iter - 1) * self.dim + coord]
    }

    /// First iteration of the tail window.
    pub fn tail_start(&self) -> usize {
        let w = ((self.n_iters as f64 * TAIL_FRACTION).round() as usize).max(1);
        self.n_iters - w + 1
    }

    /// Tail-window averages of the cross-seed mean and variance.
    pub fn tail(&self, coord: usize) -> (f64, f64) {
        let start = self.tail_start();
        let w = (self.n_iters - start + 1) as f64;
        let m = (start..=self.n_iters).map(|t| self.mean_at(t, coord)).sum::<f64>() / w;
        let v = (start..=self.n_iters).map(|t| self.var_at(t, coord)).sum::<f64>() / w;
        (m, v)
    }

    pub fn to_csv(&self, limits: &Limits) -> String {
        let mut out = String::from("iteration,coord,emp_mean,emp_var,cf_mean,cf_var\n");
        for t in 1..=self.n_iters {
            for j in 0..self.dim {
                let _ = writeln!(
                    out,
                    "{t},{j},{},{},{},{}",
                    self.mean_at(t, j),
                    self.var_at(t, j),
                    limits.mean[j],
                    limits.var[j]
                );
            }
        }
        out
    }
}

const SEED_CHUNK: usize = 256;

fn seed_rng(base: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng
}

/// One seed's parameter path; calls `record(t, θ)` after every iteration.
///
/// Both `c1` and `c2` are drawn every iteration for every rule so that a given
/// seed sees the same noise whichever rule runs. The two-step rule reuses
/// the iteration's `c1` for its look-ahead step.
fn run_seed<F: FnMut(usize, &[f64])>(spec: &QuadraticSpec, rule: RuleTag, n_iters: usize, rng: &mut ChaCha8Rng, mut record: F) {
    let d = spec.dim();
    let (al, u) = (spec.alpha, spec.upsilon);
    let sd1: Vec<f64> = spec.sigma1.iter().map(|s| s.sqrt()).collect();
    let sd2: Vec<f64> = spec.sigma2.iter().map(|s| s.sqrt()).collect();
    let mut theta = vec![0.0; d];
    for t in 0..n_iters {
        for j in 0..d {
            let c1 = sd1[j] * rng.sample::<f64, _>(StandardNormal);
            let c2 = spec.epsilon[j] + sd2[j] * rng.sample::<f64, _>(StandardNormal);
            let a = spec.a[j];
            let th = theta[j];
            let g_c = -a * (th - c1);
            theta[j] = match rule {
                RuleTag::Conventional => th + al * g_c,
                RuleTag::Interpolation => th + al * ((1.0 - u) * g_c + u * (-a * (th - c2))),
                RuleTag::TwoStep => {
                    let ahead = th + al * (1.0 - u) * g_c;
                    th + al * ((1.0 - u) * g_c + u * (-a * (ahead - c2)))
                }
            };
        }
        record(t, &theta);
    }
}

/// Simulates `n_seeds` independent runs of `rule` from `θ0 = 0`.
///
/// Seed `i` uses stream `i` of the generator keyed by `seed`; results do not
/// depend on thread count.
pub fn simulate(spec: &QuadraticSpec, rule: RuleTag, n_seeds: usize, n_iters: usize, seed: u64) -> Result<SimTrace> {
    spec.validate()?;
    if n_seeds < 2 || n_iters == 0 {
        return Err(NqaError::InvalidRun(format!("need ≥ 2 seeds and ≥ 1 iteration, got {n_seeds} and {n_iters}")));
    }
    let d = spec.dim();
    let cells = n_iters * d;
    let chunks: Vec<(usize, usize)> =
        (0..n_seeds).step_by(SEED_CHUNK).map(|s| (s, (s + SEED_CHUNK).min(n_seeds))).collect();
    // Per-chunk shifted sums: values are offset by the chunk's first path so
    // the variance is computed without cancellation.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut sum = vec![0.0; cells];
            let mut sumsq = vec![0.0; cells];
            for i in lo..hi {
                let mut rng = seed_rng(seed, i);
                run_seed(spec, rule, n_iters, &mut rng, |t, theta| {
                    for (j, &x) in theta.iter().enumerate() {
                        sum[t * d + j] += x;
                        sumsq[t * d + j] += x * x;
                    }
                });
            }
            (sum, sumsq)
        })
        .collect();
    let n = n_seeds as f64;
    let mut total = vec![0.0; cells];
    let mut total_sq = vec![0.0; cells];
    for (s, q) in &partials {
        for k in 0..cells {
            total[k] += s[k];
            total_sq[k] += q[k];
        }
    }
    let mean: Vec<f64> = total.iter().map(|s| s / n).collect();
    let var = (0..cells).map(|k| ((total_sq[k] - n * mean[k] * mean[k]) / (n - 1.0)).max(0.0)).collect();
    Ok(SimTrace { rule, n_seeds, n_iters, dim: d, mean, var })
}

/// Expected parameters after each iteration with all noise at its mean,
/// from the linear recursion `E[θ_{t+1}] = M E[θ_t] + b`.
pub fn mean_recursion(spec: &QuadraticSpec, rule: RuleTag, n_iters: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let (al, u) = (spec.alpha, spec.upsilon);
    let d = spec.dim();
    let mut out = Vec::with_capacity(n_iters * d);
    let mut theta = vec![0.0; d];
    for _ in 0..n_iters {
        for j in 0..d {
            let (a, e) = (spec.a[j], spec.epsilon[j]);
            let (m, b) = match rule {
                RuleTag::Conventional => (1.0 - al * a, 0.0),
                RuleTag::Interpolation => (1.0 - al * a, al * u * a * e),
                RuleTag::TwoStep => ((1.0 - al * u * a) * (1.0 - al * (1.0 - u) * a), al * u * a * e),
            };
            theta[j] = m * theta[j] + b;
        }
        out.extend_from_slice(&theta);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub rule: RuleTag,
    pub coord: usize,
    pub emp_mean: f64,
    pub emp_var: f64,
    pub cf_mean: f64,
    pub cf_var: f64,
    pub se_mean: f64,
    pub se_var: f64,
}

impl VerifyRow {
    fn tolerance(cf: f64, se: f64) -> f64 {
        (REL_TOL * cf.abs()).max(SE_TOL * se).max(ABS_TOL)
    }

    pub fn mean_err(&self) -> f64 {
        (self.emp_mean - self.cf_mean).abs()
    }

    pub fn var_err(&self) -> f64 {
        (self.emp_var - self.cf_var).abs()
    }

    /// Errors in standard-error units; infinite when the standard error is zero and the error is not.
    pub fn mean_z(&self) -> f64 {
        z(self.mean_err(), self.se_mean)
    }

    pub fn var_z(&self) -> f64 {
        z(self.var_err(), self.se_var)
    }

    pub fn mean_ok(&self) -> bool {
        self.mean_err() <= Self::tolerance(self.cf_mean, self.se_mean)
    }

    pub fn var_ok(&self) -> bool {
        self.var_err() <= Self::tolerance(self.cf_var, self.se_var)
    }
}

fn z(err: f64, se: f64) -> f64 {
    if se > 0.0 {
        err / se
    } else if err == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone)]
pub struct NqaReport {
    pub spec: QuadraticSpec,
    pub n_seeds: usize,
    pub n_iters: usize,
    pub rows: Vec<VerifyRow>,
    pub traces: Vec<SimTrace>,
}

impl NqaReport {
    pub fn row(&self, rule: RuleTag, coord: usize) -> &VerifyRow {
        self.rows.iter().find(|r| r.rule == rule && r.coord == coord).expect("row exists")
    }

    pub fn limits_ok(&self) -> bool {
        self.rows.iter().all(|r| r.mean_ok() && r.var_ok())
    }

    /// `Var(two_step) < Var(interp) < Var(conv)` on the empirical tail values, every coordinate.
    pub fn variance_ordering_ok(&self) -> bool {
        (0..self.spec.dim()).all(|j| {
            let v = |r| self.row(r, j).emp_var;
            v(RuleTag::TwoStep) < v(RuleTag::Interpolation) && v(RuleTag::Interpolation) < v(RuleTag::Conventional)
        })
    }

    /// `|bias(interp)| ≤ |bias(two_step)|`, bias measured from the optimum `E[c1] = 0`.
    pub fn bias_ordering_ok(&self) -> bool {
        (0..self.spec.dim())
            .all(|j| self.row(RuleTag::Interpolation, j).emp_mean.abs() <= self.row(RuleTag::TwoStep, j).emp_mean.abs())
    }

    pub fn passed(&self) -> bool {
        self.limits_ok() && self.variance_ordering_ok() && self.bias_ordering_ok()
    }

    pub fn summary(&self) -> String {
        let mut out = "rule,coord,emp_mean,cf_mean,mean_err,mean_z,emp_var,cf_var,var_err,var_rel_err,var_z,ok\n".to_string();
        for r in &self.rows {
            let rel = if r.cf_var != 0.0 { r.var_err() / r.cf_var } else { r.var_err() };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.rule.name(),
                r.coord,
                r.emp_mean,
                r.cf_mean,
                r.mean_err(),
                r.mean_z(),
                r.emp_var,
                r.cf_var,
                r.var_err(),
                rel,
                r.var_z(),
                r.mean_ok() && r.var_ok()
            );
        }
        let _ = writeln!(out, "variance_ordering,{}", self.variance_ordering_ok());
        let _ = writeln!(out, "bias_ordering,{}", self.bias_ordering_ok());
        out
    }
}

/// Simulates all three rules and compares tail-window statistics with the closed forms.
///
/// Standard errors treat the `n_seeds` runs as independent draws at the
/// final iteration: `sqrt(v/n)` for the mean, `v·sqrt(2/(n−1))` for the variance.
pub fn verify(spec: &QuadraticSpec, n_seeds: usize, n_iters: usize, seed: u64) -> Result<NqaReport> {
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let n = n_seeds as f64;
    for rule in RuleTag::ALL {
        let limits = closed_form(spec, rule)?;
        let trace = simulate(spec, rule, n_seeds, n_iters, seed)?;
        for j in 0..spec.dim() {
            let (m, v) = trace.tail(j);
            rows.push(VerifyRow {
                rule,
                coord: j,
                emp_mean: m,
                emp_var: v,
                cf_mean: limits.mean[j],
                cf_var: limits.var[j],
                se_mean: (v / n).sqrt(),
                se_var: v * (2.0 / (n - 1.0)).sqrt(),
            });
        }
        traces.push(trace);
    }
    Ok(NqaReport { spec: spec.clone(), n_seeds, n_iters, rows, traces })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_free() -> QuadraticSpec {
        QuadraticSpec { epsilon: vec![0.0], ..QuadraticSpec::scalar(1.0, 0.1, 0.25, 0.0, 0.0, 0.0).unwrap() }
    }

    #[test]
    fn reference_closed_forms() {
        let s = QuadraticSpec::reference_scalar();
        let c = closed_form(&s, RuleTag::Conventional).unwrap();
        let im = closed_form(&s, RuleTag::Interpolation).unwrap();
        let tm = closed_form(&s, RuleTag::TwoStep).unwrap();
        assert_eq!(c.mean[0], 0.0);
        assert!((im.mean[0] - 0.25).abs() < 1e-15);
        assert!((tm.mean[0] - 0.025 / 0.098125).abs() < 1e-12);
        assert!((tm.mean[0] - 0.254777).abs() < 1e-6);
        assert!((c.var[0] - 0.052632).abs() < 1e-6);
        assert!((im.var[0] - 0.029638).abs() < 1e-6);
        // Direct evaluation gives 0.0286865, not 0.028653.
        assert!((tm.var[0] - 0.028686491498709575).abs() < 1e-12);
    }

    #[test]
    fn unbiased_spec_has_zero_means() {
        let s = QuadraticSpec { epsilon: vec![0.0], ..QuadraticSpec::reference_scalar() };
        for r in RuleTag::ALL {
            assert_eq!(closed_form(&s, r).unwrap().mean, vec![0.0]);
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(QuadraticSpec::scalar(10.0, 0.1, 0.25, 1.0, 1.0, 0.01).is_err());
        assert!(QuadraticSpec::scalar(1.0, 0.1, 1.0, 1.0, 1.0, 0.01).is_err());
        assert!(QuadraticSpec::scalar(1.0, 0.1, 0.25, 1.0, 0.01, 1.0).is_err());
        assert!(QuadraticSpec::scalar(-1.0, 0.1, 0.25, 1.0, 1.0, 0.01).is_err());
        assert!(simulate(&QuadraticSpec::reference_scalar(), RuleTag::Conventional, 1, 10, 0).is_err());
    }

    #[test]
    fn noise_free_contracts_to_zero() {
        let s = noise_free();
        // (1 − αA)^t < 1e-8 for t ≥ 175.
        for r in RuleTag::ALL {
            let tr = simulate(&s, r, 4, 200, 0).unwrap();
            assert!(tr.mean_at(200, 0).abs() < 1e-8);
            assert_eq!(tr.var_at(200, 0), 0.0);
        }
        let rep = verify(&s, 4, 200, 0).unwrap();
        assert!(rep.limits_ok());
    }

    #[test]
    fn zero_upsilon_matches_conventional() {
        let s = QuadraticSpec { upsilon: 0.0, ..QuadraticSpec::reference_diagonal() };
        let c = simulate(&s, RuleTag::Conventional, 50, 100, 7).unwrap();
        assert_eq!(simulate(&s, RuleTag::Interpolation, 50, 100, 7).unwrap().mean, c.mean);
        assert_eq!(simulate(&s, RuleTag::TwoStep, 50, 100, 7).unwrap().var, c.var);
    }

    #[test]
    fn noiseless_means_follow_linear_recursion() {
        let s = QuadraticSpec {
            sigma1: vec![0.0; 3],
            sigma2: vec![0.0; 3],
            ..QuadraticSpec::reference_diagonal()
        };
        for r in RuleTag::ALL {
            let tr = simulate(&s, r, 3, 300, 1).unwrap();
            let rec = mean_recursion(&s, r, 300).unwrap();
            for (a, b) in tr.mean.iter().zip(&rec) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn simulation_is_thread_independent() {
        let s = QuadraticSpec::reference_scalar();
        let a = simulate(&s, RuleTag::TwoStep, 600, 50, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate(&s, RuleTag::TwoStep, 600, 50, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn interpolation_mean_within_four_se() {
        let s = QuadraticSpec::reference_scalar();
        let rep = verify(&s, 2000, 400, 11).unwrap();
        let r = rep.row(RuleTag::Interpolation, 0);
        assert!(r.mean_z() < 4.0, "{r:?}");
    }

    #[test]
    fn variance_ordering_can_flip_near_full_elite_weight() {
        let s = QuadraticSpec::scalar(1.0, 0.17, 0.9999, 0.0, 1.0, 0.0094).unwrap();
        let im = closed_form(&s, RuleTag::Interpolation).unwrap().var[0];
        let tm = closed_form(&s, RuleTag::TwoStep).unwrap().var[0];
        assert!(tm > im);
    }

    #[test]
    fn csv_shape() {
        let s = QuadraticSpec::reference_diagonal();
        let tr = simulate(&s, RuleTag::Conventional, 3, 4, 0).unwrap();
        let csv = tr.to_csv(&closed_form(&s, RuleTag::Conventional).unwrap());
        assert_eq!(csv.lines().count(), 1 + 4 * 3);
        assert_eq!(tr.tail_start(), 4);
    }
}
