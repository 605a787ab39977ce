//! Configuration parsing and experiment orchestration behind the `dpglab` binary.
//!
//! Config files are flat `key = value` text with `#` comments. Flags
//! `--key=value` mirror the same keys and win over the file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{dpg_variance_probe, gradient_suite, Agent, AgentError, MergeConfig, RegularizerMode, Variant};
use crate::bounds::{run_instance, suite_csv, BoundError, InstanceReport};
use crate::envs::{lqr_oracle_return, EnvError, PointMassConfig, PointMassEnv};
use crate::nqa::{closed_form, verify, NqaError, QuadraticSpec};
use crate::numcore::gradcheck::{architecture_grid, check_architecture};
use crate::numcore::{write_snapshot, NumError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("cannot read config `{path}`: {source}")]
    Unreadable { path: PathBuf, source: std::io::Error },
    #[error("cannot write `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("train: {0}")]
    Agent(#[from] AgentError),
    #[error("nqa: {0}")]
    Nqa(#[from] NqaError),
    #[error("bounds: {0}")]
    Bounds(#[from] BoundError),
    #[error("gradcheck: {0}")]
    Num(#[from] NumError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Nqa,
    Bounds,
    Gradcheck,
    Probe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Nqa => "nqa",
            Command::Bounds => "bounds",
            Command::Gradcheck => "gradcheck",
            Command::Probe => "probe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Command::Train, Command::Nqa, Command::Bounds, Command::Gradcheck, Command::Probe]
            .into_iter()
            .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    PointMass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub merge: MergeConfig,
    pub env: EnvKind,
    pub point_mass: PointMassConfig,
    pub variants: Vec<Variant>,
    pub steps: u64,
    /// Write a policy snapshot every this many steps; 0 disables.
    pub snapshot_every: u64,
    pub nqa: QuadraticSpec,
    pub nqa_seeds: usize,
    pub nqa_iters: usize,
    pub bounds_instances: usize,
    pub bounds_perturbation: f64,
    pub bounds_t_max: usize,
    pub probe_step: u64,
    pub probe_resamples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Train,
            seeds: vec![0],
            out: PathBuf::from("out"),
            merge: MergeConfig::default(),
            env: EnvKind::PointMass,
            point_mass: PointMassConfig::default(),
            variants: Variant::ALL.to_vec(),
            steps: 30_000,
            snapshot_every: 0,
            nqa: QuadraticSpec::reference_scalar(),
            nqa_seeds: 20_000,
            nqa_iters: 2_000,
            bounds_instances: 200,
            bounds_perturbation: 0.1,
            bounds_t_max: 50,
            probe_step: 15_000,
            probe_resamples: 256,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> CliError {
    CliError::InvalidValue { key: key.to_string(), reason: reason.into() }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| invalid(key, format!("`{v}`: {e}")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s.trim())).collect()
}

/// `1,2,3`, `0..10` or a mix of both.
fn seed_list(key: &str, v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => out.extend(num::<u64>(key, a)?..num::<u64>(key, b)?),
            None => out.push(num(key, part)?),
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Sets one key, range-checking the affected section.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.merge;
        let pm = &mut self.point_mass;
        match key {
            "command" => self.command = Command::parse(v).ok_or_else(|| invalid(key, format!("unknown command `{v}`")))?,
            "seeds" => self.seeds = seed_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "env" => match v {
                "point_mass" => self.env = EnvKind::PointMass,
                _ => return Err(invalid(key, format!("unknown environment `{v}`"))),
            },
            "variants" => {
                self.variants = v
                    .split(',')
                    .map(|s| Variant::parse(s).ok_or_else(|| invalid(key, format!("unknown variant `{}`", s.trim()))))
                    .collect::<Result<_>>()?
            }
            "steps" => self.steps = num(key, v)?,
            "snapshot_every" => self.snapshot_every = num(key, v)?,
            "upsilon" => m.upsilon = num(key, v)?,
            "lambda" => m.lambda = num(key, v)?,
            "alpha" => m.alpha = num(key, v)?,
            "critic_rate" => m.critic_rate = num(key, v)?,
            "kappa" => m.kappa = num(key, v)?,
            "gamma" => m.gamma = num(key, v)?,
            "exploration_std" => m.exploration_std = num(key, v)?,
            "smoothing_std" => m.smoothing_std = num(key, v)?,
            "smoothing_clip" => m.smoothing_clip = num(key, v)?,
            "policy_delay" => m.policy_delay = num(key, v)?,
            "polyak" => m.polyak = num(key, v)?,
            "batch_size" => m.batch_size = num(key, v)?,
            "warmup_steps" => m.warmup_steps = num(key, v)?,
            "regularizer_mode" => {
                m.regularizer_mode =
                    RegularizerMode::parse(v).ok_or_else(|| invalid(key, format!("unknown mode `{v}`")))?
            }
            "hidden" => m.hidden = list(key, v)?,
            "buffer_capacity" => m.buffer_capacity = num(key, v)?,
            "vae_hidden" => m.vae_hidden = list(key, v)?,
            "vae_rate" => m.vae_rate = num(key, v)?,
            "kl_weight" => m.kl_weight = num(key, v)?,
            "eval_every" => m.eval_every = num(key, v)?,
            "eval_episodes" => m.eval_episodes = num(key, v)?,
            "dt" => pm.dt = num(key, v)?,
            "horizon" => pm.horizon = num(key, v)?,
            "reward_scale" => pm.reward_scale = num(key, v)?,
            "action_cost" => pm.action_cost = num(key, v)?,
            "init_range" => pm.init_range = num(key, v)?,
            "nqa_a" => self.nqa.a = list(key, v)?,
            "nqa_epsilon" => self.nqa.epsilon = list(key, v)?,
            "nqa_sigma1" => self.nqa.sigma1 = list(key, v)?,
            "nqa_sigma2" => self.nqa.sigma2 = list(key, v)?,
            "nqa_alpha" => self.nqa.alpha = num(key, v)?,
            "nqa_upsilon" => self.nqa.upsilon = num(key, v)?,
            "nqa_j_star" => self.nqa.j_star = num(key, v)?,
            "nqa_seeds" => self.nqa_seeds = num(key, v)?,
            "nqa_iters" => self.nqa_iters = num(key, v)?,
            "bounds_instances" => self.bounds_instances = num(key, v)?,
            "bounds_perturbation" => self.bounds_perturbation = num(key, v)?,
            "bounds_t_max" => self.bounds_t_max = num(key, v)?,
            "probe_step" => self.probe_step = num(key, v)?,
            "probe_resamples" => self.probe_resamples = num(key, v)?,
            _ => return Err(CliError::UnknownKey(key.to_string())),
        }
        if key.starts_with("nqa_") && !matches!(key, "nqa_seeds" | "nqa_iters") {
            let d = self.nqa.a.len();
            let lens = [self.nqa.epsilon.len(), self.nqa.sigma1.len(), self.nqa.sigma2.len()];
            if lens.iter().all(|&l| l == d) {
                self.nqa.validate().map_err(|e| invalid(key, e.to_string()))?;
            }
        } else if matches!(key, "dt" | "horizon" | "reward_scale" | "action_cost" | "init_range") {
            self.point_mass.validate().map_err(|e| invalid(key, e.to_string()))?;
        } else {
            self.merge.validate().map_err(|e| invalid(key, e.to_string()))?;
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Malformed { line: i + 1, text: raw.to_string() })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Applies `--key=value` flags.
    pub fn apply_flags<S: AsRef<str>>(&mut self, flags: &[S]) -> Result<()> {
        for f in flags {
            let f = f.as_ref();
            let body = f.strip_prefix("--").ok_or_else(|| CliError::UnknownKey(f.to_string()))?;
            let (k, v) = body.split_once('=').ok_or_else(|| invalid(body, "flags take the form --key=value"))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(invalid("variants", "at least one variant is required"));
        }
        self.merge.validate().map_err(|e| invalid("merge", e.to_string()))?;
        self.nqa.validate().map_err(|e| invalid("nqa_a", e.to_string()))?;
        if self.steps == 0 {
            return Err(invalid("steps", "must be positive"));
        }
        if self.probe_step == 0 || self.probe_resamples < 2 {
            return Err(invalid("probe_step", "probe needs a positive step and at least 2 resamples"));
        }
        if self.bounds_instances == 0 {
            return Err(invalid("bounds_instances", "must be positive"));
        }
        if !(self.bounds_perturbation >= 0.0 && self.bounds_perturbation.is_finite()) {
            return Err(invalid("bounds_perturbation", "must be non-negative"));
        }
        Ok(())
    }
}

/// Defaults, then the optional file, then the flags.
pub fn parse_config<S: AsRef<str>>(path: Option<&Path>, flags: &[S]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|source| CliError::Unreadable { path: p.to_path_buf(), source })?;
        cfg.apply_text(&text)?;
    }
    cfg.apply_flags(flags)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Splits raw arguments into an optional `--config=FILE` and the remaining flags.
pub fn parse_args<S: AsRef<str>>(args: &[S]) -> Result<RunConfig> {
    let mut path = None;
    let mut flags = Vec::new();
    for a in args {
        let a = a.as_ref();
        match a.strip_prefix("--config=") {
            Some(p) => path = Some(PathBuf::from(p)),
            None => flags.push(a.to_string()),
        }
    }
    parse_config(path.as_deref(), &flags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub passed: bool,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct Writer {
    files: Vec<PathBuf>,
}

impl Writer {
    fn dir(&self, path: &Path) -> Result<()> {
        fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        fs::write(&path, bytes).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.files.push(path);
        Ok(())
    }
}

/// Runs the configured command once per (seed, variant) and writes CSVs and
/// `summary.txt` under the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut w = Writer { files: Vec::new() };
    w.dir(&cfg.out)?;
    let (passed, summary) = match cfg.command {
        Command::Train => run_train(cfg, &mut w)?,
        Command::Nqa => run_nqa(cfg, &mut w)?,
        Command::Bounds => run_bounds(cfg, &mut w)?,
        Command::Gradcheck => run_gradcheck(cfg, &mut w)?,
        Command::Probe => run_probe(cfg, &mut w)?,
    };
    let mut text = format!("command: {}\nseeds: {:?}\nresult: {}\n\n", cfg.command.name(), cfg.seeds, if passed { "PASS" } else { "FAIL" });
    text.push_str(&summary);
    w.write(cfg.out.join("summary.txt"), text.as_bytes())?;
    Ok(RunOutcome { passed, summary: text, files: w.files })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub const AGGREGATE_HEADER: &str = "variant,step,n_seeds,mean_eval_return,std_eval_return";

struct TrainJob {
    variant: Variant,
    seed: u64,
    curve: std::result::Result<String, String>,
    evals: Vec<(u64, f64)>,
    snapshots: Vec<(u64, Vec<u8>)>,
}

fn run_train(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String)> {
    let dir = cfg.out.join("train");
    w.dir(&dir)?;
    let jobs: Vec<(Variant, u64)> =
        cfg.variants.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<TrainJob> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let mut snapshots = Vec::new();
            let every = cfg.snapshot_every;
            let outcome = (|| -> Result<_> {
                let mut env = PointMassEnv::new(cfg.point_mass.clone())?;
                let mut agent = Agent::new(
                    cfg.merge.clone(),
                    variant,
                    PointMassEnv::STATE_DIM,
                    PointMassEnv::ACTION_DIM,
                    seed,
                )?;
                let curve = agent.train_with_hook(&mut env, cfg.steps, |a, info| {
                    if every > 0 && info.step % every == 0 {
                        let mut bytes = Vec::new();
                        write_snapshot(&mut bytes, &a.policy)?;
                        snapshots.push((info.step, bytes));
                    }
                    Ok(())
                })?;
                Ok(curve)
            })();
            match outcome {
                Ok(curve) => TrainJob { variant, seed, evals: curve.eval_points(), curve: Ok(curve.to_csv()), snapshots },
                Err(e) => TrainJob { variant, seed, evals: Vec::new(), curve: Err(e.to_string()), snapshots },
            }
        })
        .collect();

    let lqr = lqr_oracle_return(&cfg.point_mass)?;
    let mut ok = true;
    let mut summary = format!("lqr_oracle_return: {lqr}\n\nvariant,seed,final_eval_return,status\n");
    let mut aggregate = String::from(AGGREGATE_HEADER);
    aggregate.push('\n');
    for job in &results {
        let stem = format!("{}_seed{}", job.variant.name(), job.seed);
        match &job.curve {
            Ok(csv) => {
                w.write(dir.join(format!("{stem}.csv")), csv.as_bytes())?;
                let last = job.evals.last().map_or(f64::NAN, |e| e.1);
                let _ = writeln!(summary, "{},{},{last},ok", job.variant.name(), job.seed);
            }
            Err(e) => {
                ok = false;
                let _ = writeln!(summary, "{},{},,aborted: {e}", job.variant.name(), job.seed);
            }
        }
        for (step, bytes) in &job.snapshots {
            w.write(dir.join(format!("{stem}_step{step}.dpgm")), bytes)?;
        }
    }
    summary.push_str("\nvariant,mean_final_eval_return,std_final_eval_return\n");
    for &variant in &cfg.variants {
        let runs: Vec<&TrainJob> = results.iter().filter(|j| j.variant == variant && j.curve.is_ok()).collect();
        if runs.is_empty() {
            continue;
        }
        let steps: Vec<u64> = runs[0].evals.iter().map(|e| e.0).collect();
        for (i, step) in steps.iter().enumerate() {
            let vals: Vec<f64> = runs.iter().filter_map(|j| j.evals.get(i).filter(|e| e.0 == *step).map(|e| e.1)).collect();
            let (m, s) = mean_std(&vals);
            let _ = writeln!(aggregate, "{},{step},{},{m},{s}", variant.name(), vals.len());
        }
        let finals: Vec<f64> = runs.iter().filter_map(|j| j.evals.last().map(|e| e.1)).collect();
        let (m, s) = mean_std(&finals);
        let _ = writeln!(summary, "{},{m},{s}", variant.name());
    }
    w.write(dir.join("aggregate.csv"), aggregate.as_bytes())?;
    Ok((ok, summary))
}

fn run_nqa(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String)> {
    let dir = cfg.out.join("nqa");
    w.dir(&dir)?;
    let mut ok = true;
    let mut summary = String::new();
    for &seed in &cfg.seeds {
        let report = verify(&cfg.nqa, cfg.nqa_seeds, cfg.nqa_iters, seed)?;
        for trace in &report.traces {
            w.write(dir.join(format!("seed{seed}_{}.csv", trace.rule.name())), trace.to_csv(&closed_form(&cfg.nqa, trace.rule)?).as_bytes())?;
        }
        let table = report.summary();
        w.write(dir.join(format!("seed{seed}_summary.csv")), table.as_bytes())?;
        ok &= report.passed();
        let _ = writeln!(
            summary,
            "seed {seed}: limits {}, variance ordering {}, bias ordering {}",
            report.limits_ok(),
            report.variance_ordering_ok(),
            report.bias_ordering_ok()
        );
        summary.push_str(&table);
        summary.push('\n');
    }
    Ok((ok, summary))
}

fn run_bounds(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String)> {
    let dir = cfg.out.join("bounds");
    w.dir(&dir)?;
    let mut ok = true;
    let mut summary = String::from("seed,instances,failed_checks,worst_bound,worst_slack\n");
    for &seed in &cfg.seeds {
        let reports: Vec<InstanceReport> = (0..cfg.bounds_instances as u64)
            .into_par_iter()
            .map(|i| run_instance((seed << 32) | i, cfg.bounds_perturbation, cfg.bounds_t_max))
            .collect::<std::result::Result<_, _>>()?;
        w.write(dir.join(format!("seed{seed}.csv")), suite_csv(&reports).as_bytes())?;
        let failed = reports.iter().flat_map(|r| &r.checks).filter(|c| !c.passed()).count();
        let worst = reports
            .iter()
            .flat_map(|r| &r.checks)
            .filter(|c| c.kind == crate::bounds::CheckKind::Upper)
            .min_by(|a, b| a.slack().total_cmp(&b.slack()));
        ok &= failed == 0;
        let (id, slack) = worst.map_or(("none", f64::NAN), |c| (c.id, c.slack()));
        let _ = writeln!(summary, "{seed},{},{failed},{id},{slack:e}", reports.len());
    }
    Ok((ok, summary))
}

pub const GRADCHECK_HEADER: &str = "architecture,op,rel_err,tolerance,passed";

fn run_gradcheck(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String)> {
    let dir = cfg.out.join("gradcheck");
    w.dir(&dir)?;
    let mut ok = true;
    let mut summary = String::new();
    for &seed in &cfg.seeds {
        let mut csv = format!("{GRADCHECK_HEADER}\n");
        let mut per_arch: Vec<(String, f64)> = Vec::new();
        for (i, arch) in architecture_grid().iter().enumerate() {
            let r = check_architecture(arch, seed.wrapping_add(i as u64))?;
            for (op, err) in [("network_params", r.param_rel_err), ("network_inputs", r.input_rel_err)] {
                let pass = err < crate::agent::gradcheck::NETWORK_TOL;
                ok &= pass;
                let _ = writeln!(csv, "{},{op},{err:e},{:e},{pass}", r.label, crate::agent::gradcheck::NETWORK_TOL);
            }
            let worst = r.max_rel_err();
            per_arch.push((r.label, worst));
        }
        for r in gradient_suite(seed)? {
            ok &= r.passed();
            let _ = writeln!(csv, "{},{},{:e},{:e},{}", r.architecture, r.op.name(), r.rel_err, r.op.tolerance(), r.passed());
            if let Some(e) = per_arch.iter_mut().find(|e| e.0 == r.architecture) {
                e.1 = e.1.max(r.rel_err);
            }
        }
        w.write(dir.join(format!("seed{seed}.csv")), csv.as_bytes())?;
        let _ = writeln!(summary, "seed {seed}\narchitecture,max_rel_err");
        for (label, err) in per_arch {
            let _ = writeln!(summary, "{label},{err:e}");
        }
    }
    Ok((ok, summary))
}

pub const PROBE_HEADER: &str = "variant,seed,step,resamples,conventional,interpolation,two_step";

fn run_probe(cfg: &RunConfig, w: &mut Writer) -> Result<(bool, String)> {
    let dir = cfg.out.join("probe");
    w.dir(&dir)?;
    let jobs: Vec<(Variant, u64)> =
        cfg.variants.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let rows: Vec<std::result::Result<String, String>> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            (|| -> Result<String> {
                let mut env = PointMassEnv::new(cfg.point_mass.clone())?;
                let mut agent =
                    Agent::new(cfg.merge.clone(), variant, PointMassEnv::STATE_DIM, PointMassEnv::ACTION_DIM, seed)?;
                agent.train(&mut env, cfg.probe_step)?;
                let p = dpg_variance_probe(&agent, cfg.probe_resamples, seed)?;
                Ok(format!(
                    "{},{seed},{},{},{},{},{}",
                    variant.name(),
                    p.step,
                    p.resamples,
                    p.conventional,
                    p.interpolation,
                    p.two_step
                ))
            })()
            .map_err(|e| format!("{},{seed}: {e}", variant.name()))
        })
        .collect();
    let mut ok = true;
    let mut summary = String::new();
    for ((variant, seed), row) in jobs.iter().zip(rows) {
        match row {
            Ok(line) => {
                w.write(dir.join(format!("{}_seed{seed}.csv", variant.name())), format!("{PROBE_HEADER}\n{line}\n").as_bytes())?;
                let _ = writeln!(summary, "{line}");
            }
            Err(e) => {
                ok = false;
                let _ = writeln!(summary, "aborted: {e}");
            }
        }
    }
    Ok((ok, format!("{PROBE_HEADER}\n{summary}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse_config::<&str>(None, &[]).unwrap();
        assert_eq!((cfg.merge.upsilon, cfg.merge.lambda, cfg.merge.kappa), (0.25, 0.1, 30));
        assert_eq!(cfg.merge.buffer_capacity, 100_000);
        assert_eq!((cfg.merge.gamma, cfg.merge.batch_size), (0.99, 256));
    }

    #[test]
    fn out_of_range_names_key() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("upsilon = 1.5").unwrap_err();
        assert!(matches!(&err, CliError::InvalidValue { key, .. } if key == "upsilon"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("# comment\nupsilom = 0.2\n").unwrap_err();
        assert!(matches!(&err, CliError::UnknownKey(k) if k == "upsilom"));
        assert!(cfg.apply_flags(&["--nope=1"]).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "upsilon = 0.1  # file value\nseeds = 4\n").unwrap();
        let cfg = parse_config(Some(&path), &["--upsilon=0.25"]).unwrap();
        assert_eq!(cfg.merge.upsilon, 0.25);
        assert_eq!(cfg.seeds, vec![4]);
    }

    #[test]
    fn unreadable_file_names_path() {
        let err = parse_config::<&str>(Some(Path::new("/nonexistent/x.cfg")), &[]).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.cfg"));
    }

    #[test]
    fn seed_ranges_and_lists() {
        let cfg = parse_args(&["--seeds=0..3,7", "--command=bounds", "--variants=td3,td3_2m"]).unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2, 7]);
        assert_eq!(cfg.command, Command::Bounds);
        assert_eq!(cfg.variants, vec![Variant::Td3, Variant::Td3TwoStep]);
        assert!(parse_args(&["--seeds="]).is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
