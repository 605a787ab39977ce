//! Acceptance report. Prints one PASS/FAIL line per criterion.
//!
//! Exits zero after reporting unless `DPGLAB_ACCEPTANCE_STRICT` is set, in
//! which case any FAIL makes the exit status nonzero. `DPGLAB_ACCEPTANCE_ONLY`
//! takes a comma list of criterion numbers to run a subset.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dpglab::agent::{dpg_variance_probe, gradient_suite, Agent, GradOp, LearningCurve, MergeConfig, ProbeReport, Variant};
use dpglab::bounds::run_instance;
use dpglab::cli::{parse_args, run};
use dpglab::envs::{lqr_oracle_return, PointMassConfig, PointMassEnv, Trajectory, Transition};
use dpglab::nqa::{verify, QuadraticSpec, RuleTag};
use dpglab::numcore::gradcheck::{architecture_grid, check_architecture};
use dpglab::replay::{EliteErb, FullErb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const NQA_SEEDS: usize = 20_000;
const NQA_ITERS: usize = 2_000;
const NQA_REL: f64 = 0.05;
const NQA_SE: f64 = 4.0;
const NQA_ABS: f64 = 1e-8;

const NETWORK_TOL: f64 = 1e-4;
const VAE_TOL: f64 = 1e-3;

const BOUND_INSTANCES: u64 = 200;
const IDENTITY_TOL: f64 = 1e-8;
const SLACK_TOL: f64 = 1e-9;
const BOUND_PERTURBATION: f64 = 0.1;
const BOUND_T_MAX: usize = 50;

const DEGENERATE_SEEDS: u64 = 3;
const DEGENERATE_STEPS: u64 = 5_000;

const LEARN_SEEDS: u64 = 10;
const LEARN_STEPS: u64 = 30_000;
const LEARN_FRACTION: f64 = 0.9;
const LEARN_MIN_SEEDS: usize = 8;

const PROBE_STEP: u64 = 15_000;
const PROBE_SEEDS: u64 = 5;
const PROBE_RESAMPLES: usize = 256;

const REPLAY_OPS: usize = 100_000;

type Criterion = (usize, &'static str, fn() -> Verdict);

struct Verdict {
    passed: bool,
    detail: String,
    budget: Option<Duration>,
}

fn within_budget(elapsed: Duration, budget: Option<Duration>) -> bool {
    budget.is_none_or(|b| elapsed <= b)
}

fn nqa_tol(cf: f64, se: f64) -> f64 {
    (NQA_REL * cf.abs()).max(NQA_SE * se).max(NQA_ABS)
}

fn criterion_nqa() -> Verdict {
    let mut passed = true;
    let mut detail = String::new();
    for (name, spec) in [("scalar", QuadraticSpec::reference_scalar()), ("diagonal", QuadraticSpec::reference_diagonal())] {
        let report = match verify(&spec, NQA_SEEDS, NQA_ITERS, 0) {
            Ok(r) => r,
            Err(e) => return Verdict { passed: false, detail: e.to_string(), budget: None },
        };
        let mut worst = 0.0f64;
        let mut limits = true;
        for r in &report.rows {
            let m = (r.emp_mean - r.cf_mean).abs() / nqa_tol(r.cf_mean, r.se_mean);
            let v = (r.emp_var - r.cf_var).abs() / nqa_tol(r.cf_var, r.se_var);
            worst = worst.max(m).max(v);
            limits &= m <= 1.0 && v <= 1.0;
        }
        let mut var_order = true;
        let mut bias_order = true;
        for j in 0..spec.dim() {
            let row = |rule| report.row(rule, j);
            var_order &= row(RuleTag::TwoStep).emp_var < row(RuleTag::Interpolation).emp_var
                && row(RuleTag::Interpolation).emp_var < row(RuleTag::Conventional).emp_var;
            bias_order &= row(RuleTag::Interpolation).emp_mean.abs() <= row(RuleTag::TwoStep).emp_mean.abs();
        }
        passed &= limits && var_order && bias_order;
        detail += &format!("{name}: worst err/tol {worst:.3}, var order {var_order}, bias order {bias_order}; ");
    }
    Verdict { passed, detail, budget: Some(Duration::from_secs(120)) }
}

fn criterion_gradients() -> Verdict {
    let mut worst_net = 0.0f64;
    for (i, arch) in architecture_grid().iter().enumerate() {
        match check_architecture(arch, i as u64) {
            Ok(r) => worst_net = worst_net.max(r.max_rel_err()),
            Err(e) => return Verdict { passed: false, detail: e.to_string(), budget: None },
        }
    }
    let reports = match gradient_suite(0) {
        Ok(r) => r,
        Err(e) => return Verdict { passed: false, detail: e.to_string(), budget: None },
    };
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut passed = worst_net.is_finite() && worst_net < NETWORK_TOL;
    for r in &reports {
        let tol = if r.op == GradOp::VaeElbo { VAE_TOL } else { NETWORK_TOL };
        passed &= r.rel_err.is_finite() && r.rel_err < tol;
        let e = worst.entry(r.op.name()).or_insert(0.0);
        *e = e.max(r.rel_err);
    }
    let archs: std::collections::BTreeSet<_> = reports.iter().map(|r| r.architecture.as_str()).collect();
    passed &= archs.len() == 20;
    let mut detail = format!("{} architectures, network {worst_net:.1e}", archs.len());
    for (op, e) in worst {
        detail += &format!(", {op} {e:.1e}");
    }
    Verdict { passed, detail, budget: Some(Duration::from_secs(60)) }
}

fn criterion_bounds() -> Verdict {
    let reports: Vec<_> =
        (0..BOUND_INSTANCES).into_par_iter().map(|i| run_instance(i, BOUND_PERTURBATION, BOUND_T_MAX)).collect();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut passed = true;
    for r in reports {
        let r = match r {
            Ok(r) => r,
            Err(e) => return Verdict { passed: false, detail: e.to_string(), budget: None },
        };
        for c in &r.checks {
            let tol = if c.id.starts_with("lemma1") { IDENTITY_TOL } else { SLACK_TOL };
            let slack = c.slack();
            passed &= c.lhs.is_finite() && c.rhs.is_finite() && slack >= -tol;
            let e = worst.entry(c.id.to_string()).or_insert(f64::INFINITY);
            *e = e.min(slack);
        }
    }
    let worst_overall = worst.iter().min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, v)| format!("{k} {v:.2e}"));
    let detail = format!(
        "{BOUND_INSTANCES} instances, {} bound ids, tightest {}",
        worst.len(),
        worst_overall.unwrap_or_default()
    );
    Verdict { passed, detail, budget: Some(Duration::from_secs(300)) }
}

fn degenerate_config() -> MergeConfig {
    MergeConfig { upsilon: 0.0, lambda: 0.0, ..Default::default() }
}

fn train(config: MergeConfig, variant: Variant, seed: u64, steps: u64) -> Result<LearningCurve, String> {
    let mut env = PointMassEnv::new(PointMassConfig::default()).map_err(|e| e.to_string())?;
    let mut agent = Agent::new(config, variant, PointMassEnv::STATE_DIM, PointMassEnv::ACTION_DIM, seed)
        .map_err(|e| e.to_string())?;
    agent.train(&mut env, steps).map_err(|e| e.to_string())
}

fn criterion_degenerate() -> Verdict {
    let jobs: Vec<(Variant, u64)> =
        Variant::ALL.into_iter().flat_map(|v| (0..DEGENERATE_SEEDS).map(move |s| (v, s))).collect();
    let curves: Vec<_> =
        jobs.par_iter().map(|&(v, s)| train(degenerate_config(), v, s, DEGENERATE_STEPS).map(|c| c.to_csv())).collect();
    let mut by_job = BTreeMap::new();
    for ((v, s), c) in jobs.into_iter().zip(curves) {
        match c {
            Ok(c) => by_job.insert((v.name(), s), c),
            Err(e) => return Verdict { passed: false, detail: e, budget: None },
        };
    }
    let mut identical = 0;
    for s in 0..DEGENERATE_SEEDS {
        let base = &by_job[&(Variant::Td3.name(), s)];
        for v in [Variant::Td3Im, Variant::Td3TwoStep] {
            identical += usize::from(by_job[&(v.name(), s)].as_bytes() == base.as_bytes());
        }
    }
    let expected = 2 * DEGENERATE_SEEDS as usize;
    Verdict {
        passed: identical == expected,
        detail: format!("{identical}/{expected} curves byte-identical to td3 over {DEGENERATE_STEPS} steps"),
        budget: None,
    }
}

struct LearnRun {
    variant: Variant,
    seed: u64,
    final_return: Result<f64, String>,
    probe: Option<Result<ProbeReport, String>>,
}

fn learning_runs() -> Vec<LearnRun> {
    let jobs: Vec<(Variant, u64)> = [Variant::Td3TwoStep, Variant::Td3]
        .into_iter()
        .flat_map(|v| (0..LEARN_SEEDS).map(move |s| (v, s)))
        .collect();
    jobs.par_iter()
        .map(|&(variant, seed)| {
            let mut probe = None;
            let want_probe = variant == Variant::Td3TwoStep && seed < PROBE_SEEDS;
            let outcome = (|| -> Result<f64, String> {
                let mut env = PointMassEnv::new(PointMassConfig::default()).map_err(|e| e.to_string())?;
                let mut agent =
                    Agent::new(MergeConfig::default(), variant, PointMassEnv::STATE_DIM, PointMassEnv::ACTION_DIM, seed)
                        .map_err(|e| e.to_string())?;
                let curve = agent
                    .train_with_hook(&mut env, LEARN_STEPS, |a, info| {
                        if want_probe && info.step == PROBE_STEP {
                            probe = Some(dpg_variance_probe(a, PROBE_RESAMPLES, seed).map_err(|e| e.to_string()));
                        }
                        Ok(())
                    })
                    .map_err(|e| e.to_string())?;
                curve.final_eval_return().ok_or_else(|| "no evaluation recorded".to_string())
            })();
            LearnRun { variant, seed, final_return: outcome, probe }
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

fn criterion_learning(runs: &[LearnRun]) -> Verdict {
    let lqr = match lqr_oracle_return(&PointMassConfig::default()) {
        Ok(v) => v,
        Err(e) => return Verdict { passed: false, detail: e.to_string(), budget: None },
    };
    // Returns are non-positive, so "within 90% of the oracle" means at least lqr / 0.9.
    let threshold = lqr / LEARN_FRACTION;
    let finals = |v: Variant| -> Result<Vec<f64>, String> {
        runs.iter().filter(|r| r.variant == v).map(|r| r.final_return.clone()).collect()
    };
    let (two, td3) = match (finals(Variant::Td3TwoStep), finals(Variant::Td3)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Verdict { passed: false, detail: e, budget: None },
    };
    let reached = two.iter().filter(|&&r| r >= threshold).count();
    let (m2, _) = mean_std(&two);
    let (m1, s1) = mean_std(&td3);
    let ordering = m2 >= m1 - s1;
    let seeds: Vec<String> = runs
        .iter()
        .filter(|r| r.variant == Variant::Td3TwoStep)
        .map(|r| format!("{}:{:.1}", r.seed, r.final_return.clone().unwrap_or(f64::NAN)))
        .collect();
    Verdict {
        passed: reached >= LEARN_MIN_SEEDS && ordering,
        detail: format!(
            "lqr {lqr:.3}, threshold {threshold:.3}, td3_2m reached {reached}/{LEARN_SEEDS} (need {LEARN_MIN_SEEDS}), \
             mean td3_2m {m2:.1} vs td3 {m1:.1} ± {s1:.1} ordering {ordering}; td3_2m finals [{}]",
            seeds.join(" ")
        ),
        budget: Some(Duration::from_secs(15 * 60)),
    }
}

fn criterion_probe(runs: &[LearnRun]) -> Verdict {
    let mut conv = Vec::new();
    let mut two = Vec::new();
    for r in runs.iter().filter(|r| r.variant == Variant::Td3TwoStep && r.seed < PROBE_SEEDS) {
        match &r.probe {
            Some(Ok(p)) => {
                conv.push(p.conventional);
                two.push(p.two_step);
            }
            Some(Err(e)) => return Verdict { passed: false, detail: e.clone(), budget: None },
            None => return Verdict { passed: false, detail: format!("seed {} never reached step {PROBE_STEP}", r.seed), budget: None },
        }
    }
    let (mc, _) = mean_std(&conv);
    let (mt, _) = mean_std(&two);
    let below = two.iter().zip(&conv).filter(|(t, c)| t < c).count();
    Verdict {
        passed: conv.len() == PROBE_SEEDS as usize && mt < mc,
        detail: format!(
            "mean per-coordinate variance two_step {mt:.3e} vs conventional {mc:.3e} (ratio {:.3}); lower on {below}/{} seeds",
            mt / mc,
            conv.len()
        ),
        budget: None,
    }
}

fn transition(id: u64, reward: f64) -> Transition {
    Transition {
        state: vec![id as f64, 0.0],
        action: vec![0.0],
        reward,
        next_state: vec![id as f64 + 1.0, 0.0],
        terminal: false,
        truncated: false,
    }
}

fn criterion_replay() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (capacity, kappa) = (1000, 30);
    let mut full = match FullErb::new(capacity, 2, 1) {
        Ok(f) => f,
        Err(e) => return Verdict { passed: false, detail: e.to_string(), budget: None },
    };
    let mut elite = EliteErb::new(kappa).expect("positive kappa");
    let mut shadow = VecDeque::new();
    let mut finished: Vec<(f64, u64)> = Vec::new();
    let mut current = Trajectory::new();
    let (mut id, mut seq, mut mismatches, mut samples) = (0u64, 0u64, 0usize, 0usize);
    for _ in 0..REPLAY_OPS {
        let roll: f64 = rng.random();
        if roll < 0.6 {
            let t = transition(id, f64::from(rng.random_range(-5i32..=5)));
            id += 1;
            full.push(&t).expect("shape");
            shadow.push_back(t.clone());
            if shadow.len() > capacity {
                shadow.pop_front();
            }
            current.push(t);
        } else if roll < 0.7 && !current.is_empty() {
            let traj = std::mem::take(&mut current);
            finished.push((traj.episodic_return(), seq));
            seq += 1;
            elite.end_trajectory(traj).expect("non-empty");
            let mut oracle = finished.clone();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
            oracle.truncate(kappa);
            oracle.sort_by_key(|e| e.1);
            let mut kept: Vec<(f64, u64)> = elite.entries().iter().map(|e| (e.episodic_return, e.sequence)).collect();
            kept.sort_by_key(|e| e.1);
            mismatches += usize::from(kept != oracle);
        } else if !shadow.is_empty() {
            let (batch, ages) = full.sample_indexed(8, &mut rng).expect("non-empty");
            samples += 1;
            mismatches += ages.iter().enumerate().filter(|&(i, &a)| batch.transition(i) != shadow[a]).count();
        }
        mismatches += usize::from(full.len() != shadow.len());
    }
    mismatches += shadow.iter().enumerate().filter(|&(a, t)| full.get(a).as_ref() != Some(t)).count();
    Verdict {
        passed: mismatches == 0,
        detail: format!("{REPLAY_OPS} ops, {seq} trajectories, {samples} samples, {mismatches} mismatches"),
        budget: None,
    }
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).unwrap_or_default();
                out.insert(p.strip_prefix(dir).expect("under dir").to_path_buf(), bytes);
            }
        }
    }
    out
}

fn criterion_determinism() -> Verdict {
    let commands: [&[&str]; 5] = [
        &["--command=train", "--steps=600", "--warmup_steps=100", "--batch_size=32", "--eval_every=200", "--snapshot_every=300"],
        &["--command=nqa", "--nqa_seeds=500", "--nqa_iters=200"],
        &["--command=bounds", "--bounds_instances=10"],
        &["--command=gradcheck"],
        &["--command=probe", "--probe_step=400", "--warmup_steps=100", "--batch_size=32", "--probe_resamples=8"],
    ];
    let mut identical = 0;
    let mut total_files = 0;
    for cmd in commands {
        let mut trees = Vec::new();
        for _ in 0..2 {
            let dir = match tempfile::tempdir() {
                Ok(d) => d,
                Err(e) => return Verdict { passed: false, detail: e.to_string(), budget: None },
            };
            let mut args: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
            args.push("--seeds=0,1".into());
            args.push(format!("--out={}", dir.path().display()));
            let outcome = parse_args(&args).map_err(|e| e.to_string()).and_then(|c| run(&c).map_err(|e| e.to_string()));
            if let Err(e) = outcome {
                return Verdict { passed: false, detail: format!("{cmd:?}: {e}"), budget: None };
            }
            trees.push(files(dir.path()));
        }
        total_files += trees[0].len();
        identical += usize::from(!trees[0].is_empty() && trees[0] == trees[1]);
    }
    Verdict {
        passed: identical == commands.len(),
        detail: format!("{identical}/{} commands reproduced {total_files} files byte for byte", commands.len()),
        budget: None,
    }
}

fn report(n: usize, name: &str, start: Instant, v: Verdict) -> bool {
    let elapsed = start.elapsed();
    let in_time = within_budget(elapsed, v.budget);
    let passed = v.passed && in_time;
    let budget = v.budget.map_or(String::new(), |b| format!(" / budget {}s", b.as_secs()));
    let late = if v.passed && !in_time { " (over runtime budget)" } else { "" };
    println!(
        "{} criterion {n} {name}: {}{late} [{:.1}s{budget}]",
        if passed { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    passed
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("DPGLAB_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results = Vec::new();

    let simple: [Criterion; 4] = [
        (1, "nqa_closed_form", criterion_nqa),
        (2, "gradient_fidelity", criterion_gradients),
        (3, "bound_suite", criterion_bounds),
        (4, "degeneracy", criterion_degenerate),
    ];
    for (n, name, f) in simple {
        if wanted(n) {
            let t = Instant::now();
            results.push(report(n, name, t, f()));
        }
    }
    if wanted(5) || wanted(6) {
        let t = Instant::now();
        let runs = learning_runs();
        let train_time = t.elapsed();
        if wanted(5) {
            results.push(report(5, "learning_performance", t, criterion_learning(&runs)));
        }
        if wanted(6) {
            let t6 = Instant::now() - train_time;
            results.push(report(6, "variance_probe", t6, criterion_probe(&runs)));
        }
    }
    let tail: [Criterion; 2] = [(7, "replay_invariants", criterion_replay), (8, "determinism", criterion_determinism)];
    for (n, name, f) in tail {
        if wanted(n) {
            let t = Instant::now();
            results.push(report(n, name, t, f()));
        }
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if std::env::var_os("DPGLAB_ACCEPTANCE_STRICT").is_some() && passed < results.len() {
        std::process::exit(1);
    }
}
