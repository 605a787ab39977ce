use std::fmt::Write as _;

use rand::Rng;
use rand_distr::Exp1;

use super::{linalg, EnvError, Result};

/// Finite-state MDP with a scalar action in `[−1, 1]`.
///
/// Transitions and rewards are tabulated on an evenly spaced action grid and
/// linearly interpolated in between, so every quantity that depends on the
/// action is piecewise linear in it.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    n: usize,
    g: usize,
    gamma: f64,
    lipschitz_c: f64,
    rho0: Vec<f64>,
    /// `reward[s * g + k]`
    reward: Vec<f64>,
    /// `trans[k * n * n + s * n + s′]`
    trans: Vec<f64>,
}

pub const MAX_STATES: usize = 8;
pub const MAX_GRID: usize = 21;

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(EnvError::InvalidConfig(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(EnvError::InvalidConfig(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl FiniteMdp {
    pub fn new(
        n: usize,
        g: usize,
        gamma: f64,
        lipschitz_c: f64,
        rho0: Vec<f64>,
        reward: Vec<f64>,
        trans: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 || n > MAX_STATES {
            return Err(EnvError::InvalidConfig(format!("n_states must be in 1..={MAX_STATES}, got {n}")));
        }
        if g == 0 || g > MAX_GRID {
            return Err(EnvError::InvalidConfig(format!("action grid size must be in 1..={MAX_GRID}, got {g}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(EnvError::InvalidConfig(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if !(lipschitz_c > 0.0 && lipschitz_c.is_finite()) {
            return Err(EnvError::InvalidConfig(format!("lipschitz constant must be positive, got {lipschitz_c}")));
        }
        if rho0.len() != n || reward.len() != n * g || trans.len() != g * n * n {
            return Err(EnvError::Shape(format!(
                "expected ρ0 {n}, rewards {}, transitions {}; got {}, {}, {}",
                n * g,
                g * n * n,
                rho0.len(),
                reward.len(),
                trans.len()
            )));
        }
        check_simplex(&rho0, "initial distribution")?;
        if let Some(i) = reward.iter().position(|r| !r.is_finite()) {
            return Err(EnvError::InvalidConfig(format!("reward entry {i} is not finite")));
        }
        for k in 0..g {
            for s in 0..n {
                let row = &trans[k * n * n + s * n..k * n * n + (s + 1) * n];
                check_simplex(row, &format!("transition row (s={s}, k={k})"))?;
            }
        }
        let mdp = Self { n, g, gamma, lipschitz_c, rho0, reward, trans };
        if !mdp.satisfies_lipschitz() {
            return Err(EnvError::InvalidConfig(format!(
                "transitions violate the declared lipschitz constant {lipschitz_c} (measured {})",
                mdp.measured_lipschitz()
            )));
        }
        Ok(mdp)
    }

    /// Random instance: Dirichlet(1,…,1) rows smoothed across the action grid,
    /// then mixed toward their action-average until the continuity constant
    /// is at most `lipschitz_c`. Rewards are `Uniform[−1, 1]`.
    pub fn random<R: Rng + ?Sized>(n: usize, g: usize, gamma: f64, lipschitz_c: f64, rng: &mut R) -> Result<Self> {
        if n == 0 || n > MAX_STATES || g == 0 || g > MAX_GRID {
            return Err(EnvError::InvalidConfig(format!("unsupported size n={n}, g={g}")));
        }
        let dirichlet = |rng: &mut R| -> Vec<f64> {
            let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-300).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        };
        let mut trans = vec![0.0; g * n * n];
        for k in 0..g {
            for s in 0..n {
                let row = dirichlet(rng);
                trans[k * n * n + s * n..k * n * n + (s + 1) * n].copy_from_slice(&row);
            }
        }
        for _ in 0..2 {
            let prev = trans.clone();
            for k in 0..g {
                let lo = k.saturating_sub(1);
                let hi = (k + 1).min(g - 1);
                for i in 0..n * n {
                    trans[k * n * n + i] =
                        0.25 * prev[lo * n * n + i] + 0.5 * prev[k * n * n + i] + 0.25 * prev[hi * n * n + i];
                }
            }
        }
        let measured = lipschitz_of(n, g, &trans);
        if measured > lipschitz_c {
            let w = lipschitz_c / measured * (1.0 - 1e-9);
            let mut mean = vec![0.0; n * n];
            for k in 0..g {
                for i in 0..n * n {
                    mean[i] += trans[k * n * n + i] / g as f64;
                }
            }
            for k in 0..g {
                for i in 0..n * n {
                    trans[k * n * n + i] = (1.0 - w) * mean[i] + w * trans[k * n * n + i];
                }
            }
        }
        for row in trans.chunks_exact_mut(n) {
            let sum: f64 = row.iter().sum();
            for p in row.iter_mut() {
                *p /= sum;
            }
        }
        let rho0 = dirichlet(rng);
        let reward: Vec<f64> = (0..n * g).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self::new(n, g, gamma, lipschitz_c, rho0, reward, trans)
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lipschitz_c(&self) -> f64 {
        self.lipschitz_c
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    pub fn grid_action(&self, k: usize) -> f64 {
        if self.g == 1 {
            0.0
        } else {
            -1.0 + 2.0 * k as f64 / (self.g - 1) as f64
        }
    }

    pub fn action_grid(&self) -> Vec<f64> {
        (0..self.g).map(|k| self.grid_action(k)).collect()
    }

    /// Grid spacing; zero for a single-action grid.
    pub fn spacing(&self) -> f64 {
        if self.g == 1 {
            0.0
        } else {
            2.0 / (self.g - 1) as f64
        }
    }

    /// Segment index `k` and weight `w` with `a = (1−w)·grid[k] + w·grid[k+1]`.
    ///
    /// A grid point belongs to the segment on its right, except `a = 1`.
    pub fn locate(&self, a: f64) -> (usize, f64) {
        if self.g == 1 {
            return (0, 0.0);
        }
        let x = (a.clamp(-1.0, 1.0) + 1.0) / self.spacing();
        let k = (x.floor() as usize).min(self.g - 2);
        (k, x - k as f64)
    }

    pub fn grid_reward(&self, s: usize, k: usize) -> f64 {
        self.reward[s * self.g + k]
    }

    pub fn grid_transition(&self, k: usize, s: usize, s2: usize) -> f64 {
        self.trans[k * self.n * self.n + s * self.n + s2]
    }

    pub fn reward(&self, s: usize, a: f64) -> f64 {
        let (k, w) = self.locate(a);
        if self.g == 1 {
            return self.grid_reward(s, 0);
        }
        (1.0 - w) * self.grid_reward(s, k) + w * self.grid_reward(s, k + 1)
    }

    pub fn transition_row(&self, s: usize, a: f64) -> Vec<f64> {
        let n = self.n;
        if self.g == 1 {
            return self.trans[s * n..(s + 1) * n].to_vec();
        }
        let (k, w) = self.locate(a);
        let lo = &self.trans[k * n * n + s * n..k * n * n + (s + 1) * n];
        let hi = &self.trans[(k + 1) * n * n + s * n..(k + 1) * n * n + (s + 1) * n];
        lo.iter().zip(hi).map(|(p, q)| (1.0 - w) * p + w * q).collect()
    }

    /// Smallest `c` with `|Pr(s,s′,a) − Pr(s,s′,a′)| ≤ (c/n)·|a − a′|` on adjacent grid actions.
    pub fn measured_lipschitz(&self) -> f64 {
        lipschitz_of(self.n, self.g, &self.trans)
    }

    pub fn satisfies_lipschitz(&self) -> bool {
        self.measured_lipschitz() <= self.lipschitz_c * (1.0 + 1e-12)
    }

    pub fn with_rho0(&self, rho0: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.g, self.gamma, self.lipschitz_c, rho0, self.reward.clone(), self.trans.clone())
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.n, self.g, gamma, self.lipschitz_c, self.rho0.clone(), self.reward.clone(), self.trans.clone())
    }

    pub fn scale_rewards(&self, factor: f64) -> Result<Self> {
        let reward = self.reward.iter().map(|r| r * factor).collect();
        Self::new(self.n, self.g, self.gamma, self.lipschitz_c, self.rho0.clone(), reward, self.trans.clone())
    }

    /// Relabels state `s` as `perm[s]` in every table.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n;
        let g = self.g;
        if perm.len() != n || (0..n).any(|i| !perm.contains(&i)) {
            return Err(EnvError::InvalidConfig("relabel needs a permutation of the states".into()));
        }
        let mut rho0 = vec![0.0; n];
        let mut reward = vec![0.0; n * g];
        let mut trans = vec![0.0; g * n * n];
        for s in 0..n {
            rho0[perm[s]] = self.rho0[s];
            for k in 0..g {
                reward[perm[s] * g + k] = self.grid_reward(s, k);
                for s2 in 0..n {
                    trans[k * n * n + perm[s] * n + perm[s2]] = self.grid_transition(k, s, s2);
                }
            }
        }
        Self::new(n, g, self.gamma, self.lipschitz_c, rho0, reward, trans)
    }

    /// Plain-text form: `n g gamma c`, then ρ0, the reward rows, and the `g`
    /// transition matrices, whitespace separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {} {}", self.n, self.g, self.gamma, self.lipschitz_c);
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "{}", join(&self.rho0));
        for row in self.reward.chunks_exact(self.g) {
            let _ = writeln!(out, "{}", join(row));
        }
        for row in self.trans.chunks_exact(self.n) {
            let _ = writeln!(out, "{}", join(row));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)));
        let mut next = |what: &str| -> Result<(usize, &str)> {
            tokens.next().ok_or_else(|| EnvError::Parse { line: 0, message: format!("missing {what}") })
        };
        fn num<T: std::str::FromStr>((line, tok): (usize, &str)) -> Result<T> {
            tok.parse().map_err(|_| EnvError::Parse { line, message: format!("cannot parse {tok:?}") })
        }
        let n: usize = num(next("n_states")?)?;
        let g: usize = num(next("grid size")?)?;
        let gamma: f64 = num(next("gamma")?)?;
        let c: f64 = num(next("lipschitz constant")?)?;
        if n == 0 || n > MAX_STATES || g == 0 || g > MAX_GRID {
            return Err(EnvError::Parse { line: 1, message: format!("unsupported size n={n}, g={g}") });
        }
        let mut read = |count: usize, what: &str| -> Result<Vec<f64>> {
            (0..count).map(|_| num(next(what)?)).collect()
        };
        let rho0 = read(n, "initial distribution")?;
        let reward = read(n * g, "reward table")?;
        let trans = read(g * n * n, "transition matrices")?;
        if let Some((line, tok)) = tokens.next() {
            return Err(EnvError::Parse { line, message: format!("unexpected trailing token {tok:?}") });
        }
        Self::new(n, g, gamma, c, rho0, reward, trans)
    }
}

fn lipschitz_of(n: usize, g: usize, trans: &[f64]) -> f64 {
    if g < 2 {
        return 0.0;
    }
    let spacing = 2.0 / (g - 1) as f64;
    let mut worst = 0.0f64;
    for k in 0..g - 1 {
        for i in 0..n * n {
            worst = worst.max((trans[(k + 1) * n * n + i] - trans[k * n * n + i]).abs());
        }
    }
    worst * n as f64 / spacing
}

/// A deterministic tabular policy: one continuous action per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub actions: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(actions: Vec<f64>) -> Result<Self> {
        if let Some(a) = actions.iter().find(|a| !(a.abs() <= 1.0)) {
            return Err(EnvError::InvalidConfig(format!("policy action {a} outside [−1, 1]")));
        }
        Ok(Self { actions })
    }

    pub fn constant(n: usize, a: f64) -> Result<Self> {
        Self::new(vec![a; n])
    }

    pub fn action(&self, s: usize) -> f64 {
        self.actions[s]
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `max_s |π(s) − β(s)|`.
    pub fn max_deviation(&self, other: &TabularPolicy) -> f64 {
        self.actions.iter().zip(&other.actions).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

fn check_policy(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<()> {
    if policy.len() != mdp.n {
        return Err(EnvError::Shape(format!("policy covers {} states, mdp has {}", policy.len(), mdp.n)));
    }
    Ok(())
}

/// Row-major `P_π` and `r_π`.
fn policy_chain(mdp: &FiniteMdp, policy: &TabularPolicy) -> (Vec<f64>, Vec<f64>) {
    let n = mdp.n;
    let mut p = Vec::with_capacity(n * n);
    let mut r = Vec::with_capacity(n);
    for s in 0..n {
        p.extend(mdp.transition_row(s, policy.action(s)));
        r.push(mdp.reward(s, policy.action(s)));
    }
    (p, r)
}

/// Exact action values of a policy on the action grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n: usize,
    g: usize,
    spacing: f64,
    /// `grid[s * g + k]`
    grid: Vec<f64>,
    /// `V(s) = Q(s, π(s))`
    values: Vec<f64>,
}

impl QTable {
    pub fn grid_value(&self, s: usize, k: usize) -> f64 {
        self.grid[s * self.g + k]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn state_values(&self) -> &[f64] {
        &self.values
    }

    fn locate(&self, a: f64) -> (usize, f64) {
        if self.g == 1 {
            return (0, 0.0);
        }
        let x = (a.clamp(-1.0, 1.0) + 1.0) / self.spacing;
        let k = (x.floor() as usize).min(self.g - 2);
        (k, x - k as f64)
    }

    /// `Q(s, a)` for any `a ∈ [−1, 1]`; exact because Q is linear between grid points.
    pub fn at(&self, s: usize, a: f64) -> f64 {
        if self.g == 1 {
            return self.grid_value(s, 0);
        }
        let (k, w) = self.locate(a);
        (1.0 - w) * self.grid_value(s, k) + w * self.grid_value(s, k + 1)
    }

    /// `∂Q(s, a)/∂a`, taking the segment to the right of a grid point (left at `a = 1`).
    pub fn action_slope(&self, s: usize, a: f64) -> f64 {
        if self.g == 1 {
            return 0.0;
        }
        let (k, _) = self.locate(a);
        (self.grid_value(s, k + 1) - self.grid_value(s, k)) / self.spacing
    }

    /// Largest slope magnitude of `a ↦ Q(s, a)` over all states; the action-Lipschitz constant.
    pub fn action_lipschitz(&self) -> f64 {
        let mut m = 0.0f64;
        if self.g < 2 {
            return m;
        }
        for s in 0..self.n {
            for k in 0..self.g - 1 {
                m = m.max(((self.grid_value(s, k + 1) - self.grid_value(s, k)) / self.spacing).abs());
            }
        }
        m
    }

    /// Same table with `delta[s * g + k]` added to every grid entry.
    pub fn perturbed(&self, delta: &[f64]) -> Result<QTable> {
        if delta.len() != self.grid.len() {
            return Err(EnvError::Shape(format!("perturbation has {} entries, table {}", delta.len(), self.grid.len())));
        }
        let grid: Vec<f64> = self.grid.iter().zip(delta).map(|(q, d)| q + d).collect();
        let mut out = QTable { grid, ..self.clone() };
        out.values = vec![f64::NAN; self.n];
        Ok(out)
    }

    /// Bellman residual `max |Q − (r + γ P V)|` on the grid.
    pub fn bellman_residual(&self, mdp: &FiniteMdp) -> f64 {
        let n = mdp.n;
        let mut worst = 0.0f64;
        for s in 0..n {
            for k in 0..mdp.g {
                let mut target = mdp.grid_reward(s, k);
                for s2 in 0..n {
                    target += mdp.gamma * mdp.grid_transition(k, s, s2) * self.values[s2];
                }
                worst = worst.max((self.grid_value(s, k) - target).abs());
            }
        }
        worst
    }
}

fn policy_values(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    check_policy(mdp, policy)?;
    let n = mdp.n;
    let (p, r) = policy_chain(mdp, policy);
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = if i == j { 1.0 } else { 0.0 } - mdp.gamma * p[i * n + j];
        }
    }
    let mut v = linalg::solve(n, &m, &r).ok_or(EnvError::Singular)?;
    for _ in 0..8 {
        let mut res = vec![0.0; n];
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut acc = r[i] - v[i];
            for j in 0..n {
                acc += mdp.gamma * p[i * n + j] * v[j];
            }
            res[i] = acc;
            worst = worst.max(acc.abs());
        }
        if worst < 1e-13 {
            break;
        }
        let corr = linalg::solve(n, &m, &res).ok_or(EnvError::Singular)?;
        for (vi, c) in v.iter_mut().zip(corr) {
            *vi += c;
        }
    }
    Ok(v)
}

/// Fixed point of `Q(s,a) = r(s,a) + γ Σ_{s′} Pr(s,s′,a) Q(s′, π(s′))` on the action grid.
pub fn exact_q(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<QTable> {
    let v = policy_values(mdp, policy)?;
    let n = mdp.n;
    let g = mdp.g;
    let mut grid = vec![0.0; n * g];
    for s in 0..n {
        for k in 0..g {
            let mut q = mdp.grid_reward(s, k);
            for s2 in 0..n {
                q += mdp.gamma * mdp.grid_transition(k, s, s2) * v[s2];
            }
            grid[s * g + k] = q;
        }
    }
    Ok(QTable { n, g, spacing: mdp.spacing(), grid, values: v })
}

/// `J(π) = Σ_s ρ0(s) Q(s, π(s))`.
pub fn exact_j(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<f64> {
    exact_j_from(mdp, policy, &mdp.rho0)
}

/// `J` under an alternative initial distribution.
pub fn exact_j_from(mdp: &FiniteMdp, policy: &TabularPolicy, start: &[f64]) -> Result<f64> {
    if start.len() != mdp.n {
        return Err(EnvError::Shape(format!("start distribution has {} entries, mdp {}", start.len(), mdp.n)));
    }
    let v = policy_values(mdp, policy)?;
    Ok(start.iter().zip(&v).map(|(p, x)| p * x).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visitation {
    /// `ρ_0 … ρ_{t_max}`
    pub per_step: Vec<Vec<f64>>,
    /// `(1−γ) Σ_t γ^t ρ_t`, truncated once `γ^t < 1e-12`.
    pub discounted: Vec<f64>,
}

pub const DISCOUNT_TRUNCATION: f64 = 1e-12;

fn propagate(mdp: &FiniteMdp, p: &[f64], rho: &[f64]) -> Vec<f64> {
    let n = mdp.n;
    let mut next = vec![0.0; n];
    for s in 0..n {
        if rho[s] != 0.0 {
            for s2 in 0..n {
                next[s2] += rho[s] * p[s * n + s2];
            }
        }
    }
    next
}

pub fn visitation(mdp: &FiniteMdp, policy: &TabularPolicy, t_max: usize) -> Result<Visitation> {
    visitation_from(mdp, policy, &mdp.rho0, t_max)
}

pub fn visitation_from(mdp: &FiniteMdp, policy: &TabularPolicy, start: &[f64], t_max: usize) -> Result<Visitation> {
    check_policy(mdp, policy)?;
    if start.len() != mdp.n {
        return Err(EnvError::Shape(format!("start distribution has {} entries, mdp {}", start.len(), mdp.n)));
    }
    let (p, _) = policy_chain(mdp, policy);
    let mut per_step = Vec::with_capacity(t_max + 1);
    per_step.push(start.to_vec());
    for t in 0..t_max {
        let next = propagate(mdp, &p, &per_step[t]);
        per_step.push(next);
    }
    let mut discounted = vec![0.0; mdp.n];
    let mut rho = start.to_vec();
    let mut weight = 1.0;
    while weight >= DISCOUNT_TRUNCATION {
        for (d, r) in discounted.iter_mut().zip(&rho) {
            *d += (1.0 - mdp.gamma) * weight * r;
        }
        weight *= mdp.gamma;
        if weight == 0.0 {
            break;
        }
        rho = propagate(mdp, &p, &rho);
    }
    Ok(Visitation { per_step, discounted })
}

/// Unnormalised discounted occupancy `d(s) = Σ_t γ^t ρ_t(s)` from `start`, solved exactly.
pub fn occupancy(mdp: &FiniteMdp, policy: &TabularPolicy, start: &[f64]) -> Result<Vec<f64>> {
    check_policy(mdp, policy)?;
    let n = mdp.n;
    if start.len() != n {
        return Err(EnvError::Shape(format!("start distribution has {} entries, mdp {}", start.len(), n)));
    }
    let (p, _) = policy_chain(mdp, policy);
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = if i == j { 1.0 } else { 0.0 } - mdp.gamma * p[j * n + i];
        }
    }
    linalg::solve(n, &m, start).ok_or(EnvError::Singular)
}
