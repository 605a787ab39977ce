//! Replay storage: a FIFO buffer of every transition and an elite buffer of
//! the highest-return trajectories.

use std::io::Write;

use rand::Rng;
use thiserror::Error;

use crate::envs::{Trajectory, Transition};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot sample from the empty {0} buffer")]
    EmptySource(Source),
    #[error("trajectory has no transitions")]
    EmptyTrajectory,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ReplayError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Full,
    Elite,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Full => "full",
            Source::Elite => "elite",
        })
    }
}

/// Columnar batch of transitions drawn from one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source: Source,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub terminals: Vec<bool>,
    pub truncated: Vec<bool>,
}

impl Batch {
    pub fn with_capacity(source: Source, state_dim: usize, action_dim: usize, n: usize) -> Self {
        Self {
            source,
            state_dim,
            action_dim,
            states: Vec::with_capacity(n * state_dim),
            actions: Vec::with_capacity(n * action_dim),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n * state_dim),
            terminals: Vec::with_capacity(n),
            truncated: Vec::with_capacity(n),
        }
    }

    pub fn from_transitions(source: Source, items: &[Transition]) -> Result<Self> {
        let first = items.first().ok_or(ReplayError::EmptySource(source))?;
        let mut b = Self::with_capacity(source, first.state.len(), first.action.len(), items.len());
        for t in items {
            b.push(t)?;
        }
        Ok(b)
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim || t.action.len() != self.action_dim
        {
            return Err(ReplayError::Shape(format!(
                "transition dims ({}, {}) do not match batch ({}, {})",
                t.state.len(),
                t.action.len(),
                self.state_dim,
                self.action_dim
            )));
        }
        self.states.extend_from_slice(&t.state);
        self.actions.extend_from_slice(&t.action);
        self.rewards.push(t.reward);
        self.next_states.extend_from_slice(&t.next_state);
        self.terminals.push(t.terminal);
        self.truncated.push(t.truncated);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    /// True when the Bellman target for item `i` drops the successor value.
    pub fn ends_bootstrap(&self, i: usize) -> bool {
        self.terminals[i] && !self.truncated[i]
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            state: self.state(i).to_vec(),
            action: self.action(i).to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * self.state_dim..(i + 1) * self.state_dim].to_vec(),
            terminal: self.terminals[i],
            truncated: self.truncated[i],
        }
    }
}

/// Ring buffer of transitions with strict FIFO eviction.
#[derive(Debug, Clone)]
pub struct FullErb {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminals: Vec<bool>,
    truncated: Vec<bool>,
    cursor: usize,
    pushed: u64,
}

impl FullErb {
    pub const DEFAULT_CAPACITY: usize = 1_000_000;

    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(ReplayError::InvalidArgument("capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            terminals: Vec::new(),
            truncated: Vec::new(),
            cursor: 0,
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Total pushes ever, including overwritten ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        let (sd, ad) = (self.state_dim, self.action_dim);
        if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
            return Err(ReplayError::Shape(format!(
                "transition dims ({}, {}) do not match buffer ({sd}, {ad})",
                t.state.len(),
                t.action.len()
            )));
        }
        if self.len() < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(&t.next_state);
            self.terminals.push(t.terminal);
            self.truncated.push(t.truncated);
        } else {
            let i = self.cursor;
            self.states[i * sd..(i + 1) * sd].copy_from_slice(&t.state);
            self.actions[i * ad..(i + 1) * ad].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_states[i * sd..(i + 1) * sd].copy_from_slice(&t.next_state);
            self.terminals[i] = t.terminal;
            self.truncated[i] = t.truncated;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
        Ok(())
    }

    fn slot(&self, age: usize) -> usize {
        if self.len() < self.capacity {
            age
        } else {
            (self.cursor + age) % self.capacity
        }
    }

    fn append_slot(&self, batch: &mut Batch, i: usize) {
        let (sd, ad) = (self.state_dim, self.action_dim);
        batch.states.extend_from_slice(&self.states[i * sd..(i + 1) * sd]);
        batch.actions.extend_from_slice(&self.actions[i * ad..(i + 1) * ad]);
        batch.rewards.push(self.rewards[i]);
        batch.next_states.extend_from_slice(&self.next_states[i * sd..(i + 1) * sd]);
        batch.terminals.push(self.terminals[i]);
        batch.truncated.push(self.truncated[i]);
    }

    /// Transition at position `age` counted from the oldest stored one.
    pub fn get(&self, age: usize) -> Option<Transition> {
        if age >= self.len() {
            return None;
        }
        let mut b = Batch::with_capacity(Source::Full, self.state_dim, self.action_dim, 1);
        self.append_slot(&mut b, self.slot(age));
        Some(b.transition(0))
    }

    /// Draws `n` transitions uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        Ok(self.sample_indexed(n, rng)?.0)
    }

    /// As [`sample`](Self::sample), also returning the drawn positions (oldest = 0).
    pub fn sample_indexed<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Batch, Vec<usize>)> {
        if self.is_empty() {
            return Err(ReplayError::EmptySource(Source::Full));
        }
        let mut b = Batch::with_capacity(Source::Full, self.state_dim, self.action_dim, n);
        let mut ages = Vec::with_capacity(n);
        for _ in 0..n {
            let age = rng.random_range(0..self.len());
            self.append_slot(&mut b, self.slot(age));
            ages.push(age);
        }
        Ok((b, ages))
    }
}

#[derive(Debug, Clone)]
pub struct EliteEntry {
    pub trajectory: Trajectory,
    pub episodic_return: f64,
    pub sequence: u64,
}

/// The `κ` highest-return trajectories seen so far; among equal returns the
/// later-offered trajectory ranks higher.
#[derive(Debug, Clone)]
pub struct EliteErb {
    kappa: usize,
    entries: Vec<EliteEntry>,
    /// `prefix[i]` = transitions in `entries[..i]`
    prefix: Vec<usize>,
    next_sequence: u64,
}

impl EliteErb {
    pub const DEFAULT_KAPPA: usize = 30;

    pub fn new(kappa: usize) -> Result<Self> {
        if kappa == 0 {
            return Err(ReplayError::InvalidArgument("kappa must be positive".into()));
        }
        Ok(Self { kappa, entries: Vec::new(), prefix: vec![0], next_sequence: 0 })
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    /// Number of stored trajectories.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        *self.prefix.last().unwrap_or(&0)
    }

    pub fn entries(&self) -> &[EliteEntry] {
        &self.entries
    }

    pub fn min_return(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.episodic_return).min_by(f64::total_cmp)
    }

    /// Offers a finished trajectory; returns whether it was admitted.
    pub fn end_trajectory(&mut self, trajectory: Trajectory) -> Result<bool> {
        if trajectory.is_empty() {
            return Err(ReplayError::EmptyTrajectory);
        }
        let ret = trajectory.episodic_return();
        if !ret.is_finite() {
            return Err(ReplayError::InvalidArgument(format!("trajectory return {ret} is not finite")));
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        let entry = EliteEntry { trajectory, episodic_return: ret, sequence };
        if self.entries.len() < self.kappa {
            self.entries.push(entry);
        } else {
            let (worst, _) = self
                .entries
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.episodic_return.total_cmp(&b.episodic_return).then(a.sequence.cmp(&b.sequence))
                })
                .expect("buffer is full, so non-empty");
            if ret < self.entries[worst].episodic_return {
                return Ok(false);
            }
            self.entries[worst] = entry;
        }
        self.rebuild_prefix();
        Ok(true)
    }

    fn rebuild_prefix(&mut self) {
        self.prefix.clear();
        self.prefix.push(0);
        let mut acc = 0;
        for e in &self.entries {
            acc += e.trajectory.len();
            self.prefix.push(acc);
        }
    }

    fn locate(&self, flat: usize) -> (usize, usize) {
        let e = self.prefix.partition_point(|&p| p <= flat) - 1;
        (e, flat - self.prefix[e])
    }

    /// Draws `n` transitions uniformly with replacement from the pooled elite transitions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let total = self.n_transitions();
        if total == 0 {
            return Err(ReplayError::EmptySource(Source::Elite));
        }
        let first = &self.entries[0].trajectory.transitions[0];
        let mut b = Batch::with_capacity(Source::Elite, first.state.len(), first.action.len(), n);
        for _ in 0..n {
            let (e, i) = self.locate(rng.random_range(0..total));
            b.push(&self.entries[e].trajectory.transitions[i])?;
        }
        Ok(b)
    }

    /// One CSV row per stored transition:
    /// `episode_id,step,state…,action…,reward,return`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (sd, ad) = self
            .entries
            .first()
            .map(|e| (e.trajectory.transitions[0].state.len(), e.trajectory.transitions[0].action.len()))
            .unwrap_or((0, 0));
        let mut header = vec!["episode_id".to_string(), "step".to_string()];
        header.extend((0..sd).map(|i| format!("state_{i}")));
        header.extend((0..ad).map(|i| format!("action_{i}")));
        header.push("reward".into());
        header.push("return".into());
        writeln!(w, "{}", header.join(","))?;
        let mut order: Vec<&EliteEntry> = self.entries.iter().collect();
        order.sort_by_key(|e| e.sequence);
        for e in order {
            for (step, t) in e.trajectory.transitions.iter().enumerate() {
                let mut row = vec![e.sequence.to_string(), step.to_string()];
                row.extend(t.state.iter().map(|x| x.to_string()));
                row.extend(t.action.iter().map(|x| x.to_string()));
                row.push(t.reward.to_string());
                row.push(e.episodic_return.to_string());
                writeln!(w, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(x: f64) -> Transition {
        Transition { state: vec![x], action: vec![0.0], reward: x, next_state: vec![x + 1.0], terminal: false, truncated: false }
    }

    fn traj(ret: f64, len: usize) -> Trajectory {
        let mut t = Trajectory::new();
        for _ in 0..len {
            t.push(tr(ret / len as f64));
        }
        t
    }

    fn returns(e: &EliteErb) -> Vec<f64> {
        let mut r: Vec<f64> = e.entries().iter().map(|x| x.episodic_return).collect();
        r.sort_by(|a, b| b.total_cmp(a));
        r
    }

    #[test]
    fn fifo_eviction() {
        let mut b = FullErb::new(3, 1, 1).unwrap();
        for i in 1..=4 {
            b.push(&tr(i as f64)).unwrap();
        }
        let kept: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().state[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_item_sample() {
        let mut b = FullErb::new(10, 1, 1).unwrap();
        b.push(&tr(7.0)).unwrap();
        let s = b.sample(5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.states.iter().all(|&x| x == 7.0));
    }

    #[test]
    fn empty_sources_error() {
        let b = FullErb::new(10, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(1, &mut rng), Err(ReplayError::EmptySource(Source::Full))));
        let e = EliteErb::new(2).unwrap();
        assert!(matches!(e.sample(1, &mut rng), Err(ReplayError::EmptySource(Source::Elite))));
    }

    #[test]
    fn elite_top_two() {
        let mut e = EliteErb::new(2).unwrap();
        assert!(e.end_trajectory(traj(5.0, 2)).unwrap());
        e.end_trajectory(traj(3.0, 2)).unwrap();
        e.end_trajectory(traj(7.0, 2)).unwrap();
        assert_eq!(returns(&e), vec![7.0, 5.0]);
    }

    #[test]
    fn elite_ties_keep_later() {
        let mut e = EliteErb::new(2).unwrap();
        for _ in 0..3 {
            assert!(e.end_trajectory(traj(5.0, 1)).unwrap());
        }
        let mut seqs: Vec<u64> = e.entries().iter().map(|x| x.sequence).collect();
        seqs.sort();
        assert_eq!(seqs, vec![1, 2]);
    }

    #[test]
    fn empty_trajectory_rejected() {
        let mut e = EliteErb::new(2).unwrap();
        assert!(matches!(e.end_trajectory(Trajectory::new()), Err(ReplayError::EmptyTrajectory)));
    }

    #[test]
    fn elite_sampling_is_deterministic_and_pooled() {
        let mut e = EliteErb::new(3).unwrap();
        e.end_trajectory(traj(1.0, 1)).unwrap();
        e.end_trajectory(traj(9.0, 9)).unwrap();
        let a = e.sample(64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = e.sample(64, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(e.n_transitions(), 10);
        assert_eq!(a.source, Source::Elite);
    }

    #[test]
    fn csv_dump_has_one_row_per_transition() {
        let mut e = EliteErb::new(2).unwrap();
        e.end_trajectory(traj(2.0, 3)).unwrap();
        let mut out = Vec::new();
        e.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "episode_id,step,state_0,action_0,reward,return");
        assert_eq!(lines.len(), 4);
    }
}
