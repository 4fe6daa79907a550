//! The model of self: a persistent per-grid experience store holding past
//! trajectories and the derived statistics consumed by the S1 solver and the
//! metacognitive arbiter. The trajectory log is the source of truth; every
//! derived statistic is a pure fold over it.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Action, Cell};

/// Which solver produced an adopted action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolverId {
    S1,
    S2,
}

/// Scope for adoption counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    S1,
    S2,
    All,
}

/// One adopted move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: Cell,
    pub intended_action: Action,
    pub realized_state: Cell,
    pub reward: f64,
    pub violations: u32,
    pub solver: SolverId,
    /// Decision cost in deterministic clock units.
    pub decision_time: f64,
}

/// A completed (or step-capped) trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub grid_id: String,
    pub agent: String,
    pub index: u64,
    pub steps: Vec<TrajectoryStep>,
    pub total_reward: f64,
    pub length: u64,
    pub wall_time: f64,
    pub finished: bool,
}

impl TrajectoryRecord {
    /// Fraction of moves decided by each solver, `(s1, s2)`.
    pub fn usage_fractions(&self) -> (f64, f64) {
        if self.steps.is_empty() {
            return (0.0, 0.0);
        }
        let s1 = self
            .steps
            .iter()
            .filter(|s| s.solver == SolverId::S1)
            .count() as f64;
        let n = self.steps.len() as f64;
        (s1 / n, (n - s1) / n)
    }
}

/// A trajectory being built, tracking the running totals the arbiter needs
/// mid-flight.
#[derive(Debug, Clone)]
pub struct TrajectoryBuilder {
    record: TrajectoryRecord,
    visited: Vec<Cell>,
    violations: u32,
}

impl TrajectoryBuilder {
    pub fn new(grid_id: impl Into<String>, agent: impl Into<String>, index: u64) -> Self {
        TrajectoryBuilder {
            record: TrajectoryRecord {
                grid_id: grid_id.into(),
                agent: agent.into(),
                index,
                steps: Vec::new(),
                total_reward: 0.0,
                length: 0,
                wall_time: 0.0,
                finished: false,
            },
            visited: Vec::new(),
            violations: 0,
        }
    }

    /// Sum of rewards accumulated so far.
    pub fn part_reward(&self) -> f64 {
        self.record.total_reward
    }

    /// Constraint violations incurred so far.
    pub fn violations(&self) -> u32 {
        self.violations
    }

    /// Moves taken so far.
    pub fn length(&self) -> u64 {
        self.record.length
    }

    /// Decision cost spent so far, in clock units.
    pub fn elapsed(&self) -> f64 {
        self.record.wall_time
    }

    pub fn steps(&self) -> &[TrajectoryStep] {
        &self.record.steps
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct RunningMean {
    sum: f64,
    count: u64,
}

impl RunningMean {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Experience accumulated by one agent on one grid.
#[derive(Debug, Clone, Default)]
pub struct ExperienceStore {
    grid_id: String,
    reward_samples: HashMap<(Cell, Action), Vec<f64>>,
    adoption_counts: HashMap<Cell, [u64; 2]>,
    partial_reward: HashMap<Cell, RunningMean>,
    s2_reward_samples: HashMap<Cell, Vec<f64>>,
    s2_time: RunningMean,
    trajectory_lengths: RunningMean,
    trajectory_log: Vec<TrajectoryRecord>,
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ExperienceStore {
    pub fn new(grid_id: impl Into<String>) -> Self {
        ExperienceStore {
            grid_id: grid_id.into(),
            ..Default::default()
        }
    }

    pub fn grid_id(&self) -> &str {
        &self.grid_id
    }

    /// Append one adopted move to the in-flight trajectory and fold it into
    /// every derived statistic.
    pub fn record_step(&mut self, trajectory: &mut TrajectoryBuilder, step: TrajectoryStep) {
        self.reward_samples
            .entry((step.state, step.intended_action))
            .or_default()
            .push(step.reward);
        let counts = self.adoption_counts.entry(step.state).or_default();
        match step.solver {
            SolverId::S1 => counts[0] += 1,
            SolverId::S2 => counts[1] += 1,
        }
        if step.solver == SolverId::S2 {
            self.s2_reward_samples
                .entry(step.state)
                .or_default()
                .push(step.reward);
            self.s2_time.push(step.decision_time);
        }

        trajectory.record.total_reward += step.reward;
        trajectory.record.length += 1;
        trajectory.record.wall_time += step.decision_time;
        trajectory.violations += step.violations;
        trajectory.record.steps.push(step);

        // Partial reward held on first arrival at the realized state.
        if !trajectory.visited.contains(&step.realized_state) {
            trajectory.visited.push(step.realized_state);
            self.partial_reward
                .entry(step.realized_state)
                .or_default()
                .push(trajectory.record.total_reward);
        }
    }

    /// Close the trajectory and append it to the log.
    pub fn finish_trajectory(
        &mut self,
        mut trajectory: TrajectoryBuilder,
        finished: bool,
    ) -> &TrajectoryRecord {
        trajectory.record.finished = finished;
        self.trajectory_lengths.push(trajectory.record.length as f64);
        self.trajectory_log.push(trajectory.record);
        self.trajectory_log.last().unwrap()
    }

    /// Times a decision at `state` was adopted from the given solver scope.
    pub fn n_traj(&self, state: Cell, scope: Scope) -> u64 {
        let counts = self.adoption_counts.get(&state).copied().unwrap_or([0, 0]);
        match scope {
            Scope::S1 => counts[0],
            Scope::S2 => counts[1],
            Scope::All => counts[0] + counts[1],
        }
    }

    /// Mean partial reward held on first arrival at `state` over past
    /// trajectories; `None` when the state was never reached.
    pub fn avg_reward(&self, state: Cell) -> Option<f64> {
        self.partial_reward.get(&state).and_then(RunningMean::mean)
    }

    /// Empirical mean reward of taking `action` at `state`; `None` without
    /// samples.
    pub fn expected_reward(&self, state: Cell, action: Action) -> Option<f64> {
        let samples = self.reward_samples.get(&(state, action))?;
        (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64)
    }

    /// Population standard deviation of the reward samples for
    /// `(state, action)`; 0 without samples.
    pub fn reward_std(&self, state: Cell, action: Action) -> f64 {
        let Some(samples) = self.reward_samples.get(&(state, action)) else {
            return 0.0;
        };
        if samples.is_empty() {
            return 0.0;
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        var.sqrt()
    }

    /// Frequency with which `action` was the adopted action at `state`.
    pub fn action_frequency(&self, state: Cell, action: Action) -> f64 {
        let total = self.n_traj(state, Scope::All);
        if total == 0 {
            return 0.0;
        }
        let taken = self
            .reward_samples
            .get(&(state, action))
            .map(|s| s.len() as u64)
            .unwrap_or(0);
        taken as f64 / total as f64
    }

    /// `sigmoid((r - 0.5) / (sigma + 1e-10))` with `r` the adoption frequency
    /// of the action and `sigma` the standard deviation of its rewards.
    pub fn confidence(&self, state: Cell, action: Action) -> f64 {
        let r = self.action_frequency(state, action);
        let sigma = self.reward_std(state, action);
        sigmoid((r - 0.5) / (sigma + 1e-10))
    }

    /// Mean reward obtained where an S2 action was adopted at `state`.
    pub fn exp_reward_s2(&self, state: Cell) -> Option<f64> {
        let samples = self.s2_reward_samples.get(&state)?;
        (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64)
    }

    /// Mean S2 per-decision cost across the whole store.
    pub fn exp_time_s2(&self) -> Option<f64> {
        self.s2_time.mean()
    }

    /// Mean length of past trajectories.
    pub fn mean_trajectory_length(&self) -> Option<f64> {
        self.trajectory_lengths.mean()
    }

    pub fn trajectory_log(&self) -> &[TrajectoryRecord] {
        &self.trajectory_log
    }

    /// Rebuild a store by folding a trajectory log from scratch.
    pub fn replay<'a>(
        grid_id: impl Into<String>,
        records: impl IntoIterator<Item = &'a TrajectoryRecord>,
    ) -> Self {
        let mut store = ExperienceStore::new(grid_id);
        for record in records {
            let mut builder =
                TrajectoryBuilder::new(record.grid_id.clone(), record.agent.clone(), record.index);
            for step in &record.steps {
                store.record_step(&mut builder, *step);
            }
            store.finish_trajectory(builder, record.finished);
        }
        store
    }

    /// Persist the trajectory log as newline-delimited JSON.
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        for record in &self.trajectory_log {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Load a store from a newline-delimited JSON trajectory log.
    pub fn read_log<R: BufRead>(grid_id: impl Into<String>, input: R) -> Result<Self> {
        let records = read_trajectory_log(input)?;
        Ok(Self::replay(grid_id, records.iter()))
    }
}

/// Parse newline-delimited trajectory records, reporting the 1-based line
/// number of the first malformed line.
pub fn read_trajectory_log<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLog {
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(
        state: (u32, u32),
        action: Action,
        next: (u32, u32),
        reward: f64,
        solver: SolverId,
        time: f64,
    ) -> TrajectoryStep {
        TrajectoryStep {
            state: Cell::new(state.0, state.1),
            intended_action: action,
            realized_state: Cell::new(next.0, next.1),
            reward,
            violations: 0,
            solver: solver,
            decision_time: time,
        }
    }

    #[test]
    fn empty_store_counts_zero() {
        let store = ExperienceStore::new("g0");
        let s = Cell::new(3, 3);
        assert_eq!(store.n_traj(s, Scope::All), 0);
        assert_eq!(store.n_traj(s, Scope::S1), 0);
        assert!(store.avg_reward(s).is_none());
        assert!(store.expected_reward(s, Action::N).is_none());
        assert!(store.exp_reward_s2(s).is_none());
        assert!(store.exp_time_s2().is_none());
    }

    #[test]
    fn adoption_counters_sum() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        for _ in 0..3 {
            store.record_step(&mut t, step((1, 1), Action::N, (1, 2), -4.0, SolverId::S1, 1.0));
        }
        for _ in 0..2 {
            store.record_step(&mut t, step((1, 1), Action::E, (2, 1), -4.0, SolverId::S2, 31.0));
        }
        let s = Cell::new(1, 1);
        assert_eq!(store.n_traj(s, Scope::S1), 3);
        assert_eq!(store.n_traj(s, Scope::S2), 2);
        assert_eq!(store.n_traj(s, Scope::All), 5);
    }

    #[test]
    fn first_step_counts_one() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        store.record_step(&mut t, step((0, 0), Action::N, (0, 1), -4.0, SolverId::S1, 1.0));
        assert_eq!(store.n_traj(Cell::new(0, 0), Scope::All), 1);
    }

    #[test]
    fn s2_time_mean_updates() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        store.record_step(&mut t, step((0, 0), Action::N, (0, 1), -4.0, SolverId::S2, 10.0));
        store.record_step(&mut t, step((0, 1), Action::N, (0, 2), -4.0, SolverId::S2, 20.0));
        assert_eq!(store.exp_time_s2(), Some(15.0));
    }

    #[test]
    fn part_reward_empty_is_zero() {
        let t = TrajectoryBuilder::new("g0", "test", 0);
        assert_eq!(t.part_reward(), 0.0);
    }

    #[test]
    fn avg_reward_means_first_arrivals() {
        let mut store = ExperienceStore::new("g0");
        // Trajectory 1 reaches (2,2) with partial reward -20.
        let mut t1 = TrajectoryBuilder::new("g0", "test", 0);
        store.record_step(&mut t1, step((0, 0), Action::NE, (1, 1), -12.0, SolverId::S1, 1.0));
        store.record_step(&mut t1, step((1, 1), Action::NE, (2, 2), -8.0, SolverId::S1, 1.0));
        // Revisit after a cycle: must not add a second sample.
        store.record_step(&mut t1, step((2, 2), Action::W, (1, 2), -4.0, SolverId::S1, 1.0));
        store.record_step(&mut t1, step((1, 2), Action::E, (2, 2), -4.0, SolverId::S1, 1.0));
        store.finish_trajectory(t1, true);
        // Trajectory 2 reaches (2,2) with partial reward -40.
        let mut t2 = TrajectoryBuilder::new("g0", "test", 1);
        store.record_step(&mut t2, step((0, 0), Action::NE, (1, 1), -30.0, SolverId::S1, 1.0));
        store.record_step(&mut t2, step((1, 1), Action::NE, (2, 2), -10.0, SolverId::S1, 1.0));
        store.finish_trajectory(t2, true);

        assert_eq!(store.avg_reward(Cell::new(2, 2)), Some(-30.0));
    }

    #[test]
    fn expected_reward_empirical_mean() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        for r in [-4.0, -4.0, -54.0] {
            store.record_step(&mut t, step((1, 1), Action::N, (1, 2), r, SolverId::S1, 1.0));
        }
        let e = store.expected_reward(Cell::new(1, 1), Action::N).unwrap();
        assert!((e - (-62.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn expected_reward_single_and_degenerate_samples() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        store.record_step(&mut t, step((1, 1), Action::N, (1, 2), -7.5, SolverId::S1, 1.0));
        assert_eq!(store.expected_reward(Cell::new(1, 1), Action::N), Some(-7.5));
        assert_eq!(store.reward_std(Cell::new(1, 1), Action::N), 0.0);
        store.record_step(&mut t, step((1, 1), Action::N, (1, 2), -7.5, SolverId::S1, 1.0));
        assert_eq!(store.expected_reward(Cell::new(1, 1), Action::N), Some(-7.5));
        assert_eq!(store.reward_std(Cell::new(1, 1), Action::N), 0.0);
    }

    #[test]
    fn confidence_half_at_balanced_frequency() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        // Two actions, each taken once with different rewards: r = 0.5 each.
        store.record_step(&mut t, step((1, 1), Action::N, (1, 2), -4.0, SolverId::S1, 1.0));
        store.record_step(&mut t, step((1, 1), Action::E, (2, 1), -54.0, SolverId::S1, 1.0));
        assert_eq!(store.confidence(Cell::new(1, 1), Action::N), 0.5);
        assert_eq!(store.confidence(Cell::new(1, 1), Action::E), 0.5);
    }

    #[test]
    fn confidence_saturates_at_full_frequency_zero_std() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        store.record_step(&mut t, step((1, 1), Action::N, (1, 2), -4.0, SolverId::S1, 1.0));
        assert!(store.confidence(Cell::new(1, 1), Action::N) > 0.999);
    }

    #[test]
    fn confidence_formula_with_spread() {
        // r = 0.8, sigma = 25: sigmoid(0.3 / 25.0000000001) ~ 0.503.
        let expected = sigmoid((0.8 - 0.5) / (25.0 + 1e-10));
        assert!((expected - 0.503).abs() < 0.001);
    }

    #[test]
    fn exp_reward_s2_mean() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        store.record_step(&mut t, step((1, 1), Action::N, (1, 2), -4.0, SolverId::S2, 31.0));
        store.record_step(&mut t, step((1, 1), Action::E, (2, 1), 6.0, SolverId::S2, 31.0));
        assert_eq!(store.exp_reward_s2(Cell::new(1, 1)), Some(1.0));
        assert!(store.exp_reward_s2(Cell::new(5, 5)).is_none());
    }

    #[test]
    fn total_reward_matches_step_sum() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        let rewards = [-4.0, -54.0, -4.0, 6.0];
        for (i, r) in rewards.iter().enumerate() {
            store.record_step(
                &mut t,
                step((i as u32, 0), Action::E, (i as u32 + 1, 0), *r, SolverId::S1, 1.0),
            );
        }
        let record = store.finish_trajectory(t, true).clone();
        let recomputed: f64 = record.steps.iter().map(|s| s.reward).sum();
        assert_eq!(record.total_reward, recomputed);
        assert_eq!(record.length, rewards.len() as u64);
    }

    #[test]
    fn replay_reproduces_statistics_exactly() {
        let mut store = ExperienceStore::new("g0");
        for i in 0..5 {
            let mut t = TrajectoryBuilder::new("g0", "test", i);
            for j in 0..10u32 {
                let solver = if (i + j as u64) % 3 == 0 { SolverId::S2 } else { SolverId::S1 };
                let time = if solver == SolverId::S2 { 31.0 } else { 1.0 };
                let action = Action::ALL[(j as usize + i as usize) % 8];
                store.record_step(
                    &mut t,
                    step(
                        (j % 4, (j + 1) % 4),
                        action,
                        ((j + 1) % 4, j % 4),
                        -4.0 - (i as f64) - (j as f64) * 0.5,
                        solver,
                        time,
                    ),
                );
            }
            store.finish_trajectory(t, i % 2 == 0);
        }

        let replayed = ExperienceStore::replay("g0", store.trajectory_log());
        assert_eq!(replayed.trajectory_log(), store.trajectory_log());
        for x in 0..4 {
            for y in 0..4 {
                let s = Cell::new(x, y);
                assert_eq!(replayed.n_traj(s, Scope::All), store.n_traj(s, Scope::All));
                assert_eq!(replayed.n_traj(s, Scope::S2), store.n_traj(s, Scope::S2));
                assert_eq!(replayed.avg_reward(s), store.avg_reward(s));
                assert_eq!(replayed.exp_reward_s2(s), store.exp_reward_s2(s));
                for a in Action::ALL {
                    assert_eq!(replayed.expected_reward(s, a), store.expected_reward(s, a));
                    assert_eq!(replayed.confidence(s, a), store.confidence(s, a));
                }
            }
        }
        assert_eq!(replayed.exp_time_s2(), store.exp_time_s2());
        assert_eq!(replayed.mean_trajectory_length(), store.mean_trajectory_length());
    }

    #[test]
    fn log_round_trip_preserves_everything() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        store.record_step(&mut t, step((0, 0), Action::NE, (1, 1), -4.0, SolverId::S2, 31.0));
        store.record_step(&mut t, step((1, 1), Action::NE, (2, 2), -54.0, SolverId::S1, 1.0));
        store.finish_trajectory(t, false);

        let mut buf = Vec::new();
        store.write_log(&mut buf).unwrap();
        let loaded = ExperienceStore::read_log("g0", buf.as_slice()).unwrap();
        assert_eq!(loaded.trajectory_log(), store.trajectory_log());
        assert_eq!(
            loaded.expected_reward(Cell::new(1, 1), Action::NE),
            store.expected_reward(Cell::new(1, 1), Action::NE)
        );
    }

    #[test]
    fn malformed_log_line_reports_line_number() {
        let data = b"{not json}\n";
        let err = read_trajectory_log(&data[..]).unwrap_err();
        match err {
            Error::MalformedLog { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn usage_fractions_sum_to_one() {
        let mut store = ExperienceStore::new("g0");
        let mut t = TrajectoryBuilder::new("g0", "test", 0);
        for i in 0..4 {
            store.record_step(&mut t, step((i, 0), Action::E, (i + 1, 0), -4.0, SolverId::S1, 1.0));
        }
        for i in 0..6 {
            store.record_step(&mut t, step((i, 1), Action::E, (i + 1, 1), -4.0, SolverId::S2, 31.0));
        }
        let record = store.finish_trajectory(t, true);
        let (s1, s2) = record.usage_fractions();
        assert_eq!((s1, s2), (0.4, 0.6));
        assert_eq!(s1 + s2, 1.0);
    }
}
