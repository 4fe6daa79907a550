//! Tabular Q-learning for the two value functions the S2 solver deliberates
//! over: a nominal agent trained with all constraint penalties masked and a
//! constrained agent trained on the full reward.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience::{SolverId, TrajectoryBuilder, TrajectoryRecord, TrajectoryStep};
use crate::grid::{Action, Cell, GridSpec};
use crate::mdft::argmax_with_ties;

/// Which reward stream a table was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Nominal,
    Constrained,
}

/// Q-learning hyperparameters. Exploration is epsilon-greedy with epsilon
/// annealed linearly from `epsilon_start` to `epsilon_end` over the episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlHyperparams {
    pub learning_rate: f64,
    pub discount: f64,
    pub episodes: u32,
    pub max_steps_per_episode: u32,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for RlHyperparams {
    fn default() -> Self {
        RlHyperparams {
            learning_rate: 0.1,
            discount: 0.95,
            episodes: 40_000,
            max_steps_per_episode: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
        }
    }
}

impl RlHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} outside (0,1]",
                self.learning_rate
            )));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount {} outside (0,1]",
                self.discount
            )));
        }
        for (name, eps) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)]
        {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::InvalidParameter(format!("{name} {eps} outside [0,1]")));
            }
        }
        if self.max_steps_per_episode == 0 {
            return Err(Error::InvalidParameter("max_steps_per_episode is 0".into()));
        }
        Ok(())
    }

    fn epsilon(&self, episode: u32) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_start;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// A trained value table over every in-bounds (state, legal action) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    variant: Variant,
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl QTable {
    /// All-zero table for a grid.
    pub fn zeros(spec: &GridSpec, variant: Variant) -> QTable {
        QTable {
            variant,
            width: spec.width,
            height: spec.height,
            values: vec![0.0; (spec.width * spec.height) as usize * Action::ALL.len()],
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    fn slot(&self, state: Cell, action: Action) -> usize {
        ((state.y * self.width + state.x) as usize) * Action::ALL.len() + action.index()
    }

    fn covers(&self, state: Cell, action: Action) -> bool {
        if state.x >= self.width || state.y >= self.height {
            return false;
        }
        let (dx, dy) = action.delta();
        let nx = state.x as i64 + dx;
        let ny = state.y as i64 + dy;
        nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64
    }

    pub fn get(&self, state: Cell, action: Action) -> Result<f64> {
        if !self.covers(state, action) {
            return Err(Error::UncoveredState { state, action });
        }
        Ok(self.values[self.slot(state, action)])
    }

    fn set(&mut self, state: Cell, action: Action, value: f64) {
        let slot = self.slot(state, action);
        self.values[slot] = value;
    }

    fn max_over_legal(&self, state: Cell) -> f64 {
        Action::ALL
            .iter()
            .filter(|a| self.covers(state, **a))
            .map(|a| self.values[self.slot(state, *a)])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action at `state`, ties broken uniformly at random.
    pub fn greedy_action<R: Rng + ?Sized>(&self, state: Cell, rng: &mut R) -> Result<Action> {
        let legal: Vec<Action> = Action::ALL
            .iter()
            .copied()
            .filter(|a| self.covers(state, *a))
            .collect();
        if legal.is_empty() {
            return Err(Error::OutOfBounds {
                cell: state,
                width: self.width,
                height: self.height,
            });
        }
        let q: Vec<f64> = legal
            .iter()
            .map(|a| self.values[self.slot(state, *a)])
            .collect();
        Ok(legal[argmax_with_ties(&q, rng)])
    }

    /// JSON document keyed by state coordinate (`"x,y"`) and action name.
    pub fn to_json(&self) -> Result<String> {
        let mut states = BTreeMap::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let state = Cell::new(x, y);
                let mut actions = BTreeMap::new();
                for a in Action::ALL {
                    if self.covers(state, a) {
                        actions.insert(a.name().to_string(), self.values[self.slot(state, a)]);
                    }
                }
                states.insert(format!("{x},{y}"), actions);
            }
        }
        let doc = QTableDocument {
            variant: self.variant,
            width: self.width,
            height: self.height,
            values: states,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<QTable> {
        let doc: QTableDocument = serde_json::from_str(json)?;
        let mut table = QTable {
            variant: doc.variant,
            width: doc.width,
            height: doc.height,
            values: vec![0.0; (doc.width * doc.height) as usize * Action::ALL.len()],
        };
        for (key, actions) in &doc.values {
            let (x, y) = key
                .split_once(',')
                .ok_or_else(|| Error::InvalidParameter(format!("bad state key {key:?}")))?;
            let state = Cell::new(
                x.parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad state key {key:?}")))?,
                y.parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad state key {key:?}")))?,
            );
            for (name, value) in actions {
                let action: Action = name.parse()?;
                if !table.covers(state, action) {
                    return Err(Error::UncoveredState { state, action });
                }
                table.set(state, action, *value);
            }
        }
        Ok(table)
    }
}

#[derive(Serialize, Deserialize)]
struct QTableDocument {
    variant: Variant,
    width: u32,
    height: u32,
    values: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Train a Q-table with one-step Q-learning. The nominal variant sees a
/// reward stream with every violation penalty removed; dynamics are shared.
/// Fails when the goal was never reached within the episode budget.
pub fn train<R: Rng + ?Sized>(
    spec: &GridSpec,
    variant: Variant,
    hp: &RlHyperparams,
    rng: &mut R,
) -> Result<QTable> {
    hp.validate()?;
    let mut q = QTable::zeros(spec, variant);
    let mut goal_reached = false;
    for episode in 0..hp.episodes {
        let epsilon = hp.epsilon(episode);
        let mut state = spec.start;
        for _ in 0..hp.max_steps_per_episode {
            let legal = spec.legal_actions(state)?;
            let action = if rng.random::<f64>() < epsilon {
                legal[rng.random_range(0..legal.len())]
            } else {
                q.greedy_action(state, rng)?
            };
            let out = spec.step(state, action, rng)?;
            let reward = match variant {
                Variant::Nominal => spec.nominal_reward_of(state, action, out.next_state),
                Variant::Constrained => out.reward,
            };
            let target = if out.done {
                reward
            } else {
                reward + hp.discount * q.max_over_legal(out.next_state)
            };
            let old = q.get(state, action)?;
            q.set(state, action, old + hp.learning_rate * (target - old));
            if out.done {
                goal_reached = true;
                break;
            }
            state = out.next_state;
        }
    }
    if hp.episodes > 0 && !goal_reached {
        return Err(Error::Training(format!(
            "goal never reached in {} episodes",
            hp.episodes
        )));
    }
    Ok(q)
}

/// Roll out the greedy policy under full environment dynamics and full
/// reward accounting (violations always count, whatever the table's
/// training stream was).
pub fn greedy_rollout<R: Rng + ?Sized>(
    spec: &GridSpec,
    q: &QTable,
    rng: &mut R,
    max_steps: u32,
    grid_id: &str,
    agent: &str,
    index: u64,
) -> Result<TrajectoryRecord> {
    let mut builder = TrajectoryBuilder::new(grid_id, agent, index);
    let mut store = crate::experience::ExperienceStore::new(grid_id);
    let mut state = spec.start;
    let mut finished = false;
    for _ in 0..max_steps {
        let action = q.greedy_action(state, rng)?;
        let out = spec.step(state, action, rng)?;
        store.record_step(
            &mut builder,
            TrajectoryStep {
                state,
                intended_action: action,
                realized_state: out.next_state,
                reward: out.reward,
                violations: out.violations,
                solver: SolverId::S1,
                decision_time: 1.0,
            },
        );
        state = out.next_state;
        if out.done {
            finished = true;
            break;
        }
    }
    Ok(store.finish_trajectory(builder, finished).clone())
}
