//! The non-deterministic constrained grid environment.
//!
//! States are grid cells, moves go to one of the 8 adjacent cells, and every
//! move may "slip": instead of the intended destination the agent lands on a
//! uniformly chosen other legal adjacent cell. Penalties come from constrained
//! actions, constrained cells, and colored cell features; reaching the goal
//! pays a bonus.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grid cell, `x` is the column and `y` the row, both 0-indexed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Cell {
    pub x: u32,
    pub y: u32,
}

impl Cell {
    pub fn new(x: u32, y: u32) -> Self {
        Cell { x, y }
    }

    /// Chebyshev distance, the move metric of an 8-connected grid.
    pub fn chebyshev(&self, other: &Cell) -> u32 {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx.max(dy)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// One of the 8 compass moves.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Action {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::N,
        Action::NE,
        Action::E,
        Action::SE,
        Action::S,
        Action::SW,
        Action::W,
        Action::NW,
    ];

    /// (dx, dy) with north increasing `y`.
    pub fn delta(&self) -> (i64, i64) {
        match self {
            Action::N => (0, 1),
            Action::NE => (1, 1),
            Action::E => (1, 0),
            Action::SE => (1, -1),
            Action::S => (0, -1),
            Action::SW => (-1, -1),
            Action::W => (-1, 0),
            Action::NW => (-1, 1),
        }
    }

    /// Stable index in `ALL`, used by flat per-action storage.
    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn name(&self) -> &'static str {
        match self {
            Action::N => "N",
            Action::NE => "NE",
            Action::E => "E",
            Action::SE => "SE",
            Action::S => "S",
            Action::SW => "SW",
            Action::W => "W",
            Action::NW => "NW",
        }
    }
}

impl std::str::FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown action name {s:?}")))
    }
}

/// Cell color tag; every tagged cell is penalized when entered.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Green,
    Blue,
}

/// Reward constants of the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub move_penalty: f64,
    pub violation_penalty: f64,
    pub goal_reward: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Penalties {
            move_penalty: -4.0,
            violation_penalty: -50.0,
            goal_reward: 10.0,
        }
    }
}

/// The constrained grid world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: u32,
    pub height: u32,
    pub start: Cell,
    pub goal: Cell,
    pub constrained_actions: BTreeSet<Action>,
    pub constrained_states: BTreeSet<Cell>,
    #[serde(with = "feature_entries")]
    pub features: BTreeMap<Cell, Feature>,
    pub penalties: Penalties,
    pub slip_probability: f64,
}

/// `BTreeMap<Cell, Feature>` as a JSON array of `[cell, color]` pairs
/// (JSON object keys must be strings).
mod feature_entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<Cell, Feature>,
        ser: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let entries: Vec<(&Cell, &Feature)> = map.iter().collect();
        serde::Serialize::serialize(&entries, ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> std::result::Result<BTreeMap<Cell, Feature>, D::Error> {
        let entries: Vec<(Cell, Feature)> = serde::Deserialize::deserialize(de)?;
        Ok(entries.into_iter().collect())
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: Cell,
    pub reward: f64,
    pub violations: u32,
    pub done: bool,
    pub slipped: bool,
}

/// Counts for `GridSpec::random`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridGenParams {
    pub width: u32,
    pub height: u32,
    pub constrained_actions: usize,
    pub constrained_states: usize,
    pub green_cells: usize,
    pub blue_cells: usize,
    pub move_penalty: f64,
    pub violation_penalty: f64,
    pub goal_reward: f64,
    pub slip_probability: f64,
}

impl Default for GridGenParams {
    fn default() -> Self {
        GridGenParams {
            width: 9,
            height: 9,
            constrained_actions: 2,
            constrained_states: 6,
            green_cells: 6,
            blue_cells: 6,
            move_penalty: -4.0,
            violation_penalty: -50.0,
            goal_reward: 10.0,
            slip_probability: 0.10,
        }
    }
}

impl GridSpec {
    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    /// Destination of `action` from `cell`, `None` if it would leave the grid.
    pub fn apply(&self, cell: Cell, action: Action) -> Option<Cell> {
        let (dx, dy) = action.delta();
        let nx = cell.x as i64 + dx;
        let ny = cell.y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            None
        } else {
            Some(Cell::new(nx as u32, ny as u32))
        }
    }

    /// The subset of the 8 moves that stay on the grid. Constrained actions
    /// stay legal; they cost, they are not forbidden.
    pub fn legal_actions(&self, state: Cell) -> Result<Vec<Action>> {
        if !self.in_bounds(state) {
            return Err(Error::OutOfBounds {
                cell: state,
                width: self.width,
                height: self.height,
            });
        }
        Ok(Action::ALL
            .iter()
            .copied()
            .filter(|a| self.apply(state, *a).is_some())
            .collect())
    }

    /// Number of constraint violations for a realized move: the intended
    /// action being constrained, the realized cell being constrained, and the
    /// realized cell carrying a color tag each count once.
    pub fn violations_of(&self, _state: Cell, action: Action, next: Cell) -> u32 {
        let mut v = 0;
        if self.constrained_actions.contains(&action) {
            v += 1;
        }
        if self.constrained_states.contains(&next) {
            v += 1;
        }
        if self.features.contains_key(&next) {
            v += 1;
        }
        v
    }

    /// Reward of a realized move: the move penalty always, one violation
    /// penalty per violated constraint, plus the goal bonus on arrival.
    pub fn reward_of(&self, state: Cell, action: Action, next: Cell) -> f64 {
        let violations = self.violations_of(state, action, next) as f64;
        let mut r = self.penalties.move_penalty + violations * self.penalties.violation_penalty;
        if next == self.goal {
            r += self.penalties.goal_reward;
        }
        r
    }

    /// Reward of a move with all constraint penalties masked, the reward
    /// stream the nominal agent trains on.
    pub fn nominal_reward_of(&self, _state: Cell, _action: Action, next: Cell) -> f64 {
        let mut r = self.penalties.move_penalty;
        if next == self.goal {
            r += self.penalties.goal_reward;
        }
        r
    }

    /// One environment transition. With probability `slip_probability` the
    /// agent lands on a uniformly chosen legal adjacent cell other than the
    /// intended one.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: Cell,
        action: Action,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let legal = self.legal_actions(state)?;
        if !legal.contains(&action) {
            return Err(Error::IllegalAction { state, action });
        }
        let intended = self.apply(state, action).expect("legal action stays in bounds");
        let others: Vec<Cell> = legal
            .iter()
            .filter_map(|a| self.apply(state, *a))
            .filter(|c| *c != intended)
            .collect();
        let (next, slipped) = if !others.is_empty() && rng.random::<f64>() < self.slip_probability
        {
            (others[rng.random_range(0..others.len())], true)
        } else {
            (intended, false)
        };
        let violations = self.violations_of(state, action, next);
        let reward = self.reward_of(state, action, next);
        Ok(StepOutcome {
            next_state: next,
            reward,
            violations,
            done: next == self.goal,
            slipped,
        })
    }

    /// Shortest start-to-goal path length in moves (slip-free adjacency),
    /// `None` when the goal is unreachable.
    pub fn shortest_path_len(&self) -> Option<u32> {
        self.shortest_path_len_from(self.start)
    }

    pub fn shortest_path_len_from(&self, from: Cell) -> Option<u32> {
        let mut dist: HashMap<Cell, u32> = HashMap::new();
        let mut queue = VecDeque::new();
        dist.insert(from, 0);
        queue.push_back(from);
        while let Some(cell) = queue.pop_front() {
            let d = dist[&cell];
            if cell == self.goal {
                return Some(d);
            }
            for a in Action::ALL {
                if let Some(next) = self.apply(cell, a) {
                    dist.entry(next).or_insert_with(|| {
                        queue.push_back(next);
                        d + 1
                    });
                }
            }
        }
        None
    }

    /// Chebyshev diameter of the grid, used as a path-length fallback when no
    /// trajectory statistics exist yet.
    pub fn diameter(&self) -> u32 {
        (self.width.max(self.height)).saturating_sub(1)
    }

    /// Structural validity check: bounds, distinctness of special cells, and
    /// probability range.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("empty grid".into()));
        }
        for cell in [self.start, self.goal]
            .iter()
            .chain(self.constrained_states.iter())
            .chain(self.features.keys())
        {
            if !self.in_bounds(*cell) {
                return Err(Error::OutOfBounds {
                    cell: *cell,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        if self.start == self.goal {
            return Err(Error::InvalidParameter("start equals goal".into()));
        }
        for endpoint in [self.start, self.goal] {
            if self.constrained_states.contains(&endpoint)
                || self.features.contains_key(&endpoint)
            {
                return Err(Error::InvalidParameter(
                    "start and goal must be plain cells".into(),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.slip_probability) {
            return Err(Error::InvalidParameter(format!(
                "slip probability {} outside [0,1]",
                self.slip_probability
            )));
        }
        Ok(())
    }

    /// Generate a random grid: start, goal, constrained cells, and colored
    /// cells are pairwise distinct; constrained actions are distinct.
    /// Deterministic for a fixed random source.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, params: &GridGenParams) -> Result<GridSpec> {
        let cells_needed =
            2 + params.constrained_states + params.green_cells + params.blue_cells;
        let available = (params.width as usize) * (params.height as usize);
        if cells_needed > available {
            return Err(Error::UnsatisfiableGrid {
                needed: cells_needed,
                available,
            });
        }
        if params.constrained_actions > Action::ALL.len() {
            return Err(Error::UnsatisfiableGrid {
                needed: params.constrained_actions,
                available: Action::ALL.len(),
            });
        }
        if !(0.0..=1.0).contains(&params.slip_probability) {
            return Err(Error::InvalidParameter(format!(
                "slip probability {} outside [0,1]",
                params.slip_probability
            )));
        }

        let mut all_cells: Vec<Cell> = (0..params.height)
            .flat_map(|y| (0..params.width).map(move |x| Cell::new(x, y)))
            .collect();
        partial_shuffle(&mut all_cells, cells_needed, rng);
        let mut picked = all_cells.into_iter();

        let start = picked.next().unwrap();
        let goal = picked.next().unwrap();
        let constrained_states: BTreeSet<Cell> =
            picked.by_ref().take(params.constrained_states).collect();
        let mut features = BTreeMap::new();
        for cell in picked.by_ref().take(params.green_cells) {
            features.insert(cell, Feature::Green);
        }
        for cell in picked.by_ref().take(params.blue_cells) {
            features.insert(cell, Feature::Blue);
        }

        let mut actions: Vec<Action> = Action::ALL.to_vec();
        partial_shuffle(&mut actions, params.constrained_actions, rng);
        let constrained_actions: BTreeSet<Action> =
            actions.into_iter().take(params.constrained_actions).collect();

        let spec = GridSpec {
            width: params.width,
            height: params.height,
            start,
            goal,
            constrained_actions,
            constrained_states,
            features,
            penalties: Penalties {
                move_penalty: params.move_penalty,
                violation_penalty: params.violation_penalty,
                goal_reward: params.goal_reward,
            },
            slip_probability: params.slip_probability,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<GridSpec> {
        let spec: GridSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Fisher-Yates prefix shuffle: after the call the first `amount` elements
/// are a uniform sample without replacement.
fn partial_shuffle<T, R: Rng + ?Sized>(items: &mut [T], amount: usize, rng: &mut R) {
    let n = items.len();
    for i in 0..amount.min(n.saturating_sub(1)) {
        let j = rng.random_range(i..n);
        items.swap(i, j);
    }
}
