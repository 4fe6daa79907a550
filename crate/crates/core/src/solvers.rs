//! The two solvers the arbiter chooses between: S1 proposes the action that
//! maximizes experienced reward times confidence, S2 deliberates with MDFT
//! over the per-action Q-values of the nominal and constrained agents.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience::{sigmoid, ExperienceStore};
use crate::grid::{Action, Cell};
use crate::mdft::{argmax_with_ties, DeliberationPolicy, FeedbackParams, MdftModel};
use crate::rl::QTable;

/// S1 output: an action plus the solver's confidence in it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S1Proposal {
    pub action: Action,
    pub confidence: f64,
}

/// How the attention distribution over the (nominal, constrained) Q columns
/// is set, the 01 / 10 / 02 variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionMode {
    /// "01": full attention to the constrained column once enough
    /// constraints have been violated, balanced otherwise.
    #[serde(rename = "01")]
    ConstraintsIfViolating,
    /// "10": full attention to the nominal (goal) column once the partial
    /// trajectory has grown too long, balanced otherwise.
    #[serde(rename = "10")]
    GoalIfTooLong,
    /// "02": balanced attention to both columns, always.
    #[serde(rename = "02")]
    Balanced,
}

impl AttentionMode {
    pub fn code(&self) -> &'static str {
        match self {
            AttentionMode::ConstraintsIfViolating => "01",
            AttentionMode::GoalIfTooLong => "10",
            AttentionMode::Balanced => "02",
        }
    }
}

/// Trigger thresholds for the conditional attention modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionParams {
    /// Mode 01: violations beyond this count shift attention to constraints.
    pub violation_threshold: u32,
    /// Mode 10: length beyond this multiple of the mean past trajectory
    /// length shifts attention to the goal.
    pub length_factor: f64,
}

impl Default for AttentionParams {
    fn default() -> Self {
        AttentionParams {
            violation_threshold: 2,
            length_factor: 1.5,
        }
    }
}

/// Mid-trajectory statistics the attention rules condition on.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrajectoryContext {
    pub violations: u32,
    pub length: u64,
}

/// Propose the legal action maximizing `expected_reward * confidence`.
/// Actions without samples score 0 and still participate; with no experience
/// at all this degenerates to a uniform draw at floor confidence.
pub fn s1_propose<R: Rng + ?Sized>(
    store: &ExperienceStore,
    state: Cell,
    legal: &[Action],
    rng: &mut R,
) -> S1Proposal {
    debug_assert!(!legal.is_empty());
    let scores: Vec<f64> = legal
        .iter()
        .map(|a| {
            store
                .expected_reward(state, *a)
                .map(|e| e * store.confidence(state, *a))
                .unwrap_or(0.0)
        })
        .collect();
    let action = legal[argmax_with_ties(&scores, rng)];
    let confidence = if store.expected_reward(state, action).is_some() {
        store.confidence(state, action)
    } else {
        sigmoid(-0.5 / 1e-10)
    };
    S1Proposal { action, confidence }
}

/// Attention distribution `(w_nominal, w_constrained)` for a mode given the
/// trajectory so far. `length_fallback` stands in for the mean past
/// trajectory length while the store is empty (the grid diameter in
/// practice).
pub fn attention_weights(
    mode: AttentionMode,
    params: &AttentionParams,
    context: TrajectoryContext,
    store: &ExperienceStore,
    length_fallback: f64,
) -> [f64; 2] {
    match mode {
        AttentionMode::Balanced => [0.5, 0.5],
        AttentionMode::ConstraintsIfViolating => {
            if context.violations > params.violation_threshold {
                [0.0, 1.0]
            } else {
                [0.5, 0.5]
            }
        }
        AttentionMode::GoalIfTooLong => {
            let reference = store.mean_trajectory_length().unwrap_or(length_fallback);
            if context.length as f64 > params.length_factor * reference {
                [1.0, 0.0]
            } else {
                [0.5, 0.5]
            }
        }
    }
}

/// Build the per-move MDFT model: one row per legal action, columns are the
/// nominal and constrained Q-values, each column min-max normalized to [0,1]
/// over the legal set (a constant column maps to all 0.5).
pub fn build_s2_model(
    q_nominal: &QTable,
    q_constrained: &QTable,
    state: Cell,
    legal: &[Action],
    attention: [f64; 2],
    feedback: FeedbackParams,
    horizon: u32,
) -> Result<MdftModel> {
    if legal.len() < 2 {
        return Err(Error::InvalidParameter(
            "MDFT model needs at least 2 options".into(),
        ));
    }
    let mut m = DMatrix::zeros(legal.len(), 2);
    for (col, table) in [q_nominal, q_constrained].into_iter().enumerate() {
        let raw: Vec<f64> = legal
            .iter()
            .map(|a| table.get(state, *a))
            .collect::<Result<_>>()?;
        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        for (row, value) in raw.iter().enumerate() {
            m[(row, col)] = if span > 0.0 { (value - min) / span } else { 0.5 };
        }
    }
    MdftModel::new(
        m,
        attention.to_vec(),
        feedback,
        DeliberationPolicy::FixedHorizon { iterations: horizon },
    )
}

/// Run one S2 decision. Returns the chosen action and the number of MDFT
/// iterations spent (0 when a single legal action short-circuits the
/// machinery).
pub fn s2_propose<R: Rng + ?Sized>(
    q_nominal: &QTable,
    q_constrained: &QTable,
    state: Cell,
    legal: &[Action],
    attention: [f64; 2],
    feedback: FeedbackParams,
    horizon: u32,
    rng: &mut R,
) -> Result<(Action, u32)> {
    if legal.len() == 1 {
        return Ok((legal[0], 0));
    }
    let model = build_s2_model(
        q_nominal,
        q_constrained,
        state,
        legal,
        attention,
        feedback,
        horizon,
    )?;
    let outcome = model.deliberate(rng);
    Ok((legal[outcome.chosen], outcome.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experience::{SolverId, TrajectoryBuilder, TrajectoryStep};
    use crate::grid::{GridSpec, Penalties};
    use crate::rl::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, BTreeSet};

    fn grid5() -> GridSpec {
        GridSpec {
            width: 5,
            height: 5,
            start: Cell::new(0, 0),
            goal: Cell::new(4, 4),
            constrained_actions: BTreeSet::new(),
            constrained_states: BTreeSet::new(),
            features: BTreeMap::new(),
            penalties: Penalties::default(),
            slip_probability: 0.0,
        }
    }

    fn record(
        store: &mut ExperienceStore,
        t: &mut TrajectoryBuilder,
        state: Cell,
        action: Action,
        reward: f64,
        solver: SolverId,
    ) {
        let (dx, dy) = action.delta();
        let next = Cell::new(
            (state.x as i64 + dx) as u32,
            (state.y as i64 + dy) as u32,
        );
        store.record_step(
            t,
            TrajectoryStep {
                state,
                intended_action: action,
                realized_state: next,
                reward,
                violations: 0,
                solver,
                decision_time: 1.0,
            },
        );
    }

    #[test]
    fn s1_prefers_only_sampled_positive_action() {
        let mut store = ExperienceStore::new("g");
        let mut t = TrajectoryBuilder::new("g", "x", 0);
        let state = Cell::new(2, 2);
        record(&mut store, &mut t, state, Action::NE, 6.0, SolverId::S1);
        let legal = grid5().legal_actions(state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let p = s1_propose(&store, state, &legal, &mut rng);
            assert_eq!(p.action, Action::NE);
            assert!(p.confidence > 0.999);
        }
    }

    #[test]
    fn s1_empty_store_uniform_with_floor_confidence() {
        let store = ExperienceStore::new("g");
        let state = Cell::new(2, 2);
        let legal = grid5().legal_actions(state).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 8];
        for _ in 0..8000 {
            let p = s1_propose(&store, state, &legal, &mut rng);
            counts[p.action.index()] += 1;
            assert!(p.confidence < 1e-6);
        }
        for c in counts {
            assert!((700..1300).contains(&c), "counts {counts:?}");
        }
    }

    #[test]
    fn s1_ties_split_evenly() {
        let mut store = ExperienceStore::new("g");
        let mut t = TrajectoryBuilder::new("g", "x", 0);
        let state = Cell::new(2, 2);
        // Two actions with identical statistics.
        record(&mut store, &mut t, state, Action::N, -4.0, SolverId::S1);
        record(&mut store, &mut t, state, Action::E, -4.0, SolverId::S1);
        let legal = vec![Action::N, Action::E];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n_hits = (0..10_000)
            .filter(|_| s1_propose(&store, state, &legal, &mut rng).action == Action::N)
            .count();
        let freq = n_hits as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "frequency {freq}");
    }

    #[test]
    fn s1_positive_scaling_preserves_proposals() {
        // Single sample per action keeps sigma at 0, so scaling every reward
        // by a positive constant scales all scores uniformly.
        let state = Cell::new(2, 2);
        let legal = vec![Action::N, Action::E, Action::S];
        let build = |scale: f64| {
            let mut store = ExperienceStore::new("g");
            let mut t = TrajectoryBuilder::new("g", "x", 0);
            record(&mut store, &mut t, state, Action::N, 2.0 * scale, SolverId::S1);
            record(&mut store, &mut t, state, Action::E, 5.0 * scale, SolverId::S1);
            record(&mut store, &mut t, state, Action::S, 1.0 * scale, SolverId::S1);
            store
        };
        let base = build(1.0);
        let scaled = build(3.0);
        for seed in 0..20 {
            let a = s1_propose(&base, state, &legal, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = s1_propose(&scaled, state, &legal, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(a.action, b.action);
        }
    }

    #[test]
    fn attention_mode_02_always_balanced() {
        let store = ExperienceStore::new("g");
        let params = AttentionParams::default();
        for violations in [0, 5] {
            let w = attention_weights(
                AttentionMode::Balanced,
                &params,
                TrajectoryContext { violations, length: 500 },
                &store,
                8.0,
            );
            assert_eq!(w, [0.5, 0.5]);
        }
    }

    #[test]
    fn attention_mode_01_trigger_table() {
        let store = ExperienceStore::new("g");
        let params = AttentionParams { violation_threshold: 2, length_factor: 1.5 };
        let w = attention_weights(
            AttentionMode::ConstraintsIfViolating,
            &params,
            TrajectoryContext { violations: 0, length: 3 },
            &store,
            8.0,
        );
        assert_eq!(w, [0.5, 0.5]);
        let w = attention_weights(
            AttentionMode::ConstraintsIfViolating,
            &params,
            TrajectoryContext { violations: 3, length: 3 },
            &store,
            8.0,
        );
        assert_eq!(w, [0.0, 1.0]);
    }

    #[test]
    fn attention_mode_10_uses_mean_length_with_fallback() {
        let store = ExperienceStore::new("g");
        let params = AttentionParams::default();
        // Fallback diameter 8: threshold 12.
        let short = attention_weights(
            AttentionMode::GoalIfTooLong,
            &params,
            TrajectoryContext { violations: 0, length: 10 },
            &store,
            8.0,
        );
        assert_eq!(short, [0.5, 0.5]);
        let long = attention_weights(
            AttentionMode::GoalIfTooLong,
            &params,
            TrajectoryContext { violations: 0, length: 13 },
            &store,
            8.0,
        );
        assert_eq!(long, [1.0, 0.0]);
    }

    fn tables_with(
        spec: &GridSpec,
        state: Cell,
        nominal: &[(Action, f64)],
        constrained: &[(Action, f64)],
    ) -> (QTable, QTable) {
        // Build tables through JSON, the supported mutation path.
        let mut qn = QTable::zeros(spec, Variant::Nominal).to_json().unwrap();
        let mut qc = QTable::zeros(spec, Variant::Constrained).to_json().unwrap();
        for (doc, entries) in [(&mut qn, nominal), (&mut qc, constrained)] {
            let mut parsed: serde_json::Value = serde_json::from_str(doc).unwrap();
            for (action, value) in entries.iter() {
                parsed["values"][format!("{},{}", state.x, state.y)][action.name()] =
                    serde_json::json!(value);
            }
            *doc = parsed.to_string();
        }
        (QTable::from_json(&qn).unwrap(), QTable::from_json(&qc).unwrap())
    }

    #[test]
    fn s2_model_constant_columns_choose_uniformly() {
        let spec = grid5();
        let state = Cell::new(2, 2);
        let legal = spec.legal_actions(state).unwrap();
        let (qn, qc) = tables_with(&spec, state, &[], &[]);
        let model = build_s2_model(
            &qn,
            &qc,
            state,
            &legal,
            [0.5, 0.5],
            FeedbackParams::default(),
            10,
        )
        .unwrap();
        assert!(model.evaluation().iter().all(|v| *v == 0.5));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = model.choice_distribution(40_000, &mut rng).unwrap();
        for p in &dist {
            assert!((p - 0.125).abs() < 0.02, "dist {dist:?}");
        }
    }

    #[test]
    fn s2_model_three_legal_actions_contrast() {
        let spec = grid5();
        let state = Cell::new(0, 0);
        let legal = spec.legal_actions(state).unwrap();
        assert_eq!(legal.len(), 3);
        let (qn, qc) = tables_with(&spec, state, &[(Action::NE, 1.0)], &[(Action::E, 2.0)]);
        let model = build_s2_model(
            &qn,
            &qc,
            state,
            &legal,
            [0.5, 0.5],
            FeedbackParams::default(),
            10,
        )
        .unwrap();
        assert_eq!(model.contrast()[(0, 1)], -0.5);
    }

    #[test]
    fn s2_model_invariant_to_column_shift() {
        let spec = grid5();
        let state = Cell::new(2, 2);
        let legal = spec.legal_actions(state).unwrap();
        let base: Vec<(Action, f64)> = legal.iter().map(|a| (*a, a.index() as f64)).collect();
        let shifted: Vec<(Action, f64)> =
            legal.iter().map(|a| (*a, a.index() as f64 + 100.0)).collect();
        let (qn_a, qc) = tables_with(&spec, state, &base, &[]);
        let (qn_b, _) = tables_with(&spec, state, &shifted, &[]);
        let w = [0.5, 0.5];
        let fp = FeedbackParams::default();
        let a = build_s2_model(&qn_a, &qc, state, &legal, w, fp, 10).unwrap();
        let b = build_s2_model(&qn_b, &qc, state, &legal, w, fp, 10).unwrap();
        assert_eq!(a.evaluation(), b.evaluation());
    }

    #[test]
    fn s2_follows_dominant_constrained_column() {
        let spec = grid5();
        let state = Cell::new(2, 2);
        let legal = spec.legal_actions(state).unwrap();
        let constrained: Vec<(Action, f64)> = legal
            .iter()
            .map(|a| (*a, if *a == Action::SW { 10.0 } else { 0.0 }))
            .collect();
        let (qn, qc) = tables_with(&spec, state, &[], &constrained);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hits = (0..1000)
            .filter(|_| {
                let (action, _) = s2_propose(
                    &qn,
                    &qc,
                    state,
                    &legal,
                    [0.0, 1.0],
                    FeedbackParams::default(),
                    30,
                    &mut rng,
                )
                .unwrap();
                action == Action::SW
            })
            .count();
        assert!(hits >= 900, "dominant action chosen {hits}/1000");
    }

    #[test]
    fn s2_follows_separated_nominal_maximum() {
        let spec = grid5();
        let state = Cell::new(2, 2);
        let legal = spec.legal_actions(state).unwrap();
        // Unique maximum separated by >= 0.5 after normalization.
        let nominal: Vec<(Action, f64)> = legal
            .iter()
            .map(|a| {
                let v = match a {
                    Action::NE => 10.0,
                    Action::N => 4.0,
                    _ => 0.0,
                };
                (*a, v)
            })
            .collect();
        let (qn, qc) = tables_with(&spec, state, &nominal, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hits = (0..1000)
            .filter(|_| {
                let (action, _) = s2_propose(
                    &qn,
                    &qc,
                    state,
                    &legal,
                    [1.0, 0.0],
                    FeedbackParams::default(),
                    30,
                    &mut rng,
                )
                .unwrap();
                action == Action::NE
            })
            .count();
        assert!(hits >= 950, "argmax chosen {hits}/1000");
    }

    #[test]
    fn s2_single_legal_action_bypasses_mdft() {
        let spec = grid5();
        let (qn, qc) = tables_with(&spec, Cell::new(0, 0), &[], &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (action, iterations) = s2_propose(
            &qn,
            &qc,
            Cell::new(0, 0),
            &[Action::NE],
            [0.5, 0.5],
            FeedbackParams::default(),
            30,
            &mut rng,
        )
        .unwrap();
        assert_eq!(action, Action::NE);
        assert_eq!(iterations, 0);
    }

    #[test]
    fn s2_deterministic_for_fixed_seed() {
        let spec = grid5();
        let state = Cell::new(2, 2);
        let legal = spec.legal_actions(state).unwrap();
        let nominal: Vec<(Action, f64)> =
            legal.iter().map(|a| (*a, (a.index() % 3) as f64)).collect();
        let (qn, qc) = tables_with(&spec, state, &nominal, &[]);
        let run = |seed| {
            s2_propose(
                &qn,
                &qc,
                state,
                &legal,
                [0.5, 0.5],
                FeedbackParams::default(),
                30,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn s2_never_returns_illegal_action() {
        let spec = grid5();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for x in 0..5 {
            for y in 0..5 {
                let state = Cell::new(x, y);
                let legal = spec.legal_actions(state).unwrap();
                let (qn, qc) = tables_with(&spec, state, &[], &[]);
                let (action, _) = s2_propose(
                    &qn,
                    &qc,
                    state,
                    &legal,
                    [0.5, 0.5],
                    FeedbackParams::default(),
                    5,
                    &mut rng,
                )
                .unwrap();
                assert!(legal.contains(&action));
            }
        }
    }
}
