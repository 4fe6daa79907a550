//! The metacognitive arbiter: a cheap first screening (MC1) that adopts the
//! S1 proposal when experience, performance, and confidence all check out,
//! and a costlier second phase (MC2) that either flips a coin while S2 is
//! still inexperienced or runs a cost-benefit comparison between the S1
//! proposal and invoking S2.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience::{ExperienceStore, Scope, TrajectoryBuilder};
use crate::grid::Cell;
use crate::solvers::S1Proposal;

/// Arbiter thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// Experience threshold: MC1 requires more than this many adopted
    /// decisions at the state.
    pub t1: u64,
    /// Partial-reward ratio threshold in [0,1].
    pub t2: f64,
    /// Confidence threshold in [0,1].
    pub t3: f64,
    /// Reward-gain tolerance of the cost-benefit test.
    pub t4: f64,
    /// S2 experience threshold: at or below it MC2 chooses at random.
    pub t6: u64,
    /// Decision-time budget per trajectory, in clock units.
    pub time_budget: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            t1: 200,
            t2: 0.8,
            t3: 0.4,
            t4: 0.0,
            t6: 1,
            time_budget: 10_000.0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t2", self.t2), ("t3", self.t3)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside [0,1]")));
            }
        }
        if !(self.time_budget > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "time budget {} must be positive",
                self.time_budget
            )));
        }
        Ok(())
    }
}

/// What the arbiter decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McChoice {
    AdoptS1,
    InvokeS2,
}

/// Which phase produced the decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McPhase {
    Mc1,
    Mc2Random,
    Mc2CostBenefit,
}

/// Quantities evaluated on the way to a decision, kept for the usage
/// analysis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct McDiagnostics {
    pub n_traj_all: u64,
    pub n_traj_s2: u64,
    pub part_reward: f64,
    pub avg_reward: Option<f64>,
    pub ratio_pass: bool,
    pub confidence: f64,
    pub exp_cost_s2: Option<f64>,
    pub exp_reward_s2: Option<f64>,
    pub exp_reward_s1: Option<f64>,
    pub gain_per_cost: Option<f64>,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McDecision {
    pub choice: McChoice,
    pub phase: McPhase,
    pub diagnostics: McDiagnostics,
}

/// The MC1 performance test, sign-safe. The intent is "escalate when the
/// trajectory is performing worse than `t2`-scaled past experience"; for the
/// positive-reward case this is the plain ratio test
/// `partReward / avgReward > t2`, and for the (typical) negative-reward case
/// the division flips the ordering, so the comparison is done against
/// `avgReward / t2` instead. Missing experience fails the test.
fn ratio_test(part_reward: f64, avg_reward: Option<f64>, t2: f64) -> bool {
    let Some(avg) = avg_reward else {
        return false;
    };
    if avg > 0.0 {
        part_reward > t2 * avg
    } else if avg < 0.0 {
        if t2 <= 0.0 {
            true
        } else {
            part_reward >= avg / t2
        }
    } else {
        part_reward >= 0.0
    }
}

/// Decide between adopting the S1 proposal and invoking S2 for one move.
pub fn mc_decide<R: Rng + ?Sized>(
    state: Cell,
    partial: &TrajectoryBuilder,
    proposal: &S1Proposal,
    store: &ExperienceStore,
    cfg: &McConfig,
    rng: &mut R,
) -> McDecision {
    let mut diag = McDiagnostics {
        n_traj_all: store.n_traj(state, Scope::All),
        n_traj_s2: store.n_traj(state, Scope::S2),
        part_reward: partial.part_reward(),
        avg_reward: store.avg_reward(state),
        confidence: proposal.confidence,
        ..McDiagnostics::default()
    };
    diag.ratio_pass = ratio_test(diag.part_reward, diag.avg_reward, cfg.t2);

    // MC1: enough experience, performing at least as well as usual, and a
    // confident proposal.
    if diag.n_traj_all > cfg.t1 && diag.ratio_pass && diag.confidence > cfg.t3 {
        return McDecision {
            choice: McChoice::AdoptS1,
            phase: McPhase::Mc1,
            diagnostics: diag,
        };
    }

    // No budget left for deliberation: adopt whatever S1 proposed.
    let rem_time = cfg.time_budget - partial.elapsed();
    if rem_time <= 0.0 {
        diag.budget_exhausted = true;
        return McDecision {
            choice: McChoice::AdoptS1,
            phase: McPhase::Mc2CostBenefit,
            diagnostics: diag,
        };
    }

    // MC2, random arm: S2 itself lacks experience at this state.
    if diag.n_traj_s2 <= cfg.t6 {
        let choice = if rng.random::<bool>() {
            McChoice::InvokeS2
        } else {
            McChoice::AdoptS1
        };
        return McDecision {
            choice,
            phase: McPhase::Mc2Random,
            diagnostics: diag,
        };
    }

    // MC2, cost-benefit arm.
    diag.exp_reward_s2 = store.exp_reward_s2(state);
    diag.exp_reward_s1 = store.expected_reward(state, proposal.action);
    let exp_cost = store
        .exp_time_s2()
        .map(|t| (t / rem_time).max(1e-9));
    diag.exp_cost_s2 = exp_cost;
    let choice = match (exp_cost, diag.exp_reward_s2) {
        (Some(cost), Some(s2)) if cost <= 1.0 => {
            // An S1 proposal with no reward samples offers no evidence of
            // quality; its expectation is taken as -inf so the expected gain
            // from deliberating is unbounded (sentinels escalate, as at MC1).
            let s1 = diag.exp_reward_s1.unwrap_or(f64::NEG_INFINITY);
            let gain_per_cost = (s2 - s1) / cost;
            diag.gain_per_cost = Some(gain_per_cost);
            if gain_per_cost > cfg.t4 {
                McChoice::InvokeS2
            } else {
                McChoice::AdoptS1
            }
        }
        // Cost over budget or no record of S2 performance: stay with S1.
        _ => McChoice::AdoptS1,
    };
    McDecision {
        choice,
        phase: McPhase::Mc2CostBenefit,
        diagnostics: diag,
    }
}
