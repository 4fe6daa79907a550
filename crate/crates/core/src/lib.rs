//! Fast/slow decision making on a constrained grid.
//!
//! An S1 solver proposes actions from accumulated experience, an S2 solver
//! deliberates with Multi-alternative Decision Field Theory over the Q-values
//! of a nominal and a constrained tabular RL agent, and a two-phase
//! metacognitive arbiter decides per move which one to trust. The harness
//! module runs the full experiment protocol and computes trajectory-level
//! metrics.

pub mod error;
pub mod experience;
pub mod grid;
pub mod harness;
pub mod mdft;
pub mod metacog;
pub mod rl;
pub mod solvers;

pub use error::{Error, Result};
pub use experience::{
    ExperienceStore, Scope, SolverId, TrajectoryBuilder, TrajectoryRecord, TrajectoryStep,
};
pub use grid::{Action, Cell, Feature, GridGenParams, GridSpec, Penalties, StepOutcome};
pub use harness::{AgentKind, ExperimentConfig, MetricsReport};
pub use mdft::{DeliberationPolicy, FeedbackParams, MdftModel};
pub use metacog::{McChoice, McConfig, McDecision, McPhase};
pub use rl::{QTable, RlHyperparams, Variant};
pub use solvers::{AttentionMode, AttentionParams, S1Proposal};
