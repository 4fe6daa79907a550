//! The experiment runner: grid generation, Q-table training, and the
//! per-move decision loops of every agent. All randomness flows from the
//! master seed through per-task labels, so runs are reproducible regardless
//! of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experience::{ExperienceStore, SolverId, TrajectoryBuilder, TrajectoryRecord, TrajectoryStep};
use crate::grid::GridSpec;
use crate::metacog::{mc_decide, McChoice};
use crate::rl::{greedy_rollout, train, QTable, Variant};
use crate::solvers::{attention_weights, s1_propose, s2_propose, AttentionMode, TrajectoryContext};

use super::config::{AgentKind, ExperimentConfig};

/// Stable seed for a labeled sub-task of a run (FNV-1a over the label,
/// mixed with the master seed through a splitmix64 finalizer).
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ master.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rng_for(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label))
}

/// A generated grid with both trained Q-tables.
#[derive(Debug, Clone)]
pub struct GridArtifacts {
    pub grid_id: String,
    pub spec: GridSpec,
    pub q_nominal: QTable,
    pub q_constrained: QTable,
}

pub fn grid_id(index: u32) -> String {
    format!("grid_{index:02}")
}

/// Generate the run's grids, retrying any draw whose goal is unreachable.
pub fn generate_grids(cfg: &ExperimentConfig) -> Result<Vec<(String, GridSpec)>> {
    (0..cfg.grid_count)
        .map(|i| {
            let id = grid_id(i);
            for attempt in 0..100 {
                let mut rng = rng_for(cfg.master_seed, &format!("grid/{i}/attempt/{attempt}"));
                let spec = match GridSpec::random(&mut rng, &cfg.grid) {
                    Ok(spec) => spec,
                    Err(_) => continue,
                };
                if spec.shortest_path_len().is_some() {
                    return Ok((id, spec));
                }
            }
            Err(Error::UnreachableGoal)
        })
        .collect()
}

/// Train the nominal and constrained tables for one grid.
pub fn train_tables(cfg: &ExperimentConfig, id: &str, spec: &GridSpec) -> Result<(QTable, QTable)> {
    let mut rng_n = rng_for(cfg.master_seed, &format!("train/{id}/nominal"));
    let mut rng_c = rng_for(cfg.master_seed, &format!("train/{id}/constrained"));
    let q_nominal = train(spec, Variant::Nominal, &cfg.rl, &mut rng_n)?;
    let q_constrained = train(spec, Variant::Constrained, &cfg.rl, &mut rng_c)?;
    Ok((q_nominal, q_constrained))
}

/// Generate and train every grid of the run, in parallel.
pub fn prepare_grids(cfg: &ExperimentConfig) -> Result<Vec<GridArtifacts>> {
    generate_grids(cfg)?
        .into_par_iter()
        .map(|(grid_id, spec)| {
            let (q_nominal, q_constrained) = train_tables(cfg, &grid_id, &spec)?;
            Ok(GridArtifacts {
                grid_id,
                spec,
                q_nominal,
                q_constrained,
            })
        })
        .collect()
}

/// How an agent picks its next move.
enum Policy {
    S1Only,
    S2Only,
    Sofai(AttentionMode),
}

/// Run one experience-store-backed trajectory, appending it to the store.
fn run_store_trajectory<R: rand::Rng + ?Sized>(
    cfg: &ExperimentConfig,
    grid: &GridArtifacts,
    policy: &Policy,
    store: &mut ExperienceStore,
    agent: &str,
    index: u64,
    rng: &mut R,
) -> Result<TrajectoryRecord> {
    let spec = &grid.spec;
    let length_fallback = spec.diameter() as f64;
    let mut builder = TrajectoryBuilder::new(&grid.grid_id, agent, index);
    let mut state = spec.start;
    let mut finished = false;

    for _ in 0..cfg.max_steps_per_trajectory {
        let legal = spec.legal_actions(state)?;
        let s2 = |builder: &TrajectoryBuilder, mode: AttentionMode, rng: &mut R| {
            let context = TrajectoryContext {
                violations: builder.violations(),
                length: builder.length(),
            };
            let weights = attention_weights(mode, &cfg.attention, context, store, length_fallback);
            let (action, iterations) = s2_propose(
                &grid.q_nominal,
                &grid.q_constrained,
                state,
                &legal,
                weights,
                cfg.mdft.feedback_params(),
                cfg.mdft.horizon,
                rng,
            )?;
            Ok::<_, Error>((action, SolverId::S2, 1.0 + iterations as f64))
        };
        let (action, solver, decision_time) = match policy {
            Policy::S1Only => {
                let proposal = s1_propose(store, state, &legal, rng);
                (proposal.action, SolverId::S1, 1.0)
            }
            Policy::S2Only => s2(&builder, AttentionMode::Balanced, rng)?,
            Policy::Sofai(mode) => {
                let proposal = s1_propose(store, state, &legal, rng);
                let decision = mc_decide(state, &builder, &proposal, store, &cfg.mc, rng);
                match decision.choice {
                    McChoice::AdoptS1 => (proposal.action, SolverId::S1, 1.0),
                    McChoice::InvokeS2 => s2(&builder, *mode, rng)?,
                }
            }
        };

        let outcome = spec.step(state, action, rng)?;
        store.record_step(
            &mut builder,
            TrajectoryStep {
                state,
                intended_action: action,
                realized_state: outcome.next_state,
                reward: outcome.reward,
                violations: outcome.violations,
                solver,
                decision_time,
            },
        );
        state = outcome.next_state;
        if outcome.done {
            finished = true;
            break;
        }
    }
    Ok(store.finish_trajectory(builder, finished).clone())
}

/// Run one agent's full trajectory budget on one grid.
pub fn run_agent(
    cfg: &ExperimentConfig,
    grid: &GridArtifacts,
    agent: AgentKind,
) -> Result<Vec<TrajectoryRecord>> {
    let label = format!("run/{}/{}", grid.grid_id, agent.name());
    let mut rng = rng_for(cfg.master_seed, &label);
    let n = cfg.trajectories_per_agent as u64;

    match agent {
        AgentKind::RlNominal | AgentKind::RlConstrained => {
            let q = match agent {
                AgentKind::RlNominal => &grid.q_nominal,
                _ => &grid.q_constrained,
            };
            (0..n)
                .map(|index| {
                    greedy_rollout(
                        &grid.spec,
                        q,
                        &mut rng,
                        cfg.max_steps_per_trajectory,
                        &grid.grid_id,
                        agent.name(),
                        index,
                    )
                })
                .collect()
        }
        _ => {
            let policy = match agent {
                AgentKind::S1Only => Policy::S1Only,
                AgentKind::S2Only => Policy::S2Only,
                _ => Policy::Sofai(agent.attention_mode().expect("SOFAI agent")),
            };
            let mut store = ExperienceStore::new(&grid.grid_id);
            (0..n)
                .map(|index| {
                    run_store_trajectory(cfg, grid, &policy, &mut store, agent.name(), index, &mut rng)
                })
                .collect()
        }
    }
}

/// Everything a run produces before report writing.
pub struct ExperimentOutput {
    pub grids: Vec<GridArtifacts>,
    pub records: Vec<TrajectoryRecord>,
}

/// Run the full protocol: every configured agent on every grid. Work is
/// parallelized over (grid, agent) pairs; output order is grids in index
/// order, agents in configured order, trajectories in index order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let grids = prepare_grids(cfg)?;
    run_experiment_on(cfg, grids)
}

/// As [`run_experiment`], with grids and tables already prepared.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    grids: Vec<GridArtifacts>,
) -> Result<ExperimentOutput> {
    let tasks: Vec<(usize, AgentKind)> = (0..grids.len())
        .flat_map(|g| cfg.agents.iter().map(move |a| (g, *a)))
        .collect();
    let batches: Vec<Vec<TrajectoryRecord>> = tasks
        .par_iter()
        .map(|(g, agent)| run_agent(cfg, &grids[*g], *agent))
        .collect::<Result<_>>()?;
    Ok(ExperimentOutput {
        grids,
        records: batches.into_iter().flatten().collect(),
    })
}
