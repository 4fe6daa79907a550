//! Trajectory-level metrics: the per-trajectory CSV rows, per-agent
//! aggregates, edge-distribution divergences, and the smoothed S1-usage
//! series. Everything here is a pure function of the trajectory records, so
//! the reports can be regenerated from a persisted log byte for byte.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experience::TrajectoryRecord;

use super::jsd::js_divergence;

/// One `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub agent: String,
    pub grid: String,
    pub index: u64,
    pub length: u64,
    pub reward: f64,
    pub wall_time: f64,
    pub s1_fraction: f64,
}

/// Per-agent aggregates over all grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub trajectories: u64,
    pub mean_length: f64,
    pub mean_reward: f64,
    pub mean_wall_time: f64,
    pub mean_s1_fraction: f64,
    pub finished_fraction: f64,
}

/// The `summary.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub agents: BTreeMap<String, AgentSummary>,
    /// Per grid, per agent: JSD of the agent's edge distribution against the
    /// S2-only baseline on that grid. Empty when S2-only was not run.
    pub js_divergence_vs_s2: BTreeMap<String, BTreeMap<String, f64>>,
    /// Per agent, per grid: first trajectory index at which the smoothed S1
    /// usage fraction exceeds 0.5 (SOFAI agents only).
    pub s1_crossover: BTreeMap<String, BTreeMap<String, Option<u64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

/// Per-trajectory S1 usage fractions of one agent on one grid, ordered by
/// trajectory index.
pub fn usage_series(records: &[TrajectoryRecord], agent: &str, grid: &str) -> Vec<f64> {
    let mut indexed: Vec<(u64, f64)> = records
        .iter()
        .filter(|r| r.agent == agent && r.grid_id == grid)
        .map(|r| (r.index, r.usage_fractions().0))
        .collect();
    indexed.sort_unstable_by_key(|(i, _)| *i);
    indexed.into_iter().map(|(_, f)| f).collect()
}

/// Trailing moving average; entry `i` averages the window ending at `i`.
/// Shorter prefixes average what is available.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// First index where the smoothed series exceeds 0.5.
pub fn crossover_index(series: &[f64], window: usize) -> Option<u64> {
    moving_average(series, window)
        .iter()
        .position(|&v| v > 0.5)
        .map(|i| i as u64)
}

fn sofai_agent_names(records: &[TrajectoryRecord]) -> Vec<String> {
    let mut names: Vec<String> = records
        .iter()
        .filter(|r| r.agent.starts_with("SOFAI-"))
        .map(|r| r.agent.clone())
        .collect();
    names.sort_unstable();
    names.dedup();
    names
}

impl MetricsReport {
    /// Build every report from a set of trajectory records. Rows keep the
    /// record order; aggregates use deterministic key order.
    pub fn from_records(records: &[TrajectoryRecord], window: usize) -> Result<MetricsReport> {
        let rows = records
            .iter()
            .map(|r| MetricsRow {
                agent: r.agent.clone(),
                grid: r.grid_id.clone(),
                index: r.index,
                length: r.length,
                reward: r.total_reward,
                wall_time: r.wall_time,
                s1_fraction: r.usage_fractions().0,
            })
            .collect();

        let mut by_agent: BTreeMap<String, Vec<&TrajectoryRecord>> = BTreeMap::new();
        let mut grids: Vec<String> = Vec::new();
        for record in records {
            by_agent.entry(record.agent.clone()).or_default().push(record);
            if !grids.contains(&record.grid_id) {
                grids.push(record.grid_id.clone());
            }
        }
        grids.sort_unstable();

        let agents = by_agent
            .iter()
            .map(|(agent, recs)| {
                let n = recs.len() as f64;
                let mean = |f: &dyn Fn(&TrajectoryRecord) -> f64| {
                    recs.iter().map(|r| f(r)).sum::<f64>() / n
                };
                (
                    agent.clone(),
                    AgentSummary {
                        trajectories: recs.len() as u64,
                        mean_length: mean(&|r| r.length as f64),
                        mean_reward: mean(&|r| r.total_reward),
                        mean_wall_time: mean(&|r| r.wall_time),
                        mean_s1_fraction: mean(&|r| r.usage_fractions().0),
                        finished_fraction: mean(&|r| r.finished as u8 as f64),
                    },
                )
            })
            .collect();

        let mut js_divergence_vs_s2 = BTreeMap::new();
        if by_agent.contains_key("S2-only") {
            for grid in &grids {
                let reference: Vec<TrajectoryRecord> = records
                    .iter()
                    .filter(|r| r.agent == "S2-only" && &r.grid_id == grid)
                    .cloned()
                    .collect();
                if reference.is_empty() {
                    continue;
                }
                let mut per_agent = BTreeMap::new();
                for agent in by_agent.keys() {
                    if agent == "S2-only" {
                        continue;
                    }
                    let own: Vec<TrajectoryRecord> = records
                        .iter()
                        .filter(|r| &r.agent == agent && &r.grid_id == grid)
                        .cloned()
                        .collect();
                    if !own.is_empty() {
                        per_agent.insert(agent.clone(), js_divergence(&own, &reference)?);
                    }
                }
                js_divergence_vs_s2.insert(grid.clone(), per_agent);
            }
        }

        let mut s1_crossover = BTreeMap::new();
        for agent in sofai_agent_names(records) {
            let per_grid = grids
                .iter()
                .map(|grid| {
                    let series = usage_series(records, &agent, grid);
                    (grid.clone(), crossover_index(&series, window))
                })
                .collect();
            s1_crossover.insert(agent, per_grid);
        }

        Ok(MetricsReport {
            rows,
            summary: Summary {
                agents,
                js_divergence_vs_s2,
                s1_crossover,
            },
        })
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("agent,grid,index,length,reward,wall_time,s1_fraction\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.agent, row.grid, row.index, row.length, row.reward, row.wall_time,
                row.s1_fraction
            ));
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.summary)?;
        text.push('\n');
        Ok(text)
    }
}

/// Write `trajectories.ndjson`, `metrics.csv` and `summary.json` into `dir`.
pub fn write_reports(dir: &Path, records: &[TrajectoryRecord], window: usize) -> Result<()> {
    let report = MetricsReport::from_records(records, window)?;
    std::fs::create_dir_all(dir)?;

    let mut log = std::io::BufWriter::new(std::fs::File::create(dir.join("trajectories.ndjson"))?);
    for record in records {
        serde_json::to_writer(&mut log, record)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;

    std::fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
    std::fs::write(dir.join("summary.json"), report.summary_json()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experience::{SolverId, TrajectoryStep};
    use crate::grid::{Action, Cell};

    fn record(agent: &str, grid: &str, index: u64, s1_steps: usize, s2_steps: usize) -> TrajectoryRecord {
        let mut steps = Vec::new();
        for (count, solver, cost) in [(s1_steps, SolverId::S1, 1.0), (s2_steps, SolverId::S2, 31.0)]
        {
            for i in 0..count {
                steps.push(TrajectoryStep {
                    state: Cell::new(i as u32 % 9, 0),
                    intended_action: Action::E,
                    realized_state: Cell::new((i as u32 + 1) % 9, 0),
                    reward: -4.0,
                    violations: 0,
                    solver,
                    decision_time: cost,
                });
            }
        }
        let length = steps.len() as u64;
        let wall_time = steps.iter().map(|s| s.decision_time).sum();
        let total_reward = -4.0 * length as f64;
        TrajectoryRecord {
            grid_id: grid.into(),
            agent: agent.into(),
            index,
            steps,
            total_reward,
            length,
            wall_time,
            finished: true,
        }
    }

    #[test]
    fn moving_average_trailing_window() {
        let series = [0.0, 1.0, 1.0, 1.0];
        assert_eq!(moving_average(&series, 2), vec![0.0, 0.5, 1.0, 1.0]);
        // Window longer than the series averages every prefix.
        assert_eq!(moving_average(&series, 10), vec![0.0, 0.5, 2.0 / 3.0, 0.75]);
    }

    #[test]
    fn crossover_finds_first_smoothed_exceedance() {
        let mut series = vec![0.0; 10];
        series.extend(vec![1.0; 10]);
        // Window 4 trailing: first value > 0.5 appears at index 12.
        assert_eq!(crossover_index(&series, 4), Some(12));
        assert_eq!(crossover_index(&vec![0.2; 20], 4), None);
    }

    #[test]
    fn usage_series_is_ordered_by_index() {
        let records = vec![
            record("SOFAI-01", "g0", 1, 0, 4),
            record("SOFAI-01", "g0", 0, 4, 0),
            record("SOFAI-01", "g1", 0, 2, 2),
        ];
        assert_eq!(usage_series(&records, "SOFAI-01", "g0"), vec![1.0, 0.0]);
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let records = vec![record("S1-only", "g0", 0, 3, 0), record("S1-only", "g0", 1, 2, 2)];
        let report = MetricsReport::from_records(&records, 50).unwrap();
        let csv = report.metrics_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "agent,grid,index,length,reward,wall_time,s1_fraction");
        assert_eq!(lines[1], "S1-only,g0,0,3,-12,3,1");
        assert_eq!(lines[2], "S1-only,g0,1,4,-16,64,0.5");
    }

    #[test]
    fn summary_aggregates_per_agent() {
        let records = vec![
            record("S1-only", "g0", 0, 4, 0),
            record("S1-only", "g1", 0, 2, 0),
            record("S2-only", "g0", 0, 0, 4),
            record("S2-only", "g1", 0, 0, 2),
        ];
        let report = MetricsReport::from_records(&records, 50).unwrap();
        let s1 = &report.summary.agents["S1-only"];
        assert_eq!(s1.trajectories, 2);
        assert_eq!(s1.mean_length, 3.0);
        assert_eq!(s1.mean_s1_fraction, 1.0);
        // JSD against S2-only exists for both grids and is finite.
        assert_eq!(report.summary.js_divergence_vs_s2.len(), 2);
        let d = report.summary.js_divergence_vs_s2["g0"]["S1-only"];
        assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn reports_regenerate_identically_from_serialized_log(){
        let records = vec![
            record("SOFAI-01", "g0", 0, 1, 5),
            record("SOFAI-01", "g0", 1, 5, 1),
            record("S2-only", "g0", 0, 0, 6),
        ];
        let dir = tempfile::tempdir().unwrap();
        write_reports(dir.path(), &records, 50).unwrap();
        let csv1 = std::fs::read(dir.path().join("metrics.csv")).unwrap();
        let json1 = std::fs::read(dir.path().join("summary.json")).unwrap();

        let log = std::fs::File::open(dir.path().join("trajectories.ndjson")).unwrap();
        let reloaded =
            crate::experience::read_trajectory_log(std::io::BufReader::new(log)).unwrap();
        assert_eq!(reloaded, records);

        let dir2 = tempfile::tempdir().unwrap();
        write_reports(dir2.path(), &reloaded, 50).unwrap();
        assert_eq!(csv1, std::fs::read(dir2.path().join("metrics.csv")).unwrap());
        assert_eq!(json1, std::fs::read(dir2.path().join("summary.json")).unwrap());
    }
}
