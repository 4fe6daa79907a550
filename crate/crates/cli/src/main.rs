//! Staged experiment pipeline: `gen-grids` writes the grids, `train` the
//! Q-tables, `run` the trajectory logs and metrics, and `analyze`
//! recomputes the reports from a persisted log.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sofai_core::harness::{
    grid_id, run_experiment_on, train_tables, write_reports, AgentKind, ExperimentConfig,
    GridArtifacts,
};
use sofai_core::rl::QTable;
use sofai_core::{GridSpec, Variant};

#[derive(Parser)]
#[command(name = "sofai", version, about = "Fast/slow grid navigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for this stage's artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the run's grids as JSON files.
    GenGrids {
        #[command(flatten)]
        common: Common,
    },
    /// Train the nominal and constrained Q-tables for previously generated
    /// grids.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run every agent on the prepared grids and write trajectories.ndjson,
    /// metrics.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated agent names overriding the configured list.
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<AgentKind>>,
    },
    /// Recompute metrics.csv and summary.json from trajectories.ndjson.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn grid_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

fn table_path(dir: &Path, id: &str, variant: Variant) -> PathBuf {
    let suffix = match variant {
        Variant::Nominal => "nominal",
        Variant::Constrained => "constrained",
    };
    dir.join(format!("{id}.{suffix}.json"))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_grids(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<(String, GridSpec)>> {
    (0..cfg.grid_count)
        .map(|i| {
            let id = grid_id(i);
            let spec = GridSpec::from_json(&read_to_string(&grid_path(dir, &id))?)?;
            Ok((id, spec))
        })
        .collect()
}

fn gen_grids(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let grids = sofai_core::harness::generate_grids(&cfg)?;
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    for (id, spec) in &grids {
        let path = grid_path(&common.out, id);
        fs::write(&path, spec.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("wrote {} grid files to {}", grids.len(), common.out.display());
    Ok(())
}

fn train_stage(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    for (id, spec) in load_grids(&cfg, &common.out)? {
        let (q_nominal, q_constrained) = train_tables(&cfg, &id, &spec)?;
        for table in [&q_nominal, &q_constrained] {
            let path = table_path(&common.out, &id, table.variant());
            fs::write(&path, table.to_json()?)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        eprintln!("trained tables for {id}");
    }
    Ok(())
}

fn run_stage(common: &Common, agents: Option<Vec<AgentKind>>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(agents) = agents {
        cfg.agents = agents;
    }
    cfg.validate()?;

    let grids = load_grids(&cfg, &common.out)?
        .into_iter()
        .map(|(id, spec)| {
            let q_nominal =
                QTable::from_json(&read_to_string(&table_path(&common.out, &id, Variant::Nominal))?)?;
            let q_constrained = QTable::from_json(&read_to_string(&table_path(
                &common.out,
                &id,
                Variant::Constrained,
            ))?)?;
            Ok(GridArtifacts {
                grid_id: id,
                spec,
                q_nominal,
                q_constrained,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let output = run_experiment_on(&cfg, grids)?;
    write_reports(&common.out, &output.records, cfg.moving_average_window)?;
    eprintln!(
        "ran {} trajectories; reports in {}",
        output.records.len(),
        common.out.display()
    );
    Ok(())
}

fn analyze_stage(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let log_path = common.out.join("trajectories.ndjson");
    let file = fs::File::open(&log_path)
        .with_context(|| format!("reading {}", log_path.display()))?;
    let records = sofai_core::experience::read_trajectory_log(std::io::BufReader::new(file))
        .with_context(|| format!("parsing {}", log_path.display()))?;
    if records.is_empty() {
        bail!("{} holds no trajectories", log_path.display());
    }
    write_reports(&common.out, &records, cfg.moving_average_window)?;
    eprintln!(
        "recomputed reports from {} trajectories in {}",
        records.len(),
        common.out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::GenGrids { common }
        | Command::Train { common }
        | Command::Run { common, .. }
        | Command::Analyze { common } => common,
    };
    if let Some(jobs) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::GenGrids { common } => gen_grids(&common),
        Command::Train { common } => train_stage(&common),
        Command::Run { common, agents } => run_stage(&common, agents),
        Command::Analyze { common } => analyze_stage(&common),
    }
}
