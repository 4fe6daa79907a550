//! Experiment configuration: one TOML document covering every parameter of
//! the pipeline. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridGenParams;
use crate::mdft::FeedbackParams;
use crate::metacog::McConfig;
use crate::rl::RlHyperparams;
use crate::solvers::{AttentionMode, AttentionParams};

/// The seven agents of the experiment protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "RL-Nominal")]
    RlNominal,
    #[serde(rename = "RL-Constrained")]
    RlConstrained,
    #[serde(rename = "S1-only")]
    S1Only,
    #[serde(rename = "S2-only")]
    S2Only,
    #[serde(rename = "SOFAI-01")]
    Sofai01,
    #[serde(rename = "SOFAI-10")]
    Sofai10,
    #[serde(rename = "SOFAI-02")]
    Sofai02,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::RlNominal,
        AgentKind::RlConstrained,
        AgentKind::S1Only,
        AgentKind::S2Only,
        AgentKind::Sofai01,
        AgentKind::Sofai10,
        AgentKind::Sofai02,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::RlNominal => "RL-Nominal",
            AgentKind::RlConstrained => "RL-Constrained",
            AgentKind::S1Only => "S1-only",
            AgentKind::S2Only => "S2-only",
            AgentKind::Sofai01 => "SOFAI-01",
            AgentKind::Sofai10 => "SOFAI-10",
            AgentKind::Sofai02 => "SOFAI-02",
        }
    }

    /// Attention mode of the SOFAI variants.
    pub fn attention_mode(&self) -> Option<AttentionMode> {
        match self {
            AgentKind::Sofai01 => Some(AttentionMode::ConstraintsIfViolating),
            AgentKind::Sofai10 => Some(AttentionMode::GoalIfTooLong),
            AgentKind::Sofai02 => Some(AttentionMode::Balanced),
            _ => None,
        }
    }

    pub fn is_sofai(&self) -> bool {
        self.attention_mode().is_some()
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown agent name {s:?}")))
    }
}

/// MDFT parameters of the S2 solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdftConfig {
    pub phi1: f64,
    pub phi2: f64,
    /// Fixed deliberation horizon of each S2 decision.
    pub horizon: u32,
}

impl Default for MdftConfig {
    fn default() -> Self {
        MdftConfig {
            phi1: 0.022,
            phi2: 0.05,
            horizon: 30,
        }
    }
}

impl MdftConfig {
    pub fn feedback_params(&self) -> FeedbackParams {
        FeedbackParams {
            phi1: self.phi1,
            phi2: self.phi2,
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub grid_count: u32,
    pub trajectories_per_agent: u32,
    pub agents: Vec<AgentKind>,
    pub max_steps_per_trajectory: u32,
    /// Window of the smoothed usage-fraction series.
    pub moving_average_window: usize,
    pub grid: GridGenParams,
    pub rl: RlHyperparams,
    pub mdft: MdftConfig,
    pub mc: McConfig,
    pub attention: AttentionParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 1,
            grid_count: 10,
            trajectories_per_agent: 1000,
            agents: AgentKind::ALL.to_vec(),
            max_steps_per_trajectory: 200,
            moving_average_window: 50,
            grid: GridGenParams::default(),
            rl: RlHyperparams::default(),
            mdft: MdftConfig::default(),
            mc: McConfig::default(),
            attention: AttentionParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Config("agent list is empty".into()));
        }
        if self.trajectories_per_agent == 0 {
            return Err(Error::Config("trajectories_per_agent is 0".into()));
        }
        if self.max_steps_per_trajectory == 0 {
            return Err(Error::Config("max_steps_per_trajectory is 0".into()));
        }
        if self.moving_average_window == 0 {
            return Err(Error::Config("moving_average_window is 0".into()));
        }
        self.rl.validate()?;
        self.mc.validate()?;
        if !(self.mdft.phi1 > 0.0) || !(self.mdft.phi2 > 0.0 && self.mdft.phi2 < 1.0) {
            return Err(Error::Config(format!(
                "mdft parameters out of range: phi1 {}, phi2 {}",
                self.mdft.phi1, self.mdft.phi2
            )));
        }
        if self.mdft.horizon == 0 {
            return Err(Error::Config("mdft horizon is 0".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
