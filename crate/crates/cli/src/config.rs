//! TOML scenario files.
//!
//! ```toml
//! method = "heterogeneous"
//!
//! [collection]
//! period = 0.37
//! h = 0.001
//! seed = 1
//!
//! [graph]
//! agents = 2
//! links = ["1 -> 2 : 1", "pin 1 : 1"]
//!
//! [leader]
//! a = [[0.0, 1.0], [0.0, 0.0]]
//! c = [[1.0, 0.0]]
//!
//! [[agent]]
//! a = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]
//! b = [[0.0], [0.0], [1.0]]
//! c = [[1.0, 0.0, 0.0]]
//! ```
//!
//! Homogeneous methods take a single `[[agent]]` table shared by every node;
//! the leader then runs the same state matrix without input.

use std::path::{Path, PathBuf};

use datasync::lmi::{DesignOptions, SolverOptions, DEFAULT_DECAY_RATE};
use datasync::lti::{default_holds, LtiSystem, DEFAULT_PERIOD, DEFAULT_STEP};
use datasync::scenario;
use datasync::topology::Topology;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    HomogeneousDistributed,
    HomogeneousGlobal,
    Heterogeneous,
}

impl Method {
    pub fn is_homogeneous(self) -> bool {
        self != Method::Heterogeneous
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::HomogeneousDistributed => "homogeneous-distributed",
            Method::HomogeneousGlobal => "homogeneous-global",
            Method::Heterogeneous => "heterogeneous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMode {
    /// Uniform on `[-1, 1]` for every state, drawn from the seed.
    #[default]
    Random,
    /// Agents start on the leader (homogeneous) or on `x_i = Π_i x0`,
    /// `ζ_i = x0` (heterogeneous).
    Synchronized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionConfig {
    #[serde(default = "default_period")]
    pub period: f64,
    /// Holds per agent experiment; `(n+1)(m+1) + 2` when absent.
    pub holds: Option<usize>,
    /// Leader holds; `n0 + 2` when absent.
    pub leader_holds: Option<usize>,
    #[serde(default = "default_step")]
    pub h: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            period: DEFAULT_PERIOD,
            holds: None,
            leader_holds: None,
            h: DEFAULT_STEP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    #[serde(default = "default_decay")]
    pub decay_rate: f64,
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            decay_rate: DEFAULT_DECAY_RATE,
            norm_bound: SolverOptions::default().norm_bound,
        }
    }
}

impl DesignConfig {
    pub fn options(&self) -> DesignOptions {
        DesignOptions {
            solver: SolverOptions {
                norm_bound: self.norm_bound,
                ..SolverOptions::default()
            },
            decay_rate: self.decay_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// 50 s for homogeneous methods, 30 s otherwise.
    pub duration: Option<f64>,
    /// Collection step for homogeneous methods, twice that otherwise.
    pub h: Option<f64>,
    #[serde(default)]
    pub initial: InitialMode,
    /// Multiplies every feedback gain.
    #[serde(default = "one")]
    pub gain_scale: f64,
    /// Relative to the initial error for homogeneous methods, absolute
    /// otherwise; 1e-3 and 1e-2 by default.
    pub tolerance: Option<f64>,
    /// Start of the window in which the tolerance is checked; the final
    /// sample alone when absent.
    pub check_from: Option<f64>,
    #[serde(default = "default_stride")]
    pub csv_stride: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            duration: None,
            h: None,
            initial: InitialMode::Random,
            gain_scale: 1.0,
            tolerance: None,
            check_from: None,
            csv_stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub agents: usize,
    /// `j -> i : weight` and `pin i : gain` lines, 1-based.
    #[serde(default)]
    pub links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub method: Method,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub collection: CollectionConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub graph: GraphConfig,
    pub leader: Option<ModelConfig>,
    #[serde(rename = "agent", default)]
    pub agents: Vec<ModelConfig>,
}

fn default_period() -> f64 {
    DEFAULT_PERIOD
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

fn default_decay() -> f64 {
    DEFAULT_DECAY_RATE
}

fn default_norm_bound() -> f64 {
    SolverOptions::default().norm_bound
}

fn one() -> f64 {
    1.0
}

fn default_stride() -> usize {
    10
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Config(format!(
            "matrix {name} has rows of different lengths"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ModelConfig {
    pub fn from_system(sys: &LtiSystem) -> Self {
        Self {
            a: to_rows(sys.a()),
            b: (sys.m() > 0).then(|| to_rows(sys.b())),
            c: to_rows(sys.c()),
        }
    }

    fn system(&self, label: &str) -> CliResult<LtiSystem> {
        let a = matrix(&format!("{label}.a"), &self.a)?;
        let c = matrix(&format!("{label}.c"), &self.c)?;
        let sys = match &self.b {
            Some(b) => LtiSystem::new(a, matrix(&format!("{label}.b"), b)?, c),
            None => LtiSystem::autonomous(a, c),
        };
        sys.map_err(|e| CliError::Config(format!("{label}: {e}")))
    }
}

/// A validated configuration together with the objects it describes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub topology: Topology,
    /// One model per agent (repeated for homogeneous methods).
    pub agents: Vec<LtiSystem>,
    pub leader: LtiSystem,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> CliResult<Self> {
        let n_agents = config.graph.agents;
        if n_agents == 0 {
            return Err(CliError::Config(
                "the graph needs at least one agent".into(),
            ));
        }
        let topology = Topology::parse(n_agents, &config.graph.links.join("\n"))
            .map_err(|e| CliError::Config(format!("graph: {e}")))?;
        let c = &config.collection;
        if c.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!(
                "seed must not exceed {}",
                i64::MAX
            )));
        }
        if !(c.period > 0.0 && c.h > 0.0) {
            return Err(CliError::Config(
                "collection period and step must be positive".into(),
            ));
        }
        let (agents, leader) = if config.method.is_homogeneous() {
            if config.agents.len() != 1 {
                return Err(CliError::Config(format!(
                    "homogeneous methods take exactly one [[agent]] table, found {}",
                    config.agents.len()
                )));
            }
            if config.leader.is_some() {
                return Err(CliError::Config(
                    "homogeneous methods derive the leader from the agent model".into(),
                ));
            }
            let sys = config.agents[0].system("agent")?;
            let leader = LtiSystem::autonomous(sys.a().clone(), sys.c().clone())
                .map_err(|e| CliError::Config(e.to_string()))?;
            (vec![sys; n_agents], leader)
        } else {
            if config.agents.len() != n_agents {
                return Err(CliError::Config(format!(
                    "{} [[agent]] tables for a graph of {n_agents} agents",
                    config.agents.len()
                )));
            }
            let leader = config
                .leader
                .as_ref()
                .ok_or_else(|| {
                    CliError::Config("heterogeneous method needs a [leader] table".into())
                })?
                .system("leader")?;
            let agents = config
                .agents
                .iter()
                .enumerate()
                .map(|(i, m)| m.system(&format!("agent {}", i + 1)))
                .collect::<CliResult<Vec<_>>>()?;
            for (i, a) in agents.iter().enumerate() {
                if a.p() != leader.p() {
                    return Err(CliError::Config(format!(
                        "agent {} has {} outputs, the leader has {}",
                        i + 1,
                        a.p(),
                        leader.p()
                    )));
                }
            }
            (agents, leader)
        };
        if agents.iter().any(|a| a.m() == 0) {
            return Err(CliError::Config(
                "every agent needs an input matrix b".into(),
            ));
        }
        Ok(Self {
            config,
            topology,
            agents,
            leader,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::new(parse_config(&text)?)
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn holds(&self, agent: usize) -> usize {
        let sys = &self.agents[agent];
        self.config
            .collection
            .holds
            .unwrap_or_else(|| default_holds(sys.n(), sys.m()))
    }

    pub fn leader_holds(&self) -> usize {
        self.config
            .collection
            .leader_holds
            .unwrap_or(self.leader.n() + 2)
    }

    pub fn duration(&self) -> f64 {
        self.config
            .simulation
            .duration
            .unwrap_or(if self.method().is_homogeneous() {
                datasync::closedloop::HOMOGENEOUS_DURATION
            } else {
                datasync::closedloop::HETEROGENEOUS_DURATION
            })
    }

    pub fn sim_step(&self) -> f64 {
        let h = self.config.collection.h;
        self.config
            .simulation
            .h
            .unwrap_or(if self.method().is_homogeneous() {
                h
            } else {
                2.0 * h
            })
    }

    pub fn tolerance(&self) -> f64 {
        self.config
            .simulation
            .tolerance
            .unwrap_or(if self.method().is_homogeneous() {
                1e-3
            } else {
                1e-2
            })
    }
}

pub fn parse_config(text: &str) -> CliResult<ScenarioConfig> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

/// The reference four-follower network with a double-integrator leader.
pub fn reference_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        method: Method::Heterogeneous,
        output: None,
        collection: CollectionConfig {
            seed,
            ..CollectionConfig::default()
        },
        design: DesignConfig::default(),
        simulation: SimulationConfig {
            duration: Some(40.0),
            check_from: Some(30.0),
            ..SimulationConfig::default()
        },
        graph: GraphConfig {
            agents: 4,
            links: scenario::GRAPH_TEXT.lines().map(str::to_string).collect(),
        },
        leader: Some(ModelConfig::from_system(&scenario::leader())),
        agents: scenario::followers()
            .iter()
            .map(ModelConfig::from_system)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_round_trips_through_toml() {
        let cfg = reference_config(3);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
        let sc = Scenario::new(cfg).unwrap();
        assert_eq!(sc.agents.len(), 4);
        assert_eq!(sc.sim_step(), 2e-3);
        assert_eq!(sc.holds(0), 10);
        assert_eq!(sc.leader_holds(), 4);
    }

    #[test]
    fn homogeneous_config_shares_the_model() {
        let text = r#"
            method = "homogeneous-distributed"
            [graph]
            agents = 2
            links = ["1 -> 2 : 1", "pin 1 : 1"]
            [[agent]]
            a = [[0.0]]
            b = [[1.0]]
            c = [[1.0]]
        "#;
        let sc = Scenario::new(parse_config(text).unwrap()).unwrap();
        assert_eq!(sc.agents.len(), 2);
        assert_eq!(sc.leader.m(), 0);
        assert_eq!(sc.duration(), 50.0);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        assert!(parse_config("method = \"sideways\"").is_err());
        let ragged = r#"
            method = "homogeneous-global"
            [graph]
            agents = 1
            [[agent]]
            a = [[0.0, 1.0], [0.0]]
            b = [[1.0]]
            c = [[1.0]]
        "#;
        assert!(Scenario::new(parse_config(ragged).unwrap()).is_err());
        let mut cfg = reference_config(0);
        cfg.agents.pop();
        assert!(Scenario::new(cfg).is_err());
    }
}
