//! The `collect`, `design`, `simulate` and `repro` stages.
//!
//! Layout of an output root:
//!
//! ```text
//! data/manifest.toml      collection parameters and rank checks
//! data/agent_<i>.csv      one experiment per agent (`agent.csv` when shared)
//! data/leader.csv         leader record (heterogeneous method)
//! design/K_<i>.txt        feedback gains (`K.txt` for the stacked gain)
//! design/Pi_<i>.txt       regulator solutions (heterogeneous method)
//! design/Gamma_<i>.txt
//! design/certificate.txt  LMI solution
//! design/report.toml      margins, residuals and model-based audit
//! run/trajectory.csv      closed-loop record
//! run/plot.py             output-trajectory figure
//! run/metrics.toml        error metrics and pass/fail flag
//! ```

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use datasync::certificate::{find, format_matrices, parse_matrices};
use datasync::closedloop::{
    error_system_matrix, error_system_matrix_global, plot_script, run_heterogeneous,
    run_homogeneous, run_homogeneous_global, HeterogeneousStart, NetworkRun,
};
use datasync::datarep::{record_experiment, stacked_rank_check, AgentData};
use datasync::hetero::{
    check_leader_assumption, regulator_model_residuals, solve_regulator, DynamicController,
    LeaderData,
};
use datasync::linalg;
use datasync::lmi::{
    design_distributed_sync, design_global_sync, design_single_stabilizer, verify_hurwitz,
    DistributedDesign, GlobalDesign, StabilizerDesign,
};
use datasync::lti::{min_holds, Trajectory};
use datasync::Error as CoreError;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{InitialMode, Method, Scenario};
use crate::error::{CliError, CliResult};
use crate::seeds::{self, Stream};

/// Directories of one output root.
#[derive(Debug, Clone)]
pub struct OutputDirs {
    pub root: PathBuf,
}

impl OutputDirs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn design(&self) -> PathBuf {
        self.root.join("design")
    }

    pub fn run(&self) -> PathBuf {
        self.root.join("run")
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(&dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(&path.display().to_string(), e))
}

fn read_text(path: &Path, missing: impl FnOnce() -> CliError) -> CliResult<String> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(missing()),
        Err(e) => Err(CliError::io(&path.display().to_string(), e)),
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text =
        toml::to_string(value).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_text(path, &text)
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    traj.write_csv(BufWriter::new(file))
        .map_err(CliError::from_data)
}

fn read_trajectory(path: &Path) -> CliResult<Trajectory> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Trajectory::read_csv(std::io::BufReader::new(file)).map_err(CliError::from_data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEntry {
    pub file: String,
    pub seed: u64,
    pub holds: usize,
    pub required_holds: usize,
    pub pe_rank_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderEntry {
    pub file: String,
    pub seed: u64,
    pub holds: usize,
    pub rank_check: bool,
}

/// Contents of `data/manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub method: Method,
    pub period: f64,
    pub h: f64,
    pub seed: u64,
    pub agents: usize,
    /// Rank of the stacked network data matrix (homogeneous methods).
    pub stacked_rank_check: Option<bool>,
    pub leader: Option<LeaderEntry>,
    #[serde(rename = "experiment")]
    pub experiments: Vec<ExperimentEntry>,
}

/// Data matrices loaded from a collection.
#[derive(Debug, Clone)]
pub struct Collected {
    /// One per agent, or a single shared set for homogeneous methods.
    pub agents: Vec<AgentData>,
    pub leader: Option<LeaderData>,
}

fn experiment_count(sc: &Scenario) -> usize {
    if sc.method().is_homogeneous() {
        1
    } else {
        sc.agents.len()
    }
}

fn experiment_file(sc: &Scenario, i: usize) -> String {
    if sc.method().is_homogeneous() {
        "agent.csv".into()
    } else {
        format!("agent_{}.csv", i + 1)
    }
}

/// Records every experiment, writes the CSVs and the manifest, and fails
/// with a data error when a rank check does not pass.
pub fn collect(sc: &Scenario, dirs: &OutputDirs) -> CliResult<Manifest> {
    let c = &sc.config.collection;
    let dir = dirs.data();
    create_dir(&dir)?;
    let mut experiments = Vec::new();
    let mut shared = None;
    for i in 0..experiment_count(sc) {
        let sys = &sc.agents[i];
        let seed = seeds::derive(c.seed, Stream::AgentData, i as u64);
        let holds = sc.holds(i);
        let traj = record_experiment(sys, c.period, holds, c.h, seed)
            .map_err(|e| CliError::from_data(e).context(&format!("agent {}", i + 1)))?;
        let file = experiment_file(sc, i);
        write_trajectory(&dir.join(&file), &traj)?;
        let data =
            AgentData::from_trajectory(&traj, c.period, holds).map_err(CliError::from_data)?;
        experiments.push(ExperimentEntry {
            file,
            seed,
            holds,
            required_holds: min_holds(sys.m(), sys.n() + 1),
            pe_rank_check: data.pe_rank_check(),
        });
        shared.get_or_insert(data);
    }
    let leader = if sc.method().is_homogeneous() {
        None
    } else {
        let seed = seeds::derive(c.seed, Stream::LeaderData, 0);
        let holds = sc.leader_holds();
        let (traj, data) = LeaderData::record(&sc.leader, c.period, holds, c.h, seed)
            .map_err(|e| CliError::from_data(e).context("leader"))?;
        let file = "leader.csv".to_string();
        write_trajectory(&dir.join(&file), &traj)?;
        Some(LeaderEntry {
            file,
            seed,
            holds,
            rank_check: data.rank_check(),
        })
    };
    let stacked_rank_check = match (sc.method().is_homogeneous(), &shared) {
        (true, Some(data)) => Some(stacked_rank_check(data, &sc.topology)),
        _ => None,
    };
    let manifest = Manifest {
        method: sc.method(),
        period: c.period,
        h: c.h,
        seed: c.seed,
        agents: sc.agents.len(),
        stacked_rank_check,
        leader,
        experiments,
    };
    write_toml(&dir.join("manifest.toml"), &manifest)?;
    if let Some(i) = manifest.experiments.iter().position(|e| !e.pe_rank_check) {
        let sys = &sc.agents[i];
        return Err(CliError::Data(format!(
            "agent {}: [H_T(u); H_T(x(t))] does not reach rank m + n = {}",
            i + 1,
            sys.m() + sys.n()
        )));
    }
    Ok(manifest)
}

/// Reads a collection back and checks it against the scenario.
pub fn load_data(sc: &Scenario, dirs: &OutputDirs) -> CliResult<Collected> {
    let dir = dirs.data();
    let path = dir.join("manifest.toml");
    let text = read_text(&path, || {
        CliError::Data(format!(
            "no collected data in {}; run collect first",
            dir.display()
        ))
    })?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let c = &sc.config.collection;
    let stale = manifest.method != sc.method()
        || manifest.period != c.period
        || manifest.h != c.h
        || manifest.seed != c.seed
        || manifest.agents != sc.agents.len()
        || manifest.experiments.len() != experiment_count(sc)
        || manifest
            .experiments
            .iter()
            .enumerate()
            .any(|(i, e)| e.holds != sc.holds(i))
        || manifest.leader.as_ref().map(|l| l.holds)
            != (!sc.method().is_homogeneous()).then(|| sc.leader_holds());
    if stale {
        return Err(CliError::Data(format!(
            "data in {} were collected with different settings; run collect again",
            dir.display()
        )));
    }
    let agents = manifest
        .experiments
        .iter()
        .map(|e| {
            let traj = read_trajectory(&dir.join(&e.file))?;
            AgentData::from_trajectory(&traj, manifest.period, e.holds).map_err(CliError::from_data)
        })
        .collect::<CliResult<Vec<_>>>()?;
    for (i, (data, sys)) in agents.iter().zip(&sc.agents).enumerate() {
        if (data.n(), data.m(), data.p()) != (sys.n(), sys.m(), sys.p()) {
            return Err(CliError::Data(format!(
                "data of agent {} do not match its model dimensions",
                i + 1
            )));
        }
    }
    let leader = match &manifest.leader {
        Some(l) => {
            let traj = read_trajectory(&dir.join(&l.file))?;
            let data = LeaderData::from_trajectory(&traj, manifest.period, l.holds)
                .map_err(CliError::from_data)?;
            if data.n() != sc.leader.n() {
                return Err(CliError::Data(
                    "leader data do not match the leader model".into(),
                ));
            }
            Some(data)
        }
        None => None,
    };
    Ok(Collected { agents, leader })
}

/// Per-follower result of the heterogeneous design.
#[derive(Debug, Clone)]
pub struct FollowerDesign {
    pub pi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub data_residuals: (f64, f64),
    pub stabilizer: StabilizerDesign,
}

#[derive(Debug, Clone)]
pub enum Design {
    Distributed(DistributedDesign),
    Global(GlobalDesign),
    Heterogeneous(Vec<FollowerDesign>),
}

/// Feedback gains as consumed by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum Gains {
    PerAgent(Vec<DMatrix<f64>>),
    Stacked(DMatrix<f64>),
}

/// Design artifacts read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDesign {
    pub gains: Gains,
    /// `(Π_i, Γ_i)` for the heterogeneous method.
    pub regulators: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>>,
}

fn require_spanning_tree(sc: &Scenario) -> CliResult<()> {
    if !sc
        .topology
        .check_spanning_tree_with_leader()
        .leader_reaches_all
    {
        return Err(CliError::Design(
            "the leader does not reach every agent through the graph".into(),
        ));
    }
    Ok(())
}

pub fn design(sc: &Scenario, data: &Collected) -> CliResult<Design> {
    let opts = sc.config.design.options();
    match sc.method() {
        Method::HomogeneousDistributed => {
            design_distributed_sync(&data.agents[0], &sc.topology, &opts)
                .map(Design::Distributed)
                .map_err(CliError::from_design)
        }
        Method::HomogeneousGlobal => design_global_sync(&data.agents[0], &sc.topology, &opts)
            .map(Design::Global)
            .map_err(CliError::from_design),
        Method::Heterogeneous => {
            require_spanning_tree(sc)?;
            let leader = data
                .leader
                .as_ref()
                .ok_or_else(|| CliError::Data("collection has no leader record".into()))?;
            if !leader.rank_check() {
                return Err(CliError::Data("leader data do not reach rank n0".into()));
            }
            data.agents
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let tag = |e: CoreError| {
                        CliError::from_design(e).context(&format!("agent {}", i + 1))
                    };
                    let reg = solve_regulator(d, leader).map_err(tag)?;
                    let stabilizer = design_single_stabilizer(d, &opts).map_err(tag)?;
                    Ok(FollowerDesign {
                        pi: reg.pi,
                        gamma: reg.gamma,
                        data_residuals: reg.residuals,
                        stabilizer,
                    })
                })
                .collect::<CliResult<Vec<_>>>()
                .map(Design::Heterogeneous)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct AgentAudit {
    agent: usize,
    lmi_margin: f64,
    lyapunov_condition: f64,
    closed_loop_abscissa: f64,
    regulator_state_residual: f64,
    regulator_output_residual: f64,
    regulator_model_state_residual: f64,
    regulator_model_output_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
struct DesignReport {
    method: Method,
    decay_rate: f64,
    norm_bound: f64,
    lmi_margin: Option<f64>,
    equality_residual: Option<f64>,
    lyapunov_condition: Option<f64>,
    /// Spectral abscissa of the synchronization-error matrix, from the models.
    error_system_abscissa: Option<f64>,
    hurwitz: bool,
    leader_on_imaginary_axis: Option<bool>,
    #[serde(rename = "agent", skip_serializing_if = "Vec::is_empty")]
    agents: Vec<AgentAudit>,
}

fn gain_file(i: usize) -> String {
    format!("K_{}.txt", i + 1)
}

/// Writes gains, certificates and the audit report.
pub fn write_design(sc: &Scenario, design: &Design, dirs: &OutputDirs) -> CliResult<()> {
    let dir = dirs.design();
    create_dir(&dir)?;
    let cfg = &sc.config.design;
    let mut report = DesignReport {
        method: sc.method(),
        decay_rate: cfg.decay_rate,
        norm_bound: cfg.norm_bound,
        lmi_margin: None,
        equality_residual: None,
        lyapunov_condition: None,
        error_system_abscissa: None,
        hurwitz: false,
        leader_on_imaginary_axis: None,
        agents: Vec::new(),
    };
    match design {
        Design::Distributed(d) => {
            for (i, k) in d.gains.iter().enumerate() {
                let name = format!("K_{}", i + 1);
                write_text(&dir.join(gain_file(i)), &format_matrices(&[(&name, k)]))?;
            }
            let names: Vec<(String, String)> = (1..=d.gains.len())
                .map(|i| (format!("P_{i}"), format!("F_{i}")))
                .collect();
            let mut blocks: Vec<(&str, &DMatrix<f64>)> = vec![("Lambda", &d.certificate.lambda)];
            for (i, (p, f)) in names.iter().enumerate() {
                blocks.push((p, &d.certificate.p_blocks[i]));
                blocks.push((f, &d.certificate.f_blocks[i]));
            }
            write_text(&dir.join("certificate.txt"), &format_matrices(&blocks))?;
            let (ok, abscissa) =
                verify_hurwitz(&error_system_matrix(&sc.agents[0], &sc.topology, &d.gains));
            report.lmi_margin = Some(d.certificate.margin);
            report.equality_residual = Some(d.certificate.equality_residual);
            report.lyapunov_condition = Some(d.condition);
            report.error_system_abscissa = Some(abscissa);
            report.hurwitz = ok;
        }
        Design::Global(d) => {
            write_text(&dir.join("K.txt"), &format_matrices(&[("K", &d.gain)]))?;
            write_text(
                &dir.join("certificate.txt"),
                &format_matrices(&[("Lambda", &d.lambda), ("P", &d.lyapunov)]),
            )?;
            let (ok, abscissa) = verify_hurwitz(&error_system_matrix_global(
                &sc.agents[0],
                &sc.topology,
                &d.gain,
            ));
            report.lmi_margin = Some(d.margin);
            report.lyapunov_condition = Some(d.condition);
            report.error_system_abscissa = Some(abscissa);
            report.hurwitz = ok;
        }
        Design::Heterogeneous(followers) => {
            let mut cert = String::new();
            let mut all_ok = true;
            for (i, f) in followers.iter().enumerate() {
                let idx = i + 1;
                let k = &f.stabilizer.gain;
                write_text(
                    &dir.join(gain_file(i)),
                    &format_matrices(&[(&format!("K_{idx}"), k)]),
                )?;
                write_text(
                    &dir.join(format!("Pi_{idx}.txt")),
                    &format_matrices(&[(&format!("Pi_{idx}"), &f.pi)]),
                )?;
                write_text(
                    &dir.join(format!("Gamma_{idx}.txt")),
                    &format_matrices(&[(&format!("Gamma_{idx}"), &f.gamma)]),
                )?;
                cert.push_str(&format_matrices(&[
                    (&format!("Lambda_{idx}"), &f.stabilizer.lambda),
                    (&format!("P_{idx}"), &f.stabilizer.lyapunov),
                ]));
                let sys = &sc.agents[i];
                let (ok, abscissa) = verify_hurwitz(&(sys.a() - sys.b() * k));
                all_ok &= ok;
                let model = regulator_model_residuals(&f.pi, &f.gamma, sys, &sc.leader);
                report.agents.push(AgentAudit {
                    agent: idx,
                    lmi_margin: f.stabilizer.margin,
                    lyapunov_condition: f.stabilizer.condition,
                    closed_loop_abscissa: abscissa,
                    regulator_state_residual: f.data_residuals.0,
                    regulator_output_residual: f.data_residuals.1,
                    regulator_model_state_residual: model.0,
                    regulator_model_output_residual: model.1,
                });
            }
            write_text(&dir.join("certificate.txt"), &cert)?;
            report.hurwitz = all_ok;
            report.leader_on_imaginary_axis = Some(check_leader_assumption(sc.leader.a()));
        }
    }
    write_toml(&dir.join("report.toml"), &report)
}

fn read_block(path: &Path, name: &str) -> CliResult<DMatrix<f64>> {
    let text = read_text(path, || {
        CliError::Data(format!("{} is missing; run design first", path.display()))
    })?;
    let blocks =
        parse_matrices(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    find(&blocks, name)
        .cloned()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn check_shape(name: &str, m: &DMatrix<f64>, shape: (usize, usize)) -> CliResult<()> {
    if m.shape() != shape {
        return Err(CliError::Data(format!(
            "{name} is {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

/// Reads gains and regulator solutions written by [`write_design`].
pub fn load_design(sc: &Scenario, dirs: &OutputDirs) -> CliResult<StoredDesign> {
    let dir = dirs.design();
    let agents = sc.agents.len();
    let per_agent = || -> CliResult<Vec<DMatrix<f64>>> {
        (0..agents)
            .map(|i| {
                let name = format!("K_{}", i + 1);
                let k = read_block(&dir.join(gain_file(i)), &name)?;
                check_shape(&name, &k, (sc.agents[i].m(), sc.agents[i].n()))?;
                Ok(k)
            })
            .collect()
    };
    Ok(match sc.method() {
        Method::HomogeneousDistributed => StoredDesign {
            gains: Gains::PerAgent(per_agent()?),
            regulators: None,
        },
        Method::HomogeneousGlobal => {
            let k = read_block(&dir.join("K.txt"), "K")?;
            let sys = &sc.agents[0];
            check_shape("K", &k, (sys.m() * agents, sys.n() * agents))?;
            StoredDesign {
                gains: Gains::Stacked(k),
                regulators: None,
            }
        }
        Method::Heterogeneous => {
            let gains = per_agent()?;
            let regulators = (1..=agents)
                .map(|i| {
                    let sys = &sc.agents[i - 1];
                    let pi = read_block(&dir.join(format!("Pi_{i}.txt")), &format!("Pi_{i}"))?;
                    let gamma =
                        read_block(&dir.join(format!("Gamma_{i}.txt")), &format!("Gamma_{i}"))?;
                    check_shape("Pi", &pi, (sys.n(), sc.leader.n()))?;
                    check_shape("Gamma", &gamma, (sys.m(), sc.leader.n()))?;
                    Ok((pi, gamma))
                })
                .collect::<CliResult<Vec<_>>>()?;
            StoredDesign {
                gains: Gains::PerAgent(gains),
                regulators: Some(regulators),
            }
        }
    })
}

/// Contents of `run/metrics.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub method: Method,
    pub duration: f64,
    pub h: f64,
    pub initial: InitialMode,
    pub gain_scale: f64,
    /// Norm of the stacked `δ` (homogeneous) or `max_i |y_i - y0|`
    /// (heterogeneous) at `t = 0`.
    pub initial_error: f64,
    pub final_error: f64,
    pub peak_error: f64,
    pub settling_time: Option<f64>,
    pub check_from: f64,
    /// Largest error at or after `check_from`.
    pub window_error: f64,
    pub tolerance: f64,
    /// Relative to `initial_error` for homogeneous methods.
    pub relative_tolerance: bool,
    pub converged: bool,
    pub derivative_mismatch: Option<f64>,
    pub max_boundary_jump: Option<f64>,
}

fn random_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))
}

/// Runs the closed loop with stored gains.
pub fn run(sc: &Scenario, data: &Collected, design: &StoredDesign) -> CliResult<NetworkRun> {
    let sim = &sc.config.simulation;
    let scale = sim.gain_scale;
    let (duration, h) = (sc.duration(), sc.sim_step());
    let mut rng = seeds::initial_state_rng(sc.config.collection.seed);
    let leader0 = random_vector(&mut rng, sc.leader.n());
    let synced = sim.initial == InitialMode::Synchronized;
    match (&design.gains, &design.regulators) {
        (gains, None) => {
            let sys = &sc.agents[0];
            let initial: Vec<DVector<f64>> = (0..sc.agents.len())
                .map(|_| {
                    let x = random_vector(&mut rng, sys.n());
                    if synced {
                        leader0.clone()
                    } else {
                        x
                    }
                })
                .collect();
            match gains {
                Gains::PerAgent(ks) => {
                    let ks: Vec<DMatrix<f64>> = ks.iter().map(|k| k * scale).collect();
                    run_homogeneous(sys, &sc.topology, &ks, &initial, &leader0, duration, h)
                }
                Gains::Stacked(k) => run_homogeneous_global(
                    sys,
                    &sc.topology,
                    &(k * scale),
                    &initial,
                    &leader0,
                    duration,
                    h,
                ),
            }
            .map_err(CliError::from_simulation)
        }
        (Gains::PerAgent(ks), Some(regs)) => {
            let leader = data
                .leader
                .as_ref()
                .ok_or_else(|| CliError::Data("collection has no leader record".into()))?;
            let mut controllers = Vec::with_capacity(ks.len());
            let mut agents = Vec::with_capacity(ks.len());
            for (i, (k, (pi, gamma))) in ks.iter().zip(regs).enumerate() {
                let zeta = random_vector(&mut rng, sc.leader.n());
                let x = random_vector(&mut rng, sc.agents[i].n());
                let (zeta, x) = if synced {
                    (leader0.clone(), pi * &leader0)
                } else {
                    (zeta, x)
                };
                controllers.push(
                    DynamicController::new(k * scale, pi.clone(), gamma.clone(), zeta, leader)
                        .map_err(|e| {
                            CliError::from_simulation(e).context(&format!("agent {}", i + 1))
                        })?,
                );
                agents.push(x);
            }
            let start = HeterogeneousStart {
                agents,
                leader: leader0,
            };
            run_heterogeneous(
                &sc.agents,
                &sc.leader,
                leader,
                &sc.topology,
                &mut controllers,
                &start,
                duration,
                h,
            )
            .map_err(CliError::from_simulation)
        }
        (Gains::Stacked(_), Some(_)) => Err(CliError::Data(
            "a stacked gain cannot drive heterogeneous followers".into(),
        )),
    }
}

pub fn metrics(sc: &Scenario, run: &NetworkRun) -> Metrics {
    let sim = &sc.config.simulation;
    let duration = run.time(run.len() - 1);
    let check_from = sim.check_from.unwrap_or(duration).min(duration);
    let window_error = run.max_error_after(check_from);
    let tolerance = sc.tolerance();
    let relative = sc.method().is_homogeneous();
    let bound = if relative {
        tolerance * run.metrics.initial_error
    } else {
        tolerance
    };
    Metrics {
        method: sc.method(),
        duration,
        h: run.h,
        initial: sim.initial,
        gain_scale: sim.gain_scale,
        initial_error: run.metrics.initial_error,
        final_error: run.metrics.final_error,
        peak_error: run.metrics.peak_error,
        settling_time: run.metrics.settling_time,
        check_from,
        window_error,
        tolerance,
        relative_tolerance: relative,
        converged: window_error.is_finite() && window_error <= bound,
        derivative_mismatch: run.derivative_mismatch,
        max_boundary_jump: (!run.boundary_jumps.is_empty())
            .then(|| run.boundary_jumps.iter().copied().fold(0.0, f64::max)),
    }
}

/// Writes the trajectory CSV, the plot script and the metrics.
pub fn write_run(sc: &Scenario, run: &NetworkRun, dirs: &OutputDirs) -> CliResult<Metrics> {
    let dir = dirs.run();
    create_dir(&dir)?;
    let path = dir.join("trajectory.csv");
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path.display().to_string(), e))?;
    run.write_csv(BufWriter::new(file), sc.config.simulation.csv_stride.max(1))
        .map_err(|e| match e {
            CoreError::Io(e) => CliError::io(&path.display().to_string(), e),
            e => CliError::Io(format!("{}: {e}", path.display())),
        })?;
    write_text(
        &dir.join("plot.py"),
        &plot_script("trajectory.csv", sc.agents.len(), "outputs.png"),
    )?;
    let m = metrics(sc, run);
    write_toml(&dir.join("metrics.toml"), &m)?;
    Ok(m)
}

pub fn cmd_collect(sc: &Scenario, dirs: &OutputDirs) -> CliResult<Manifest> {
    collect(sc, dirs)
}

pub fn cmd_design(sc: &Scenario, dirs: &OutputDirs) -> CliResult<Design> {
    let data = load_data(sc, dirs)?;
    let d = design(sc, &data)?;
    write_design(sc, &d, dirs)?;
    Ok(d)
}

pub fn cmd_simulate(sc: &Scenario, dirs: &OutputDirs) -> CliResult<Metrics> {
    let data = load_data(sc, dirs)?;
    let stored = load_design(sc, dirs)?;
    let r = run(sc, &data, &stored)?;
    write_run(sc, &r, dirs)
}

/// Outcome of a full collect, design and simulate pass.
#[derive(Debug, Clone)]
pub struct ReproSummary {
    pub metrics: Metrics,
    /// Eigenvalues of the leader state matrix, when checked.
    pub leader_eigenvalues: Option<Vec<(f64, f64)>>,
    pub leader_on_imaginary_axis: Option<bool>,
}

impl ReproSummary {
    pub fn passed(&self) -> bool {
        self.metrics.converged && self.leader_on_imaginary_axis != Some(false)
    }
}

pub fn cmd_repro(sc: &Scenario, dirs: &OutputDirs, check_leader: bool) -> CliResult<ReproSummary> {
    let (leader_eigenvalues, leader_on_imaginary_axis) = if check_leader {
        let eig = linalg::eigenvalues(sc.leader.a());
        (
            Some(eig.iter().map(|l| (l.re, l.im)).collect()),
            Some(check_leader_assumption(sc.leader.a())),
        )
    } else {
        (None, None)
    };
    cmd_collect(sc, dirs)?;
    cmd_design(sc, dirs)?;
    let metrics = cmd_simulate(sc, dirs)?;
    Ok(ReproSummary {
        metrics,
        leader_eigenvalues,
        leader_on_imaginary_axis,
    })
}
