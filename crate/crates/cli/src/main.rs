use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use datasync_cli::commands::{self, OutputDirs};
use datasync_cli::config::{reference_config, Scenario, ScenarioConfig};
use datasync_cli::{CliError, CliResult};

const DEFAULT_OUT: &str = "datasync-out";

/// Data-driven synchronization of linear multiagent systems.
///
/// Exit codes: 0 success, 1 configuration or usage, 2 data, 3 i/o,
/// 4 design, 5 simulation.
#[derive(Debug, Parser)]
#[command(name = "datasync", version)]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root; overrides the scenario's `output` entry.
    #[arg(long, global = true, env = "DATASYNC_OUT")]
    out: Option<PathBuf>,
    /// Base seed for data collection and initial conditions.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Integration step of the data-collection runs.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Closed-loop simulation horizon in seconds.
    #[arg(long, global = true)]
    duration: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record PCPE experiments and write data CSVs with a manifest.
    Collect,
    /// Synthesize gains (and regulator solutions) from collected data.
    Design,
    /// Simulate the closed loop with stored gains.
    Simulate,
    /// Collect, design and simulate the built-in reference network (or the
    /// given scenario) and print a pass/fail summary.
    Repro {
        /// Confirm that the leader's eigenvalues lie on the imaginary axis.
        #[arg(long)]
        check_leader: bool,
    },
}

impl Cli {
    fn scenario(&self, fallback: Option<ScenarioConfig>) -> CliResult<Scenario> {
        let mut config = match (&self.config, fallback) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                datasync_cli::config::parse_config(&text)?
            }
            (None, Some(c)) => c,
            (None, None) => return Err(CliError::Config("--config is required".into())),
        };
        if let Some(seed) = self.seed {
            config.collection.seed = seed;
        }
        if let Some(h) = self.h {
            config.collection.h = h;
        }
        if let Some(d) = self.duration {
            config.simulation.duration = Some(d);
        }
        Scenario::new(config)
    }

    fn dirs(&self, sc: &Scenario) -> OutputDirs {
        let root = self
            .out
            .clone()
            .or_else(|| sc.config.output.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        OutputDirs::new(root)
    }
}

fn execute(cli: &Cli) -> CliResult<bool> {
    match &cli.command {
        Command::Collect => {
            let sc = cli.scenario(None)?;
            let dirs = cli.dirs(&sc);
            let m = commands::cmd_collect(&sc, &dirs)?;
            println!(
                "collected {} experiment(s) into {}",
                m.experiments.len(),
                dirs.data().display()
            );
            if m.stacked_rank_check == Some(false) {
                println!("warning: the stacked network data matrix is rank deficient");
            }
            Ok(true)
        }
        Command::Design => {
            let sc = cli.scenario(None)?;
            let dirs = cli.dirs(&sc);
            commands::cmd_design(&sc, &dirs)?;
            println!("design written to {}", dirs.design().display());
            Ok(true)
        }
        Command::Simulate => {
            let sc = cli.scenario(None)?;
            let dirs = cli.dirs(&sc);
            let m = commands::cmd_simulate(&sc, &dirs)?;
            println!(
                "final error {:.3e}, window error {:.3e}, converged {}",
                m.final_error, m.window_error, m.converged
            );
            Ok(true)
        }
        Command::Repro { check_leader } => {
            let seed = cli.seed.unwrap_or(0);
            let sc = cli.scenario(Some(reference_config(seed)))?;
            let dirs = cli.dirs(&sc);
            let s = commands::cmd_repro(&sc, &dirs, *check_leader)?;
            if let (Some(eig), Some(ok)) = (&s.leader_eigenvalues, s.leader_on_imaginary_axis) {
                let list: Vec<String> = eig
                    .iter()
                    .map(|(re, im)| format!("{re:+.3e}{im:+.3e}i"))
                    .collect();
                println!(
                    "{} leader eigenvalues on the imaginary axis: {}",
                    if ok { "PASS" } else { "FAIL" },
                    list.join(", ")
                );
            }
            let m = &s.metrics;
            println!(
                "{} max output error over [{}, {}] s = {:.3e} (tolerance {:.0e})",
                if m.converged { "PASS" } else { "FAIL" },
                m.check_from,
                m.duration,
                m.window_error,
                m.tolerance
            );
            println!("artifacts in {}", dirs.root.display());
            Ok(s.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(CliError::Simulation(String::new()).exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
