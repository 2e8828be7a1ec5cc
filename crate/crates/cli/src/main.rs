use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aclsim_core::experiments::{
    describe, registered, registered_scenarios, write_outputs, Runner, Scenario, ScenarioKind,
    ScenarioResult, DESK_ENV_DIM, FULL_ENV_DIM,
};
use aclsim_core::Error;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aclsim",
    version,
    about = "Exact-diagonalization runs of the oscillator and qubit decoherence models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a registered scenario or a scenario file.
    Run {
        /// Registered scenario name (optional with --config).
        scenario: Option<String>,
        /// Scenario file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// List registered scenarios.
    List,
    /// Write spectra and histograms of H_s, H_e and H_w.
    Spectrum {
        /// Histogram bins.
        #[arg(long, default_value_t = 60)]
        bins: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Long-time run with numerical breakdown detection.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory (default: out/<scenario>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Environment dimension.
    #[arg(long, conflicts_with = "paper_scale")]
    ne: Option<usize>,
    /// Seed of the environment self-Hamiltonian.
    #[arg(long)]
    seed_env: Option<u64>,
    /// Seed of the interaction matrix.
    #[arg(long)]
    seed_int: Option<u64>,
    /// Use the 600-state environment.
    #[arg(long)]
    paper_scale: bool,
}

impl Common {
    fn env_dim(&self) -> Option<usize> {
        self.ne.or(self.paper_scale.then_some(FULL_ENV_DIM))
    }

    fn apply(&self, scenario: &mut Scenario) {
        if let Some(n_e) = self.env_dim() {
            scenario.set_env_dim(n_e);
        }
        scenario.set_seeds(self.seed_int, self.seed_env);
        if let Some(out) = &self.out {
            scenario.output_dir = Some(out.clone());
        }
    }
}

fn load(name: Option<&str>, config: Option<&Path>, common: &Common) -> Result<Scenario> {
    let mut scenario = match (name, config) {
        (_, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(Error::from)
                .with_context(|| format!("reading {}", path.display()))?;
            let s = Scenario::from_toml(&text)?;
            if let Some(name) = name {
                if name != s.name {
                    return Err(Error::InvalidParameter(format!(
                        "scenario `{name}` given but {} describes `{}`",
                        path.display(),
                        s.name
                    ))
                    .into());
                }
            }
            s
        }
        (Some(name), None) => registered(name, DESK_ENV_DIM)?,
        (None, None) => {
            return Err(Error::InvalidParameter("give a scenario name or --config".into()).into())
        }
    };
    common.apply(&mut scenario);
    scenario.validate()?;
    Ok(scenario)
}

fn execute(scenario: &Scenario) -> Result<(ScenarioResult, PathBuf)> {
    let out = scenario
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    let result = Runner::new().run(scenario)?;
    let files = write_outputs(&result, &out)?;
    println!(
        "{}: {} case(s), {} file(s) in {} ({:.1} s)",
        scenario.name,
        result.cases.len(),
        files.len(),
        out.display(),
        result.wall_seconds
    );
    Ok((result, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::List => {
            for name in registered_scenarios() {
                println!("{name:<22} {}", describe(name).unwrap_or(""));
            }
        }
        Command::Run {
            scenario,
            config,
            common,
        } => {
            let scenario = load(scenario.as_deref(), config.as_deref(), &common)?;
            execute(&scenario)?;
        }
        Command::Spectrum { bins, common } => {
            let mut scenario = load(Some("spectra"), None, &common)?;
            if bins == 0 {
                bail!(Error::InvalidParameter("--bins must be >= 1".into()));
            }
            scenario.bins = bins;
            execute(&scenario)?;
        }
        Command::Validate { common } => {
            let scenario = load(Some("validate_numerics"), None, &common)?;
            debug_assert_eq!(scenario.kind, ScenarioKind::Validation);
            let (result, _) = execute(&scenario)?;
            for case in &result.cases {
                let Some(report) = &case.validation else {
                    continue;
                };
                println!(
                    "{}: max|E| = {:.4}, predicted horizon = {:.3e}",
                    case.label, report.max_abs_energy, report.predicted_horizon
                );
                match report.first_flagged() {
                    Some(s) => println!(
                        "  first breakdown flag at t = {:.3e} ({}), ratio to horizon {:.3}",
                        s.t,
                        s.flags.join(", "),
                        s.t / report.predicted_horizon
                    ),
                    None => println!("  no breakdown flags on this grid"),
                }
            }
        }
    }
    Ok(())
}

/// 1 for configuration errors, 2 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_)) => 1,
        Some(e) if e.is_config_error() => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
