use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sag_twin::io::{read_records_file, RecordStream};
use sag_twin::scenario::{hardness_scenario, wear_scenario, HARDNESS_ONSET};
use sag_twin_cli::run::{cmd_run, RunSession, RunSummary};
use sag_twin_cli::{
    cmd_apply, cmd_generate, cmd_ingest, cmd_report, cmd_train, load_models, write_scenario, CliError, Overrides,
    RunConfig,
};

/// Closed-loop SAG mill digital twin with drift-triggered retraining.
///
/// Every global flag can also be set through an environment variable with
/// the SAGTWIN_ prefix (SAGTWIN_CONFIG, SAGTWIN_SEED, SAGTWIN_HORIZON,
/// SAGTWIN_SCENARIO, SAGTWIN_SUPERVISOR). Flags beat environment variables,
/// which beat the config file.
#[derive(Parser)]
#[command(name = "sagtwin", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true, env = "SAGTWIN_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, env = "SAGTWIN_SEED")]
    seed: Option<u64>,
    /// Prediction horizon N in samples (instants k..k+N are predicted).
    #[arg(long, global = true, env = "SAGTWIN_HORIZON")]
    horizon: Option<usize>,
    /// Disturbance scenario file applied to incoming CVs.
    #[arg(long, global = true, env = "SAGTWIN_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Choose the operating limits with the supervisor at every sample.
    #[arg(long, global = true, env = "SAGTWIN_SUPERVISOR")]
    supervisor: Option<Switch>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, downsample and split a raw 5 s record file.
    Ingest {
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify the regulatory model and train the NARX model.
    Train {
        dataset: PathBuf,
        #[arg(long)]
        models: PathBuf,
    },
    /// Run the twin and the drift detector sample by sample.
    Run {
        /// Conditioned dataset; omit with --live.
        dataset: Option<PathBuf>,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Read records from stdin as they arrive.
        #[arg(long, conflicts_with = "dataset")]
        live: bool,
    },
    /// Score a prediction trace against its dataset.
    Report {
        dataset: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic data and disturbance scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Simulate the synthetic plant in closed loop.
    Generate {
        #[arg(long)]
        steps: usize,
        /// Seed of this series (the plant seed is --seed).
        #[arg(long, default_value_t = 1)]
        series_seed: u64,
        /// Split the series into this many runs separated by mill stops.
        #[arg(long, default_value_t = 1)]
        segments: usize,
        /// Write at the raw 5 s period.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the --scenario file to a dataset.
    Apply {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a liner wear scenario.
    Wear {
        #[arg(long)]
        months: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an ore hardness scenario.
    Hardness {
        #[arg(long, default_value_t = 0.1)]
        increase: f64,
        #[arg(long, default_value_t = HARDNESS_ONSET)]
        onset: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_run(s: &RunSummary) {
    println!("samples {} predictions {}", s.samples, s.predictions);
    for (k, cv) in &s.triggers {
        println!("trigger k={k} cv={}", cv + 1);
    }
    for k in &s.retrains {
        println!("retrained k={k}");
    }
    if let Some(r) = &s.report {
        for g in &r.gate {
            println!(
                "gate cv={} [{:+.4}, {:+.4}] band {:.4} {}",
                g.cv + 1,
                g.lower,
                g.upper,
                g.band,
                if g.pass { "pass" } else { "fail" }
            );
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let base = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        seed: g.seed,
        horizon: g.horizon,
        scenario: g.scenario.clone(),
        supervisor: g.supervisor.map(|s| matches!(s, Switch::On)),
    };
    let cfg = base.with_overrides(&overrides)?;
    match cli.command {
        Command::Ingest { raw, out } => {
            let s = cmd_ingest(&raw, &out, &cfg)?;
            println!("segments {} train {} test {}", s.segments, s.train_len, s.test_len);
        }
        Command::Train { dataset, models } => {
            let r = cmd_train(&dataset, &models, &cfg)?;
            for c in &r.order_costs {
                println!("{} cost {:.6e}", c.candidate, c.cost);
            }
            for c in &r.structure_costs {
                println!("{} validation mse {:.6e}", c.candidate, c.cost);
            }
            println!("order {} lags {} width {}", r.order, r.lags, r.hidden_width);
            println!("narx cost {:.6e} (constant predictor {:.6e})", r.narx_cost, r.constant_cost);
        }
        Command::Run { dataset, models, out, live } => {
            let models = load_models(&models)?;
            let summary = if live {
                let mut session = RunSession::new(models, &cfg, &out)?;
                for r in RecordStream::new(std::io::stdin().lock())? {
                    session.push(r?)?;
                    session.flush()?;
                }
                session.finish()?
            } else {
                let path = dataset.ok_or_else(|| CliError::Config("run needs a dataset or --live".into()))?;
                cmd_run(&read_records_file(&path)?, models, &cfg, &out)?
            };
            print_run(&summary);
        }
        Command::Report { dataset, trace, out } => {
            let r = cmd_report(&dataset, &trace, &out, &cfg)?;
            for s in &r.stats {
                println!("h{} cv{} mean {:+.3e} std {:.3e}", s.horizon, s.cv + 1, s.mean, s.std);
            }
        }
        Command::Scenario(sc) => match sc {
            ScenarioCommand::Generate { steps, series_seed, segments, raw, out } => {
                let n = cmd_generate(&out, steps, series_seed, segments, raw, &cfg)?;
                println!("wrote {n} records to {}", out.display());
            }
            ScenarioCommand::Apply { input, out } => {
                let n = cmd_apply(&input, &out, &cfg.scenario()?)?;
                println!("wrote {n} records to {}", out.display());
            }
            ScenarioCommand::Wear { months, out } => write_scenario(&out, &wear_scenario(months))?,
            ScenarioCommand::Hardness { increase, onset, out } => {
                write_scenario(&out, &hardness_scenario(increase, onset))?
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
