//! `thermotwin`: simulate, match, serve the emulated plant, run the live twin
//! and compare runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use thermotwin_core::config::ConfigFile;
use thermotwin_core::matching::ga_optimize;
use thermotwin_core::presets::Preset;
use thermotwin_core::sim::simulate;
use thermotwin_core::storage::{self, GaReport};
use thermotwin_core::DivergenceReport;
use thermotwin_runtime::{ApiContext, ApiServer, PlantOptions, PlantServer, SessionConfig, TwinSession};

#[derive(Parser)]
#[command(name = "thermotwin", version, about = "Digital twin of a PID-controlled Peltier plant")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed-loop scenario and write its RunLog.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit twin parameters to a recorded run.
    Match {
        config: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        generations: Option<usize>,
    },
    /// Serve the emulated plant over TCP.
    ServePlant {
        config: PathBuf,
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the plant's ground-truth RunLog here on exit.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Shadow a plant with the twin and serve the operator API.
    RunTwin {
        config: PathBuf,
        #[arg(long)]
        connect: Option<String>,
        #[arg(long)]
        api: Option<String>,
        /// Seed for matches triggered through the API.
        #[arg(long)]
        seed: Option<u64>,
        /// Twin parameters from a `match` result instead of the config.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        plant_log: Option<PathBuf>,
        #[arg(long)]
        twin_log: Option<PathBuf>,
    },
    /// Compare two RunLogs on the same time grid.
    Report {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        twin: PathBuf,
    },
    /// Print the named parameter sets.
    Presets,
}

fn load(path: &Path) -> Result<ConfigFile> {
    Ok(ConfigFile::load(path)?)
}

fn cmd_simulate(config: &Path, output: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    let run = simulate(&cfg.scenario)?;
    storage::write_runlog(&run, output).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {} samples to {}", run.len(), output.display());
    Ok(())
}

fn cmd_match(
    config: &Path,
    reference: &Path,
    output: &Path,
    seed: Option<u64>,
    generations: Option<usize>,
) -> Result<()> {
    let cfg = load(config)?;
    let mut ga = cfg.ga.clone();
    if let Some(s) = seed {
        ga.seed = s;
    }
    if let Some(g) = generations {
        ga.generations = g;
    }
    let run = storage::read_runlog(reference).with_context(|| format!("reading {}", reference.display()))?;
    let mut model = cfg.scenario.twin_model();
    model.params = cfg.twin.params;
    let result = ga_optimize(&run, &cfg.bounds, &ga, &model)?;
    println!("{}", serde_json::to_string(&result.best)?);
    println!("best cost {} after {} evaluations", result.best_cost, result.evaluations);
    let report = GaReport {
        seed: ga.seed,
        config: ga,
        bounds: cfg.bounds,
        result,
    };
    storage::write_ga_report(&report, output).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}

async fn cmd_serve_plant(config: &Path, listen: Option<String>, seed: Option<u64>, log: Option<PathBuf>) -> Result<()> {
    let cfg = load(config)?;
    let mut truth = cfg.plant.truth(&cfg.scenario);
    if let Some(s) = seed {
        truth.seed = s;
    }
    let addr = listen.unwrap_or(cfg.endpoints.plant.clone());
    let plant = PlantServer::bind(truth, cfg.scenario.clone(), PlantOptions::from(&cfg.plant), &addr).await?;
    println!("plant listening on {}", plant.local_addr());
    tokio::select! {
        _ = plant.wait_finished() => info!("run finished"),
        _ = tokio::signal::ctrl_c() => info!("interrupted"),
    }
    let stats = plant.stats();
    let run = plant.shutdown().await?;
    println!(
        "served {} ticks, {} dropped messages, {} clock overruns",
        stats.ticks, stats.dropped_messages, stats.overruns
    );
    if let Some(path) = log {
        if run.is_empty() {
            bail!("plant produced no samples; nothing written to {}", path.display());
        }
        storage::write_runlog(&run, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

async fn cmd_run_twin(
    config: &Path,
    connect: Option<String>,
    api: Option<String>,
    seed: Option<u64>,
    params: Option<PathBuf>,
    plant_log: Option<PathBuf>,
    twin_log: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.ga.seed = s;
    }
    let mut model = cfg.scenario.twin_model();
    model.params = cfg.twin.params;
    if let Some(p) = params {
        model.params = storage::read_ga_report(&p)
            .with_context(|| format!("reading {}", p.display()))?
            .result
            .best;
    }
    let endpoint = connect.unwrap_or(cfg.endpoints.plant.clone());
    let mut sc = SessionConfig::new(endpoint, model);
    sc.mode = cfg.twin.mode;
    sc.telemetry_timeout = Duration::from_secs_f64(cfg.twin.telemetry_timeout);
    let session = TwinSession::connect(sc).await?;
    let ctx = ApiContext::new(session.clone(), cfg.scenario.clone(), cfg.bounds, cfg.ga.clone());
    let server = ApiServer::bind(ctx, &api.unwrap_or(cfg.endpoints.api.clone())).await?;
    println!("operator API on http://{}", server.local_addr());

    tokio::select! {
        _ = session.finished() => {}
        _ = tokio::signal::ctrl_c() => info!("interrupted"),
    }
    let outcome = session.stop().await;
    server.shutdown().await?;
    let snapshot = session.snapshot();
    if let Some(fault) = &snapshot.fault {
        eprintln!("session faulted: {fault}");
    }
    let report = outcome?;
    for (path, run) in [(plant_log, session.plant_log()), (twin_log, session.twin_log())] {
        if let Some(path) = path {
            storage::write_runlog(&run, &path).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    if snapshot.fault.is_some() {
        bail!("session ended in fault after {} samples", snapshot.samples);
    }
    Ok(())
}

fn cmd_report(plant: &Path, twin: &Path) -> Result<()> {
    let a = storage::read_runlog(plant).with_context(|| format!("reading {}", plant.display()))?;
    let b = storage::read_runlog(twin).with_context(|| format!("reading {}", twin.display()))?;
    let r = DivergenceReport::between(&a, &b)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn trim(x: f64) -> String {
    format!("{}", (x * 1e6).round() / 1e6)
}

fn cmd_presets() {
    println!("{:<12} {:>12} {:>10} {:>14} {:>14}", "name", "alpha", "R", "K", "C");
    for p in Preset::ALL {
        let v = p.params();
        println!(
            "{:<12} {:>12} {:>10} {:>14} {:>14}",
            p.name(),
            format!("α={} mV", trim(v.alpha * 1e3)),
            format!("R={} Ω", trim(v.r)),
            format!("K={} W/K", trim(v.k)),
            format!("C={} J/K", trim(v.c)),
        );
    }
}

async fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, output, seed } => cmd_simulate(&config, &output, seed),
        Command::Match {
            config,
            reference,
            output,
            seed,
            generations,
        } => cmd_match(&config, &reference, &output, seed, generations),
        Command::ServePlant { config, listen, seed, log } => cmd_serve_plant(&config, listen, seed, log).await,
        Command::RunTwin {
            config,
            connect,
            api,
            seed,
            params,
            plant_log,
            twin_log,
        } => cmd_run_twin(&config, connect, api, seed, params, plant_log, twin_log).await,
        Command::Report { plant, twin } => cmd_report(&plant, &twin),
        Command::Presets => {
            cmd_presets();
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
