//! `regionsim` command-line driver.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use artifacts::Run;
use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "regionsim", version, about = "Region-graph adversary simulator and responder-robot policy toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true, env = "REGIONSIM_CONFIG")]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for rollouts (0 = all cores, 1 = sequential).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert tick traces or visit files into a corpus.
    Ingest {
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Tick-level trace CSVs.
        #[arg(long, num_args = 1..)]
        ticks: Vec<PathBuf>,
        /// Visit-level CSVs.
        #[arg(long, num_args = 1..)]
        visits: Vec<PathBuf>,
        /// `baseline` or `robot`.
        #[arg(long)]
        condition: Option<String>,
    },
    /// Generate synthetic corpora from the planted school world.
    Synth {
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        robot_episodes: Option<usize>,
    },
    /// Train the graph scorer for adversary transitions.
    TrainTransition {
        /// Comma-separated feature names.
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
    },
    /// Greedy forward feature selection.
    SelectFeatures {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Pool outcome moments into an event model.
    FitEvents {
        /// e.g. `region-sampling`, `group-means`.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        n_min: Option<usize>,
    },
    /// Fit robot effect slopes, calibrating the decay constant unless fixed.
    FitEffects {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Roll out a robot policy against the no-robot baseline.
    Simulate {
        /// `no-robots`, `stay`, `low-impact`, `high-impact`, `pursue` or `ddqn`.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, conflicts_with = "single_floor")]
        multi_floor: bool,
        #[arg(long)]
        single_floor: bool,
        /// Override the fitted event-model variant.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Compare generated and observed episodes per event-model variant.
    Evaluate {
        /// Variant name, repeatable; `all` for the nine combinations.
        #[arg(long)]
        variant: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Also run the cross-validated transition model comparison.
        #[arg(long)]
        models: bool,
    },
    /// Train the DDQN robot policy.
    TrainPolicy {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Collect tables from earlier commands into a markdown report.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Synth { .. } => "synth",
            Command::TrainTransition { .. } => "train-transition",
            Command::SelectFeatures { .. } => "select-features",
            Command::FitEvents { .. } => "fit-events",
            Command::FitEffects { .. } => "fit-effects",
            Command::Simulate { .. } => "simulate",
            Command::Evaluate { .. } => "evaluate",
            Command::TrainPolicy { .. } => "train-policy",
            Command::Report => "report",
        }
    }
}

fn absolute(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

/// Fold command-line flags into the loaded configuration.
fn apply_flags(cfg: &mut RunConfig, g: &Global, cmd: &Command) {
    if let Some(s) = g.seed {
        cfg.seed = Some(s);
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    match cmd {
        Command::Ingest { layout, ticks, visits, condition } => {
            if let Some(l) = layout {
                cfg.paths.layout = Some(l.clone());
            }
            if !ticks.is_empty() {
                cfg.ingest.ticks = ticks.clone();
            }
            if !visits.is_empty() {
                cfg.ingest.visits = visits.clone();
            }
            if let Some(c) = condition {
                cfg.ingest.condition = c.clone();
            }
        }
        Command::Synth { episodes, robot_episodes } => {
            if let Some(n) = episodes {
                cfg.synth.episodes = *n;
            }
            if let Some(n) = robot_episodes {
                cfg.synth.robot_episodes = *n;
            }
        }
        Command::TrainTransition { features } => {
            if !features.is_empty() {
                cfg.transition.features = features.clone();
            }
        }
        Command::SelectFeatures { k, folds } => {
            if let Some(k) = k {
                cfg.transition.select_k = *k;
            }
            if let Some(f) = folds {
                cfg.transition.folds = *f;
            }
        }
        Command::FitEvents { variant, n_min } => {
            if let Some(v) = variant {
                cfg.events.variant = v.clone();
            }
            if let Some(n) = n_min {
                cfg.events.n_min = *n;
            }
        }
        Command::FitEffects { lambda, tau } => {
            if lambda.is_some() {
                cfg.effects.lambda = *lambda;
            }
            if let Some(t) = tau {
                cfg.effects.tau = *t;
            }
        }
        Command::Simulate { policy, episodes, multi_floor, single_floor, variant } => {
            if let Some(p) = policy {
                cfg.sim.policy = p.clone();
            }
            if let Some(n) = episodes {
                cfg.sim.episodes = *n;
            }
            if *multi_floor {
                cfg.sim.engine.multi_floor = true;
            }
            if *single_floor {
                cfg.sim.engine.multi_floor = false;
            }
            if variant.is_some() {
                cfg.sim.variant = variant.clone();
            }
        }
        Command::Evaluate { variant, episodes, models } => {
            if !variant.is_empty() {
                cfg.evaluate.variants = variant.clone();
            }
            if let Some(n) = episodes {
                cfg.evaluate.episodes = *n;
            }
            if *models {
                cfg.evaluate.models = true;
            }
        }
        Command::TrainPolicy { episodes } => {
            if let Some(n) = episodes {
                cfg.policy.episodes = *n;
            }
        }
        Command::Report => {}
    }
    cfg.out = absolute(cfg.out.clone());
    for p in [&mut cfg.paths.layout, &mut cfg.paths.baseline, &mut cfg.paths.robot].into_iter().flatten() {
        *p = absolute(p.clone());
    }
    for p in cfg.ingest.ticks.iter_mut().chain(cfg.ingest.visits.iter_mut()) {
        *p = absolute(p.clone());
    }
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref(), std::env::vars())?;
    apply_flags(&mut cfg, &cli.global, &cli.command);
    let name = cli.command.name();
    let mut run = Run::new(&cfg.out, name)?;
    let summary = match &cli.command {
        Command::Ingest { .. } => commands::ingest(&mut run, &cfg),
        Command::Synth { .. } => commands::synth(&mut run, &cfg),
        Command::TrainTransition { .. } => commands::train_transition(&mut run, &cfg),
        Command::SelectFeatures { .. } => commands::select_features(&mut run, &cfg),
        Command::FitEvents { .. } => commands::fit_events(&mut run, &cfg),
        Command::FitEffects { .. } => commands::fit_effects(&mut run, &cfg),
        Command::Simulate { .. } => commands::simulate(&mut run, &cfg),
        Command::Evaluate { .. } => commands::evaluate(&mut run, &cfg),
        Command::TrainPolicy { .. } => commands::train_policy(&mut run, &cfg),
        Command::Report => commands::report(&mut run, &cfg),
    }?;
    run.finish(cfg.seed, cfg.workers, &cfg.to_toml()?)?;
    Ok(summary)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("REGIONSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = e.record(cli.command.name());
            match serde_json::to_string(&record) {
                Ok(line) => eprintln!("{line}"),
                Err(_) => eprintln!("{e}"),
            }
            ExitCode::from(record.exit_code as u8)
        }
    }
}
