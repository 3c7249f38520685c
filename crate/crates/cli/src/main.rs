//! `textlab` — train, evaluate, and poke at the bundled text worlds.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use textlab_core::harness::{
    compare, evaluate, load_training_episodes, reward_curves, train, write_curves,
    ExperimentConfig, HarnessError, RunReport,
};
use textlab_core::knowledge::{AffordanceStore, KnowledgeGraph};
use textlab_core::world::{fixtures, format_score, EpisodeState};

#[derive(Parser)]
#[command(
    name = "textlab",
    version,
    about = "Experiment runner for miniature text-game agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured agent and write checkpoints plus training logs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory for checkpoints, logs, and the config echo.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the evaluation protocol against a trained run directory.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Run directory produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Where to write episodes.csv and aggregate.json (defaults to the
        /// checkpoint directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print a side-by-side table of previously written reports.
    Compare {
        /// Report directories (each holding episodes.csv and aggregate.json).
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Emit per-step reward curves from training episodes.
    Curves {
        /// Labeled run directory, as `mode=dir`; repeatable.
        #[arg(long = "series", required = true, value_parser = parse_series)]
        series: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interactive episode: type actions, see observations and the score.
    Play {
        #[arg(long)]
        world: String,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        variation: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay the walkthrough and print the knowledge graph it builds.
    InspectKg {
        #[arg(long)]
        world: String,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        variation: usize,
        /// Stop after this many walkthrough steps (default: all of them).
        #[arg(long)]
        steps: Option<usize>,
        /// Also inject bundled affordance triples for entities in the graph.
        #[arg(long)]
        affordances: bool,
    },
}

/// Flag-level overrides applied on top of the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated variation indices, e.g. `0,1,4`.
    #[arg(long)]
    variations: Option<String>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(task) = &self.task {
            config.task = task.clone();
        }
        if let Some(variant) = &self.variant {
            config.variant = Some(variant.clone());
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(budget) = self.budget {
            config.budget = budget;
        }
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
        if let Some(list) = &self.variations {
            config.variations = list
                .split(',')
                .map(|v| v.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("bad --variations list {:?}", list))?;
        }
        Ok(())
    }
}

fn parse_series(arg: &str) -> Result<(String, PathBuf), String> {
    match arg.split_once('=') {
        Some((mode, dir)) if !mode.is_empty() && !dir.is_empty() => {
            Ok((mode.to_string(), PathBuf::from(dir)))
        }
        _ => Err(format!("expected mode=dir, got {:?}", arg)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {:#}", err);
            if is_usage_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Config and usage mistakes exit 2; runtime failures exit 1.
fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<HarnessError>(),
            Some(HarnessError::Config(_)) | Some(HarnessError::ConfigFile { .. })
        )
    })
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    overrides.apply(&mut config)?;
    Ok(config)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, out, overrides } => {
            let config = load_config(&config, &overrides)?;
            let output = train(&config, &out)?;
            println!(
                "trained {} ({}): {} checkpoint(s), {} training episode(s)",
                config.agent.as_str(),
                config.label(),
                output.checkpoints.len(),
                output.episodes.len()
            );
            println!("run directory: {}", out.display());
            Ok(())
        }
        Command::Eval { config, checkpoint, out, overrides } => {
            let config = load_config(&config, &overrides)?;
            let report = evaluate(&config, &checkpoint)?;
            let out = out.unwrap_or(checkpoint);
            report.write(&out)?;
            println!(
                "{}: {} episodes, mean score {:.2}, {} perfect",
                report.aggregate.label,
                report.aggregate.episodes,
                report.aggregate.mean_score,
                report.aggregate.perfect_count
            );
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Compare { reports } => {
            let loaded: Vec<RunReport> = reports
                .iter()
                .map(|dir| RunReport::load(dir).map_err(anyhow::Error::from))
                .collect::<Result<_>>()?;
            print!("{}", compare(&loaded)?.render());
            Ok(())
        }
        Command::Curves { series, out } => {
            let mut inputs = Vec::new();
            for (mode, dir) in series {
                let episodes = load_training_episodes(&dir)?;
                if episodes.is_empty() {
                    bail!("{} has no training episodes to plot", dir.display());
                }
                inputs.push((mode, episodes));
            }
            let rows = reward_curves(&inputs);
            write_curves(&out, &rows)?;
            println!("wrote {} curve rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Play { world, task, variation, seed } => play(&world, &task, variation, seed),
        Command::InspectKg { world, task, variation, steps, affordances } => {
            inspect_kg(&world, &task, variation, steps, affordances)
        }
    }
}

fn play(world: &str, task: &str, variation: usize, seed: u64) -> Result<()> {
    let spec = fixtures::by_name_or_path(world)?;
    let (mut ep, mut result) = EpisodeState::reset(&spec, task, variation, seed)?;
    println!("{}", result.description);
    println!("{}", result.observation);
    println!("Score: {}", format_score(result.score));

    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    while !result.done {
        eprint!("> ");
        std::io::stderr().flush().ok();
        let Some(line) = lines.next() else { break };
        let action = line.context("reading input")?;
        let action = action.trim();
        if action.is_empty() {
            continue;
        }
        match action {
            "quit" | "exit" => break,
            "actions" => {
                for a in &result.valid_actions {
                    println!("  {}", a);
                }
                continue;
            }
            "inventory" => {
                println!("{}", result.inventory);
                continue;
            }
            _ => {}
        }
        result = ep.step(action)?;
        println!("{}", result.observation);
        println!("Score: {}", format_score(result.score));
    }
    if result.done {
        println!(
            "Episode over after {} step(s). Final score: {}",
            ep.step_count(),
            format_score(ep.score_points())
        );
    }
    Ok(())
}

fn inspect_kg(
    world: &str,
    task: &str,
    variation: usize,
    steps: Option<usize>,
    affordances: bool,
) -> Result<()> {
    let spec = fixtures::by_name_or_path(world)?;
    let (mut ep, mut result) = EpisodeState::reset(&spec, task, variation, 0)?;
    let mut kg = KnowledgeGraph::new();
    kg.absorb(&format!("{} {}", result.observation, result.inventory));
    let mut taken = 0usize;
    while let Some(gold) = result.golden_next.clone() {
        if steps.is_some_and(|cap| taken >= cap) {
            break;
        }
        result = ep.step(&gold)?;
        kg.absorb(&format!("{} {}", result.observation, result.inventory));
        taken += 1;
        if result.done {
            break;
        }
    }
    if affordances {
        let store = AffordanceStore::bundled();
        let present: std::collections::BTreeSet<String> = kg.entities().into_iter().collect();
        let extra: Vec<_> =
            store.iter().filter(|t| present.contains(&t.subject)).cloned().collect();
        for t in extra {
            kg.insert(t);
        }
    }
    println!(
        "# {} / {} variation {}: {} triples after {} step(s)",
        world,
        task,
        variation,
        kg.len(),
        taken
    );
    for triple in kg.iter() {
        println!("{}", triple);
    }
    Ok(())
}
