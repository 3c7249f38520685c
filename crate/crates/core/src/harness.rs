//! Experiment orchestration: config-driven training and evaluation of any
//! agent/variant/task combination, with seeded runs and report files that
//! can be re-aggregated from their own raw rows.
//!
//! A run directory holds everything one experiment produced: the resolved
//! config, a tagged checkpoint per training trial, the training log, and
//! after evaluation the per-episode rows (`episodes.csv`), their aggregate
//! (`aggregate.json`), and optionally reward curves (`curves.csv`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{load_checkpoint, save_checkpoint, AutodiffError, ParamSet};
use crate::drrn::{evaluate_greedy, train_drrn, Drrn, DrrnConfig, DrrnError, DrrnVariant};
use crate::kga2c::{
    evaluate_sampled, train_kga2c, KgA2c, KgA2cConfig, KgA2cError, KgA2cVariant,
};
use crate::knowledge::{AffordanceStore, KnowledgeError};
use crate::runlog::EpisodeRecord;
use crate::scorer::{
    oracle_episode, run_episode_with, train_scorer, Scorer, ScorerConfig, ScorerError,
};
use crate::world::{WorldError, WorldSpec, STEP_LIMIT};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    ConfigFile { path: String, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Drrn(#[from] DrrnError),
    #[error(transparent)]
    KgA2c(#[from] KgA2cError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("checkpoint is for agent {found:?}, expected {expected:?}")]
    WrongAgent { expected: String, found: String },
    #[error("reports cover different task sets: {left:?} vs {right:?}")]
    TaskSetMismatch { left: Vec<String>, right: Vec<String> },
    #[error("report error: {0}")]
    Report(String),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Drrn,
    Kga2c,
    Scorer,
    /// Replays the walkthrough; the reference upper bound.
    Golden,
    /// Uniform over valid actions; the reference lower bound.
    Random,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Drrn => "drrn",
            AgentKind::Kga2c => "kga2c",
            AgentKind::Scorer => "scorer",
            AgentKind::Golden => "golden",
            AgentKind::Random => "random",
        }
    }
}

/// Optional overrides for whatever the chosen agent's config exposes;
/// unset fields keep the agent defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub lr: Option<f64>,
    pub embed_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub gamma: Option<f64>,
    pub reward_scale: Option<f64>,
    pub batch: Option<usize>,
    pub replay_capacity: Option<usize>,
    pub target_refresh: Option<u32>,
    pub update_every: Option<u64>,
    pub warmup: Option<usize>,
    pub temp_start: Option<f64>,
    pub temp_end: Option<f64>,
    pub temp_decay_steps: Option<u64>,
    pub extra_updates: Option<u32>,
    pub num_envs: Option<usize>,
    pub horizon: Option<usize>,
    pub value_coef: Option<f64>,
    pub template_coef: Option<f64>,
    pub object_coef: Option<f64>,
    pub entropy_coef: Option<f64>,
    pub dropout: Option<f64>,
    pub gat_heads: Option<usize>,
    pub gat_head_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub pretrain_epochs: Option<usize>,
    pub distractors: Option<usize>,
    pub max_len: Option<usize>,
    pub top_p: Option<f64>,
    pub mca_window: Option<usize>,
}

macro_rules! apply {
    ($hyper:expr, $cfg:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $hyper.$field {
            $cfg.$field = v;
        })+
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentKind,
    #[serde(default)]
    pub variant: Option<String>,
    /// Bundled world name or a path to a world file.
    pub world: String,
    pub task: String,
    pub variations: Vec<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Environment steps for the RL agents; the scorer trains by epochs.
    #[serde(default = "default_budget")]
    pub budget: u64,
    /// Independently trained checkpoints; each gets the full evaluation
    /// protocol.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Named hyperparameter preset applied before `hyper` overrides.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub hyper: Hyper,
}

fn default_seed() -> u64 {
    7
}

fn default_budget() -> u64 {
    5_000
}

fn default_trials() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| {
            HarnessError::ConfigFile { path: path.display().to_string(), detail: e.to_string() }
        })?;
        Ok(config)
    }

    pub fn world_spec(&self) -> Result<Arc<WorldSpec>, HarnessError> {
        Ok(crate::world::fixtures::by_name_or_path(&self.world)?)
    }

    /// Everything that can be rejected without doing any work.
    pub fn validate(&self, spec: &WorldSpec) -> Result<(), HarnessError> {
        if self.variations.is_empty() {
            return Err(HarnessError::Config("no variations listed".into()));
        }
        let task = spec
            .tasks
            .iter()
            .find(|t| t.id == self.task)
            .ok_or_else(|| HarnessError::Config(format!("unknown task {:?}", self.task)))?;
        for &v in &self.variations {
            if v >= task.variations.len() {
                return Err(HarnessError::Config(format!(
                    "task {:?} has {} variations, got index {}",
                    self.task,
                    task.variations.len(),
                    v
                )));
            }
        }
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        match self.agent {
            AgentKind::Drrn => {
                let v = self.variant.as_deref().unwrap_or("baseline");
                if DrrnVariant::parse(v).is_none() {
                    return Err(HarnessError::Config(format!(
                        "unknown drrn variant {:?} (expected baseline/aff/mca/aff_mca)",
                        v
                    )));
                }
                if let Some(p) = self.preset.as_deref() {
                    if p != "chain" {
                        return Err(HarnessError::Config(format!("unknown preset {:?}", p)));
                    }
                }
            }
            AgentKind::Kga2c => {
                let v = self.variant.as_deref().unwrap_or("gt");
                if KgA2cVariant::parse(v).is_none() {
                    return Err(HarnessError::Config(format!(
                        "unknown kga2c variant {:?} (expected vt/gt/gt_aff/gt_mca/gt_aff_mca/gt_nogat/gt_aff_text/gt_aff_encoder)",
                        v
                    )));
                }
                if self.preset.is_some() {
                    return Err(HarnessError::Config("kga2c has no presets".into()));
                }
            }
            AgentKind::Scorer => {
                let v = self.variant.as_deref().unwrap_or("base");
                if scorer_variant(v).is_none() {
                    return Err(HarnessError::Config(format!(
                        "unknown scorer variant {:?} (expected base/aff/mca/aff_mca)",
                        v
                    )));
                }
                if self.preset.is_some() {
                    return Err(HarnessError::Config("scorer has no presets".into()));
                }
            }
            AgentKind::Golden | AgentKind::Random => {
                if self.variant.is_some() {
                    return Err(HarnessError::Config(format!(
                        "{} takes no variant",
                        self.agent.as_str()
                    )));
                }
                if self.preset.is_some() {
                    return Err(HarnessError::Config(format!(
                        "{} takes no preset",
                        self.agent.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Column label for comparison tables: agent plus variant when present.
    pub fn label(&self) -> String {
        match self.variant.as_deref() {
            Some(v) => format!("{}_{}", self.agent.as_str(), v),
            None => self.agent.as_str().to_string(),
        }
    }

    pub fn drrn_config(&self, trial: usize) -> DrrnConfig {
        let seed = trial_seed(self.seed, trial);
        let mut cfg = match self.preset.as_deref() {
            Some("chain") => DrrnConfig::chain_preset(seed),
            _ => DrrnConfig { seed, ..DrrnConfig::default() },
        };
        cfg.variant =
            DrrnVariant::parse(self.variant.as_deref().unwrap_or("baseline")).expect("validated");
        apply!(
            self.hyper, cfg, lr, embed_dim, hidden, gamma, reward_scale, batch, replay_capacity,
            target_refresh, update_every, warmup, temp_start, temp_end, temp_decay_steps,
            extra_updates, mca_window,
        );
        cfg
    }

    pub fn kga2c_config(&self, trial: usize) -> KgA2cConfig {
        let mut cfg = KgA2cConfig {
            variant: KgA2cVariant::parse(self.variant.as_deref().unwrap_or("gt"))
                .expect("validated"),
            seed: trial_seed(self.seed, trial),
            ..KgA2cConfig::default()
        };
        apply!(
            self.hyper, cfg, lr, embed_dim, hidden, gamma, reward_scale, num_envs, horizon,
            value_coef, template_coef, object_coef, entropy_coef, dropout, gat_heads,
            gat_head_dim, mca_window,
        );
        cfg
    }

    pub fn scorer_config(&self, trial: usize) -> ScorerConfig {
        let (use_mca, pretrain) =
            scorer_variant(self.variant.as_deref().unwrap_or("base")).expect("validated");
        let mut cfg = ScorerConfig {
            use_mca,
            pretrain_affordances: pretrain,
            seed: trial_seed(self.seed, trial),
            ..ScorerConfig::default()
        };
        apply!(
            self.hyper, cfg, lr, embed_dim, hidden, epochs, pretrain_epochs, distractors, max_len,
            top_p, mca_window,
        );
        cfg
    }
}

fn scorer_variant(name: &str) -> Option<(bool, bool)> {
    match name {
        "base" => Some((false, false)),
        "mca" => Some((true, false)),
        "aff" => Some((false, true)),
        "aff_mca" => Some((true, true)),
        _ => None,
    }
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(1_000_003u64.wrapping_mul(trial as u64))
}

fn eval_seed(seed: u64, trial: usize, pass: usize) -> u64 {
    seed.wrapping_mul(1_000).wrapping_add((trial * 10 + pass) as u64)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

pub struct TrainOutput {
    pub checkpoints: Vec<PathBuf>,
    /// Finished training episodes across all trials, in order.
    pub episodes: Vec<EpisodeRecord>,
    pub log_path: PathBuf,
}

fn checkpoint_path(dir: &Path, trial: usize) -> PathBuf {
    if trial == 0 {
        dir.join("checkpoint.bin")
    } else {
        dir.join(format!("checkpoint_{}.bin", trial))
    }
}

/// Train every configured trial, writing one tagged checkpoint per trial,
/// a combined training log, and the per-episode training scores.
pub fn train(config: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutput, HarnessError> {
    let spec = config.world_spec()?;
    config.validate(&spec)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let echo = toml::to_string_pretty(config)
        .map_err(|e| HarnessError::Config(format!("unserializable config: {}", e)))?;
    fs::write(out_dir.join("config.toml"), echo)
        .map_err(|e| io_err(&out_dir.join("config.toml"), e))?;

    let log_path = out_dir.join("train_log.csv");
    let mut log = csv::Writer::from_path(&log_path).map_err(csv_err(&log_path))?;
    let mut checkpoints = Vec::new();
    let mut episodes = Vec::new();

    match config.agent {
        AgentKind::Golden | AgentKind::Random => {
            log.write_record(["trial", "update", "loss"]).map_err(csv_err(&log_path))?;
            for trial in 0..config.trials {
                let path = checkpoint_path(out_dir, trial);
                save_checkpoint(&path, config.agent.as_str(), &ParamSet::new())?;
                checkpoints.push(path);
            }
        }
        AgentKind::Drrn => {
            log.write_record(["trial", "update", "loss", "mean_q"]).map_err(csv_err(&log_path))?;
            for trial in 0..config.trials {
                let result = train_drrn(
                    &spec,
                    &config.task,
                    &config.variations,
                    AffordanceStore::bundled(),
                    config.drrn_config(trial),
                    config.budget,
                )?;
                for row in &result.updates {
                    log.write_record([
                        trial.to_string(),
                        row.update.to_string(),
                        fmt(row.loss),
                        fmt(row.mean_q),
                    ])
                    .map_err(csv_err(&log_path))?;
                }
                let path = checkpoint_path(out_dir, trial);
                save_checkpoint(&path, "drrn", result.agent.params())?;
                checkpoints.push(path);
                episodes.extend(result.episodes);
            }
        }
        AgentKind::Kga2c => {
            log.write_record([
                "trial", "update", "policy_loss", "value_loss", "l_t", "l_o", "l_e", "score",
            ])
            .map_err(csv_err(&log_path))?;
            for trial in 0..config.trials {
                let result = train_kga2c(
                    &spec,
                    &config.task,
                    &config.variations,
                    AffordanceStore::bundled(),
                    config.kga2c_config(trial),
                    config.budget,
                )?;
                for row in &result.updates {
                    log.write_record([
                        trial.to_string(),
                        row.update.to_string(),
                        fmt(row.policy_loss),
                        fmt(row.value_loss),
                        fmt(row.l_t),
                        fmt(row.l_o),
                        fmt(row.l_e),
                        fmt(row.score),
                    ])
                    .map_err(csv_err(&log_path))?;
                }
                let path = checkpoint_path(out_dir, trial);
                save_checkpoint(&path, "kga2c", result.agent.params())?;
                checkpoints.push(path);
                episodes.extend(result.episodes);
            }
        }
        AgentKind::Scorer => {
            log.write_record(["trial", "phase", "epoch", "loss"]).map_err(csv_err(&log_path))?;
            let store = AffordanceStore::bundled();
            for trial in 0..config.trials {
                let mut scorer = Scorer::new(&spec, &store, config.scorer_config(trial))?;
                let report =
                    train_scorer(&mut scorer, &spec, &config.task, &config.variations, &store)?;
                for (epoch, loss) in report.qa_losses.iter().enumerate() {
                    log.write_record([
                        trial.to_string(),
                        "qa".to_string(),
                        epoch.to_string(),
                        fmt(*loss),
                    ])
                    .map_err(csv_err(&log_path))?;
                }
                for (epoch, loss) in report.epoch_losses.iter().enumerate() {
                    log.write_record([
                        trial.to_string(),
                        "task".to_string(),
                        epoch.to_string(),
                        fmt(*loss),
                    ])
                    .map_err(csv_err(&log_path))?;
                }
                let path = checkpoint_path(out_dir, trial);
                save_checkpoint(&path, "scorer", scorer.params())?;
                checkpoints.push(path);
            }
        }
    }
    log.flush().map_err(|e| io_err(&log_path, e))?;
    write_training_episodes(&out_dir.join("train_episodes.csv"), &episodes)?;
    Ok(TrainOutput { checkpoints, episodes, log_path })
}

fn fmt(x: f64) -> String {
    format!("{:.6}", x)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Report(format!("{}: {}", path.display(), e))
}

fn write_training_episodes(path: &Path, episodes: &[EpisodeRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["task", "variation", "steps", "score", "perfect"]).map_err(csv_err(path))?;
    for e in episodes {
        w.write_record([
            e.task.clone(),
            e.variation.to_string(),
            e.steps.to_string(),
            fmt(e.score),
            (e.perfect() as u8).to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: String,
    pub variation: usize,
    pub seed: u64,
    pub steps: u32,
    pub score: f64,
    pub perfect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub label: String,
    pub task: String,
    pub episodes: usize,
    pub mean_score: f64,
    pub perfect_count: usize,
    pub by_variation: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<EvalRow>,
    pub aggregate: Aggregate,
}

impl RunReport {
    fn from_rows(label: &str, task: &str, rows: Vec<EvalRow>) -> RunReport {
        let episodes = rows.len();
        let mean_score =
            if episodes == 0 { 0.0 } else { rows.iter().map(|r| r.score).sum::<f64>() / episodes as f64 };
        let perfect_count = rows.iter().filter(|r| r.perfect).count();
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &rows {
            let e = sums.entry(r.variation.to_string()).or_insert((0.0, 0));
            e.0 += r.score;
            e.1 += 1;
        }
        let by_variation =
            sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
        RunReport {
            rows,
            aggregate: Aggregate {
                label: label.to_string(),
                task: task.to_string(),
                episodes,
                mean_score,
                perfect_count,
                by_variation,
            },
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let csv_path = dir.join("episodes.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err(&csv_path))?;
        w.write_record(["task", "variation", "seed", "steps", "score", "perfect"])
            .map_err(csv_err(&csv_path))?;
        for r in &self.rows {
            w.write_record([
                r.task.clone(),
                r.variation.to_string(),
                r.seed.to_string(),
                r.steps.to_string(),
                format!("{:.2}", r.score),
                (r.perfect as u8).to_string(),
            ])
            .map_err(csv_err(&csv_path))?;
        }
        w.flush().map_err(|e| io_err(&csv_path, e))?;
        let json_path = dir.join("aggregate.json");
        let json = serde_json::to_string_pretty(&self.aggregate)
            .map_err(|e| HarnessError::Report(e.to_string()))?;
        fs::write(&json_path, json + "\n").map_err(|e| io_err(&json_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<RunReport, HarnessError> {
        let json_path = dir.join("aggregate.json");
        let text = fs::read_to_string(&json_path).map_err(|e| io_err(&json_path, e))?;
        let aggregate: Aggregate =
            serde_json::from_str(&text).map_err(|e| HarnessError::Report(e.to_string()))?;
        let csv_path = dir.join("episodes.csv");
        let mut reader = csv::Reader::from_path(&csv_path).map_err(csv_err(&csv_path))?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_err(&csv_path))?;
            let field = |i: usize| -> Result<&str, HarnessError> {
                record.get(i).ok_or_else(|| {
                    HarnessError::Report(format!("{}: short row", csv_path.display()))
                })
            };
            let parse_err =
                |e: String| HarnessError::Report(format!("{}: {}", csv_path.display(), e));
            rows.push(EvalRow {
                task: field(0)?.to_string(),
                variation: field(1)?.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                seed: field(2)?.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                steps: field(3)?.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                score: field(4)?.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
                perfect: field(5)? == "1",
            });
        }
        Ok(RunReport { rows, aggregate })
    }
}

const EVAL_PASSES: usize = 3;

/// The full evaluation protocol: for every trained trial, three seeded
/// passes over every configured variation.
pub fn evaluate(config: &ExperimentConfig, run_dir: &Path) -> Result<RunReport, HarnessError> {
    let spec = config.world_spec()?;
    config.validate(&spec)?;
    let store = AffordanceStore::bundled();
    let mut rows = Vec::new();
    for trial in 0..config.trials {
        let path = checkpoint_path(run_dir, trial);
        let (kind, saved) = load_checkpoint(&path)?;
        if kind != config.agent.as_str() {
            return Err(HarnessError::WrongAgent {
                expected: config.agent.as_str().to_string(),
                found: kind,
            });
        }
        for pass in 0..EVAL_PASSES {
            let seed = eval_seed(config.seed, trial, pass);
            for &variation in &config.variations {
                let record = match config.agent {
                    AgentKind::Golden => oracle_episode(&spec, &config.task, variation)?.record,
                    AgentKind::Random => random_episode(&spec, &config.task, variation, seed)?,
                    AgentKind::Drrn => {
                        let mut agent =
                            Drrn::new(&spec, store.clone(), config.drrn_config(trial))?;
                        agent.params_mut().adopt_values(&saved)?;
                        evaluate_greedy(&agent, &spec, &config.task, variation, seed)?
                    }
                    AgentKind::Kga2c => {
                        let mut agent =
                            KgA2c::new(&spec, store.clone(), config.kga2c_config(trial))?;
                        agent.params_mut().adopt_values(&saved)?;
                        evaluate_sampled(&agent, &spec, &config.task, variation, seed)?
                    }
                    AgentKind::Scorer => {
                        let mut agent =
                            Scorer::new(&spec, &store, config.scorer_config(trial))?;
                        agent.params_mut().adopt_values(&saved)?;
                        agent.run_episode(&spec, &config.task, variation, seed)?.record
                    }
                };
                rows.push(EvalRow {
                    task: record.task.clone(),
                    variation,
                    seed,
                    steps: record.steps,
                    score: record.score,
                    perfect: record.perfect(),
                });
            }
        }
    }
    Ok(RunReport::from_rows(&config.label(), &config.task, rows))
}

fn random_episode(
    spec: &Arc<WorldSpec>,
    task: &str,
    variation: usize,
    seed: u64,
) -> Result<EpisodeRecord, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x7a2d_0001);
    let transcript = run_episode_with(spec, task, variation, seed, 5, |result, _| {
        Ok(rng.gen_range(0..result.valid_actions.len()))
    })?;
    Ok(transcript.record)
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ComparisonCell {
    pub mean: f64,
    pub perfect: usize,
    /// Difference to the first report's mean on the same task.
    pub delta: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub tasks: Vec<String>,
    pub labels: Vec<String>,
    /// `cells[task_index][label_index]`.
    pub cells: Vec<Vec<ComparisonCell>>,
}

/// Side-by-side means per task with the best label marked. Best means
/// best-on-this-metric: the highest reported mean, nothing more.
pub fn compare(reports: &[RunReport]) -> Result<Comparison, HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::Report("nothing to compare".into()));
    }
    let task_set = |r: &RunReport| -> Vec<String> {
        let set: BTreeSet<String> = r.rows.iter().map(|row| row.task.clone()).collect();
        set.into_iter().collect()
    };
    let tasks = task_set(&reports[0]);
    for r in &reports[1..] {
        let other = task_set(r);
        if other != tasks {
            return Err(HarnessError::TaskSetMismatch { left: tasks, right: other });
        }
    }
    let labels: Vec<String> = reports.iter().map(|r| r.aggregate.label.clone()).collect();
    let mut cells = Vec::new();
    for task in &tasks {
        let mut row = Vec::new();
        for report in reports {
            let scores: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| &r.task == task)
                .map(|r| r.score)
                .collect();
            let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
            let perfect = report
                .rows
                .iter()
                .filter(|r| &r.task == task && r.perfect)
                .count();
            row.push(ComparisonCell { mean, perfect, delta: 0.0, best: false });
        }
        let base = row[0].mean;
        let best = row
            .iter()
            .map(|c| c.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        for cell in &mut row {
            cell.delta = cell.mean - base;
            cell.best = cell.mean == best;
        }
        cells.push(row);
    }
    Ok(Comparison { tasks, labels, cells })
}

impl Comparison {
    /// Plain-text table: one row per task, `mean (perfect)` per column, the
    /// per-task best marked with `*`.
    pub fn render(&self) -> String {
        let mut columns = vec!["task".to_string()];
        columns.extend(self.labels.iter().cloned());
        let mut rows: Vec<Vec<String>> = Vec::new();
        for (ti, task) in self.tasks.iter().enumerate() {
            let mut row = vec![task.clone()];
            for cell in &self.cells[ti] {
                let marker = if cell.best { "*" } else { "" };
                row.push(format!("{:.2}{} ({})", cell.mean, marker, cell.perfect));
            }
            rows.push(row);
        }
        let mut widths: Vec<usize> = columns.iter().map(|c| c.len()).collect();
        for row in &rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        let render_row = |cells: &[String]| -> String {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{:width$}", c, width = widths[i]))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = render_row(&columns);
        out.push('\n');
        for row in &rows {
            out.push_str(&render_row(row));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Reward curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: u32,
    pub mean: f64,
    pub std: f64,
    pub mode: String,
}

/// Per-step mean and standard deviation of the score across episode
/// trajectories, one series per labeled mode. Scores carry forward after an
/// episode ends, out to the step limit.
pub fn reward_curves(inputs: &[(String, Vec<EpisodeRecord>)]) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for (mode, episodes) in inputs {
        if episodes.is_empty() {
            continue;
        }
        for step in 0..=STEP_LIMIT {
            let scores: Vec<f64> = episodes.iter().map(|e| e.score_at(step)).collect();
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            rows.push(CurveRow { step, mean, std: var.sqrt(), mode: mode.clone() });
        }
    }
    rows
}

pub fn write_curves(path: &Path, rows: &[CurveRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["step", "mean", "std", "mode"]).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([r.step.to_string(), fmt(r.mean), fmt(r.std), r.mode.clone()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Read training episodes back from a run directory, for curve emission.
pub fn load_training_episodes(dir: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let path = dir.join("train_episodes.csv");
    let mut reader = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    let mut episodes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(&path))?;
        let get = |i: usize| -> Result<&str, HarnessError> {
            record
                .get(i)
                .ok_or_else(|| HarnessError::Report(format!("{}: short row", path.display())))
        };
        let steps: u32 = get(2)?
            .parse()
            .map_err(|e: std::num::ParseIntError| HarnessError::Report(e.to_string()))?;
        let score: f64 = get(3)?
            .parse()
            .map_err(|e: std::num::ParseFloatError| HarnessError::Report(e.to_string()))?;
        episodes.push(EpisodeRecord {
            task: get(0)?.to_string(),
            variation: get(1)?
                .parse()
                .map_err(|e: std::num::ParseIntError| HarnessError::Report(e.to_string()))?,
            steps,
            score,
            // The CSV stores endpoints only; rebuild the coarsest trajectory
            // consistent with them.
            trajectory: vec![(steps, score)],
        });
    }
    Ok(episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn golden_config(task: &str) -> ExperimentConfig {
        ExperimentConfig {
            agent: AgentKind::Golden,
            variant: None,
            world: "mini_science".to_string(),
            task: task.to_string(),
            variations: vec![0, 1, 2],
            seed: 7,
            budget: 0,
            trials: 1,
            preset: None,
            hyper: Hyper::default(),
        }
    }

    #[test]
    fn config_files_parse_and_reject_unknown_keys() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("exp.toml");
        fs::write(
            &path,
            "agent = \"drrn\"\nvariant = \"aff\"\nworld = \"mini_science\"\ntask = \"classify\"\nvariations = [0, 1]\n\n[hyper]\nlr = 0.01\nhidden = 16\n",
        )
        .unwrap();
        let config = ExperimentConfig::load(&path).unwrap();
        assert_eq!(config.agent, AgentKind::Drrn);
        assert_eq!(config.budget, 5_000);
        assert_eq!(config.trials, 1);
        let drrn = config.drrn_config(0);
        assert_eq!(drrn.lr, 0.01);
        assert_eq!(drrn.hidden, 16);
        assert_eq!(drrn.variant.name(), "aff");

        fs::write(&path, "agent = \"drrn\"\nworld = \"chain\"\ntask = \"reach\"\nvariations = [0]\nbananas = 3\n").unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("bananas"), "{}", err);
    }

    #[test]
    fn validation_rejects_bad_variants_before_any_work() {
        let spec = crate::world::fixtures::mini_science().unwrap();
        let mut config = golden_config("classify");
        config.agent = AgentKind::Drrn;
        config.variant = Some("aff_in_kg".to_string());
        let err = config.validate(&spec).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));

        let mut config = golden_config("classify");
        config.variant = Some("gt".to_string());
        assert!(config.validate(&spec).is_err(), "golden takes no variant");

        let mut config = golden_config("classify");
        config.variations = vec![99];
        assert!(config.validate(&spec).is_err());

        let mut config = golden_config("nonsense");
        config.variations = vec![0];
        assert!(config.validate(&spec).is_err());
    }

    #[test]
    fn golden_agent_scores_perfectly_on_every_task() {
        let dir = TempDir::new().unwrap();
        for task in ["classify", "measure", "electricity", "lifespan"] {
            let config = golden_config(task);
            let out = dir.path().join(task);
            train(&config, &out).unwrap();
            let report = evaluate(&config, &out).unwrap();
            assert_eq!(report.rows.len(), config.variations.len() * 3);
            assert_eq!(report.aggregate.mean_score, 100.0, "task {}", task);
            assert_eq!(report.aggregate.perfect_count, report.rows.len());
        }
    }

    #[test]
    fn aggregate_is_the_mean_of_its_rows() {
        let rows = vec![
            EvalRow { task: "t".into(), variation: 0, seed: 1, steps: 3, score: 50.0, perfect: false },
            EvalRow { task: "t".into(), variation: 1, seed: 1, steps: 4, score: 100.0, perfect: true },
            EvalRow { task: "t".into(), variation: 1, seed: 2, steps: 9, score: 0.0, perfect: false },
        ];
        let report = RunReport::from_rows("x", "t", rows);
        assert_eq!(report.aggregate.mean_score, 50.0);
        assert_eq!(report.aggregate.perfect_count, 1);
        assert_eq!(report.aggregate.by_variation["1"], 50.0);
    }

    #[test]
    fn random_agent_stays_below_golden() {
        let dir = TempDir::new().unwrap();
        let mut config = golden_config("lifespan");
        config.agent = AgentKind::Random;
        let out = dir.path().join("random");
        train(&config, &out).unwrap();
        let random = evaluate(&config, &out).unwrap();
        assert!(
            random.aggregate.mean_score < 100.0,
            "random mean {}",
            random.aggregate.mean_score
        );
    }

    #[test]
    fn zero_budget_training_emits_untrained_checkpoint_and_empty_log() {
        let dir = TempDir::new().unwrap();
        let config = ExperimentConfig {
            agent: AgentKind::Drrn,
            variant: None,
            world: "chain".to_string(),
            task: "reach".to_string(),
            variations: vec![0],
            seed: 3,
            budget: 0,
            trials: 1,
            preset: Some("chain".to_string()),
            hyper: Hyper { hidden: Some(8), embed_dim: Some(4), ..Hyper::default() },
        };
        let out = dir.path().join("run");
        let output = train(&config, &out).unwrap();
        assert!(output.checkpoints[0].exists());
        assert!(output.episodes.is_empty());
        let log = fs::read_to_string(&output.log_path).unwrap();
        assert_eq!(log.lines().count(), 1, "header only: {:?}", log);
        let report = evaluate(&config, &out).unwrap();
        assert_eq!(report.rows.len(), 3);
    }

    #[test]
    fn evaluation_rows_are_bit_identical_across_runs() {
        let dir = TempDir::new().unwrap();
        let mut config = golden_config("measure");
        config.agent = AgentKind::Random;
        let out = dir.path().join("r");
        train(&config, &out).unwrap();
        let a = evaluate(&config, &out).unwrap();
        let b = evaluate(&config, &out).unwrap();
        assert_eq!(a.rows, b.rows);
        let dir_a = dir.path().join("a");
        let dir_b = dir.path().join("b");
        a.write(&dir_a).unwrap();
        b.write(&dir_b).unwrap();
        let bytes_a = fs::read(dir_a.join("episodes.csv")).unwrap();
        let bytes_b = fs::read(dir_b.join("episodes.csv")).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn reports_round_trip_through_files() {
        let dir = TempDir::new().unwrap();
        let config = golden_config("classify");
        let out = dir.path().join("run");
        train(&config, &out).unwrap();
        let report = evaluate(&config, &out).unwrap();
        report.write(&out).unwrap();
        let loaded = RunReport::load(&out).unwrap();
        assert_eq!(loaded.aggregate, report.aggregate);
        assert_eq!(loaded.rows.len(), report.rows.len());
        for (a, b) in loaded.rows.iter().zip(&report.rows) {
            assert_eq!(a.task, b.task);
            assert_eq!(a.variation, b.variation);
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.perfect, b.perfect);
        }
    }

    #[test]
    fn wrong_agent_checkpoint_is_refused() {
        let dir = TempDir::new().unwrap();
        let config = golden_config("classify");
        let out = dir.path().join("run");
        train(&config, &out).unwrap();
        let mut as_random = config.clone();
        as_random.agent = AgentKind::Random;
        let err = evaluate(&as_random, &out).unwrap_err();
        assert!(matches!(err, HarnessError::WrongAgent { .. }), "{}", err);
    }

    #[test]
    fn trials_multiply_checkpoints_and_rows() {
        let dir = TempDir::new().unwrap();
        let mut config = golden_config("classify");
        config.agent = AgentKind::Random;
        config.trials = 2;
        config.variations = vec![0, 1];
        let out = dir.path().join("run");
        let output = train(&config, &out).unwrap();
        assert_eq!(output.checkpoints.len(), 2);
        assert!(checkpoint_path(&out, 1).exists());
        let report = evaluate(&config, &out).unwrap();
        assert_eq!(report.rows.len(), 2 * 3 * 2);
    }

    #[test]
    fn comparison_marks_best_and_zeroes_self_deltas() {
        let rows_low = vec![
            EvalRow { task: "t".into(), variation: 0, seed: 1, steps: 5, score: 40.0, perfect: false },
            EvalRow { task: "t".into(), variation: 1, seed: 1, steps: 5, score: 60.0, perfect: false },
        ];
        let rows_high = vec![
            EvalRow { task: "t".into(), variation: 0, seed: 1, steps: 5, score: 100.0, perfect: true },
            EvalRow { task: "t".into(), variation: 1, seed: 1, steps: 5, score: 80.0, perfect: false },
        ];
        let low = RunReport::from_rows("base", "t", rows_low);
        let high = RunReport::from_rows("aug", "t", rows_high);

        let self_cmp = compare(&[low.clone(), low.clone()]).unwrap();
        for row in &self_cmp.cells {
            for cell in row {
                assert_eq!(cell.delta, 0.0);
            }
        }

        let cmp = compare(&[low.clone(), high.clone()]).unwrap();
        assert_eq!(cmp.tasks, vec!["t".to_string()]);
        assert!(!cmp.cells[0][0].best);
        assert!(cmp.cells[0][1].best);
        assert_eq!(cmp.cells[0][1].delta, 40.0);
        assert_eq!(cmp.cells[0][1].perfect, 1);
        let table = cmp.render();
        assert!(table.contains("90.00*"), "{}", table);

        let rows_other = vec![EvalRow {
            task: "u".into(),
            variation: 0,
            seed: 1,
            steps: 5,
            score: 10.0,
            perfect: false,
        }];
        let other = RunReport::from_rows("o", "u", rows_other);
        assert!(matches!(
            compare(&[low, other]).unwrap_err(),
            HarnessError::TaskSetMismatch { .. }
        ));
    }

    #[test]
    fn curves_have_zero_std_for_single_trajectories_and_carry_forward() {
        let episode = EpisodeRecord {
            task: "t".into(),
            variation: 0,
            steps: 3,
            score: 66.66,
            trajectory: vec![(1, 16.66), (2, 16.66), (3, 66.66)],
        };
        let rows = reward_curves(&[("gt".to_string(), vec![episode])]);
        assert_eq!(rows.len(), (STEP_LIMIT + 1) as usize);
        assert!(rows.iter().all(|r| r.std == 0.0));
        assert_eq!(rows[0].mean, 0.0);
        assert_eq!(rows[2].mean, 16.66);
        assert_eq!(rows[100].mean, 66.66, "score carries to the cap");

        let flat = EpisodeRecord {
            task: "t".into(),
            variation: 0,
            steps: 2,
            score: 50.0,
            trajectory: vec![(1, 50.0), (2, 50.0)],
        };
        let rows = reward_curves(&[("vt".to_string(), vec![flat.clone(), flat])]);
        assert!(rows[1..].iter().all(|r| r.mean == 50.0 && r.std == 0.0));
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("curves.csv");
        write_curves(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,mean,std,mode\n"));
    }
}
