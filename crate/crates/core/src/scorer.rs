//! Multiple-choice action scorer.
//!
//! A single GRU encoder reads `state ⊕ separator ⊕ action` and emits one
//! logit. Training treats each step as a small multiple-choice problem —
//! the right action hidden among sampled distractors, cross-entropy over
//! the candidate logits — and play scores every valid action, then samples
//! from the top-p nucleus so the agent can't wedge itself into a loop.
//! Optionally the encoder is first warmed up on affordance question
//! answering, and a short window of previously rewarded actions is
//! appended to the state text.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    encode_sequence, Adam, AutodiffError, Gru, GruBound, Init, ParamSet, Tape, Tensor, ValueId,
};
use crate::knowledge::{AffordanceStore, KnowledgeError, McaBuffer, Relation};
use crate::runlog::EpisodeRecord;
use crate::vocab::{Vocab, SEP};
use crate::world::{EpisodeState, StepResult, WorldError, WorldSpec};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("gold action {0:?} is not among the valid actions")]
    GoldNotValid(String),
    #[error("empty training set")]
    NoExamples,
}

/// One multiple-choice item: a state, candidate actions, and which
/// candidate is right.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerExample {
    pub state: String,
    pub candidates: Vec<String>,
    pub gold: usize,
}

#[derive(Debug, Clone)]
pub struct ScorerConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Question-answering warmup epochs; only used when
    /// `pretrain_affordances` is set.
    pub pretrain_epochs: usize,
    pub distractors: usize,
    /// Token budget for the encoder input; overflow drops the oldest state
    /// tokens first.
    pub max_len: usize,
    pub top_p: f64,
    pub mca_window: usize,
    pub use_mca: bool,
    /// Warm up on affordance question answering before task training.
    pub pretrain_affordances: bool,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            embed_dim: 32,
            hidden: 128,
            lr: 3e-3,
            epochs: 3,
            pretrain_epochs: 48,
            distractors: 4,
            max_len: 256,
            top_p: 0.9,
            mca_window: 5,
            use_mca: false,
            pretrain_affordances: false,
            seed: 7,
        }
    }
}

/// Gold plus up to `n` distinct distractors drawn from the other valid
/// actions, shuffled.
pub fn build_training_example(
    state: &str,
    gold_action: &str,
    valid_actions: &[String],
    n: usize,
    rng: &mut ChaCha20Rng,
) -> Result<ScorerExample, ScorerError> {
    if !valid_actions.iter().any(|a| a == gold_action) {
        return Err(ScorerError::GoldNotValid(gold_action.to_string()));
    }
    let mut pool: Vec<&String> = valid_actions.iter().filter(|a| *a != gold_action).collect();
    pool.shuffle(rng);
    let mut candidates: Vec<String> =
        pool.into_iter().take(n).map(|a| a.clone()).collect();
    candidates.push(gold_action.to_string());
    candidates.shuffle(rng);
    let gold = candidates.iter().position(|a| a == gold_action).expect("gold was pushed");
    Ok(ScorerExample { state: state.to_string(), candidates, gold })
}

/// The state text the scorer reads: description, then the step observation,
/// then the inventory, then (optionally) the recent rewarded actions.
pub fn build_state_text(result: &StepResult, mca: Option<&McaBuffer>) -> String {
    let mut text = format!("{} {} {}", result.description, result.observation, result.inventory);
    if let Some(buf) = mca {
        let recent = buf.render();
        if !recent.is_empty() {
            text.push(' ');
            text.push_str(&recent);
        }
    }
    text
}

/// One example per step of every requested walkthrough, distractors drawn
/// fresh from the valid actions at that step.
pub fn build_trajectory_dataset(
    spec: &Arc<WorldSpec>,
    task: &str,
    variations: &[usize],
    n: usize,
    use_mca: bool,
    mca_window: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<ScorerExample>, ScorerError> {
    let mut examples = Vec::new();
    for &variation in variations {
        let (mut ep, mut result) = EpisodeState::reset(spec, task, variation, 0)?;
        let mut mca = McaBuffer::new(mca_window);
        while let Some(gold) = result.golden_next.clone() {
            let state = build_state_text(&result, use_mca.then_some(&mca));
            examples.push(build_training_example(&state, &gold, &result.valid_actions, n, rng)?);
            result = ep.step(&gold)?;
            mca.record(ep.step_count(), &gold, result.reward)?;
            if result.done {
                break;
            }
        }
    }
    Ok(examples)
}

/// One question per affordance triple with the true object hidden among
/// other objects from the store.
pub fn build_qa_items(
    store: &AffordanceStore,
    rng: &mut ChaCha20Rng,
) -> Vec<ScorerExample> {
    let objects: Vec<&str> = {
        let mut seen = std::collections::BTreeSet::new();
        store.iter().map(|t| t.object.as_str()).filter(|o| seen.insert(*o)).collect()
    };
    let mut items = Vec::new();
    for triple in store.iter() {
        let question = match triple.relation {
            Relation::UsedFor => format!("what is {} used for?", noun_phrase(&triple.subject)),
            Relation::CapableOf => {
                format!("what is {} capable of?", noun_phrase(&triple.subject))
            }
            _ => continue,
        };
        let truths: Vec<&str> = store
            .iter()
            .filter(|t| t.subject == triple.subject && t.relation == triple.relation)
            .map(|t| t.object.as_str())
            .collect();
        let mut pool: Vec<&str> =
            objects.iter().copied().filter(|o| !truths.contains(o)).collect();
        pool.shuffle(rng);
        let mut candidates: Vec<String> =
            pool.into_iter().take(3).map(|o| o.to_string()).collect();
        candidates.push(triple.object.clone());
        candidates.shuffle(rng);
        let gold = candidates.iter().position(|c| *c == triple.object).expect("gold pushed");
        items.push(ScorerExample { state: question, candidates, gold });
    }
    items
}

fn noun_phrase(name: &str) -> String {
    let article = match name.chars().next() {
        Some('a') | Some('e') | Some('i') | Some('o') | Some('u') => "an",
        _ => "a",
    };
    format!("{} {}", article, name)
}

/// One example per line, machine-readable, for inspecting or diffing
/// training sets.
pub fn dump_examples(examples: &[ScorerExample]) -> String {
    examples
        .iter()
        .map(|e| serde_json::to_string(e).expect("plain strings serialize"))
        .map(|line| line + "\n")
        .collect()
}

pub struct Scorer {
    pub config: ScorerConfig,
    vocab: Vocab,
    params: ParamSet,
    adam: Adam,
    rng: ChaCha20Rng,
}

struct BoundScorer {
    embedding: ValueId,
    gru: GruBound,
    head_w: ValueId,
    head_b: ValueId,
}

impl Scorer {
    pub fn new(
        spec: &Arc<WorldSpec>,
        affordances: &AffordanceStore,
        config: ScorerConfig,
    ) -> Result<Scorer, ScorerError> {
        let mut extras = affordances.corpus();
        extras.push("what is used for capable of".to_string());
        let vocab = Vocab::for_world_with_extras(spec, &extras);
        let mut init = Init::with_seed(config.seed);
        let mut params = ParamSet::new();
        params.insert("embed", init.matrix(vocab.len(), config.embed_dim))?;
        Gru::new("enc", config.embed_dim, config.hidden).init_params(&mut params, &mut init)?;
        params.insert("head.w", init.matrix(1, config.hidden))?;
        params.insert("head.b", Tensor::zeros(&[1]))?;
        let adam = Adam::new(config.lr);
        let rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x5c0e_0001);
        Ok(Scorer { config, vocab, params, adam, rng })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Token sequence for one (state, action) pair: the newest `max_len`
    /// state tokens, a separator, then the action.
    fn input_ids(&self, state: &str, action: &str) -> Vec<usize> {
        let mut state_ids = self.vocab.encode(state);
        if state_ids.len() > self.config.max_len {
            state_ids.drain(..state_ids.len() - self.config.max_len);
        }
        state_ids.push(SEP);
        state_ids.extend(self.vocab.encode(action));
        state_ids
    }

    fn bind(&self, tape: &mut Tape) -> Result<BoundScorer, ScorerError> {
        Ok(BoundScorer {
            embedding: tape.param("embed", self.params.get("embed")?.clone()),
            gru: Gru::new("enc", self.config.embed_dim, self.config.hidden)
                .bind(tape, &self.params)?,
            head_w: tape.param("head.w", self.params.get("head.w")?.clone()),
            head_b: tape.param("head.b", self.params.get("head.b")?.clone()),
        })
    }

    fn score_node(
        &self,
        tape: &mut Tape,
        net: &BoundScorer,
        state: &str,
        action: &str,
    ) -> Result<ValueId, ScorerError> {
        let ids = self.input_ids(state, action);
        let h = encode_sequence(tape, net.embedding, &net.gru, &ids)?;
        let out = tape.matvec(net.head_w, h)?;
        let out = tape.add(out, net.head_b)?;
        Ok(tape.index(out, 0)?)
    }

    /// Deterministic logit for one (state, action) pair.
    pub fn score(&self, state: &str, action: &str) -> Result<f64, ScorerError> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape)?;
        let node = self.score_node(&mut tape, &net, state, action)?;
        Ok(tape.scalar_value(node))
    }

    pub fn score_candidates(&self, state: &str, actions: &[String]) -> Result<Vec<f64>, ScorerError> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape)?;
        let mut scores = Vec::with_capacity(actions.len());
        for action in actions {
            let node = self.score_node(&mut tape, &net, state, action)?;
            scores.push(tape.scalar_value(node));
        }
        Ok(scores)
    }

    /// Cross-entropy of the gold candidate under the example's logits, as a
    /// tape node.
    pub fn example_loss(
        &self,
        tape: &mut Tape,
        example: &ScorerExample,
    ) -> Result<ValueId, ScorerError> {
        let net = self.bind(tape)?;
        let logits: Vec<ValueId> = example
            .candidates
            .iter()
            .map(|a| self.score_node(tape, &net, &example.state, a))
            .collect::<Result<_, _>>()?;
        let stacked = tape.stack(&logits)?;
        Ok(tape.cross_entropy(stacked, example.gold)?)
    }

    /// One pass over the examples, an optimizer step per example; returns
    /// the mean loss.
    pub fn train_epoch(&mut self, examples: &[ScorerExample]) -> Result<f64, ScorerError> {
        if examples.is_empty() {
            return Err(ScorerError::NoExamples);
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for idx in order {
            let mut tape = Tape::new();
            let loss = self.example_loss(&mut tape, &examples[idx])?;
            total += tape.scalar_value(loss);
            let grads = tape.backward(loss)?;
            self.adam.step(&mut self.params, &grads)?;
        }
        Ok(total / examples.len() as f64)
    }

    /// Warm-up pass over affordance questions, fresh option sets each epoch.
    pub fn pretrain_affordances(
        &mut self,
        store: &AffordanceStore,
    ) -> Result<Vec<f64>, ScorerError> {
        let mut losses = Vec::new();
        let mut rng = ChaCha20Rng::seed_from_u64(self.config.seed ^ 0x9a00_0001);
        for _ in 0..self.config.pretrain_epochs {
            let items = build_qa_items(store, &mut rng);
            losses.push(self.train_epoch(&items)?);
        }
        Ok(losses)
    }

    /// Fraction of examples whose gold candidate gets the top logit.
    pub fn gold_selection_accuracy(&self, examples: &[ScorerExample]) -> Result<f64, ScorerError> {
        if examples.is_empty() {
            return Err(ScorerError::NoExamples);
        }
        let mut hits = 0usize;
        for example in examples {
            let scores = self.score_candidates(&example.state, &example.candidates)?;
            if argmax(&scores) == example.gold {
                hits += 1;
            }
        }
        Ok(hits as f64 / examples.len() as f64)
    }

    /// Play one episode, scoring every valid action and sampling from the
    /// top-p nucleus.
    pub fn run_episode(
        &self,
        spec: &Arc<WorldSpec>,
        task: &str,
        variation: usize,
        seed: u64,
    ) -> Result<EpisodeTranscript, ScorerError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x09e0_0001);
        let use_mca = self.config.use_mca;
        let p = self.config.top_p;
        run_episode_with(spec, task, variation, seed, self.config.mca_window, |result, mca| {
            let state = build_state_text(result, use_mca.then_some(mca));
            let scores = self.score_candidates(&state, &result.valid_actions)?;
            Ok(select_action(&scores, p, &mut rng))
        })
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct EpisodeTranscript {
    pub record: EpisodeRecord,
    pub actions: Vec<String>,
}

/// Generic episode loop: the chooser picks an index into the valid actions
/// each step, and the rewarded-action window is maintained for it.
pub fn run_episode_with<F>(
    spec: &Arc<WorldSpec>,
    task: &str,
    variation: usize,
    seed: u64,
    mca_window: usize,
    mut choose: F,
) -> Result<EpisodeTranscript, ScorerError>
where
    F: FnMut(&StepResult, &McaBuffer) -> Result<usize, ScorerError>,
{
    let (mut ep, mut result) = EpisodeState::reset(spec, task, variation, seed)?;
    let mut mca = McaBuffer::new(mca_window);
    let mut actions = Vec::new();
    let mut trajectory = Vec::new();
    while !result.done {
        let idx = choose(&result, &mca)?;
        let action = result.valid_actions[idx].clone();
        result = ep.step(&action)?;
        mca.record(ep.step_count(), &action, result.reward)?;
        trajectory.push((ep.step_count(), result.score));
        actions.push(action);
    }
    Ok(EpisodeTranscript {
        record: EpisodeRecord {
            task: task.to_string(),
            variation,
            steps: ep.step_count(),
            score: ep.score_points(),
            trajectory,
        },
        actions,
    })
}

/// Episode loop that always takes the walkthrough action.
pub fn oracle_episode(
    spec: &Arc<WorldSpec>,
    task: &str,
    variation: usize,
) -> Result<EpisodeTranscript, ScorerError> {
    run_episode_with(spec, task, variation, 0, 5, |result, _| {
        let gold = result.golden_next.as_deref().expect("walkthrough continues until done");
        Ok(result
            .valid_actions
            .iter()
            .position(|a| a == gold)
            .expect("walkthrough actions are valid"))
    })
}

/// Softmax with the max subtracted for stability.
pub fn softmax_probs(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Indices of the smallest probability-sorted prefix whose mass reaches
/// `p`, highest probability first; ties broken toward lower indices. If the
/// mass never reaches `p` (p = 1 with rounding), the whole set is kept.
pub fn nucleus(scores: &[f64], p: f64) -> Vec<usize> {
    let probs = softmax_probs(scores);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for idx in order {
        kept.push(idx);
        mass += probs[idx];
        if mass >= p {
            break;
        }
    }
    kept
}

/// Top-p sampling: softmax the scores, keep the nucleus, renormalize, draw.
pub fn select_action(scores: &[f64], p: f64, rng: &mut ChaCha20Rng) -> usize {
    let probs = softmax_probs(scores);
    let kept = nucleus(scores, p);
    if kept.len() == 1 {
        return kept[0];
    }
    let weights: Vec<f64> = kept.iter().map(|&i| probs[i]).collect();
    let dist = WeightedIndex::new(&weights).expect("nucleus probabilities are positive");
    kept[dist.sample(rng)]
}

/// Full training recipe: optional affordance warm-up, then the configured
/// number of epochs over walkthrough steps with distractors redrawn each
/// epoch.
pub struct ScorerTrainReport {
    pub qa_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

pub fn train_scorer(
    scorer: &mut Scorer,
    spec: &Arc<WorldSpec>,
    task: &str,
    variations: &[usize],
    affordances: &AffordanceStore,
) -> Result<ScorerTrainReport, ScorerError> {
    let qa_losses = if scorer.config.pretrain_affordances {
        scorer.pretrain_affordances(affordances)?
    } else {
        Vec::new()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(scorer.config.seed ^ 0xda7a_0001);
    let mut epoch_losses = Vec::new();
    let mut tail: Vec<ParamSet> = Vec::new();
    for _ in 0..scorer.config.epochs {
        let examples = build_trajectory_dataset(
            spec,
            task,
            variations,
            scorer.config.distractors,
            scorer.config.use_mca,
            scorer.config.mca_window,
            &mut rng,
        )?;
        epoch_losses.push(scorer.train_epoch(&examples)?);
        tail.push(scorer.params().clone());
        if tail.len() > 3 {
            tail.remove(0);
        }
    }
    // Per-example updates leave the final weights at the mercy of the last
    // few shuffled examples; settling on the average of the closing epochs
    // damps that order sensitivity.
    if tail.len() > 1 {
        let avg = mean_params(&tail)?;
        scorer.params_mut().adopt_values(&avg)?;
    }
    Ok(ScorerTrainReport { qa_losses, epoch_losses })
}

fn mean_params(snapshots: &[ParamSet]) -> Result<ParamSet, ScorerError> {
    let mut avg = snapshots[0].clone();
    let names: Vec<String> = avg.names().map(str::to_string).collect();
    for name in &names {
        let shape = avg.get(name)?.shape.clone();
        let mut data = vec![0.0; avg.get(name)?.data.len()];
        for snap in snapshots {
            for (d, v) in data.iter_mut().zip(&snap.get(name)?.data) {
                *d += v / snapshots.len() as f64;
            }
        }
        *avg.get_mut(name)? = Tensor::from_vec(&shape, data)?;
    }
    Ok(avg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::fixtures;

    fn tiny_config(seed: u64) -> ScorerConfig {
        ScorerConfig { embed_dim: 12, hidden: 24, seed, ..ScorerConfig::default() }
    }

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn example_builder_counts_and_exclusivity() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ten: Vec<String> = (0..10).map(|i| format!("action {}", i)).collect();
        let ex = build_training_example("s", "action 3", &ten, 4, &mut rng).unwrap();
        assert_eq!(ex.candidates.len(), 5);
        assert_eq!(ex.candidates.iter().filter(|c| *c == "action 3").count(), 1);
        assert_eq!(ex.candidates[ex.gold], "action 3");

        let three = strings(&["a", "b", "c"]);
        let ex = build_training_example("s", "b", &three, 4, &mut rng).unwrap();
        assert_eq!(ex.candidates.len(), 3);

        let err = build_training_example("s", "zzz", &three, 4, &mut rng).unwrap_err();
        assert!(matches!(err, ScorerError::GoldNotValid(_)));

        for _ in 0..2_000 {
            let ex = build_training_example("s", "action 0", &ten, 4, &mut rng).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for c in &ex.candidates {
                assert!(seen.insert(c.clone()), "duplicate candidate {:?}", c);
            }
        }
    }

    #[test]
    fn scoring_is_deterministic_and_truncation_drops_old_text() {
        let spec = fixtures::mini_science().unwrap();
        let scorer = Scorer::new(&spec, &AffordanceStore::bundled(), tiny_config(3)).unwrap();
        let a = scorer.score("the table is in the kitchen", "take apple").unwrap();
        let b = scorer.score("the table is in the kitchen", "take apple").unwrap();
        assert_eq!(a, b);

        let mut long_state = String::new();
        for _ in 0..300 {
            long_state.push_str("apple table fridge ");
        }
        long_state.push_str("focus on the thermometer");
        let with_prefix = format!("box box box box {}", long_state);
        let plain = scorer.score(&long_state, "take apple").unwrap();
        let prefixed = scorer.score(&with_prefix, "take apple").unwrap();
        assert_eq!(plain, prefixed, "dropped prefix must not affect the score");

        let recent_change = format!("{} turtle", long_state);
        assert_ne!(scorer.score(&recent_change, "take apple").unwrap(), plain);
    }

    #[test]
    fn single_candidate_example_has_zero_loss_and_gradient() {
        let spec = fixtures::chain().unwrap();
        let scorer = Scorer::new(&spec, &AffordanceStore::bundled(), tiny_config(0)).unwrap();
        let example = ScorerExample {
            state: "the porch".to_string(),
            candidates: strings(&["go to hall"]),
            gold: 0,
        };
        let mut tape = Tape::new();
        let loss = scorer.example_loss(&mut tape, &example).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
        let grads = tape.backward(loss).unwrap();
        for name in scorer.params().names() {
            if let Some(g) = grads.get(name) {
                assert!(g.data.iter().all(|&x| x == 0.0), "nonzero grad in {}", name);
            }
        }
    }

    #[test]
    fn repeated_example_loss_decreases() {
        let spec = fixtures::chain().unwrap();
        let mut scorer = Scorer::new(&spec, &AffordanceStore::bundled(), tiny_config(5)).unwrap();
        let example = ScorerExample {
            state: "you are on the porch".to_string(),
            candidates: strings(&["go to hall", "look around", "go to study"]),
            gold: 0,
        };
        let mut losses = Vec::new();
        for _ in 0..10 {
            losses.push(scorer.train_epoch(std::slice::from_ref(&example)).unwrap());
        }
        for pair in losses.windows(2) {
            assert!(pair[1] < pair[0], "loss did not decrease: {:?}", losses);
        }
    }

    #[test]
    fn qa_items_ask_about_the_subject() {
        let store = AffordanceStore::bundled();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let items = build_qa_items(&store, &mut rng);
        assert_eq!(items.len(), store.iter().count());
        let apple = items
            .iter()
            .find(|i| i.state == "what is an apple used for?")
            .expect("apple question present");
        assert_eq!(apple.candidates[apple.gold], "eating");
        assert_eq!(apple.candidates.len(), 4);
        for item in &items {
            assert!(item.state.starts_with("what is "));
            let mut seen = std::collections::BTreeSet::new();
            for c in &item.candidates {
                assert!(seen.insert(c.clone()));
            }
        }
    }

    #[test]
    fn single_triple_store_yields_single_option_item() {
        let store = AffordanceStore::parse("lamp\tusedFor\tlighting a room\n", "inline").unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let items = build_qa_items(&store, &mut rng);
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].candidates, strings(&["lighting a room"]));
        assert_eq!(items[0].gold, 0);
    }

    #[test]
    fn nucleus_satisfies_minimality_and_ordering() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = 2 + (rand::Rng::gen::<u64>(&mut rng) % 7) as usize;
            let scores: Vec<f64> =
                (0..n).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
            let p = rand::Rng::gen_range(&mut rng, 0.05..0.999);
            let probs = softmax_probs(&scores);
            let kept = nucleus(&scores, p);
            let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
            assert!(mass >= p || kept.len() == n);
            if kept.len() > 1 {
                let last = *kept.last().unwrap();
                assert!(mass - probs[last] < p, "nucleus is not minimal");
            }
            let min_kept = kept.iter().map(|&i| probs[i]).fold(f64::INFINITY, f64::min);
            for i in 0..n {
                if !kept.contains(&i) {
                    assert!(probs[i] <= min_kept + 1e-12, "excluded a higher-probability index");
                }
            }
        }
    }

    #[test]
    fn top_p_limits_collapse_to_argmax_and_full_softmax() {
        let scores = [0.3, 2.0, -1.0, 1.9];
        assert_eq!(nucleus(&scores, 1e-12), vec![1]);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            assert_eq!(select_action(&scores, 1e-12, &mut rng), 1);
        }
        assert_eq!(nucleus(&scores, 1.0).len(), scores.len());
        let tied = [0.5, 0.5, 0.1];
        assert_eq!(nucleus(&tied, 1e-12), vec![0], "ties resolve to the lower index");
    }

    #[test]
    fn sampled_frequencies_track_renormalized_probabilities() {
        let scores = [1.0, 0.6, 0.2, -0.5, -2.0];
        let p = 0.8;
        let probs = softmax_probs(&scores);
        let kept = nucleus(&scores, p);
        let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
        let mut counts = vec![0usize; scores.len()];
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let draws = 20_000;
        for _ in 0..draws {
            counts[select_action(&scores, p, &mut rng)] += 1;
        }
        for i in 0..scores.len() {
            let freq = counts[i] as f64 / draws as f64;
            if kept.contains(&i) {
                assert!((freq - probs[i] / mass).abs() < 0.02, "index {}: {}", i, freq);
            } else {
                assert_eq!(counts[i], 0, "sampled outside the nucleus");
            }
        }
    }

    #[test]
    fn oracle_policy_finishes_every_task() {
        let spec = fixtures::mini_science().unwrap();
        for task in ["classify", "measure", "electricity", "lifespan"] {
            let t = oracle_episode(&spec, task, 0).unwrap();
            assert_eq!(t.record.score, 100.0, "task {}", task);
            assert!(t.record.perfect());
        }
    }

    #[test]
    fn episode_loop_is_reproducible_and_windows_mca() {
        let spec = fixtures::mini_science().unwrap();
        let config = ScorerConfig { use_mca: true, mca_window: 2, ..tiny_config(6) };
        let scorer = Scorer::new(&spec, &AffordanceStore::bundled(), config).unwrap();
        let a = scorer.run_episode(&spec, "lifespan", 0, 21).unwrap();
        let b = scorer.run_episode(&spec, "lifespan", 0, 21).unwrap();
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.record.score, b.record.score);

        let mut mca = McaBuffer::new(2);
        for (i, reward) in [(1u32, 1.0), (2, 2.0), (3, 3.0)] {
            mca.record(i, &format!("step {}", i), reward).unwrap();
        }
        let (_, result) = EpisodeState::reset(&spec, "lifespan", 0, 0).unwrap();
        let text = build_state_text(&result, Some(&mca));
        assert!(!text.contains("step 1"), "window must drop the oldest action");
        assert!(text.contains("step 2") && text.contains("step 3"));
    }

    #[test]
    fn pretraining_keeps_parameter_shapes_for_finetuning() {
        let spec = fixtures::mini_science().unwrap();
        let store = AffordanceStore::bundled();
        let config = ScorerConfig { pretrain_epochs: 2, ..tiny_config(8) };
        let mut scorer = Scorer::new(&spec, &store, config).unwrap();
        let shapes: Vec<(String, Vec<usize>)> = scorer
            .params()
            .names()
            .map(|n| (n.to_string(), scorer.params().get(n).unwrap().shape.clone()))
            .collect();
        scorer.pretrain_affordances(&store).unwrap();
        for (name, shape) in &shapes {
            assert_eq!(&scorer.params().get(name).unwrap().shape, shape);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let examples =
            build_trajectory_dataset(&spec, "lifespan", &[0, 1], 4, false, 5, &mut rng).unwrap();
        scorer.train_epoch(&examples).unwrap();
    }

    #[test]
    fn dumped_examples_round_trip() {
        let examples = vec![ScorerExample {
            state: "a state".to_string(),
            candidates: strings(&["x", "y"]),
            gold: 1,
        }];
        let dumped = dump_examples(&examples);
        assert_eq!(dumped.lines().count(), 1);
        let parsed: ScorerExample = serde_json::from_str(dumped.trim()).unwrap();
        assert_eq!(parsed, examples[0]);
    }

    #[test]
    fn training_learns_held_out_lifespan_steps() {
        let spec = fixtures::mini_science().unwrap();
        let store = AffordanceStore::bundled();
        let mut scorer = Scorer::new(&spec, &store, tiny_config(12)).unwrap();
        train_scorer(&mut scorer, &spec, "lifespan", &[2, 3, 4, 5, 6, 7], &store).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let held_out =
            build_trajectory_dataset(&spec, "lifespan", &[0, 1], 4, false, 5, &mut rng).unwrap();
        let accuracy = scorer.gold_selection_accuracy(&held_out).unwrap();
        assert!(accuracy >= 0.5, "held-out accuracy {}", accuracy);
    }
}
