//! Deep reinforcement relevance network: a replay-based Q-learner that scores
//! (state text, action text) pairs.
//!
//! State text arrives in channels (observation, inventory, task description,
//! plus optional affordance and correct-action-memory channels), each encoded
//! by its own GRU over a shared embedding. The action is encoded separately
//! and the two encodings meet in a two-layer scorer:
//!
//!   Q(s, a) = w2 . relu(W1 [s; a] + b1) + b2

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::autodiff::{
    encode_sequence, Adam, AutodiffError, Gru, GruBound, Init, ParamSet, Tape, Tensor, ValueId,
};
use crate::knowledge::{extract_triples, render_affordances_for, AffordanceStore, KnowledgeError, McaBuffer};
use crate::runlog::EpisodeRecord;
use crate::vocab::Vocab;
use crate::world::{EpisodeState, StepResult, WorldError, WorldSpec};

#[derive(Debug, Error)]
pub enum DrrnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("no valid actions to choose from")]
    NoActions,
}

/// Which knowledge channels the agent consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrrnVariant {
    Baseline,
    Aff,
    Mca,
    AffMca,
}

impl DrrnVariant {
    pub fn parse(s: &str) -> Option<DrrnVariant> {
        match s {
            "baseline" => Some(DrrnVariant::Baseline),
            "aff" => Some(DrrnVariant::Aff),
            "mca" => Some(DrrnVariant::Mca),
            "aff_mca" => Some(DrrnVariant::AffMca),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DrrnVariant::Baseline => "baseline",
            DrrnVariant::Aff => "aff",
            DrrnVariant::Mca => "mca",
            DrrnVariant::AffMca => "aff_mca",
        }
    }

    pub fn uses_affordances(self) -> bool {
        matches!(self, DrrnVariant::Aff | DrrnVariant::AffMca)
    }

    pub fn uses_mca(self) -> bool {
        matches!(self, DrrnVariant::Mca | DrrnVariant::AffMca)
    }
}

#[derive(Debug, Clone)]
pub struct DrrnConfig {
    pub variant: DrrnVariant,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch: usize,
    /// Updates between target-network refreshes.
    pub target_refresh: u32,
    /// Environment steps between gradient updates.
    pub update_every: u64,
    /// Replay entries required before updates start.
    pub warmup: usize,
    pub temp_start: f64,
    pub temp_end: f64,
    pub temp_decay_steps: u64,
    /// Rewards are multiplied by this before entering targets, keeping Q
    /// values near unit scale.
    pub reward_scale: f64,
    pub mca_window: usize,
    /// Replay-only updates run after the environment budget is spent.
    pub extra_updates: u32,
    pub seed: u64,
}

impl Default for DrrnConfig {
    fn default() -> Self {
        DrrnConfig {
            variant: DrrnVariant::Baseline,
            embed_dim: 64,
            hidden: 128,
            lr: 1e-4,
            gamma: 0.9,
            replay_capacity: 10_000,
            batch: 32,
            target_refresh: 100,
            update_every: 4,
            warmup: 100,
            temp_start: 1.0,
            temp_end: 0.1,
            temp_decay_steps: 5_000,
            reward_scale: 0.01,
            mca_window: 5,
            extra_updates: 0,
            seed: 7,
        }
    }
}

impl DrrnConfig {
    /// Small-world preset: a narrow network and an aggressive update cadence
    /// that converges on corridor-style tasks in a few thousand steps.
    pub fn chain_preset(seed: u64) -> DrrnConfig {
        DrrnConfig {
            embed_dim: 16,
            hidden: 32,
            lr: 1e-3,
            batch: 16,
            target_refresh: 25,
            update_every: 2,
            warmup: 50,
            temp_decay_steps: 1_000,
            extra_updates: 3_000,
            seed,
            ..DrrnConfig::default()
        }
    }

    fn channels(&self) -> usize {
        3 + usize::from(self.variant.uses_affordances()) + usize::from(self.variant.uses_mca())
    }
}

/// Token ids per channel; what replay stores instead of raw text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedState {
    pub channels: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: EncodedState,
    pub action: Vec<usize>,
    pub reward: f64,
    pub next_state: EncodedState,
    pub next_actions: Vec<Vec<usize>>,
    /// True only when the task is complete; hitting the step limit leaves
    /// this false so the value still bootstraps.
    pub terminal: bool,
}

#[derive(Debug, Default)]
pub struct Replay {
    capacity: usize,
    buf: VecDeque<Transition>,
}

impl Replay {
    pub fn new(capacity: usize) -> Replay {
        Replay { capacity, buf: VecDeque::new() }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.buf[i]
    }
}

const CHANNEL_PREFIXES: [&str; 5] = ["obs", "inv", "desc", "aff", "mca"];

pub struct Drrn {
    pub config: DrrnConfig,
    vocab: Vocab,
    affordances: AffordanceStore,
    params: ParamSet,
    target: ParamSet,
    adam: Adam,
    rng: ChaCha20Rng,
    updates: u32,
}

impl Drrn {
    pub fn new(
        spec: &WorldSpec,
        affordances: AffordanceStore,
        config: DrrnConfig,
    ) -> Result<Drrn, DrrnError> {
        let vocab = Vocab::for_world_with_extras(spec, affordances.corpus());
        let mut init = Init::with_seed(config.seed);
        let mut params = ParamSet::new();
        params.insert("embed", init.matrix(vocab.len(), config.embed_dim))?;
        for prefix in Self::channel_prefixes(&config) {
            Gru::new(prefix, config.embed_dim, config.hidden).init_params(&mut params, &mut init)?;
        }
        Gru::new("act", config.embed_dim, config.hidden).init_params(&mut params, &mut init)?;
        let joint = (config.channels() + 1) * config.hidden;
        params.insert("w1", init.matrix(config.hidden, joint))?;
        params.insert("b1", Tensor::zeros(&[config.hidden]))?;
        params.insert("w2", init.matrix(1, config.hidden))?;
        params.insert("b2", Tensor::zeros(&[1]))?;
        let target = params.clone();
        let adam = Adam::new(config.lr);
        let rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x5eed_0001);
        Ok(Drrn { config, vocab, affordances, params, target, adam, rng, updates: 0 })
    }

    fn channel_prefixes(config: &DrrnConfig) -> Vec<&'static str> {
        let mut out = vec!["obs", "inv", "desc"];
        if config.variant.uses_affordances() {
            out.push("aff");
        }
        if config.variant.uses_mca() {
            out.push("mca");
        }
        debug_assert!(out.iter().all(|p| CHANNEL_PREFIXES.contains(p)));
        out
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

    pub fn updates(&self) -> u32 {
        self.updates
    }

    /// Channel texts for one step: observation, inventory, description, and
    /// whichever knowledge channels the variant enables. The affordance
    /// channel covers objects currently visible in the observation text.
    pub fn channel_texts(&self, result: &StepResult, mca: &McaBuffer) -> Vec<String> {
        let mut texts = vec![
            result.observation.clone(),
            result.inventory.clone(),
            result.description.clone(),
        ];
        if self.config.variant.uses_affordances() {
            let seen = format!("{} {}", result.observation, result.inventory);
            let mentioned: BTreeSet<String> = extract_triples(&seen)
                .into_iter()
                .flat_map(|t| [t.subject, t.object])
                .collect();
            texts.push(render_affordances_for(&self.affordances, &mentioned));
        }
        if self.config.variant.uses_mca() {
            texts.push(mca.render());
        }
        texts
    }

    pub fn encode_state(&self, texts: &[String]) -> EncodedState {
        EncodedState { channels: texts.iter().map(|t| self.vocab.encode(t)).collect() }
    }

    fn state_vector(
        &self,
        tape: &mut Tape,
        embedding: ValueId,
        grus: &[GruBound],
        state: &EncodedState,
    ) -> Result<ValueId, DrrnError> {
        let mut parts = Vec::with_capacity(grus.len());
        for (gru, ids) in grus.iter().zip(&state.channels) {
            parts.push(encode_sequence(tape, embedding, gru, ids)?);
        }
        Ok(tape.concat(&parts)?)
    }

    fn bind_network(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
    ) -> Result<(ValueId, Vec<GruBound>, GruBound, [ValueId; 4]), DrrnError> {
        let embedding = tape.param("embed", params.get("embed")?.clone());
        let mut grus = Vec::new();
        for prefix in Self::channel_prefixes(&self.config) {
            grus.push(Gru::new(prefix, self.config.embed_dim, self.config.hidden).bind(tape, params)?);
        }
        let act = Gru::new("act", self.config.embed_dim, self.config.hidden).bind(tape, params)?;
        let head = [
            tape.param("w1", params.get("w1")?.clone()),
            tape.param("b1", params.get("b1")?.clone()),
            tape.param("w2", params.get("w2")?.clone()),
            tape.param("b2", params.get("b2")?.clone()),
        ];
        Ok((embedding, grus, act, head))
    }

    fn q_node(
        &self,
        tape: &mut Tape,
        embedding: ValueId,
        act: &GruBound,
        head: &[ValueId; 4],
        state_vec: ValueId,
        action: &[usize],
    ) -> Result<ValueId, DrrnError> {
        let a = encode_sequence(tape, embedding, act, action)?;
        let joint = tape.concat(&[state_vec, a])?;
        let h = tape.matvec(head[0], joint)?;
        let h = tape.add(h, head[1])?;
        let h = tape.relu(h);
        let q = tape.matvec(head[2], h)?;
        let q = tape.add(q, head[3])?;
        Ok(tape.index(q, 0)?)
    }

    fn q_values_with(
        &self,
        params: &ParamSet,
        state: &EncodedState,
        actions: &[Vec<usize>],
    ) -> Result<Vec<f64>, DrrnError> {
        let mut tape = Tape::new();
        let (embedding, grus, act, head) = self.bind_network(&mut tape, params)?;
        let state_vec = self.state_vector(&mut tape, embedding, &grus, state)?;
        let mut out = Vec::with_capacity(actions.len());
        for action in actions {
            let q = self.q_node(&mut tape, embedding, &act, &head, state_vec, action)?;
            out.push(tape.scalar_value(q));
        }
        Ok(out)
    }

    pub fn q_values(
        &self,
        state: &EncodedState,
        actions: &[Vec<usize>],
    ) -> Result<Vec<f64>, DrrnError> {
        self.q_values_with(&self.params, state, actions)
    }

    /// Linear decay from `temp_start` to `temp_end` over `temp_decay_steps`.
    pub fn temperature(&self, env_step: u64) -> f64 {
        let c = &self.config;
        if env_step >= c.temp_decay_steps {
            return c.temp_end;
        }
        let frac = env_step as f64 / c.temp_decay_steps as f64;
        c.temp_start + (c.temp_end - c.temp_start) * frac
    }

    /// Boltzmann exploration over Q values at the given temperature.
    pub fn sample_action(&mut self, q: &[f64], temperature: f64) -> Result<usize, DrrnError> {
        if q.is_empty() {
            return Err(DrrnError::NoActions);
        }
        let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = q.iter().map(|v| ((v - max) / temperature).exp()).collect();
        let dist = WeightedIndex::new(&weights).expect("positive softmax weights");
        Ok(dist.sample(&mut self.rng))
    }

    /// Highest Q, lowest index on ties — actions arrive sorted, so this is
    /// deterministic.
    pub fn greedy_action(q: &[f64]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in q.iter().enumerate() {
            if best.map_or(true, |b| v > q[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn refresh_target(&mut self) {
        self.target = self.params.clone();
    }

    /// One sampled-batch temporal-difference update. Targets come from the
    /// frozen copy of the network; the copy refreshes every
    /// `target_refresh` updates.
    pub fn td_update(&mut self, replay: &Replay) -> Result<DrrnUpdateRow, DrrnError> {
        let n = replay.len().min(self.config.batch);
        let indices = rand::seq::index::sample(&mut self.rng, replay.len(), n).into_vec();

        let mut targets = Vec::with_capacity(n);
        for &i in &indices {
            let t = replay.get(i);
            let bootstrap = if t.terminal || t.next_actions.is_empty() {
                0.0
            } else {
                self.q_values_with(&self.target, &t.next_state, &t.next_actions)?
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            targets.push(t.reward * self.config.reward_scale + self.config.gamma * bootstrap);
        }

        let mut tape = Tape::new();
        let (embedding, grus, act, head) = self.bind_network(&mut tape, &self.params)?;
        let mut sq_terms = Vec::with_capacity(n);
        let mut q_sum = 0.0;
        for (&i, &target) in indices.iter().zip(&targets) {
            let t = replay.get(i);
            let state_vec = self.state_vector(&mut tape, embedding, &grus, &t.state)?;
            let q = self.q_node(&mut tape, embedding, &act, &head, state_vec, &t.action)?;
            q_sum += tape.scalar_value(q);
            let diff = tape.add_const(q, -target);
            let sq = tape.mul(diff, diff)?;
            sq_terms.push(sq);
        }
        let stacked = tape.stack(&sq_terms)?;
        let loss = tape.mean(stacked);
        let grads = tape.backward(loss)?;
        self.adam.step(&mut self.params, &grads)?;

        self.updates += 1;
        if self.updates % self.config.target_refresh == 0 {
            self.refresh_target();
        }
        Ok(DrrnUpdateRow {
            update: self.updates,
            loss: tape.scalar_value(loss),
            mean_q: q_sum / n as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrrnUpdateRow {
    pub update: u32,
    pub loss: f64,
    pub mean_q: f64,
}

pub struct DrrnTrainResult {
    pub agent: Drrn,
    pub updates: Vec<DrrnUpdateRow>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Round-robin over the given variations until the environment-step budget is
/// spent, then any configured replay-only updates.
pub fn train_drrn(
    spec: &Arc<WorldSpec>,
    task: &str,
    variations: &[usize],
    affordances: AffordanceStore,
    config: DrrnConfig,
    budget_env_steps: u64,
) -> Result<DrrnTrainResult, DrrnError> {
    let mut agent = Drrn::new(spec, affordances, config)?;
    let mut replay = Replay::new(agent.config.replay_capacity);
    let mut updates = Vec::new();
    let mut episodes = Vec::new();
    let mut env_steps = 0u64;
    let mut episode_idx = 0usize;

    while env_steps < budget_env_steps {
        let variation = variations[episode_idx % variations.len()];
        episode_idx += 1;
        let (mut ep, mut result) = EpisodeState::reset(spec, task, variation, agent.config.seed)?;
        let mut mca = McaBuffer::new(agent.config.mca_window);
        let mut trajectory = Vec::new();

        while !result.done && env_steps < budget_env_steps {
            let state = agent.encode_state(&agent.channel_texts(&result, &mca));
            let actions = result.valid_actions.clone();
            let action_ids: Vec<Vec<usize>> =
                actions.iter().map(|a| agent.vocab.encode(a)).collect();
            let q = agent.q_values(&state, &action_ids)?;
            let temperature = agent.temperature(env_steps);
            let choice = agent.sample_action(&q, temperature)?;

            let next = ep.step(&actions[choice])?;
            env_steps += 1;
            mca.record(ep.step_count(), &actions[choice], next.reward)?;
            trajectory.push((ep.step_count(), next.score));

            let next_state = agent.encode_state(&agent.channel_texts(&next, &mca));
            let terminal = ep.task_complete();
            let next_action_texts = if next.done && !terminal {
                ep.actions_even_if_done()
            } else {
                next.valid_actions.clone()
            };
            replay.push(Transition {
                state,
                action: action_ids[choice].clone(),
                reward: next.reward,
                next_state,
                next_actions: next_action_texts.iter().map(|a| agent.vocab.encode(a)).collect(),
                terminal,
            });

            if replay.len() >= agent.config.warmup && env_steps % agent.config.update_every == 0 {
                updates.push(agent.td_update(&replay)?);
            }
            result = next;
        }

        if result.done {
            episodes.push(EpisodeRecord {
                task: task.to_string(),
                variation,
                steps: ep.step_count(),
                score: ep.score_points(),
                trajectory,
            });
        }
    }

    for _ in 0..agent.config.extra_updates {
        if replay.is_empty() {
            break;
        }
        updates.push(agent.td_update(&replay)?);
    }

    Ok(DrrnTrainResult { agent, updates, episodes })
}

/// Play one episode greedily (no exploration) and report the outcome.
pub fn evaluate_greedy(
    agent: &Drrn,
    spec: &Arc<WorldSpec>,
    task: &str,
    variation: usize,
    seed: u64,
) -> Result<EpisodeRecord, DrrnError> {
    let (mut ep, mut result) = EpisodeState::reset(spec, task, variation, seed)?;
    let mut mca = McaBuffer::new(agent.config.mca_window);
    let mut trajectory = Vec::new();
    while !result.done {
        let state = agent.encode_state(&agent.channel_texts(&result, &mca));
        let actions = result.valid_actions.clone();
        let action_ids: Vec<Vec<usize>> = actions.iter().map(|a| agent.vocab.encode(a)).collect();
        let q = agent.q_values(&state, &action_ids)?;
        let choice = Drrn::greedy_action(&q).ok_or(DrrnError::NoActions)?;
        let next = ep.step(&actions[choice])?;
        mca.record(ep.step_count(), &actions[choice], next.reward)?;
        trajectory.push((ep.step_count(), next.score));
        result = next;
    }
    Ok(EpisodeRecord {
        task: task.to_string(),
        variation,
        steps: ep.step_count(),
        score: ep.score_points(),
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::fixtures;

    fn tiny_config(seed: u64) -> DrrnConfig {
        DrrnConfig {
            embed_dim: 8,
            hidden: 12,
            batch: 8,
            warmup: 16,
            update_every: 2,
            target_refresh: 10,
            temp_decay_steps: 200,
            extra_updates: 0,
            seed,
            ..DrrnConfig::default()
        }
    }

    #[test]
    fn q_values_are_deterministic_per_seed() {
        let spec = fixtures::chain().unwrap();
        let agent = Drrn::new(&spec, AffordanceStore::bundled(), tiny_config(3)).unwrap();
        let (_, first) = EpisodeState::reset(&spec, "reach", 0, 0).unwrap();
        let state = agent.encode_state(&agent.channel_texts(&first, &McaBuffer::new(5)));
        let ids: Vec<Vec<usize>> =
            first.valid_actions.iter().map(|a| agent.vocab().encode(a)).collect();
        let a = agent.q_values(&state, &ids).unwrap();
        let b = agent.q_values(&state, &ids).unwrap();
        assert_eq!(a, b);

        let again = Drrn::new(&spec, AffordanceStore::bundled(), tiny_config(3)).unwrap();
        assert_eq!(a, again.q_values(&state, &ids).unwrap());
    }

    #[test]
    fn variant_toggles_channel_count() {
        let spec = fixtures::mini_science().unwrap();
        let (_, first) = EpisodeState::reset(&spec, "classify", 0, 0).unwrap();
        let mca = McaBuffer::new(5);
        for (variant, expect) in [
            (DrrnVariant::Baseline, 3),
            (DrrnVariant::Aff, 4),
            (DrrnVariant::Mca, 4),
            (DrrnVariant::AffMca, 5),
        ] {
            let config = DrrnConfig { variant, ..tiny_config(0) };
            let agent = Drrn::new(&spec, AffordanceStore::bundled(), config).unwrap();
            assert_eq!(agent.channel_texts(&first, &mca).len(), expect);
        }
    }

    #[test]
    fn affordance_channel_mentions_visible_objects_only() {
        let spec = fixtures::mini_science().unwrap();
        let config = DrrnConfig { variant: DrrnVariant::Aff, ..tiny_config(0) };
        let agent = Drrn::new(&spec, AffordanceStore::bundled(), config).unwrap();
        let (mut ep, _) = EpisodeState::reset(&spec, "classify", 0, 0).unwrap();
        let in_kitchen = ep.step("go to kitchen").unwrap();
        let texts = agent.channel_texts(&in_kitchen, &McaBuffer::new(5));
        let aff = &texts[3];
        assert!(aff.contains("fridge used for cooling food."));
        assert!(!aff.contains("turtle"), "garden objects are not visible: {}", aff);
    }

    #[test]
    fn replay_evicts_oldest_beyond_capacity() {
        let mut replay = Replay::new(2);
        let state = EncodedState { channels: vec![] };
        for reward in [1.0, 2.0, 3.0] {
            replay.push(Transition {
                state: state.clone(),
                action: vec![],
                reward,
                next_state: state.clone(),
                next_actions: vec![],
                terminal: true,
            });
        }
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.get(0).reward, 2.0);
        assert_eq!(replay.get(1).reward, 3.0);
    }

    #[test]
    fn temperature_decays_linearly_to_floor() {
        let spec = fixtures::chain().unwrap();
        let agent = Drrn::new(&spec, AffordanceStore::bundled(), tiny_config(0)).unwrap();
        assert_eq!(agent.temperature(0), 1.0);
        let mid = agent.temperature(100);
        assert!(mid < 1.0 && mid > 0.1);
        assert_eq!(agent.temperature(200), 0.1);
        assert_eq!(agent.temperature(100_000), 0.1);
    }

    #[test]
    fn td_update_reduces_error_on_a_fixed_bandit() {
        // Single state, two actions, immediate terminal rewards 1.0 and 0.0:
        // Q should approach those targets.
        let spec = fixtures::chain().unwrap();
        let mut agent = Drrn::new(&spec, AffordanceStore::bundled(), tiny_config(11)).unwrap();
        let state = EncodedState { channels: vec![vec![4], vec![5], vec![6]] };
        let good: Vec<usize> = vec![7];
        let bad: Vec<usize> = vec![8];
        let mut replay = Replay::new(64);
        for _ in 0..8 {
            for (action, reward) in [(good.clone(), 100.0), (bad.clone(), 0.0)] {
                replay.push(Transition {
                    state: state.clone(),
                    action,
                    reward,
                    next_state: state.clone(),
                    next_actions: vec![],
                    terminal: true,
                });
            }
        }
        for _ in 0..400 {
            agent.td_update(&replay).unwrap();
        }
        let q = agent.q_values(&state, &[good, bad]).unwrap();
        assert!((q[0] - 1.0).abs() < 0.05, "good action Q = {}", q[0]);
        assert!(q[1].abs() < 0.05, "bad action Q = {}", q[1]);
    }

    #[test]
    fn greedy_tie_break_takes_first() {
        assert_eq!(Drrn::greedy_action(&[0.5, 0.5, 0.1]), Some(0));
        assert_eq!(Drrn::greedy_action(&[0.1, 0.7, 0.7]), Some(1));
        assert_eq!(Drrn::greedy_action(&[]), None);
    }

    /// End to end on the corridor world: training must reach a perfect
    /// greedy score, and the learned Q values must match value iteration.
    #[test]
    fn chain_training_matches_value_iteration() {
        let spec = fixtures::chain().unwrap();
        let mut config = DrrnConfig::chain_preset(1);
        config.extra_updates = 1_200;
        let result = train_drrn(&spec, "reach", &[0], AffordanceStore::bundled(), config, 1_200)
            .expect("training");
        let agent = result.agent;

        let eval = evaluate_greedy(&agent, &spec, "reach", 0, 0).unwrap();
        assert_eq!(eval.score, 100.0);
        assert_eq!(eval.steps, 2);

        // Hand value iteration, scaled rewards: terminal 1.0 entering study.
        let g = agent.config.gamma;
        let v_hall = 1.0;
        let v_porch = g * v_hall;
        let expect_porch = [g * v_hall, g * v_porch]; // go to hall, look around
        let expect_hall = [g * v_porch, 1.0, g * v_hall]; // go to porch, go to study, look around

        let mca = McaBuffer::new(5);
        let (mut ep, porch) = EpisodeState::reset(&spec, "reach", 0, 0).unwrap();
        let porch_state = agent.encode_state(&agent.channel_texts(&porch, &mca));
        let porch_ids: Vec<Vec<usize>> =
            porch.valid_actions.iter().map(|a| agent.vocab().encode(a)).collect();
        assert_eq!(porch.valid_actions, vec!["go to hall", "look around"]);
        let q_porch = agent.q_values(&porch_state, &porch_ids).unwrap();

        let hall = ep.step("go to hall").unwrap();
        assert_eq!(hall.valid_actions, vec!["go to porch", "go to study", "look around"]);
        let hall_state = agent.encode_state(&agent.channel_texts(&hall, &mca));
        let hall_ids: Vec<Vec<usize>> =
            hall.valid_actions.iter().map(|a| agent.vocab().encode(a)).collect();
        let q_hall = agent.q_values(&hall_state, &hall_ids).unwrap();

        for (q, expect) in [(&q_porch, &expect_porch[..]), (&q_hall, &expect_hall[..])] {
            for (got, want) in q.iter().zip(expect) {
                assert!(
                    (got - want).abs() < 2e-2,
                    "Q {:?} vs value iteration {:?}",
                    q,
                    expect
                );
            }
        }
    }
}
