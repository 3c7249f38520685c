//! Graph-conditioned actor-critic over template actions.
//!
//! The state is encoded from three sides: GRU channels over the step text, a
//! multi-head graph attention pass over the episode knowledge graph, and a
//! ten-bit encoding of the current score. Actions are produced
//! compositionally — a template head picks the verb pattern and per-slot
//! object heads score graph entities to fill it — so the agent can emit any
//! template action over things it has seen, not just the engine's valid list.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::autodiff::{
    encode_sequence, Adam, AutodiffError, Gradients, Gru, GruBound, Init, ParamSet, Tape, Tensor,
    ValueId,
};
use crate::knowledge::{AffordanceStore, KnowledgeError, KnowledgeGraph, McaBuffer, Triple};
use crate::runlog::EpisodeRecord;
use crate::vocab::Vocab;
use crate::world::{EpisodeState, StepResult, WorldError, WorldSpec, REFUSAL_TEXT};

#[derive(Debug, Error)]
pub enum KgA2cError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("world declares no action templates")]
    NoTemplates,
}

/// Ten-input encoding of the score: a sign bit, then the truncated magnitude
/// as nine big-endian bits, clamped to 511.
pub fn score_bits(points: f64) -> [f64; 10] {
    let magnitude = (points.abs() as u64).min(511);
    let mut bits = [0.0; 10];
    bits[0] = if points < 0.0 { 1.0 } else { 0.0 };
    for i in 0..9 {
        bits[1 + i] = ((magnitude >> (8 - i)) & 1) as f64;
    }
    bits
}

/// What the auxiliary template/object losses are steered toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxTargets {
    /// Everything currently executable.
    Valid,
    /// The next step of the walkthrough.
    Golden,
}

/// Where affordance knowledge enters the model, if at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffordancePlacement {
    None,
    /// Injected as graph triples.
    Kg,
    /// Appended to the observation channel text.
    ObservationText,
    /// A fourth GRU channel of its own.
    SeparateEncoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KgA2cVariant {
    pub targets: AuxTargets,
    pub affordances: AffordancePlacement,
    pub use_mca: bool,
    /// When false the pooled graph summary is zeroed (same width); per-node
    /// representations are still computed for object decoding.
    pub use_gat: bool,
}

impl KgA2cVariant {
    pub fn gt() -> KgA2cVariant {
        KgA2cVariant {
            targets: AuxTargets::Golden,
            affordances: AffordancePlacement::None,
            use_mca: false,
            use_gat: true,
        }
    }

    pub fn vt() -> KgA2cVariant {
        KgA2cVariant { targets: AuxTargets::Valid, ..Self::gt() }
    }

    pub fn parse(s: &str) -> Option<KgA2cVariant> {
        let base = Self::gt();
        match s {
            "vt" => Some(Self::vt()),
            "gt" => Some(base),
            "gt_aff" => Some(KgA2cVariant { affordances: AffordancePlacement::Kg, ..base }),
            "gt_mca" => Some(KgA2cVariant { use_mca: true, ..base }),
            "gt_aff_mca" => Some(KgA2cVariant {
                affordances: AffordancePlacement::Kg,
                use_mca: true,
                ..base
            }),
            "gt_nogat" => Some(KgA2cVariant { use_gat: false, ..base }),
            "gt_aff_text" => {
                Some(KgA2cVariant { affordances: AffordancePlacement::ObservationText, ..base })
            }
            "gt_aff_encoder" => {
                Some(KgA2cVariant { affordances: AffordancePlacement::SeparateEncoder, ..base })
            }
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match (self.targets, self.affordances, self.use_mca, self.use_gat) {
            (AuxTargets::Valid, AffordancePlacement::None, false, true) => "vt",
            (AuxTargets::Golden, AffordancePlacement::None, false, true) => "gt",
            (AuxTargets::Golden, AffordancePlacement::Kg, false, true) => "gt_aff",
            (AuxTargets::Golden, AffordancePlacement::None, true, true) => "gt_mca",
            (AuxTargets::Golden, AffordancePlacement::Kg, true, true) => "gt_aff_mca",
            (AuxTargets::Golden, AffordancePlacement::None, false, false) => "gt_nogat",
            (AuxTargets::Golden, AffordancePlacement::ObservationText, false, true) => "gt_aff_text",
            (AuxTargets::Golden, AffordancePlacement::SeparateEncoder, false, true) => {
                "gt_aff_encoder"
            }
            _ => "custom",
        }
    }
}

#[derive(Debug, Clone)]
pub struct KgA2cConfig {
    pub variant: KgA2cVariant,
    pub embed_dim: usize,
    pub hidden: usize,
    pub gat_heads: usize,
    pub gat_head_dim: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub lr: f64,
    pub gamma: f64,
    pub reward_scale: f64,
    pub num_envs: usize,
    pub horizon: usize,
    pub value_coef: f64,
    pub template_coef: f64,
    pub object_coef: f64,
    /// Weight on the action-set entropy term (sum of P log P over valid
    /// actions). Positive values reward spread; negate to penalize it.
    pub entropy_coef: f64,
    pub mca_window: usize,
    pub seed: u64,
}

impl Default for KgA2cConfig {
    fn default() -> Self {
        KgA2cConfig {
            variant: KgA2cVariant::gt(),
            embed_dim: 50,
            hidden: 100,
            gat_heads: 4,
            gat_head_dim: 25,
            leaky_slope: 0.2,
            dropout: 0.2,
            lr: 3e-3,
            gamma: 0.9,
            reward_scale: 0.01,
            num_envs: 8,
            horizon: 8,
            value_coef: 0.5,
            template_coef: 0.1,
            object_coef: 0.1,
            entropy_coef: 0.1,
            mca_window: 5,
            seed: 7,
        }
    }
}

impl KgA2cConfig {
    fn text_channels(&self) -> usize {
        3 + usize::from(self.variant.affordances == AffordancePlacement::SeparateEncoder)
    }

    fn graph_width(&self) -> usize {
        self.gat_heads * self.gat_head_dim
    }

    fn state_width(&self) -> usize {
        self.text_channels() * self.hidden + self.graph_width() + 10
    }
}

/// Everything one forward pass consumes, assembled outside the tape.
#[derive(Debug, Clone)]
pub struct StepInputs {
    pub channels: Vec<Vec<usize>>,
    pub entities: Vec<String>,
    /// Neighbor lists over `entities`, self-loop included.
    pub adjacency: Vec<Vec<usize>>,
    /// Indices into `entities` naming real objects or locations, the pool
    /// the object heads decode from.
    pub candidates: Vec<usize>,
    pub bits: [f64; 10],
    pub golden_next: Option<String>,
    pub valid_actions: Vec<String>,
}

struct BoundNet {
    embedding: ValueId,
    grus: Vec<GruBound>,
    gat_w: Vec<ValueId>,
    gat_al: Vec<ValueId>,
    gat_ar: Vec<ValueId>,
    gat_wg: ValueId,
    gat_bg: ValueId,
    tmpl_w: ValueId,
    tmpl_b: ValueId,
    obj_w: [ValueId; 2],
    val_w: ValueId,
    val_b: ValueId,
}

/// Tape nodes produced by one forward pass.
pub struct Forward {
    pub tmpl_probs: ValueId,
    pub tmpl_logits: ValueId,
    /// Logits/probs over `candidates`; `None` when the pool is empty.
    pub slot_logits: Option<ValueId>,
    pub slot_probs: Option<ValueId>,
    pub value: ValueId,
    pub fallback: bool,
}

/// A concrete action decoded from the heads.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub action: String,
    pub template: usize,
    /// Candidate-pool index per filled slot; `None` where the uniform
    /// fallback chose the name.
    pub slots: Vec<Option<usize>>,
    pub fallback: bool,
}

const CHANNEL_PREFIXES: [&str; 4] = ["obs", "inv", "desc", "extra"];

pub struct KgA2c {
    pub config: KgA2cConfig,
    spec: Arc<WorldSpec>,
    vocab: Vocab,
    affordances: AffordanceStore,
    params: ParamSet,
    adam: Adam,
    updates: u32,
    /// Sorted object and location names, the fallback decode pool.
    world_names: Vec<String>,
}

impl KgA2c {
    pub fn new(
        spec: &Arc<WorldSpec>,
        affordances: AffordanceStore,
        config: KgA2cConfig,
    ) -> Result<KgA2c, KgA2cError> {
        if spec.templates.is_empty() {
            return Err(KgA2cError::NoTemplates);
        }
        let vocab = Vocab::for_world_with_extras(spec, affordances.corpus());
        let mut init = Init::with_seed(config.seed);
        let mut params = ParamSet::new();
        params.insert("embed", init.matrix(vocab.len(), config.embed_dim))?;
        for prefix in &CHANNEL_PREFIXES[..config.text_channels()] {
            Gru::new(prefix, config.embed_dim, config.hidden).init_params(&mut params, &mut init)?;
        }
        for k in 0..config.gat_heads {
            params.insert(&format!("gat.w{}", k), init.matrix(config.gat_head_dim, config.embed_dim))?;
            params.insert(&format!("gat.al{}", k), init.vector(config.gat_head_dim))?;
            params.insert(&format!("gat.ar{}", k), init.vector(config.gat_head_dim))?;
        }
        let gw = config.graph_width();
        params.insert("gat.wg", init.matrix(gw, gw))?;
        params.insert("gat.bg", Tensor::zeros(&[gw]))?;
        let s = config.state_width();
        params.insert("tmpl.w", init.matrix(spec.templates.len(), s))?;
        params.insert("tmpl.b", Tensor::zeros(&[spec.templates.len()]))?;
        params.insert("obj0.w", init.matrix(gw, s))?;
        params.insert("obj1.w", init.matrix(gw, s))?;
        params.insert("val.w", init.matrix(1, s))?;
        params.insert("val.b", Tensor::zeros(&[1]))?;
        let adam = Adam::new(config.lr);
        let mut world_names: Vec<String> = spec
            .objects
            .iter()
            .map(|o| o.name.clone())
            .chain(spec.locations.iter().map(|l| l.name.clone()))
            .collect();
        world_names.sort();
        Ok(KgA2c {
            config,
            spec: Arc::clone(spec),
            vocab,
            affordances,
            params,
            adam,
            updates: 0,
            world_names,
        })
    }

    pub fn spec(&self) -> &Arc<WorldSpec> {
        &self.spec
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

    /// Fold one step's text into the graph, then apply whatever injected
    /// knowledge the variant calls for.
    pub fn update_graph(&self, kg: &mut KnowledgeGraph, result: &StepResult, mca: &McaBuffer) {
        kg.absorb(&format!("{} {}", result.observation, result.inventory));
        if self.config.variant.affordances == AffordancePlacement::Kg {
            let present: BTreeSet<String> = kg.entities().into_iter().collect();
            let extra: Vec<Triple> = self
                .affordances
                .iter()
                .filter(|t| present.contains(&t.subject))
                .cloned()
                .collect();
            for t in extra {
                kg.insert(t);
            }
        }
        if self.config.variant.use_mca {
            for t in mca.triples() {
                kg.insert(t);
            }
        }
    }

    fn affordance_text(&self, kg: &KnowledgeGraph) -> String {
        let present: BTreeSet<String> = kg.entities().into_iter().collect();
        crate::knowledge::render_affordances_for(&self.affordances, &present)
    }

    pub fn build_inputs(&self, result: &StepResult, kg: &KnowledgeGraph) -> StepInputs {
        let mut obs = result.observation.clone();
        if self.config.variant.affordances == AffordancePlacement::ObservationText {
            let aff = self.affordance_text(kg);
            if !aff.is_empty() {
                obs = format!("{} {}", obs, aff);
            }
        }
        let mut texts = vec![obs, result.inventory.clone(), result.description.clone()];
        if self.config.variant.affordances == AffordancePlacement::SeparateEncoder {
            texts.push(self.affordance_text(kg));
        }
        let entities = kg.entities();
        let index = |name: &str| entities.binary_search_by(|e| e.as_str().cmp(name)).ok();
        let mut adjacency: Vec<Vec<usize>> = (0..entities.len()).map(|i| vec![i]).collect();
        for t in kg.iter() {
            if let (Some(a), Some(b)) = (index(&t.subject), index(&t.object)) {
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
        for neighbors in &mut adjacency {
            neighbors.sort();
            neighbors.dedup();
        }
        let candidates = (0..entities.len())
            .filter(|&i| {
                self.spec.object_id(&entities[i]).is_some()
                    || self.spec.location_id(&entities[i]).is_some()
            })
            .collect();
        StepInputs {
            channels: texts.iter().map(|t| self.vocab.encode(t)).collect(),
            entities,
            adjacency,
            candidates,
            bits: score_bits(result.score),
            golden_next: result.golden_next.clone(),
            valid_actions: result.valid_actions.clone(),
        }
    }

    fn bind(&self, tape: &mut Tape) -> Result<BoundNet, KgA2cError> {
        let p = &self.params;
        let embedding = tape.param("embed", p.get("embed")?.clone());
        let mut grus = Vec::new();
        for prefix in &CHANNEL_PREFIXES[..self.config.text_channels()] {
            grus.push(Gru::new(prefix, self.config.embed_dim, self.config.hidden).bind(tape, p)?);
        }
        let mut gat_w = Vec::new();
        let mut gat_al = Vec::new();
        let mut gat_ar = Vec::new();
        for k in 0..self.config.gat_heads {
            gat_w.push(tape.param(&format!("gat.w{}", k), p.get(&format!("gat.w{}", k))?.clone()));
            gat_al.push(tape.param(&format!("gat.al{}", k), p.get(&format!("gat.al{}", k))?.clone()));
            gat_ar.push(tape.param(&format!("gat.ar{}", k), p.get(&format!("gat.ar{}", k))?.clone()));
        }
        Ok(BoundNet {
            embedding,
            grus,
            gat_w,
            gat_al,
            gat_ar,
            gat_wg: tape.param("gat.wg", p.get("gat.wg")?.clone()),
            gat_bg: tape.param("gat.bg", p.get("gat.bg")?.clone()),
            tmpl_w: tape.param("tmpl.w", p.get("tmpl.w")?.clone()),
            tmpl_b: tape.param("tmpl.b", p.get("tmpl.b")?.clone()),
            obj_w: [
                tape.param("obj0.w", p.get("obj0.w")?.clone()),
                tape.param("obj1.w", p.get("obj1.w")?.clone()),
            ],
            val_w: tape.param("val.w", p.get("val.w")?.clone()),
            val_b: tape.param("val.b", p.get("val.b")?.clone()),
        })
    }

    /// Mean of the embedding rows of the entity's name tokens.
    fn node_feature(
        &self,
        tape: &mut Tape,
        net: &BoundNet,
        name: &str,
    ) -> Result<ValueId, KgA2cError> {
        let ids = self.vocab.encode(name);
        if ids.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[self.config.embed_dim])));
        }
        let mut acc = tape.row(net.embedding, ids[0])?;
        for &id in &ids[1..] {
            let row = tape.row(net.embedding, id)?;
            acc = tape.add(acc, row)?;
        }
        Ok(tape.scale(acc, 1.0 / ids.len() as f64))
    }

    /// Multi-head attention over the graph: per-node concatenated head
    /// outputs, and the pooled, projected, tanh-squashed summary.
    fn gat_forward(
        &self,
        tape: &mut Tape,
        net: &BoundNet,
        inputs: &StepInputs,
    ) -> Result<(Vec<ValueId>, ValueId), KgA2cError> {
        let n = inputs.entities.len();
        let gw = self.config.graph_width();
        if n == 0 {
            return Ok((Vec::new(), tape.constant(Tensor::zeros(&[gw]))));
        }
        let features: Vec<ValueId> = inputs
            .entities
            .iter()
            .map(|e| self.node_feature(tape, net, e))
            .collect::<Result<_, _>>()?;

        let slope = self.config.leaky_slope;
        let mut per_head: Vec<Vec<ValueId>> = Vec::with_capacity(self.config.gat_heads);
        for k in 0..self.config.gat_heads {
            let wh: Vec<ValueId> = features
                .iter()
                .map(|&x| tape.matvec(net.gat_w[k], x))
                .collect::<Result<_, _>>()?;
            let left: Vec<ValueId> =
                wh.iter().map(|&h| tape.dot(net.gat_al[k], h)).collect::<Result<_, _>>()?;
            let right: Vec<ValueId> =
                wh.iter().map(|&h| tape.dot(net.gat_ar[k], h)).collect::<Result<_, _>>()?;
            let mut outputs = Vec::with_capacity(n);
            for i in 0..n {
                let mut scores = Vec::new();
                for &j in &inputs.adjacency[i] {
                    let s = tape.add(left[i], right[j])?;
                    scores.push(tape.leaky_relu(s, slope));
                }
                let stacked = tape.stack(&scores)?;
                let alpha = tape.softmax(stacked);
                let mut agg: Option<ValueId> = None;
                for (jj, &j) in inputs.adjacency[i].iter().enumerate() {
                    let a = tape.index(alpha, jj)?;
                    let scaled = tape.mul(a, wh[j])?;
                    agg = Some(match agg {
                        None => scaled,
                        Some(prev) => tape.add(prev, scaled)?,
                    });
                }
                let agg = agg.expect("self-loop guarantees at least one neighbor");
                outputs.push(tape.leaky_relu(agg, slope));
            }
            per_head.push(outputs);
        }

        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let parts: Vec<ValueId> = per_head.iter().map(|h| h[i]).collect();
            nodes.push(tape.concat(&parts)?);
        }
        let mut pooled = nodes[0];
        for &node in &nodes[1..] {
            pooled = tape.add(pooled, node)?;
        }
        let pooled = tape.scale(pooled, 1.0 / n as f64);
        let g = tape.matvec(net.gat_wg, pooled)?;
        let g = tape.add(g, net.gat_bg)?;
        Ok((nodes, tape.tanh(g)))
    }

    fn forward_with(
        &self,
        tape: &mut Tape,
        net: &BoundNet,
        inputs: &StepInputs,
        dropout_mask: Option<Vec<f64>>,
    ) -> Result<Forward, KgA2cError> {
        let mut parts = Vec::new();
        for (gru, ids) in net.grus.iter().zip(&inputs.channels) {
            parts.push(encode_sequence(tape, net.embedding, gru, ids)?);
        }
        let (nodes, g) = self.gat_forward(tape, net, inputs)?;
        let g = if self.config.variant.use_gat {
            g
        } else {
            tape.constant(Tensor::zeros(&[self.config.graph_width()]))
        };
        parts.push(g);
        parts.push(tape.constant(Tensor::from_vec(&[10], inputs.bits.to_vec())?));
        let mut s_info = tape.concat(&parts)?;
        if let Some(mask) = dropout_mask {
            s_info = tape.dropout(s_info, mask)?;
        }

        let tmpl_logits = {
            let l = tape.matvec(net.tmpl_w, s_info)?;
            tape.add(l, net.tmpl_b)?
        };
        let tmpl_probs = tape.softmax(tmpl_logits);

        let (slot_logits, slot_probs) = if inputs.candidates.is_empty() || nodes.is_empty() {
            (None, None)
        } else {
            let query0 = tape.matvec(net.obj_w[0], s_info)?;
            let query1 = tape.matvec(net.obj_w[1], s_info)?;
            let mut l0 = Vec::new();
            let mut l1 = Vec::new();
            for &c in &inputs.candidates {
                l0.push(tape.dot(query0, nodes[c])?);
                l1.push(tape.dot(query1, nodes[c])?);
            }
            let l0 = tape.stack(&l0)?;
            let l1 = tape.stack(&l1)?;
            let stacked_logits = tape.concat(&[l0, l1])?;
            let p0 = tape.softmax(l0);
            let p1 = tape.softmax(l1);
            let stacked_probs = tape.concat(&[p0, p1])?;
            (Some(stacked_logits), Some(stacked_probs))
        };

        let value = {
            let v = tape.matvec(net.val_w, s_info)?;
            let v = tape.add(v, net.val_b)?;
            tape.index(v, 0)?
        };

        Ok(Forward {
            tmpl_probs,
            tmpl_logits,
            slot_logits,
            slot_probs,
            value,
            fallback: inputs.candidates.is_empty(),
        })
    }

    /// Forward pass without sampling: the template distribution and the
    /// state value.
    pub fn policy_readout(&self, inputs: &StepInputs) -> Result<(Vec<f64>, f64), KgA2cError> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape)?;
        let fwd = self.forward_with(&mut tape, &net, inputs, None)?;
        Ok((tape.value(fwd.tmpl_probs).data.clone(), tape.scalar_value(fwd.value)))
    }

    fn slot_prob_values(&self, tape: &Tape, fwd: &Forward, slot: usize, len: usize) -> Vec<f64> {
        let Some(probs) = fwd.slot_probs else { return Vec::new() };
        let data = &tape.value(probs).data;
        data[slot * len..(slot + 1) * len].to_vec()
    }

    /// Sample a template and slot fillers; entities come from the candidate
    /// pool, or uniformly from all world names when the pool is empty.
    fn decode(
        &self,
        tape: &Tape,
        fwd: &Forward,
        inputs: &StepInputs,
        rng: &mut ChaCha20Rng,
        greedy: bool,
    ) -> Decoded {
        let tmpl_probs = &tape.value(fwd.tmpl_probs).data;
        let template = if greedy {
            argmax(tmpl_probs)
        } else {
            WeightedIndex::new(tmpl_probs).expect("softmax weights").sample(rng)
        };
        let pattern = &self.spec.templates[template].pattern;
        let arity = self.spec.templates[template].arity;
        let mut slots = Vec::with_capacity(arity);
        let mut names: Vec<&str> = Vec::with_capacity(arity);
        for slot in 0..arity {
            if fwd.fallback {
                let pick = rng.gen_range(0..self.world_names.len());
                names.push(&self.world_names[pick]);
                slots.push(None);
            } else {
                let probs = self.slot_prob_values(tape, fwd, slot, inputs.candidates.len());
                let choice = if greedy {
                    argmax(&probs)
                } else {
                    WeightedIndex::new(&probs).expect("softmax weights").sample(rng)
                };
                names.push(&inputs.entities[inputs.candidates[choice]]);
                slots.push(Some(choice));
            }
        }
        Decoded { action: fill_pattern(pattern, &names), template, slots, fallback: fwd.fallback }
    }

    // -- loss pieces --------------------------------------------------------

    /// Mean binary cross-entropy between a probability vector node and fixed
    /// targets.
    fn bce(&self, tape: &mut Tape, probs: ValueId, targets: &[f64]) -> Result<ValueId, KgA2cError> {
        let n = targets.len();
        let y = tape.constant(Tensor::from_vec(&[n], targets.to_vec())?);
        let log_p = tape.log(probs);
        let hit = tape.dot(y, log_p)?;
        let one_minus_p = {
            let neg = tape.scale(probs, -1.0);
            tape.add_const(neg, 1.0)
        };
        let log_q = tape.log(one_minus_p);
        let y_inv = {
            let neg = tape.scale(y, -1.0);
            tape.add_const(neg, 1.0)
        };
        let miss = tape.dot(y_inv, log_q)?;
        let total = tape.add(hit, miss)?;
        Ok(tape.scale(total, -1.0 / n as f64))
    }

    fn template_targets(&self, inputs: &StepInputs) -> Vec<f64> {
        let mut y = vec![0.0; self.spec.templates.len()];
        match self.config.variant.targets {
            AuxTargets::Golden => {
                if let Some((t, _)) =
                    inputs.golden_next.as_deref().and_then(|a| self.spec.split_action(a))
                {
                    y[t] = 1.0;
                    return y;
                }
                // No walkthrough step left; fall back to the valid set.
                for action in &inputs.valid_actions {
                    if let Some((t, _)) = self.spec.split_action(action) {
                        y[t] = 1.0;
                    }
                }
                y
            }
            AuxTargets::Valid => {
                for action in &inputs.valid_actions {
                    if let Some((t, _)) = self.spec.split_action(action) {
                        y[t] = 1.0;
                    }
                }
                y
            }
        }
    }

    /// Multi-hot over the candidate pool for each slot position; `None` when
    /// no target entity is in the pool.
    fn slot_targets(&self, inputs: &StepInputs, slot: usize) -> Option<Vec<f64>> {
        let mut y = vec![0.0; inputs.candidates.len()];
        let mut any = false;
        let mut mark = |name: &str| {
            for (ci, &e) in inputs.candidates.iter().enumerate() {
                if inputs.entities[e] == name {
                    y[ci] = 1.0;
                    any = true;
                }
            }
        };
        match self.config.variant.targets {
            AuxTargets::Golden => {
                if let Some((_, args)) =
                    inputs.golden_next.as_deref().and_then(|a| self.spec.split_action(a))
                {
                    if let Some(name) = args.get(slot) {
                        mark(name);
                    }
                }
            }
            AuxTargets::Valid => {
                for action in &inputs.valid_actions {
                    if let Some((_, args)) = self.spec.split_action(action) {
                        if let Some(name) = args.get(slot) {
                            mark(name);
                        }
                    }
                }
            }
        }
        if any {
            Some(y)
        } else {
            None
        }
    }

    /// Probability the heads assign to a concrete action, as a tape node;
    /// `None` if the action names entities outside the candidate pool.
    fn action_prob_node(
        &self,
        tape: &mut Tape,
        fwd: &Forward,
        inputs: &StepInputs,
        action: &str,
    ) -> Result<Option<ValueId>, KgA2cError> {
        let Some((template, args)) = self.spec.split_action(action) else { return Ok(None) };
        let mut p = tape.index(fwd.tmpl_probs, template)?;
        for (slot, name) in args.iter().enumerate() {
            let Some(probs) = fwd.slot_probs else { return Ok(None) };
            let pool = inputs.candidates.len();
            let Some(ci) = inputs
                .candidates
                .iter()
                .position(|&e| inputs.entities[e] == *name)
            else {
                return Ok(None);
            };
            let p_slot = tape.index(probs, slot * pool + ci)?;
            p = tape.mul(p, p_slot)?;
        }
        Ok(Some(p))
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

fn fill_pattern(pattern: &str, names: &[&str]) -> String {
    let mut out = String::new();
    let mut pieces = pattern.split("OBJ");
    if let Some(first) = pieces.next() {
        out.push_str(first);
    }
    for (piece, name) in pieces.zip(names) {
        out.push_str(name);
        out.push_str(piece);
    }
    out.trim().to_string()
}

/// Sum of p·log p over a set of action-probability nodes: zero for an empty
/// set, ln(1/n) when n actions share probability uniformly.
pub fn action_set_entropy(tape: &mut Tape, action_probs: &[ValueId]) -> Result<ValueId, AutodiffError> {
    if action_probs.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let terms: Vec<ValueId> = action_probs.iter().map(|&p| tape.xlogx(p)).collect();
    let stacked = tape.stack(&terms)?;
    Ok(tape.sum(stacked))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KgUpdateRow {
    pub update: u32,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub l_t: f64,
    pub l_o: f64,
    pub l_e: f64,
    /// Mean score of recently finished episodes.
    pub score: f64,
}

pub struct KgA2cTrainResult {
    pub agent: KgA2c,
    pub updates: Vec<KgUpdateRow>,
    pub episodes: Vec<EpisodeRecord>,
}

struct EnvSlot {
    ep: EpisodeState,
    result: StepResult,
    kg: KnowledgeGraph,
    mca: McaBuffer,
    trajectory: Vec<(u32, f64)>,
    variation: usize,
    finished: bool,
}

struct SegmentStats {
    policy: f64,
    value: f64,
    l_t: f64,
    l_o: f64,
    l_e: f64,
    steps: usize,
}

/// Rolling mean of the last few finished episodes, for the log's score
/// column.
struct RecentScores {
    buf: VecDeque<f64>,
}

impl RecentScores {
    fn new() -> RecentScores {
        RecentScores { buf: VecDeque::new() }
    }

    fn push(&mut self, score: f64) {
        if self.buf.len() == 10 {
            self.buf.pop_front();
        }
        self.buf.push_back(score);
    }

    fn mean(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            self.buf.iter().sum::<f64>() / self.buf.len() as f64
        }
    }
}

pub fn train_kga2c(
    spec: &Arc<WorldSpec>,
    task: &str,
    variations: &[usize],
    affordances: AffordanceStore,
    config: KgA2cConfig,
    budget_env_steps: u64,
) -> Result<KgA2cTrainResult, KgA2cError> {
    let mut agent = KgA2c::new(spec, affordances, config)?;
    let mut rng = ChaCha20Rng::seed_from_u64(agent.config.seed ^ 0xa2c0_0001);
    let mut episodes = Vec::new();
    let mut updates = Vec::new();
    let mut recent = RecentScores::new();
    let mut env_steps = 0u64;
    let mut variation_cursor = 0usize;

    let fresh_env = |cursor: &mut usize, agent: &KgA2c| -> Result<EnvSlot, KgA2cError> {
        let variation = variations[*cursor % variations.len()];
        *cursor += 1;
        let (ep, result) = EpisodeState::reset(spec, task, variation, agent.config.seed)?;
        let mut kg = KnowledgeGraph::new();
        let mca = McaBuffer::new(agent.config.mca_window);
        agent.update_graph(&mut kg, &result, &mca);
        Ok(EnvSlot { ep, result, kg, mca, trajectory: Vec::new(), variation, finished: false })
    };

    let mut envs = Vec::with_capacity(agent.config.num_envs);
    for _ in 0..agent.config.num_envs {
        envs.push(fresh_env(&mut variation_cursor, &agent)?);
    }

    while env_steps < budget_env_steps {
        let mut combined: Option<Gradients> = None;
        let mut stats = SegmentStats { policy: 0.0, value: 0.0, l_t: 0.0, l_o: 0.0, l_e: 0.0, steps: 0 };
        for env_idx in 0..envs.len() {
            if envs[env_idx].finished {
                envs[env_idx] = fresh_env(&mut variation_cursor, &agent)?;
            }
            let (grads, seg) = run_segment(
                &mut agent,
                &mut envs[env_idx],
                &mut rng,
                &mut env_steps,
                budget_env_steps,
                &mut episodes,
                &mut recent,
            )?;
            if seg.steps == 0 {
                continue;
            }
            stats.policy += seg.policy;
            stats.value += seg.value;
            stats.l_t += seg.l_t;
            stats.l_o += seg.l_o;
            stats.l_e += seg.l_e;
            stats.steps += seg.steps;
            match &mut combined {
                None => combined = Some(grads),
                Some(total) => total.accumulate(grads)?,
            }
        }
        let Some(mut grads) = combined else { break };
        grads.scale(1.0 / envs.len() as f64);
        agent.adam.step(&mut agent.params, &grads)?;
        agent.updates += 1;
        let n = stats.steps.max(1) as f64;
        updates.push(KgUpdateRow {
            update: agent.updates,
            policy_loss: stats.policy / n,
            value_loss: stats.value / n,
            l_t: stats.l_t / n,
            l_o: stats.l_o / n,
            l_e: stats.l_e / n,
            score: recent.mean(),
        });
    }

    Ok(KgA2cTrainResult { agent, updates, episodes })
}

struct StepNodes {
    nll: ValueId,
    value: ValueId,
    l_t: ValueId,
    l_o: Option<ValueId>,
    l_e: ValueId,
    reward: f64,
    value_now: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_segment(
    agent: &mut KgA2c,
    env: &mut EnvSlot,
    rng: &mut ChaCha20Rng,
    env_steps: &mut u64,
    budget: u64,
    episodes: &mut Vec<EpisodeRecord>,
    recent: &mut RecentScores,
) -> Result<(Gradients, SegmentStats), KgA2cError> {
    let mut tape = Tape::new();
    let net = agent.bind(&mut tape)?;
    let mut steps: Vec<StepNodes> = Vec::new();
    let mut episode_over = false;

    for _ in 0..agent.config.horizon {
        if *env_steps >= budget || env.result.done {
            break;
        }
        let inputs = agent.build_inputs(&env.result, &env.kg);
        let mask = dropout_mask(agent.config.state_width(), agent.config.dropout, rng);
        let fwd = agent.forward_with(&mut tape, &net, &inputs, Some(mask))?;
        let decoded = agent.decode(&tape, &fwd, &inputs, rng, false);

        let next = env.ep.step(&decoded.action)?;
        *env_steps += 1;
        let refused = next.observation == REFUSAL_TEXT;
        env.mca.record(env.ep.step_count(), &decoded.action, next.reward)?;
        env.trajectory.push((env.ep.step_count(), next.score));

        // Log-likelihood of the sampled action under the heads.
        let mut nll = tape.cross_entropy(fwd.tmpl_logits, decoded.template)?;
        if let (Some(logits), false) = (fwd.slot_logits, decoded.fallback) {
            let pool = inputs.candidates.len();
            for (slot, choice) in decoded.slots.iter().enumerate() {
                if let Some(ci) = choice {
                    // Slot logits are stacked [slot0; slot1].
                    let slot_slice = slice_logits(&mut tape, logits, slot, pool)?;
                    let ce = tape.cross_entropy(slot_slice, *ci)?;
                    nll = tape.add(nll, ce)?;
                }
            }
        }

        let l_t = {
            let targets = agent.template_targets(&inputs);
            agent.bce(&mut tape, fwd.tmpl_probs, &targets)?
        };
        let l_o = match (fwd.slot_probs, inputs.candidates.len()) {
            (Some(probs), pool) if pool > 0 => {
                let mut parts = Vec::new();
                for slot in 0..2 {
                    if let Some(targets) = agent.slot_targets(&inputs, slot) {
                        let slot_slice = slice_probs(&mut tape, probs, slot, pool)?;
                        parts.push(agent.bce(&mut tape, slot_slice, &targets)?);
                    }
                }
                match parts.len() {
                    0 => None,
                    1 => Some(parts[0]),
                    _ => {
                        let stacked = tape.stack(&parts)?;
                        Some(tape.mean(stacked))
                    }
                }
            }
            _ => None,
        };
        let l_e = {
            let mut action_probs = Vec::new();
            for action in &inputs.valid_actions {
                if let Some(p) = agent.action_prob_node(&mut tape, &fwd, &inputs, action)? {
                    action_probs.push(p);
                }
            }
            action_set_entropy(&mut tape, &action_probs)?
        };

        steps.push(StepNodes {
            nll,
            value: fwd.value,
            l_t,
            l_o,
            l_e,
            reward: next.reward * agent.config.reward_scale,
            value_now: tape.scalar_value(fwd.value),
        });

        let vt_cutoff = agent.config.variant.targets == AuxTargets::Valid && refused;
        agent.update_graph(&mut env.kg, &next, &env.mca);
        env.result = next;
        if vt_cutoff {
            env.finished = true;
            episode_over = true;
        }
        if env.result.done {
            env.finished = true;
            episode_over = env.ep.task_complete();
        }
        if env.finished {
            episodes.push(EpisodeRecord {
                task: env.ep.task_id().to_string(),
                variation: env.variation,
                steps: env.ep.step_count(),
                score: env.ep.score_points(),
                trajectory: env.trajectory.clone(),
            });
            recent.push(env.ep.score_points());
            break;
        }
    }

    if steps.is_empty() {
        return Ok((Gradients::default(), SegmentStats { policy: 0.0, value: 0.0, l_t: 0.0, l_o: 0.0, l_e: 0.0, steps: 0 }));
    }

    // Bootstrap from the state after the segment unless the episode truly
    // ended; hitting the step limit still bootstraps.
    let bootstrap = if episode_over {
        0.0
    } else {
        let inputs = agent.build_inputs(&env.result, &env.kg);
        let mut vtape = Tape::new();
        let vnet = agent.bind(&mut vtape)?;
        let fwd = agent.forward_with(&mut vtape, &vnet, &inputs, None)?;
        vtape.scalar_value(fwd.value)
    };

    let gamma = agent.config.gamma;
    let mut returns = vec![0.0; steps.len()];
    let mut acc = bootstrap;
    for (i, step) in steps.iter().enumerate().rev() {
        acc = step.reward + gamma * acc;
        returns[i] = acc;
    }

    let n = steps.len() as f64;
    let mut policy_terms = Vec::new();
    let mut value_terms = Vec::new();
    let mut lt_terms = Vec::new();
    let mut lo_terms = Vec::new();
    let mut le_terms = Vec::new();
    for (step, &ret) in steps.iter().zip(&returns) {
        let advantage = ret - step.value_now;
        policy_terms.push(tape.scale(step.nll, advantage));
        let diff = tape.add_const(step.value, -ret);
        value_terms.push(tape.mul(diff, diff)?);
        lt_terms.push(step.l_t);
        if let Some(lo) = step.l_o {
            lo_terms.push(lo);
        }
        le_terms.push(step.l_e);
    }
    let sum_mean = |tape: &mut Tape, terms: &[ValueId]| -> Result<ValueId, AutodiffError> {
        if terms.is_empty() {
            return Ok(tape.constant(Tensor::scalar(0.0)));
        }
        let stacked = tape.stack(terms)?;
        Ok(tape.mean(stacked))
    };
    let policy = sum_mean(&mut tape, &policy_terms)?;
    let value = sum_mean(&mut tape, &value_terms)?;
    let l_t = sum_mean(&mut tape, &lt_terms)?;
    let l_o = sum_mean(&mut tape, &lo_terms)?;
    let l_e = sum_mean(&mut tape, &le_terms)?;

    let c = &agent.config;
    let mut total = policy;
    let v = tape.scale(value, c.value_coef);
    total = tape.add(total, v)?;
    let t = tape.scale(l_t, c.template_coef);
    total = tape.add(total, t)?;
    let o = tape.scale(l_o, c.object_coef);
    total = tape.add(total, o)?;
    let e = tape.scale(l_e, c.entropy_coef);
    total = tape.add(total, e)?;

    let grads = tape.backward(total)?;
    let stats = SegmentStats {
        policy: tape.scalar_value(policy) * n,
        value: tape.scalar_value(value) * n,
        l_t: tape.scalar_value(l_t) * n,
        l_o: tape.scalar_value(l_o) * n,
        l_e: tape.scalar_value(l_e) * n,
        steps: steps.len(),
    };
    Ok((grads, stats))
}

fn slice_logits(tape: &mut Tape, stacked: ValueId, slot: usize, pool: usize) -> Result<ValueId, AutodiffError> {
    let mut parts = Vec::with_capacity(pool);
    for i in 0..pool {
        parts.push(tape.index(stacked, slot * pool + i)?);
    }
    tape.stack(&parts)
}

fn slice_probs(tape: &mut Tape, stacked: ValueId, slot: usize, pool: usize) -> Result<ValueId, AutodiffError> {
    slice_logits(tape, stacked, slot, pool)
}

fn dropout_mask(width: usize, rate: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; width];
    }
    let keep = 1.0 - rate;
    (0..width).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect()
}

/// Play one episode with the stochastic policy (no dropout). Valid-target
/// agents stop at their first refused action, mirroring training.
pub fn evaluate_sampled(
    agent: &KgA2c,
    spec: &Arc<WorldSpec>,
    task: &str,
    variation: usize,
    seed: u64,
) -> Result<EpisodeRecord, KgA2cError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x0e5a_1001);
    let (mut ep, mut result) = EpisodeState::reset(spec, task, variation, seed)?;
    let mut kg = KnowledgeGraph::new();
    let mut mca = McaBuffer::new(agent.config.mca_window);
    agent.update_graph(&mut kg, &result, &mca);
    let mut trajectory = Vec::new();
    while !result.done {
        let inputs = agent.build_inputs(&result, &kg);
        let mut tape = Tape::new();
        let net = agent.bind(&mut tape)?;
        let fwd = agent.forward_with(&mut tape, &net, &inputs, None)?;
        let decoded = agent.decode(&tape, &fwd, &inputs, &mut rng, false);
        let next = ep.step(&decoded.action)?;
        let refused = next.observation == REFUSAL_TEXT;
        mca.record(ep.step_count(), &decoded.action, next.reward)?;
        trajectory.push((ep.step_count(), next.score));
        agent.update_graph(&mut kg, &next, &mca);
        result = next;
        if agent.config.variant.targets == AuxTargets::Valid && refused {
            break;
        }
    }
    Ok(EpisodeRecord {
        task: task.to_string(),
        variation,
        steps: ep.step_count(),
        score: ep.score_points(),
        trajectory,
    })
}
