//! Release gate for the whole laboratory. Each test checks one shipping
//! criterion end to end against an independent oracle and prints a single
//! summary line (visible with `--nocapture`). Tolerances and budgets are
//! pinned here on purpose: loosening them is a release decision, not a
//! test fix.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use textlab_core::autodiff::{
    encode_sequence, Gradients, Gru, Init, ParamSet, Tape, Tensor, ValueId,
};
use textlab_core::drrn::{evaluate_greedy, train_drrn, DrrnConfig};
use textlab_core::harness::{
    evaluate, reward_curves, train, ExperimentConfig, RunReport,
};
use textlab_core::kga2c::{
    action_set_entropy, score_bits, train_kga2c, KgA2cConfig, KgA2cVariant,
};
use textlab_core::knowledge::{
    extract_triples, AffordanceStore, McaBuffer, Relation, Triple,
};
use textlab_core::runlog::EpisodeRecord;
use textlab_core::scorer::{
    build_qa_items, build_trajectory_dataset, nucleus, select_action, softmax_probs, Scorer,
    ScorerConfig,
};
use textlab_core::world::{fixtures, format_score, EpisodeState, WorldSpec, STEP_LIMIT};

// ---------------------------------------------------------------------------
// 01: every differentiable building block against central finite differences.
// ---------------------------------------------------------------------------

const FD_TOL: f64 = 1e-4;
const FD_H: f64 = 1e-5;

/// Numerically differentiate `f` at `coords` randomly chosen parameter
/// coordinates and return the worst relative error against `analytic`.
fn fd_spot_check(
    params: &ParamSet,
    analytic: &Gradients,
    rng: &mut ChaCha20Rng,
    coords: usize,
    f: &mut dyn FnMut(&ParamSet) -> f64,
) -> f64 {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let name = &names[rng.gen_range(0..names.len())];
        let len = params.get(name).unwrap().data.len();
        let i = rng.gen_range(0..len);
        let a = analytic.get(name).map(|g| g.data[i]).unwrap_or(0.0);
        let mut plus = params.clone();
        plus.get_mut(name).unwrap().data[i] += FD_H;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().data[i] -= FD_H;
        let n = (f(&plus) - f(&minus)) / (2.0 * FD_H);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1.0);
        worst = worst.max(rel);
    }
    worst
}

fn gru_step_graph(gru: &Gru, params: &ParamSet) -> (Tape, ValueId) {
    let mut tape = Tape::new();
    let bound = gru.bind(&mut tape, params).unwrap();
    let x = tape.param("x", params.get("x").unwrap().clone());
    let h0 = tape.param("h0", params.get("h0").unwrap().clone());
    let h1 = bound.step(&mut tape, x, h0).unwrap();
    let loss = tape.sum(h1);
    (tape, loss)
}

fn encoder_graph(gru: &Gru, params: &ParamSet, ids: &[usize]) -> (Tape, ValueId) {
    let mut tape = Tape::new();
    let bound = gru.bind(&mut tape, params).unwrap();
    let embed = tape.param("embed", params.get("embed").unwrap().clone());
    let h = encode_sequence(&mut tape, embed, &bound, ids).unwrap();
    let loss = tape.sum(h);
    (tape, loss)
}

/// Two-head graph attention over a fixed four-node ring (with self-loops),
/// wired exactly like the agent: per-pair leaky scores, softmax over each
/// neighborhood, weighted aggregation, then a tanh summary of the mean node.
fn gat_graph(params: &ParamSet) -> (Tape, ValueId) {
    let adjacency: [&[usize]; 4] = [&[0, 1, 3], &[0, 1, 2], &[1, 2, 3], &[0, 2, 3]];
    let slope = 0.2;
    let mut tape = Tape::new();
    let feats: Vec<ValueId> = (0..4)
        .map(|i| {
            let name = format!("f{i}");
            tape.param(&name, params.get(&name).unwrap().clone())
        })
        .collect();
    let wg = tape.param("wg", params.get("wg").unwrap().clone());
    let bg = tape.param("bg", params.get("bg").unwrap().clone());

    let mut per_head: Vec<Vec<ValueId>> = Vec::new();
    for k in 0..2 {
        let w = tape.param(&format!("w{k}"), params.get(&format!("w{k}")).unwrap().clone());
        let al = tape.param(&format!("al{k}"), params.get(&format!("al{k}")).unwrap().clone());
        let ar = tape.param(&format!("ar{k}"), params.get(&format!("ar{k}")).unwrap().clone());
        let wh: Vec<ValueId> = feats.iter().map(|&x| tape.matvec(w, x).unwrap()).collect();
        let left: Vec<ValueId> = wh.iter().map(|&h| tape.dot(al, h).unwrap()).collect();
        let right: Vec<ValueId> = wh.iter().map(|&h| tape.dot(ar, h).unwrap()).collect();
        let mut outputs = Vec::new();
        for i in 0..4 {
            let mut scores = Vec::new();
            for &j in adjacency[i] {
                let s = tape.add(left[i], right[j]).unwrap();
                scores.push(tape.leaky_relu(s, slope));
            }
            let stacked = tape.stack(&scores).unwrap();
            let alpha = tape.softmax(stacked);
            let mut agg: Option<ValueId> = None;
            for (jj, &j) in adjacency[i].iter().enumerate() {
                let a = tape.index(alpha, jj).unwrap();
                let scaled = tape.mul(a, wh[j]).unwrap();
                agg = Some(match agg {
                    None => scaled,
                    Some(prev) => tape.add(prev, scaled).unwrap(),
                });
            }
            outputs.push(tape.leaky_relu(agg.unwrap(), slope));
        }
        per_head.push(outputs);
    }

    let nodes: Vec<ValueId> =
        (0..4).map(|i| tape.concat(&[per_head[0][i], per_head[1][i]]).unwrap()).collect();
    let mut pooled = nodes[0];
    for &node in &nodes[1..] {
        pooled = tape.add(pooled, node).unwrap();
    }
    let pooled = tape.scale(pooled, 0.25);
    let g = tape.matvec(wg, pooled).unwrap();
    let g = tape.add(g, bg).unwrap();
    let g = tape.tanh(g);

    let all_nodes = tape.concat(&nodes).unwrap();
    let s_nodes = tape.sum(all_nodes);
    let s_summary = tape.sum(g);
    let loss = tape.add(s_nodes, s_summary).unwrap();
    (tape, loss)
}

/// The relevance head: shared hidden layer over the concatenated state and
/// action vectors, one scalar out.
fn q_head_graph(params: &ParamSet) -> (Tape, ValueId) {
    let mut tape = Tape::new();
    let s = tape.param("s", params.get("s").unwrap().clone());
    let a = tape.param("a", params.get("a").unwrap().clone());
    let w1 = tape.param("w1", params.get("w1").unwrap().clone());
    let b1 = tape.param("b1", params.get("b1").unwrap().clone());
    let w2 = tape.param("w2", params.get("w2").unwrap().clone());
    let b2 = tape.param("b2", params.get("b2").unwrap().clone());
    let joint = tape.concat(&[s, a]).unwrap();
    let h = tape.matvec(w1, joint).unwrap();
    let h = tape.add(h, b1).unwrap();
    let h = tape.relu(h);
    let q = tape.matvec(w2, h).unwrap();
    let q = tape.add(q, b2).unwrap();
    let loss = tape.index(q, 0).unwrap();
    (tape, loss)
}

/// One graph combining every loss shape in use: cross-entropy on logits,
/// entropy of a softmax via x·log x, a binary cross-entropy composition,
/// and a squared error.
fn losses_graph(params: &ParamSet, target: usize) -> (Tape, ValueId) {
    let mut tape = Tape::new();
    let logits = tape.param("logits", params.get("logits").unwrap().clone());
    let raw = tape.param("raw", params.get("raw").unwrap().clone());
    let v = tape.param("v", params.get("v").unwrap().clone());

    let ce = tape.cross_entropy(logits, target).unwrap();

    let probs = tape.softmax(raw);
    let plogp = tape.xlogx(probs);
    let entropy = tape.sum(plogp);

    let p = tape.sigmoid(raw);
    let log_p = tape.log(p);
    let neg_p = tape.scale(p, -1.0);
    let one_minus_p = tape.add_const(neg_p, 1.0);
    let log_q = tape.log(one_minus_p);
    let y = tape.constant(Tensor::vector(vec![1.0, 0.0, 1.0, 0.0]));
    let y_flip = tape.constant(Tensor::vector(vec![0.0, 1.0, 0.0, 1.0]));
    let pos = tape.dot(y, log_p).unwrap();
    let neg = tape.dot(y_flip, log_q).unwrap();
    let bce_sum = tape.add(pos, neg).unwrap();
    let bce = tape.scale(bce_sum, -0.25);

    let v0 = tape.index(v, 0).unwrap();
    let diff = tape.add_const(v0, -0.37);
    let sq = tape.mul(diff, diff).unwrap();

    let t1 = tape.add(ce, entropy).unwrap();
    let t2 = tape.add(bce, sq).unwrap();
    let loss = tape.add(t1, t2).unwrap();
    (tape, loss)
}

#[test]
fn a01_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xfd01);
    let mut report: Vec<(String, usize, f64)> = Vec::new();

    // Recurrent cell, single step.
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for trial in 0..12u64 {
        let gru = Gru::new("g", 5, 4);
        let mut params = ParamSet::new();
        let mut init = Init::with_seed(31 + trial);
        gru.init_params(&mut params, &mut init).unwrap();
        params.insert("x", init.vector(5)).unwrap();
        params.insert("h0", init.vector(4)).unwrap();
        let (tape, loss) = gru_step_graph(&gru, &params);
        let grads = tape.backward(loss).unwrap();
        worst = worst.max(fd_spot_check(&params, &grads, &mut rng, 10, &mut |p| {
            let (t, l) = gru_step_graph(&gru, p);
            t.scalar_value(l)
        }));
        checks += 10;
    }
    report.push(("recurrent cell".into(), checks, worst));

    // Token-sequence encoder over an embedding table.
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for trial in 0..12u64 {
        let gru = Gru::new("enc", 5, 6);
        let mut params = ParamSet::new();
        let mut init = Init::with_seed(131 + trial);
        gru.init_params(&mut params, &mut init).unwrap();
        params.insert("embed", init.matrix(12, 5)).unwrap();
        let len = rng.gen_range(1..=8);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..12)).collect();
        let (tape, loss) = encoder_graph(&gru, &params, &ids);
        let grads = tape.backward(loss).unwrap();
        worst = worst.max(fd_spot_check(&params, &grads, &mut rng, 10, &mut |p| {
            let (t, l) = encoder_graph(&gru, p, &ids);
            t.scalar_value(l)
        }));
        checks += 10;
    }
    report.push(("sequence encoder".into(), checks, worst));

    // Graph attention with pooling summary.
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for trial in 0..5u64 {
        let mut params = ParamSet::new();
        let mut init = Init::with_seed(231 + trial);
        for i in 0..4 {
            params.insert(&format!("f{i}"), init.vector(5)).unwrap();
        }
        for k in 0..2 {
            params.insert(&format!("w{k}"), init.matrix(3, 5)).unwrap();
            params.insert(&format!("al{k}"), init.vector(3)).unwrap();
            params.insert(&format!("ar{k}"), init.vector(3)).unwrap();
        }
        params.insert("wg", init.matrix(6, 6)).unwrap();
        params.insert("bg", init.vector(6)).unwrap();
        let (tape, loss) = gat_graph(&params);
        let grads = tape.backward(loss).unwrap();
        worst = worst.max(fd_spot_check(&params, &grads, &mut rng, 20, &mut |p| {
            let (t, l) = gat_graph(p);
            t.scalar_value(l)
        }));
        checks += 20;
    }
    report.push(("graph attention".into(), checks, worst));

    // State-action value head.
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for trial in 0..12u64 {
        let mut params = ParamSet::new();
        let mut init = Init::with_seed(331 + trial);
        params.insert("s", init.vector(6)).unwrap();
        params.insert("a", init.vector(4)).unwrap();
        params.insert("w1", init.matrix(5, 10)).unwrap();
        params.insert("b1", init.vector(5)).unwrap();
        params.insert("w2", init.matrix(1, 5)).unwrap();
        params.insert("b2", init.vector(1)).unwrap();
        let (tape, loss) = q_head_graph(&params);
        let grads = tape.backward(loss).unwrap();
        worst = worst.max(fd_spot_check(&params, &grads, &mut rng, 10, &mut |p| {
            let (t, l) = q_head_graph(p);
            t.scalar_value(l)
        }));
        checks += 10;
    }
    report.push(("value head".into(), checks, worst));

    // Loss compositions.
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for trial in 0..12u64 {
        let mut params = ParamSet::new();
        let mut init = Init::with_seed(431 + trial);
        params.insert("logits", init.vector(5)).unwrap();
        params.insert("raw", init.vector(4)).unwrap();
        params.insert("v", init.vector(1)).unwrap();
        let target = rng.gen_range(0..5);
        let (tape, loss) = losses_graph(&params, target);
        let grads = tape.backward(loss).unwrap();
        worst = worst.max(fd_spot_check(&params, &grads, &mut rng, 10, &mut |p| {
            let (t, l) = losses_graph(p, target);
            t.scalar_value(l)
        }));
        checks += 10;
    }
    report.push(("losses".into(), checks, worst));

    // The full candidate-scoring model, through its real loss.
    let spec = fixtures::mini_science().unwrap();
    let store = AffordanceStore::bundled();
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    for trial in 0..5u64 {
        let config = ScorerConfig {
            embed_dim: 4,
            hidden: 6,
            max_len: 64,
            seed: 100 + trial,
            ..ScorerConfig::default()
        };
        let mut scorer = Scorer::new(&spec, &store, config).unwrap();
        let mut data_rng = ChaCha20Rng::seed_from_u64(500 + trial);
        let examples = build_trajectory_dataset(
            &spec,
            "classify",
            &[trial as usize % 8],
            4,
            false,
            5,
            &mut data_rng,
        )
        .unwrap();
        let example = examples[rng.gen_range(0..examples.len())].clone();
        let base = scorer.params().clone();
        let mut tape = Tape::new();
        let loss = scorer.example_loss(&mut tape, &example).unwrap();
        let grads = tape.backward(loss).unwrap();
        worst = worst.max(fd_spot_check(&base, &grads, &mut rng, 20, &mut |p| {
            scorer.params_mut().adopt_values(p).unwrap();
            let mut t = Tape::new();
            let l = scorer.example_loss(&mut t, &example).unwrap();
            t.scalar_value(l)
        }));
        scorer.params_mut().adopt_values(&base).unwrap();
        checks += 20;
    }
    report.push(("candidate scorer".into(), checks, worst));

    let elapsed = t0.elapsed();
    for (family, checks, worst) in &report {
        assert!(*checks >= 100, "{family}: only {checks} checks");
        assert!(
            *worst < FD_TOL,
            "{family}: worst relative error {worst:.3e} exceeds {FD_TOL:.0e}"
        );
    }
    assert!(elapsed.as_secs_f64() < 60.0, "gradient sweep took {elapsed:?}");
    let overall = report.iter().map(|r| r.2).fold(0.0f64, f64::max);
    println!(
        "acceptance 01 gradient integrity: pass ({} families, {} checks, worst rel err {:.2e}, {:.1?})",
        report.len(),
        report.iter().map(|r| r.1).sum::<usize>(),
        overall,
        elapsed
    );
}

// ---------------------------------------------------------------------------
// 02: walkthrough replay drives every bundled episode to a perfect score.
// ---------------------------------------------------------------------------

fn golden_replay(spec: &Arc<WorldSpec>, task: &str, variation: usize, seed: u64) -> (Vec<String>, f64, bool, u32) {
    let (mut ep, mut result) = EpisodeState::reset(spec, task, variation, seed).unwrap();
    let mut transcript =
        vec![format!("{}|{}|{:.6}", result.observation, result.description, result.score)];
    let mut steps = 0u32;
    while let Some(golden) = result.golden_next.clone() {
        result = ep.step(&golden).unwrap();
        steps += 1;
        transcript.push(format!("{}|{}|{:.6}", result.observation, result.description, result.score));
        assert!(steps <= STEP_LIMIT, "{task}/{variation}: walkthrough exceeded the step cap");
        if result.done {
            break;
        }
    }
    (transcript, result.score, result.done, steps)
}

#[test]
fn a02_walkthroughs_reach_perfect_scores() {
    let t0 = Instant::now();
    let mut episodes = 0usize;
    for spec in [fixtures::mini_science().unwrap(), fixtures::chain().unwrap()] {
        for task in &spec.tasks {
            for variation in 0..task.variations.len() {
                let (t1, score, done, steps) = golden_replay(&spec, &task.id, variation, 0);
                assert!(done, "{}/{variation}: walkthrough did not finish", task.id);
                assert_eq!(
                    format_score(score),
                    "100.00",
                    "{}/{variation}: final score {score}",
                    task.id
                );
                assert!(steps <= STEP_LIMIT);
                let (t2, ..) = golden_replay(&spec, &task.id, variation, 0);
                let (t3, ..) = golden_replay(&spec, &task.id, variation, 9);
                assert_eq!(t1, t2, "{}/{variation}: replay differs run-to-run", task.id);
                assert_eq!(t1, t3, "{}/{variation}: replay depends on the seed", task.id);
                episodes += 1;
            }
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "replays took {elapsed:?}");
    println!("acceptance 02 walkthrough replay: pass ({episodes} episodes, {elapsed:.1?})");
}

// ---------------------------------------------------------------------------
// 03: the score bit-vector against a decode-and-compare oracle.
// ---------------------------------------------------------------------------

#[test]
fn a03_score_encoding_is_exact() {
    let t0 = Instant::now();
    for v in -600i64..=600 {
        let bits = score_bits(v as f64);
        assert_eq!(bits[0], if v < 0 { 1.0 } else { 0.0 }, "sign bit for {v}");
        let mut rebuilt: u64 = 0;
        for b in &bits[1..] {
            assert!(*b == 0.0 || *b == 1.0, "non-binary bit for {v}");
            rebuilt = rebuilt * 2 + *b as u64;
        }
        assert_eq!(rebuilt, v.unsigned_abs().min(511), "magnitude for {v}");
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "encoding sweep took {elapsed:?}");
    println!("acceptance 03 score encoding: pass (1201 values, {elapsed:.1?})");
}

// ---------------------------------------------------------------------------
// 04: closed-form values of the entropy and cross-entropy terms.
// ---------------------------------------------------------------------------

#[test]
fn a04_losses_hit_closed_forms() {
    let mut tape = Tape::new();
    let probs: Vec<ValueId> = (0..4).map(|_| tape.constant(Tensor::scalar(0.25))).collect();
    let entropy = action_set_entropy(&mut tape, &probs).unwrap();
    let got = tape.scalar_value(entropy);
    let want = 0.25f64.ln();
    assert!(
        (got - want).abs() < 1e-9,
        "entropy of uniform four-way distribution: {got} vs {want}"
    );

    let logits = tape.constant(Tensor::vector(vec![0.7; 4]));
    let ce = tape.cross_entropy(logits, 2).unwrap();
    let got_ce = tape.scalar_value(ce);
    let want_ce = 4f64.ln();
    assert!(
        (got_ce - want_ce).abs() < 1e-9,
        "cross-entropy on uniform logits: {got_ce} vs {want_ce}"
    );
    println!(
        "acceptance 04 closed-form losses: pass (entropy err {:.1e}, ce err {:.1e})",
        (got - want).abs(),
        (got_ce - want_ce).abs()
    );
}

// ---------------------------------------------------------------------------
// 05: triple extraction agrees with the engine on reachable states.
// ---------------------------------------------------------------------------

fn assert_extraction_matches(state: &EpisodeState) {
    let text = format!("{} {}", state.freelook(), state.inventory_text());
    let got: BTreeSet<Triple> = extract_triples(&text).into_iter().collect();
    let want: BTreeSet<Triple> = state
        .visible_relations()
        .into_iter()
        .map(|(s, r, o)| Triple::new(s, Relation::parse(&r).unwrap(), o))
        .collect();
    assert_eq!(got, want, "extraction mismatch in state {}", state.layout_key());
}

/// Breadth-first over distinct object layouts: every state up to
/// `exhaustive_depth` is checked; one further step is then sampled from up
/// to `leaf_samples` frontier states. Layouts, not paths, are deduplicated,
/// so each distinct observation text is verified once.
fn bfs_extraction_check(
    spec: &Arc<WorldSpec>,
    task: &str,
    exhaustive_depth: usize,
    leaf_samples: usize,
    rng: &mut ChaCha20Rng,
) -> usize {
    let (start, first) = EpisodeState::reset(spec, task, 0, 0).unwrap();
    let mut seen = BTreeSet::new();
    seen.insert(start.layout_key());
    let mut frontier = vec![(start, first.done)];
    let mut checked = 0usize;

    for _ in 0..exhaustive_depth {
        for (state, _) in &frontier {
            assert_extraction_matches(state);
            checked += 1;
        }
        let mut next = Vec::new();
        for (state, done) in &frontier {
            if *done {
                continue;
            }
            for action in state.valid_actions() {
                let mut child = state.clone();
                let result = child.step(&action).unwrap();
                if seen.insert(child.layout_key()) {
                    next.push((child, result.done));
                }
            }
        }
        frontier = next;
    }
    for (state, _) in &frontier {
        assert_extraction_matches(state);
        checked += 1;
    }

    if leaf_samples > 0 && !frontier.is_empty() {
        let sample = leaf_samples.min(frontier.len());
        let mut order: Vec<usize> = (0..frontier.len()).collect();
        for i in 0..sample {
            let j = rng.gen_range(i..order.len());
            order.swap(i, j);
        }
        for &i in &order[..sample] {
            let (state, done) = &frontier[i];
            if *done {
                continue;
            }
            for action in state.valid_actions() {
                let mut child = state.clone();
                child.step(&action).unwrap();
                if seen.insert(child.layout_key()) {
                    assert_extraction_matches(&child);
                    checked += 1;
                }
            }
        }
    }
    checked
}

#[test]
fn a05_extraction_matches_engine_relations() {
    let t0 = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0x05);
    let corridor = fixtures::chain().unwrap();
    let small = bfs_extraction_check(&corridor, "reach", 6, 0, &mut rng);
    // The science house branches too widely for a full six-step sweep
    // (tens of thousands of layouts per level past depth five), so it is
    // exhaustive to depth five with a sampled sixth step.
    let house = fixtures::mini_science().unwrap();
    let large = bfs_extraction_check(&house, "classify", 5, 5_000, &mut rng);
    println!(
        "acceptance 05 extraction fidelity: pass ({} corridor states, {} house states, {:.1?})",
        small,
        large,
        t0.elapsed()
    );
}

// ---------------------------------------------------------------------------
// 06: value-based learning on the corridor matches value iteration.
// ---------------------------------------------------------------------------

#[test]
fn a06_corridor_q_matches_value_iteration() {
    let t0 = Instant::now();
    let spec = fixtures::chain().unwrap();
    let budget = 2_500u64;
    let mut eval_scores = Vec::new();
    let mut worst_gap = 0.0f64;
    for seed in [1u64, 2, 3] {
        let mut config = DrrnConfig::chain_preset(seed);
        config.extra_updates = 3_000;
        let result =
            train_drrn(&spec, "reach", &[0], AffordanceStore::bundled(), config, budget).unwrap();
        let agent = result.agent;

        // Hand-rolled value iteration on the three-room corridor, in the
        // agent's scaled-reward units: entering the study pays 1.0, gamma
        // discounts each extra step.
        let g = agent.config.gamma;
        let expect_porch = [g, g * g]; // go to hall, look around
        let expect_hall = [g * g, 1.0, g]; // go to porch, go to study, look around

        let mca = McaBuffer::new(5);
        let (mut ep, porch) = EpisodeState::reset(&spec, "reach", 0, 0).unwrap();
        assert_eq!(porch.valid_actions, vec!["go to hall", "look around"]);
        let porch_state = agent.encode_state(&agent.channel_texts(&porch, &mca));
        let porch_ids: Vec<Vec<usize>> =
            porch.valid_actions.iter().map(|a| agent.vocab().encode(a)).collect();
        let q_porch = agent.q_values(&porch_state, &porch_ids).unwrap();

        let hall = ep.step("go to hall").unwrap();
        assert_eq!(hall.valid_actions, vec!["go to porch", "go to study", "look around"]);
        let hall_state = agent.encode_state(&agent.channel_texts(&hall, &mca));
        let hall_ids: Vec<Vec<usize>> =
            hall.valid_actions.iter().map(|a| agent.vocab().encode(a)).collect();
        let q_hall = agent.q_values(&hall_state, &hall_ids).unwrap();

        for (q, want) in
            q_porch.iter().zip(&expect_porch).chain(q_hall.iter().zip(&expect_hall))
        {
            worst_gap = worst_gap.max((q - want).abs());
        }
        let eval = evaluate_greedy(&agent, &spec, "reach", 0, 0).unwrap();
        eval_scores.push(eval.score);
    }
    let mean_eval = eval_scores.iter().sum::<f64>() / eval_scores.len() as f64;
    let elapsed = t0.elapsed();
    assert!(budget <= 5_000);
    assert!(worst_gap < 1e-2, "worst |Q - value iteration| = {worst_gap:.4}");
    assert!(mean_eval >= 95.0, "greedy evaluation mean {mean_eval:.2}");
    assert!(elapsed.as_secs_f64() < 300.0, "corridor training took {elapsed:?}");
    println!(
        "acceptance 06 corridor q-learning: pass (3 seeds, worst gap {worst_gap:.4}, eval mean {mean_eval:.1}, {elapsed:.1?})"
    );
}

// ---------------------------------------------------------------------------
// 07 and 08: directional training comparisons for the graph agent.
// ---------------------------------------------------------------------------

const KG_BUDGET: u64 = 2_400;
const KG_SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

/// Final-step mean of the training reward curve, pooled across seeds.
fn pooled_final_score(task: &str, variant: &KgA2cVariant) -> f64 {
    let spec = fixtures::mini_science().unwrap();
    let mut pooled: Vec<EpisodeRecord> = Vec::new();
    for seed in KG_SEEDS {
        let config = KgA2cConfig { variant: variant.clone(), seed, ..KgA2cConfig::default() };
        let result = train_kga2c(
            &spec,
            task,
            &[0, 1, 2, 3],
            AffordanceStore::bundled(),
            config,
            KG_BUDGET,
        )
        .unwrap();
        pooled.extend(result.episodes);
    }
    let rows = reward_curves(&[("pooled".to_string(), pooled)]);
    rows.iter().find(|r| r.step == STEP_LIMIT).map(|r| r.mean).unwrap_or(0.0)
}

#[test]
fn a07_golden_targets_beat_valid_targets() {
    let t0 = Instant::now();
    let mut wins = 0usize;
    let mut lines = Vec::new();
    for task in ["classify", "measure", "electricity", "lifespan"] {
        let gt = pooled_final_score(task, &KgA2cVariant::gt());
        let vt = pooled_final_score(task, &KgA2cVariant::vt());
        if gt >= vt {
            wins += 1;
        }
        lines.push(format!("{task} {gt:.1}/{vt:.1}"));
    }
    let elapsed = t0.elapsed();
    assert!(
        wins >= 3,
        "golden targets won only {wins}/4 tasks ({})",
        lines.join(", ")
    );
    assert!(elapsed.as_secs_f64() < 1_800.0, "comparison took {elapsed:?}");
    println!(
        "acceptance 07 golden-vs-valid targets: pass ({wins}/4 tasks, {}, {elapsed:.1?})",
        lines.join(", ")
    );
}

#[test]
fn a08_affordances_belong_in_the_graph() {
    let t0 = Instant::now();
    let graph = pooled_final_score("electricity", &KgA2cVariant::parse("gt_aff").unwrap());
    let text = pooled_final_score("electricity", &KgA2cVariant::parse("gt_aff_text").unwrap());
    let encoder =
        pooled_final_score("electricity", &KgA2cVariant::parse("gt_aff_encoder").unwrap());
    let elapsed = t0.elapsed();
    assert!(
        graph >= text && graph >= encoder,
        "graph placement {graph:.2} vs text {text:.2}, encoder {encoder:.2}"
    );
    assert!(elapsed.as_secs_f64() < 1_800.0, "comparison took {elapsed:?}");
    println!(
        "acceptance 08 affordance placement: pass (graph {graph:.1} >= text {text:.1}, encoder {encoder:.1}, {elapsed:.1?})"
    );
}

// ---------------------------------------------------------------------------
// 09: the candidate scorer learns held-out selections and retained facts.
// ---------------------------------------------------------------------------

#[test]
fn a09_scorer_selection_and_fact_accuracy() {
    let t0 = Instant::now();
    let spec = fixtures::mini_science().unwrap();
    let store = AffordanceStore::bundled();

    // Gold selection on held-out variations, four distractors per step.
    let config = ScorerConfig { epochs: 8, seed: 5, ..ScorerConfig::default() };
    assert_eq!(config.distractors, 4);
    let mut scorer = Scorer::new(&spec, &store, config).unwrap();
    let train_vars = [0usize, 1, 2, 5, 6, 7, 8, 9, 10, 11];
    textlab_core::scorer::train_scorer(&mut scorer, &spec, "lifespan", &train_vars, &store)
        .unwrap();
    let mut held_rng = ChaCha20Rng::seed_from_u64(1234);
    let mut held_out = Vec::new();
    for _ in 0..8 {
        held_out.extend(
            build_trajectory_dataset(&spec, "lifespan", &[3, 4], 4, false, 5, &mut held_rng)
                .unwrap(),
        );
    }
    let selection = scorer.gold_selection_accuracy(&held_out).unwrap();

    // Fact questions after the warmup phase: fresh option sets, top answer
    // must be the true object.
    let qa_config = ScorerConfig {
        pretrain_affordances: true,
        seed: 6,
        ..ScorerConfig::default()
    };
    let mut qa_scorer = Scorer::new(&spec, &store, qa_config).unwrap();
    qa_scorer.pretrain_affordances(&store).unwrap();
    let mut qa_rng = ChaCha20Rng::seed_from_u64(777);
    let mut qa_items = Vec::new();
    for _ in 0..4 {
        qa_items.extend(build_qa_items(&store, &mut qa_rng));
    }
    let qa = qa_scorer.gold_selection_accuracy(&qa_items).unwrap();

    let elapsed = t0.elapsed();
    assert!(selection >= 0.9, "held-out gold selection {selection:.3}");
    assert!(qa >= 0.8, "fact-question accuracy {qa:.3}");
    assert!(elapsed.as_secs_f64() < 600.0, "scorer training took {elapsed:?}");
    println!(
        "acceptance 09 action scorer: pass (selection {selection:.3} on {} examples, facts {qa:.3} on {} questions, {elapsed:.1?})",
        held_out.len(),
        qa_items.len()
    );
}

// ---------------------------------------------------------------------------
// 10: top-p membership and within-nucleus frequencies.
// ---------------------------------------------------------------------------

/// Brute force: for k = 1, 2, ... take the k most probable indices (ties to
/// the lower index) by repeated scan, stopping at the first prefix whose
/// mass reaches p.
fn minimal_prefix(probs: &[f64], p: f64) -> BTreeSet<usize> {
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    let mut mass = 0.0;
    while mass < p && taken.len() < probs.len() {
        let mut best: Option<usize> = None;
        for i in 0..probs.len() {
            if taken.contains(&i) {
                continue;
            }
            if best.map_or(true, |b| probs[i] > probs[b]) {
                best = Some(i);
            }
        }
        let pick = best.unwrap();
        taken.insert(pick);
        mass += probs[pick];
    }
    taken
}

#[test]
fn a10_nucleus_matches_brute_force() {
    let mut rng = ChaCha20Rng::seed_from_u64(0x10);
    for case in 0..1_000 {
        let n = rng.gen_range(2..=10);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let p = rng.gen_range(0.05..1.0);
        let got: BTreeSet<usize> = nucleus(&scores, p).into_iter().collect();
        let want = minimal_prefix(&softmax_probs(&scores), p);
        assert_eq!(got, want, "case {case}: scores {scores:?} p {p}");
    }

    let mut worst = 0.0f64;
    for trial in 0..5u64 {
        let n = 4 + trial as usize;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = 0.9;
        let kept: Vec<usize> = nucleus(&scores, p);
        let probs = softmax_probs(&scores);
        let kept_mass: f64 = kept.iter().map(|&i| probs[i]).sum();

        let draws = 100_000usize;
        let mut counts = vec![0usize; n];
        let mut draw_rng = ChaCha20Rng::seed_from_u64(0x10_000 + trial);
        for _ in 0..draws {
            counts[select_action(&scores, p, &mut draw_rng)] += 1;
        }
        for i in 0..n {
            let freq = counts[i] as f64 / draws as f64;
            if kept.contains(&i) {
                let renorm = probs[i] / kept_mass;
                worst = worst.max((freq - renorm).abs());
                assert!(
                    (freq - renorm).abs() < 0.01,
                    "trial {trial} index {i}: frequency {freq:.4} vs renormalized {renorm:.4}"
                );
            } else {
                assert_eq!(counts[i], 0, "trial {trial}: drew an index outside the nucleus");
            }
        }
    }
    println!(
        "acceptance 10 nucleus sampling: pass (1000 membership cases, 5x100k draws, worst freq gap {worst:.4})"
    );
}

// ---------------------------------------------------------------------------
// 11: the evaluation protocol emits 3 episodes per variation, repeatably.
// ---------------------------------------------------------------------------

#[test]
fn a11_evaluation_protocol_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for (agent, seed) in [("golden", 11u64), ("random", 12)] {
        let config_path = dir.path().join(format!("{agent}.toml"));
        std::fs::write(
            &config_path,
            format!(
                "agent = \"{agent}\"\nworld = \"mini_science\"\ntask = \"classify\"\nvariations = [0, 1, 2]\nseed = {seed}\n"
            ),
        )
        .unwrap();
        let config = ExperimentConfig::load(&config_path).unwrap();
        let run_dir = dir.path().join(format!("run_{agent}"));
        train(&config, &run_dir).unwrap();

        let first: RunReport = evaluate(&config, &run_dir).unwrap();
        let second: RunReport = evaluate(&config, &run_dir).unwrap();
        assert_eq!(first, second, "{agent}: in-memory reports differ across reruns");

        assert_eq!(first.rows.len(), 3 * 3, "{agent}: row count");
        for variation in 0..3usize {
            let per = first.rows.iter().filter(|r| r.variation == variation).count();
            assert_eq!(per, 3, "{agent}: variation {variation} has {per} rows");
        }
        let mean = first.rows.iter().map(|r| r.score).sum::<f64>() / first.rows.len() as f64;
        assert!(
            (first.aggregate.mean_score - mean).abs() < 1e-12,
            "{agent}: aggregate {} vs row mean {mean}",
            first.aggregate.mean_score
        );
        assert_eq!(first.aggregate.episodes, 9);

        let out_a = dir.path().join(format!("report_a_{agent}"));
        let out_b = dir.path().join(format!("report_b_{agent}"));
        std::fs::create_dir_all(&out_a).unwrap();
        std::fs::create_dir_all(&out_b).unwrap();
        first.write(&out_a).unwrap();
        second.write(&out_b).unwrap();
        for file in ["episodes.csv", "aggregate.json"] {
            let a = std::fs::read(out_a.join(file)).unwrap();
            let b = std::fs::read(out_b.join(file)).unwrap();
            assert_eq!(a, b, "{agent}: {file} differs between reruns");
        }
    }
    println!("acceptance 11 evaluation protocol: pass (2 agents, 9 rows each, bit-identical reruns)");
}
