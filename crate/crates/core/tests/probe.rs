use std::time::Instant;

use textlab_core::harness::reward_curves;
use textlab_core::kga2c::{train_kga2c, KgA2cConfig, KgA2cVariant};
use textlab_core::knowledge::AffordanceStore;
use textlab_core::runlog::EpisodeRecord;
use textlab_core::world::fixtures;
use textlab_core::world::STEP_LIMIT;

fn final_mean(label: &str, episodes: Vec<EpisodeRecord>) -> f64 {
    let rows = reward_curves(&[(label.to_string(), episodes)]);
    rows.iter().find(|r| r.step == STEP_LIMIT).map(|r| r.mean).unwrap_or(0.0)
}

fn pooled_run(task: &str, variant: KgA2cVariant, budget: u64) -> f64 {
    let spec = fixtures::mini_science().unwrap();
    let mut pooled = Vec::new();
    for seed in [11u64, 12, 13, 14, 15] {
        let config = KgA2cConfig { variant: variant.clone(), seed, ..KgA2cConfig::default() };
        let result = train_kga2c(
            &spec,
            task,
            &[0, 1, 2, 3],
            AffordanceStore::bundled(),
            config,
            budget,
        )
        .unwrap();
        pooled.extend(result.episodes);
    }
    final_mean("m", pooled)
}

#[test]
fn probe_direction() {
    let budget = 2_400u64;
    let t0 = Instant::now();
    for task in ["classify", "measure", "electricity", "lifespan"] {
        let gt = pooled_run(task, KgA2cVariant::gt(), budget);
        let vt = pooled_run(task, KgA2cVariant::vt(), budget);
        println!(
            "{task}: gt {gt:.2} vt {vt:.2} {} ({:?})",
            if gt >= vt { "WIN" } else { "loss" },
            t0.elapsed()
        );
    }
    let t1 = Instant::now();
    let aff = pooled_run("electricity", KgA2cVariant::parse("gt_aff").unwrap(), budget);
    let text = pooled_run("electricity", KgA2cVariant::parse("gt_aff_text").unwrap(), budget);
    let enc = pooled_run("electricity", KgA2cVariant::parse("gt_aff_encoder").unwrap(), budget);
    println!(
        "placement: aff {aff:.2} text {text:.2} enc {enc:.2} ok={} ({:?})",
        aff >= text && aff >= enc,
        t1.elapsed()
    );
}
