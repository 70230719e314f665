//! Compare trigger construction strategies at matched (k, eps) budgets:
//! optimized support + optimized values (the full method), frozen random
//! support with optimized values ("sparse"), and random values ("random").
//!
//! Run with: cargo run --release --example baseline_comparison

use siba::metrics::attack_success_rate;
use siba::model::Architecture;
use siba::poisoning::{
    baseline_random_trigger, baseline_sparse_trigger, make_poison_plan, poison_test_set,
    poison_training_set,
};
use siba::synthesis::{synthesize_trigger, SynthesisConfig};
use siba::synthetic::synthetic_split;
use siba::train::{train_classifier, TrainConfig};
use siba::types::{ImageShape, LabelRule, TriggerPattern};

fn main() -> siba::Result<()> {
    env_logger::init();
    let shape = ImageShape::new(16, 16, 3)?;
    let (train, test) = synthetic_split(800, 160, 6, shape, 61)?;
    let rule = LabelRule::all_to_one(0);

    let recipe = TrainConfig {
        arch: Architecture::SmallCnn,
        epochs: 8,
        lr_milestones: vec![6, 7],
        batch_size: 64,
        initial_lr: 0.1,
        ..Default::default()
    };
    let (surrogate, _) = train_classifier(&train, None, &recipe)?;
    let synth = SynthesisConfig {
        batch_size: 64,
        iterations: 40,
        k_budget: 48,
        label_rule: rule,
        seed: 61,
        ..Default::default()
    };

    let optimized = synthesize_trigger(&surrogate, &train, &synth)?.final_trigger;
    let sparse = baseline_sparse_trigger(&surrogate, &train, &synth)?.final_trigger;
    let random = baseline_random_trigger(shape, synth.k_budget, synth.eps_budget, 61)?;

    let evaluate = |name: &str, trigger: &TriggerPattern, seed: u64| -> siba::Result<f64> {
        let plan = make_poison_plan(&train, 0.05, rule, trigger.clone(), seed)?;
        let (victim, _) = train_classifier(
            &poison_training_set(&train, &plan)?,
            None,
            &TrainConfig { seed, ..recipe.clone() },
        )?;
        let asr = attack_success_rate(&victim, &poison_test_set(&test, trigger, rule)?)?;
        println!("{name:<10} L0 {:>3} Linf {:.4} -> ASR {asr:.4}", trigger.l0(), trigger.linf());
        Ok(asr)
    };

    let a = evaluate("optimized", &optimized, 62)?;
    let b = evaluate("sparse", &sparse, 62)?;
    let c = evaluate("random", &random, 62)?;
    println!("expected ordering: optimized > sparse > random ({})",
        if a > b && b > c { "holds" } else { "check the full-scale recipe" });
    Ok(())
}
