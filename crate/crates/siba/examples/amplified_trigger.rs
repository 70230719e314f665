//! Inference-time trigger amplification: replace each trigger element by
//! eps_test * sign(t). Larger test-time budgets trade stealth for attack
//! strength without retraining anything.
//!
//! Run with: cargo run --release --example amplified_trigger

use siba::metrics::attack_success_rate;
use siba::model::Architecture;
use siba::poisoning::{amplify_trigger, make_poison_plan, poison_test_set, poison_training_set};
use siba::synthesis::{synthesize_trigger, SynthesisConfig};
use siba::synthetic::synthetic_split;
use siba::train::{train_classifier, TrainConfig};
use siba::types::{ImageShape, LabelRule};

fn main() -> siba::Result<()> {
    env_logger::init();
    let shape = ImageShape::new(16, 16, 3)?;
    let (train, test) = synthetic_split(600, 150, 6, shape, 23)?;
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
        iterations: 30,
        k_budget: 40,
        label_rule: rule,
        ..Default::default()
    };
    let trigger = synthesize_trigger(&surrogate, &train, &synth)?.final_trigger;

    let plan = make_poison_plan(&train, 0.05, rule, trigger.clone(), 23)?;
    let (victim, _) = train_classifier(
        &poison_training_set(&train, &plan)?,
        None,
        &TrainConfig { seed: 24, ..recipe },
    )?;

    for eps_test in [8.0 / 255.0, 16.0 / 255.0, 32.0 / 255.0] {
        let amplified = amplify_trigger(&trigger, eps_test)?;
        let poisoned_test = poison_test_set(&test, &amplified, rule)?;
        println!(
            "eps_test = {:>2}/255: ASR {:.4} (L0 {}, Linf {:.4})",
            (eps_test * 255.0).round() as u32,
            attack_success_rate(&victim, &poisoned_test)?,
            amplified.l0(),
            amplified.linf()
        );
    }
    Ok(())
}
