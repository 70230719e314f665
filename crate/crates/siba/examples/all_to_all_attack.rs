//! All-to-all label remapping: poisoned samples of class y are relabeled to
//! (y + 1) mod C, so one trigger encodes a class permutation instead of a
//! single target.
//!
//! Run with: cargo run --release --example all_to_all_attack

use siba::metrics::{attack_success_rate, benign_accuracy};
use siba::model::Architecture;
use siba::poisoning::{make_poison_plan, poison_test_set, poison_training_set};
use siba::synthesis::{synthesize_trigger, SynthesisConfig};
use siba::synthetic::synthetic_split;
use siba::train::{train_classifier, TrainConfig};
use siba::types::{ImageShape, LabelRule};

fn main() -> siba::Result<()> {
    env_logger::init();
    let shape = ImageShape::new(16, 16, 3)?;
    let (train, test) = synthetic_split(800, 160, 6, shape, 31)?;
    let rule = LabelRule::all_to_all();

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
        ..Default::default()
    };
    let trigger = synthesize_trigger(&surrogate, &train, &synth)?.final_trigger;

    // all-to-all needs a heavier poisoning rate than all-to-one
    let plan = make_poison_plan(&train, 0.10, rule, trigger.clone(), 31)?;
    let (victim, _) = train_classifier(
        &poison_training_set(&train, &plan)?,
        Some(&test),
        &TrainConfig { seed: 32, ..recipe },
    )?;

    let poisoned_test = poison_test_set(&test, &trigger, rule)?;
    println!("poisoned test keeps every sample: {} of {}", poisoned_test.len(), test.len());
    println!("BA  = {:.4}", benign_accuracy(&victim, &test)?);
    println!("ASR = {:.4} (success = predicting (y + 1) mod C)",
        attack_success_rate(&victim, &poisoned_test)?);
    Ok(())
}
