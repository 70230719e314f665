//! End-to-end attack at toy scale: surrogate, trigger, poisoned victim, and
//! the headline metrics (benign accuracy, attack success rate, SSIM).
//!
//! Run with: cargo run --release --example train_and_evaluate

use siba::metrics::{attack_success_rate, benign_accuracy, mean_ssim};
use siba::model::Architecture;
use siba::poisoning::{make_poison_plan, poison_test_set, poison_training_set};
use siba::synthesis::{synthesize_trigger, SynthesisConfig};
use siba::synthetic::synthetic_split;
use siba::train::{train_classifier, TrainConfig};
use siba::types::{ImageShape, LabelRule};

fn main() -> siba::Result<()> {
    env_logger::init();
    let shape = ImageShape::new(16, 16, 3)?;
    let (train, test) = synthetic_split(800, 160, 8, shape, 11)?;
    let rule = LabelRule::all_to_one(0);

    let recipe = TrainConfig {
        arch: Architecture::SmallCnn,
        epochs: 8,
        lr_milestones: vec![6, 7],
        batch_size: 64,
        initial_lr: 0.1,
        ..Default::default()
    };
    println!("training the surrogate...");
    let (surrogate, _) = train_classifier(&train, None, &recipe)?;

    println!("synthesizing the trigger...");
    let synth = SynthesisConfig {
        batch_size: 64,
        iterations: 40,
        k_budget: 48,
        label_rule: rule,
        ..Default::default()
    };
    let trigger = synthesize_trigger(&surrogate, &train, &synth)?.final_trigger;

    println!("poisoning 5% of the training set and training the victim...");
    let plan = make_poison_plan(&train, 0.05, rule, trigger.clone(), 11)?;
    let poisoned_train = poison_training_set(&train, &plan)?;
    let victim_recipe = TrainConfig { seed: 12, ..recipe };
    let (victim, _) = train_classifier(&poisoned_train, Some(&test), &victim_recipe)?;

    let poisoned_test = poison_test_set(&test, &trigger, rule)?;
    let clean_ref = test.subset(
        &(0..test.len()).filter(|&i| test.label(i) != 0).collect::<Vec<_>>(),
    )?;
    println!("BA   = {:.4}", benign_accuracy(&victim, &test)?);
    println!("ASR  = {:.4}", attack_success_rate(&victim, &poisoned_test)?);
    println!("SSIM = {:.4}", mean_ssim(&poisoned_test, &clean_ref)?);
    println!("L0   = {}, Linf = {:.4}", trigger.l0(), trigger.linf());
    Ok(())
}
