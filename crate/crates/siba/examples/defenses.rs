//! Run the four reproduced defenses — STRIP, Scale-Up, Fine-Pruning and
//! Neural Cleanse — against a freshly backdoored toy model.
//!
//! Run with: cargo run --release --example defenses

use siba::defense::{
    detection_report, fine_prune, neural_cleanse, scale_up_score, strip_scores, FlagDirection,
    NeuralCleanseConfig, StripConfig, ANOMALY_THRESHOLD,
};
use siba::model::Architecture;
use siba::poisoning::{make_poison_plan, poison_test_set, poison_training_set};
use siba::synthesis::{synthesize_trigger, SynthesisConfig};
use siba::synthetic::synthetic_split;
use siba::train::{train_classifier, TrainConfig};
use siba::types::{ImageShape, LabeledImageSet, LabelRule};

fn main() -> siba::Result<()> {
    env_logger::init();
    let shape = ImageShape::new(16, 16, 3)?;
    let (train, test) = synthetic_split(800, 160, 6, shape, 41)?;
    let rule = LabelRule::all_to_one(0);

    println!("building a backdoored victim...");
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
    let plan = make_poison_plan(&train, 0.05, rule, trigger.clone(), 41)?;
    let (victim, _) = train_classifier(
        &poison_training_set(&train, &plan)?,
        None,
        &TrainConfig { seed: 42, ..recipe },
    )?;

    let poisoned_test = poison_test_set(&test, &trigger, rule)?;
    let n = 60.min(poisoned_test.len());
    let benign = test.subset(&(0..n).collect::<Vec<_>>())?;
    let poisoned = poisoned_test.subset(&(0..n).collect::<Vec<_>>())?;
    let clean_validation = train.subset(&(0..train.len() / 5).collect::<Vec<_>>())?;

    // STRIP: low prediction entropy under superimposition flags a sample
    let strip_cfg = StripConfig { n_overlays: 16, ..Default::default() };
    let benign_h = strip_scores(&victim, &benign, &clean_validation, &strip_cfg)?;
    let poison_h = strip_scores(&victim, &poisoned, &clean_validation, &strip_cfg)?;
    let mut sorted = benign_h.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let strip = detection_report(&poison_h, &benign_h, sorted[n / 10], FlagDirection::LowIsPoisoned)?;
    println!("STRIP:          TPR {:.3} FPR {:.3} AUROC {:.3}", strip.tpr, strip.fpr, strip.auroc);

    // Scale-Up: prediction consistency under pixel amplification
    let scales = [2.0, 3.0, 4.0, 5.0, 6.0];
    let score = |set: &LabeledImageSet| -> siba::Result<Vec<f64>> {
        (0..set.len()).map(|i| scale_up_score(&victim, set.image(i), &scales)).collect()
    };
    let scale = detection_report(&score(&poisoned)?, &score(&benign)?, 0.8, FlagDirection::HighIsPoisoned)?;
    println!("Scale-Up:       TPR {:.3} FPR {:.3} AUROC {:.3}", scale.tpr, scale.fpr, scale.auroc);

    // Fine-Pruning: mask dormant penultimate channels, watch BA and ASR
    let channels = victim.arch().penultimate_channels();
    let steps: Vec<usize> = (0..=4).map(|i| i * channels / 4).collect();
    println!("Fine-Pruning ({channels} channels):");
    for p in fine_prune(&victim, &clean_validation, &benign, &poisoned, &steps)? {
        println!("  {:>3} pruned -> BA {:.3} ASR {:.3}", p.pruned_count, p.benign_accuracy, p.attack_success_rate);
    }

    // Neural Cleanse: reverse-engineer a trigger per class, MAD outlier test
    let nc_cfg = NeuralCleanseConfig { epochs: 3, batch_size: 32, ..Default::default() };
    let nc = neural_cleanse(&victim, &benign, &nc_cfg)?;
    println!(
        "Neural Cleanse: max anomaly index {:.3} (threshold {ANOMALY_THRESHOLD}), flagged: {}",
        nc.max_anomaly_index().unwrap(),
        nc.flagged
    );
    Ok(())
}
