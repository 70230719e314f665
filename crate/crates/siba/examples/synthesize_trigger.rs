//! Train a small surrogate classifier on synthetic data and synthesize a
//! sparse, invisible trigger against it.
//!
//! Run with: cargo run --release --example synthesize_trigger

use siba::model::Architecture;
use siba::synthesis::{synthesize_trigger, SynthesisConfig};
use siba::synthetic::synthetic_split;
use siba::train::TrainConfig;
use siba::types::{ImageShape, LabelRule};

fn main() -> siba::Result<()> {
    env_logger::init();
    let shape = ImageShape::new(16, 16, 3)?;
    let (train, test) = synthetic_split(600, 120, 6, shape, 7)?;

    let train_cfg = TrainConfig {
        arch: Architecture::SmallCnn,
        epochs: 8,
        lr_milestones: vec![6, 7],
        batch_size: 64,
        initial_lr: 0.1,
        ..Default::default()
    };
    println!("training the surrogate ({} samples, {} epochs)...", train.len(), train_cfg.epochs);
    let (surrogate, report) = siba::train::train_classifier(&train, Some(&test), &train_cfg)?;
    println!("surrogate holdout accuracy: {:.3}", report.holdout_accuracy.unwrap());

    let synth_cfg = SynthesisConfig {
        batch_size: 64,
        iterations: 40,
        k_budget: 40,
        eps_budget: 8.0 / 255.0,
        label_rule: LabelRule::all_to_one(0),
        ..SynthesisConfig::default()
    };
    println!("synthesizing the trigger ({} iterations)...", synth_cfg.iterations);
    let trace = synthesize_trigger(&surrogate, &train, &synth_cfg)?;
    let t = &trace.final_trigger;
    println!("loss: {:.4} -> {:.4}", trace.losses.first().unwrap(), trace.losses.last().unwrap());
    println!("trigger: L0 = {} (budget {}), Linf = {:.4} (budget {:.4})",
        t.l0(), t.k_budget(), t.linf(), t.eps_budget());
    println!("mask was re-selected at iterations {:?}", &trace.mask_update_iterations[..4.min(trace.mask_update_iterations.len())]);
    Ok(())
}
