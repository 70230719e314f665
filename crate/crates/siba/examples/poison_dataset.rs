//! Build a poisoned training set from a trigger and export it with its
//! manifest CSV (index, original_label, new_label, poisoned_flag).
//!
//! Run with: cargo run --release --example poison_dataset

use siba::io::write_poisoned_set;
use siba::metrics::ssim;
use siba::poisoning::{baseline_random_trigger, make_poison_plan, poison_training_set};
use siba::synthetic::synthetic_dataset;
use siba::types::{ImageShape, LabelRule};

fn main() -> siba::Result<()> {
    env_logger::init();
    let shape = ImageShape::new(16, 16, 3)?;
    let train = synthetic_dataset(500, 10, shape, 3)?;

    // a random +-eps trigger stands in for an optimized one here
    let trigger = baseline_random_trigger(shape, 40, 8.0 / 255.0, 3)?;
    let plan = make_poison_plan(&train, 0.05, LabelRule::all_to_one(0), trigger, 3)?;
    println!("poisoning {} of {} samples", plan.poisoned_indices.len(), train.len());

    let poisoned = poison_training_set(&train, &plan)?;
    let idx = *plan.poisoned_indices.iter().next().unwrap();
    println!(
        "sample {idx}: label {} -> {}, SSIM vs clean {:.4}",
        train.label(idx),
        poisoned.label(idx),
        ssim(train.image(idx), poisoned.image(idx), shape)?
    );

    let out = std::env::temp_dir().join("siba-poison-example");
    write_poisoned_set(&out, &poisoned, train.labels(), &plan.poisoned_indices)?;
    println!("image directory + manifest written to {}", out.display());
    for line in std::fs::read_to_string(out.join("manifest.csv"))?.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
