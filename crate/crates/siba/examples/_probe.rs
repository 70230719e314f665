use siba::model::Architecture;
use siba::synthetic::synthetic_split;
use siba::train::{train_classifier, TrainConfig};
use siba::types::ImageShape;

fn main() -> siba::Result<()> {
    let s = ImageShape::new(16, 16, 3)?;
    let (train, test) = synthetic_split(600, 120, 8, s, 42)?;
    for (lr, epochs) in [(0.05f64, 6usize), (0.05, 10), (0.1, 10)] {
        let cfg = TrainConfig {
            arch: Architecture::SmallCnn,
            epochs,
            initial_lr: lr,
            lr_milestones: vec![epochs - 2],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            augment_crop: false,
            augment_flip: false,
            seed: 1,
        };
        let (_m, report) = train_classifier(&train, Some(&test), &cfg)?;
        let l: Vec<String> = report.epoch_losses.iter().map(|x| format!("{x:.2}")).collect();
        println!("lr {lr} epochs {epochs}: losses {l:?} holdout {:?}", report.holdout_accuracy);
    }
    Ok(())
}
