//! Sweep one configuration axis (here: the poisoning rate) through the full
//! pipeline and emit a (value, BA, ASR) curve as CSV and PNG.
//!
//! Run with: cargo run --release --example ablation_sweep

use siba::pipeline::{run_ablation, ExperimentConfig};

const CONFIG: &str = r#"
[experiment]
id = "toy_ablation"
dataset = "synthetic"
synthetic_train = 500
synthetic_test = 100
num_classes = 6
seed = 71

[attack]
method = "siba"
k = 48
iterations = 25
batch_size = 64

[surrogate]
arch = "small-cnn"
epochs = 4
lr = 0.05
lr_milestones = [3]
batch_size = 64

[victim]
arch = "small-cnn"
epochs = 4
lr = 0.05
lr_milestones = [3]
batch_size = 64
"#;

fn main() -> siba::Result<()> {
    env_logger::init();
    let config = ExperimentConfig::from_toml(CONFIG)?;
    let out_dir = std::env::temp_dir().join("siba-ablation-example");
    // the surrogate and trigger are shared across grid points (cache hits);
    // only poisoning and victim training re-run per rate
    let points = run_ablation(&config, "poisoning_rate", &[0.02, 0.05, 0.10], &out_dir)?;
    for p in &points {
        println!("rate {:.2} -> BA {:.4} ASR {:.4}", p.value, p.benign_accuracy, p.attack_success_rate);
    }
    println!("curve: {}", out_dir.join("ablation_poisoning_rate.csv").display());
    println!("plot:  {}", out_dir.join("ablation_poisoning_rate.png").display());
    Ok(())
}
