//! Config-driven pipeline run with stage caching: surrogate -> trigger ->
//! poison -> victim -> evaluate. Running it twice demonstrates cache hits.
//!
//! Run with: cargo run --release --example full_pipeline

use siba::pipeline::{run_experiment, ExperimentConfig};

const CONFIG: &str = r#"
[experiment]
id = "toy_pipeline"
dataset = "synthetic"
synthetic_train = 600
synthetic_test = 120
num_classes = 6
seed = 51

[attack]
method = "siba"
poisoning_rate = 0.05
k = 48
iterations = 30
batch_size = 64

[surrogate]
arch = "small-cnn"
epochs = 5
lr = 0.05
lr_milestones = [3, 4]
batch_size = 64

[victim]
arch = "small-cnn"
epochs = 5
lr = 0.05
lr_milestones = [3, 4]
batch_size = 64
"#;

fn main() -> siba::Result<()> {
    env_logger::init();
    let config = ExperimentConfig::from_toml(CONFIG)?;
    let out_dir = std::env::temp_dir().join("siba-pipeline-example");

    for attempt in 1..=2 {
        println!("--- run {attempt} ---");
        let summary = run_experiment(&config, &out_dir)?;
        let m = summary.primary();
        println!("BA {:.4} ASR {:.4} SSIM {:.4}", m.benign_accuracy, m.attack_success_rate, m.ssim);
        if summary.cache_hits.is_empty() {
            println!("cache hits: none (cold run)");
        } else {
            println!("cache hits: {}", summary.cache_hits.join(", "));
        }
        println!("artifacts in {}", summary.run_dir.display());
    }
    Ok(())
}
