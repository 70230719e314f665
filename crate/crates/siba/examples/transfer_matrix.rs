//! Architecture transfer: synthesize a trigger against one surrogate
//! architecture and attack victims of every architecture, producing the full
//! (surrogate, victim) ASR matrix.
//!
//! Run with: cargo run --release --example transfer_matrix

use siba::pipeline::{run_transfer_grid, ExperimentConfig};

const CONFIG: &str = r#"
[experiment]
id = "toy_transfer"
dataset = "synthetic"
synthetic_train = 500
synthetic_test = 100
num_classes = 6
seed = 81

[attack]
method = "siba"
poisoning_rate = 0.05
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
    let out_dir = std::env::temp_dir().join("siba-transfer-example");
    let cells = run_transfer_grid(&config, &["small-cnn", "small-vgg"], &out_dir)?;
    println!("surrogate -> victim   BA     ASR");
    for c in &cells {
        println!("{:<10} -> {:<10} {:.4} {:.4}", c.surrogate_arch, c.victim_arch, c.benign_accuracy, c.attack_success_rate);
    }
    println!("matrix: {}", out_dir.join("transfer_matrix.csv").display());
    Ok(())
}
