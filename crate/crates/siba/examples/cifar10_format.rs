//! The CIFAR-10 binary loader. With $SIBA_DATA_DIR pointing at an extracted
//! cifar-10-batches-bin directory this loads the real dataset; otherwise it
//! demonstrates the format on a synthetic batch written in the same layout
//! (3073-byte records: label byte + three planar 1024-byte channels).
//!
//! Run with: cargo run --release --example cifar10_format

use siba::io::{read_cifar10_test, read_cifar10_train, write_cifar10_batch};
use siba::pipeline::DATA_DIR_ENV;
use siba::synthetic::synthetic_dataset;
use siba::types::ImageShape;

fn main() -> siba::Result<()> {
    env_logger::init();
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        let dir = std::path::PathBuf::from(dir);
        println!("loading CIFAR-10 from {}", dir.display());
        let train = read_cifar10_train(&dir)?;
        let test = read_cifar10_test(&dir)?;
        println!("train: {} samples, test: {} samples", train.len(), test.len());
        return Ok(());
    }

    println!("{DATA_DIR_ENV} is unset; demonstrating the binary format on synthetic data");
    let shape = ImageShape::new(32, 32, 3)?;
    let data = synthetic_dataset(100, 10, shape, 91)?;
    let dir = std::env::temp_dir().join("siba-cifar-format-example");
    std::fs::create_dir_all(&dir)?;
    write_cifar10_batch(&dir.join("test_batch.bin"), &data)?;
    let back = read_cifar10_test(&dir)?;
    println!("wrote and re-read {} records ({} bytes each)", back.len(), 3073);
    let max_err = (0..back.len())
        .flat_map(|i| {
            data.image(i)
                .iter()
                .zip(back.image(i))
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0f32, f32::max);
    println!("max round-trip quantization error: {max_err:.6} (<= 1/255 = {:.6})", 1.0 / 255.0);
    Ok(())
}
