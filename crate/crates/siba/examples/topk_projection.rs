//! The L0 projection at the heart of the synthesis loop: after a signed
//! gradient step, keeping the k elements with the largest gradient
//! magnitudes is the optimal hard-thresholding choice. This example checks
//! that claim against brute-force subset enumeration on small inputs.
//!
//! Run with: cargo run --release --example topk_projection

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siba::synthesis::{lemma1_bruteforce_projection, linf_sign_step, topk_mask};
use siba::types::ImageShape;

fn main() -> siba::Result<()> {
    env_logger::init();
    let shape = ImageShape::new(2, 2, 3)?; // 12 elements, small enough to enumerate
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut agreements = 0;
    let trials = 100;
    for _ in 0..trials {
        let gradient: Vec<f32> = (0..shape.pixel_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = rng.gen_range(1..=shape.pixel_count());
        let alpha = rng.gen_range(0.05..0.5);

        // fast path: top-k by |gradient|
        let fast = topk_mask(&gradient, shape, k)?;
        // oracle: sign step from t = 0, then every support of size k,
        // keeping the one with the best objective
        let eps = 8.0 / 255.0;
        let v = linf_sign_step(&vec![0.0; gradient.len()], &gradient, alpha, eps)?;
        let (_, oracle_support) = lemma1_bruteforce_projection(&v, &gradient, k, alpha)?;

        if fast.support() == oracle_support {
            agreements += 1;
        }
    }
    println!("top-k selection matched exhaustive enumeration in {agreements}/{trials} trials");
    assert_eq!(agreements, trials);
    Ok(())
}
