//! STRIP: perturb a suspect input by superimposing clean images and inspect
//! the entropy of the model's predictions. Backdoored inputs keep steering
//! the model toward the target class, so their entropy stays low.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SibaError};
use crate::model::ClassifierHandle;
use crate::types::LabeledImageSet;

#[derive(Debug, Clone)]
pub struct StripConfig {
    pub n_overlays: usize,
    pub blend: f32,
    pub seed: u64,
}

impl Default for StripConfig {
    fn default() -> Self {
        Self { n_overlays: 64, blend: 0.5, seed: 0 }
    }
}

/// Mean Shannon entropy (natural log) of the model's softmax output over
/// `n_overlays` random blends of `sample` with pool images.
pub fn strip_entropy(
    model: &ClassifierHandle,
    sample: &[f32],
    overlay_pool: &LabeledImageSet,
    config: &StripConfig,
) -> Result<f64> {
    if overlay_pool.is_empty() {
        return Err(SibaError::invalid("strip_entropy needs a non-empty overlay pool"));
    }
    if !(0.0 < config.blend && config.blend < 1.0) {
        return Err(SibaError::invalid(format!("blend {} not in (0, 1)", config.blend)));
    }
    if config.n_overlays == 0 {
        return Err(SibaError::invalid("n_overlays must be >= 1"));
    }
    if sample.len() != overlay_pool.shape().pixel_count() {
        return Err(SibaError::shape("sample does not match overlay pool shape"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a = config.blend;
    let blended: Vec<Vec<f32>> = (0..config.n_overlays)
        .map(|_| {
            let overlay = overlay_pool.image(rng.gen_range(0..overlay_pool.len()));
            sample
                .iter()
                .zip(overlay)
                .map(|(x, o)| ((1.0 - a) * x + a * o).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    let refs: Vec<&[f32]> = blended.iter().map(|v| v.as_slice()).collect();
    let probs = model.probabilities(&refs)?;
    let mut total = 0.0f64;
    for row in &probs {
        let mut h = 0.0f64;
        for &p in row {
            let p = p as f64;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        total += h;
    }
    Ok(total / probs.len() as f64)
}

/// STRIP entropies for every sample of a set, suitable for detection_report.
/// Overlay draws stay deterministic per (config.seed, sample index).
pub fn strip_scores(
    model: &ClassifierHandle,
    samples: &LabeledImageSet,
    overlay_pool: &LabeledImageSet,
    config: &StripConfig,
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(samples.len());
    for i in 0..samples.len() {
        let per_sample = StripConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        scores.push(strip_entropy(model, samples.image(i), overlay_pool, &per_sample)?);
    }
    Ok(scores)
}
