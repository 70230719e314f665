//! Reported metrics: benign accuracy, attack success rate, SSIM, and the
//! pluggable perceptual-distance hook, plus CSV report emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, SibaError};
use crate::model::ClassifierHandle;
use crate::types::{ImageShape, LabeledImageSet};

/// Fraction of clean test samples classified correctly.
pub fn benign_accuracy(model: &ClassifierHandle, clean_test: &LabeledImageSet) -> Result<f64> {
    if clean_test.is_empty() {
        return Err(SibaError::invalid("benign_accuracy needs a non-empty test set"));
    }
    let predicted = model.predict_dataset(clean_test)?;
    let correct = predicted
        .iter()
        .zip(clean_test.labels())
        .filter(|(p, l)| *p == *l)
        .count();
    Ok(correct as f64 / clean_test.len() as f64)
}

/// Fraction of poisoned test samples classified as the rule-mapped target.
/// The set must come from `poison_test_set`, so its labels already carry the
/// attack targets.
pub fn attack_success_rate(
    model: &ClassifierHandle,
    poisoned_test: &LabeledImageSet,
) -> Result<f64> {
    // identical computation on a differently-constructed set; the distinct
    // name keeps reports unambiguous
    benign_accuracy(model, poisoned_test)
}

const SSIM_RADIUS: i64 = 5; // 11x11 window
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5) and the
/// standard stability constants on the [0, 1] dynamic range, averaged over
/// channels and spatial positions. Windows crossing the border are cropped
/// and their Gaussian weights renormalized.
pub fn ssim(image_a: &[f32], image_b: &[f32], shape: ImageShape) -> Result<f64> {
    if image_a.len() != shape.pixel_count() || image_b.len() != shape.pixel_count() {
        return Err(SibaError::shape(format!(
            "ssim inputs ({}, {}) do not match {shape}",
            image_a.len(),
            image_b.len()
        )));
    }
    for v in image_a.iter().chain(image_b) {
        if !(0.0..=1.0).contains(v) {
            return Err(SibaError::invalid("ssim inputs must lie in [0, 1]"));
        }
    }
    let (h, w, c) = (shape.height as i64, shape.width as i64, shape.channels);
    let mut kernel = [0.0f64; 11];
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *k = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let mut total = 0.0f64;
    let mut count = 0usize;
    for ch in 0..c {
        for cy in 0..h {
            for cx in 0..w {
                let mut wsum = 0.0f64;
                let (mut ma, mut mb) = (0.0f64, 0.0f64);
                let (mut maa, mut mbb, mut mab) = (0.0f64, 0.0f64, 0.0f64);
                for dy in -SSIM_RADIUS..=SSIM_RADIUS {
                    let y = cy + dy;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for dx in -SSIM_RADIUS..=SSIM_RADIUS {
                        let x = cx + dx;
                        if x < 0 || x >= w {
                            continue;
                        }
                        let wgt = kernel[(dy + SSIM_RADIUS) as usize]
                            * kernel[(dx + SSIM_RADIUS) as usize];
                        let idx = ((y * w + x) as usize) * c + ch;
                        let a = image_a[idx] as f64;
                        let b = image_b[idx] as f64;
                        wsum += wgt;
                        ma += wgt * a;
                        mb += wgt * b;
                        maa += wgt * a * a;
                        mbb += wgt * b * b;
                        mab += wgt * a * b;
                    }
                }
                let (mu_a, mu_b) = (ma / wsum, mb / wsum);
                let var_a = maa / wsum - mu_a * mu_a;
                let var_b = mbb / wsum - mu_b * mu_b;
                let cov = mab / wsum - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
                total += num / den;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean SSIM between matching images of two sets (e.g. poisoned vs clean).
pub fn mean_ssim(set_a: &LabeledImageSet, set_b: &LabeledImageSet) -> Result<f64> {
    if set_a.len() != set_b.len() || set_a.shape() != set_b.shape() {
        return Err(SibaError::shape("mean_ssim requires matching sets"));
    }
    if set_a.is_empty() {
        return Err(SibaError::invalid("mean_ssim on empty sets"));
    }
    let mut total = 0.0;
    for i in 0..set_a.len() {
        total += ssim(set_a.image(i), set_b.image(i), set_a.shape())?;
    }
    Ok(total / set_a.len() as f64)
}

/// External perceptual-distance backend (e.g. an LPIPS implementation). The
/// core library ships no pretrained perceptual network, so this is a plug-in
/// boundary; reports show "n/a" when no scorer is registered.
pub trait PerceptualScorer {
    fn distance(&self, image_a: &[f32], image_b: &[f32], shape: ImageShape) -> Result<f64>;
}

pub fn perceptual_distance(
    image_a: &[f32],
    image_b: &[f32],
    shape: ImageShape,
    scorer: Option<&dyn PerceptualScorer>,
) -> Result<Option<f64>> {
    if image_a.len() != shape.pixel_count() || image_b.len() != shape.pixel_count() {
        return Err(SibaError::shape("perceptual_distance inputs do not match shape"));
    }
    match scorer {
        None => Ok(None),
        Some(s) => {
            let d = s.distance(image_a, image_b, shape)?;
            if !(d.is_finite() && d >= 0.0) {
                return Err(SibaError::invalid(format!("scorer returned invalid distance {d}")));
            }
            Ok(Some(d))
        }
    }
}

/// One row of the headline metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub experiment_id: String,
    pub attack: String,
    pub model: String,
    pub benign_accuracy: f64,
    pub attack_success_rate: f64,
    pub trigger_l0: usize,
    pub trigger_linf: f32,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str = "experiment_id,attack,model,ba,asr,l0,linf,ssim,lpips";

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        let lpips = r.lpips.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{},{:.6},{:.4},{}",
            r.experiment_id,
            r.attack,
            r.model,
            r.benign_accuracy,
            r.attack_success_rate,
            r.trigger_l0,
            r.trigger_linf,
            r.ssim,
            lpips
        )?;
    }
    out.flush()?;
    Ok(())
}
