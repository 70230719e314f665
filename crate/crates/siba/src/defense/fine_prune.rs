//! Fine-Pruning: rank penultimate channels by mean activation on clean data
//! (ascending — the most dormant first), mask them progressively, and record
//! how benign accuracy and attack success respond.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Result, SibaError};
use crate::metrics::{attack_success_rate, benign_accuracy};
use crate::model::ClassifierHandle;
use crate::types::LabeledImageSet;

#[derive(Debug, Clone, PartialEq)]
pub struct PruneCurvePoint {
    pub pruned_count: usize,
    pub benign_accuracy: f64,
    pub attack_success_rate: f64,
}

/// Mean activation of every penultimate channel over a clean set.
fn mean_channel_activations(
    model: &ClassifierHandle,
    data: &LabeledImageSet,
) -> Result<Vec<f64>> {
    let n_channels = model.arch().penultimate_channels();
    let mut sums = vec![0.0f64; n_channels];
    let batch = 128;
    let mut i = 0;
    while i < data.len() {
        let end = (i + batch).min(data.len());
        let refs: Vec<&[f32]> = (i..end).map(|j| data.image(j)).collect();
        let acts = model.penultimate_activations(&refs)?;
        for row in &acts {
            for (s, a) in sums.iter_mut().zip(row) {
                *s += *a as f64;
            }
        }
        i = end;
    }
    Ok(sums.into_iter().map(|s| s / data.len() as f64).collect())
}

/// For each step count, mask that many lowest-activation channels and
/// evaluate. Deterministic given the model and validation set; activation
/// ties break toward the lower channel index.
pub fn fine_prune(
    model: &ClassifierHandle,
    clean_validation: &LabeledImageSet,
    clean_test: &LabeledImageSet,
    poisoned_test: &LabeledImageSet,
    steps: &[usize],
) -> Result<Vec<PruneCurvePoint>> {
    if clean_validation.is_empty() {
        return Err(SibaError::invalid("fine_prune needs a non-empty clean validation set"));
    }
    let n_channels = model.arch().penultimate_channels();
    if let Some(&bad) = steps.iter().find(|&&s| s > n_channels) {
        return Err(SibaError::invalid(format!(
            "prune step {bad} exceeds the {n_channels} penultimate channels"
        )));
    }
    let means = mean_channel_activations(model, clean_validation)?;
    let mut order: Vec<usize> = (0..n_channels).collect();
    order.sort_by(|&a, &b| means[a].partial_cmp(&means[b]).unwrap().then(a.cmp(&b)));

    let mut curve = Vec::with_capacity(steps.len());
    for &count in steps {
        let masked: BTreeSet<usize> = order[..count].iter().copied().collect();
        let pruned = model.with_masked_channels(&masked)?;
        curve.push(PruneCurvePoint {
            pruned_count: count,
            benign_accuracy: benign_accuracy(&pruned, clean_test)?,
            attack_success_rate: attack_success_rate(&pruned, poisoned_test)?,
        });
    }
    Ok(curve)
}

/// Plot-ready CSV: one row per pruned count.
pub fn write_prune_curve_csv(path: &Path, curve: &[PruneCurvePoint]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "pruned_count,ba,asr")?;
    for p in curve {
        writeln!(out, "{},{:.6},{:.6}", p.pruned_count, p.benign_accuracy, p.attack_success_rate)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::types::ImageShape;

    fn fixtures() -> (ClassifierHandle, LabeledImageSet) {
        let s = ImageShape::new(8, 8, 3).unwrap();
        let model = ClassifierHandle::new(Architecture::SmallCnn, s, 10, 13).unwrap();
        let images =
            (0..30).map(|i| vec![(i % 9) as f32 / 12.0 + 0.05; s.pixel_count()]).collect();
        let labels = (0..30).map(|i| i % 10).collect();
        let data = LabeledImageSet::new(images, labels, 10, s).unwrap();
        (model, data)
    }

    #[test]
    fn zero_pruned_matches_unpruned_model() {
        let (model, data) = fixtures();
        let curve = fine_prune(&model, &data, &data, &data, &[0]).unwrap();
        assert_eq!(curve[0].pruned_count, 0);
        assert!(
            (curve[0].benign_accuracy - benign_accuracy(&model, &data).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn all_channels_pruned_leaves_bias_only_predictions() {
        let (model, data) = fixtures();
        let n = model.arch().penultimate_channels();
        let curve = fine_prune(&model, &data, &data, &data, &[n]).unwrap();
        // every feature is zeroed, so all samples share one prediction;
        // accuracy collapses to a single class's frequency
        let fully = model.with_masked_channels(&(0..n).collect()).unwrap();
        let preds = fully.predict_dataset(&data).unwrap();
        assert!(preds.iter().all(|&p| p == preds[0]));
        let freq =
            data.labels().iter().filter(|&&l| l == preds[0]).count() as f64 / data.len() as f64;
        assert!((curve[0].benign_accuracy - freq).abs() < 1e-12);
    }

    #[test]
    fn curve_is_deterministic() {
        let (model, data) = fixtures();
        let steps = [0, 8, 16, 32];
        let a = fine_prune(&model, &data, &data, &data, &steps).unwrap();
        let b = fine_prune(&model, &data, &data, &data, &steps).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), steps.len());
    }

    #[test]
    fn oversized_step_rejected() {
        let (model, data) = fixtures();
        let n = model.arch().penultimate_channels();
        assert!(fine_prune(&model, &data, &data, &data, &[n + 1]).is_err());
        let empty = LabeledImageSet::new(vec![], vec![], 10, data.shape()).unwrap();
        assert!(fine_prune(&model, &empty, &data, &data, &[0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prune.csv");
        let curve = vec![PruneCurvePoint {
            pruned_count: 256,
            benign_accuracy: 0.91,
            attack_success_rate: 0.85,
        }];
        write_prune_curve_csv(&path, &curve).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "pruned_count,ba,asr\n256,0.910000,0.850000\n");
    }
}
