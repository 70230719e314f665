//! Scale-Up: scaled-prediction-consistency detection. A backdoored input's
//! prediction tends to survive pixel amplification, so the fraction of
//! scales that keep the original prediction is the suspicion score.

use crate::error::{Result, SibaError};
use crate::model::ClassifierHandle;

#[derive(Debug, Clone)]
pub struct ScaleUpConfig {
    pub scales: Vec<f32>,
    pub threshold: f64,
}

impl Default for ScaleUpConfig {
    fn default() -> Self {
        Self { scales: vec![2.0, 3.0, 4.0, 5.0, 6.0], threshold: 0.8 }
    }
}

/// Fraction of scales s for which predict(clip(s * x)) == predict(x).
pub fn scale_up_score(
    model: &ClassifierHandle,
    sample: &[f32],
    scales: &[f32],
) -> Result<f64> {
    if scales.is_empty() {
        return Err(SibaError::invalid("scale_up_score needs a non-empty scale set"));
    }
    if sample.len() != model.input_shape().pixel_count() {
        return Err(SibaError::shape("sample does not match model input shape"));
    }
    let scaled: Vec<Vec<f32>> = scales
        .iter()
        .map(|&s| sample.iter().map(|v| (s * v).clamp(0.0, 1.0)).collect())
        .collect();
    let mut batch: Vec<&[f32]> = vec![sample];
    batch.extend(scaled.iter().map(|v| v.as_slice()));
    let preds = model.predict_labels(&batch)?;
    let base = preds[0];
    let consistent = preds[1..].iter().filter(|&&p| p == base).count();
    Ok(consistent as f64 / scales.len() as f64)
}

/// Detection decision: flagged as poisoned when score >= threshold.
pub fn scale_up_flag(score: f64, threshold: f64) -> bool {
    score >= threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::types::ImageShape;

    fn model(seed: u64) -> ClassifierHandle {
        let s = ImageShape::new(8, 8, 3).unwrap();
        ClassifierHandle::new(Architecture::SmallCnn, s, 10, seed).unwrap()
    }

    #[test]
    fn all_zero_image_is_a_fixed_point() {
        let m = model(2);
        let zero = vec![0.0f32; m.input_shape().pixel_count()];
        let score = scale_up_score(&m, &zero, &ScaleUpConfig::default().scales).unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn score_lies_on_the_scale_grid() {
        let m = model(3);
        let sample: Vec<f32> =
            (0..m.input_shape().pixel_count()).map(|i| (i % 11) as f32 / 11.0).collect();
        let scales = ScaleUpConfig::default().scales;
        let score = scale_up_score(&m, &sample, &scales).unwrap();
        let grid: Vec<f64> = (0..=scales.len()).map(|i| i as f64 / scales.len() as f64).collect();
        assert!(grid.iter().any(|g| (g - score).abs() < 1e-12), "score {score} off grid");
    }

    #[test]
    fn flag_threshold_needs_four_of_five_scales() {
        assert!(!scale_up_flag(3.0 / 5.0, 0.8));
        assert!(scale_up_flag(4.0 / 5.0, 0.8));
        assert!(scale_up_flag(1.0, 0.8));
    }

    #[test]
    fn empty_scales_rejected() {
        let m = model(4);
        let zero = vec![0.0f32; m.input_shape().pixel_count()];
        assert!(scale_up_score(&m, &zero, &[]).is_err());
    }
}
