//! Neural Cleanse: reverse-engineer a candidate (mask, pattern) trigger for
//! every class, then flag classes whose mask L1 norm is an outlier under the
//! median-absolute-deviation test.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use candle_core::{DType, Tensor, Var};
use candle_nn::{ops, AdamW, Optimizer, ParamsAdamW};

use crate::error::{Result, SibaError};
use crate::model::{labels_tensor, ClassifierHandle};
use crate::types::LabeledImageSet;

/// Classes with an anomaly index above this are treated as backdoor targets.
pub const ANOMALY_THRESHOLD: f64 = 2.0;

/// MAD consistency constant for normally distributed deviations.
const MAD_CONSISTENCY: f64 = 1.4826;

#[derive(Debug, Clone)]
pub struct NeuralCleanseConfig {
    pub lr: f64,
    pub reg_coef: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NeuralCleanseConfig {
    fn default() -> Self {
        Self { lr: 0.1, reg_coef: 0.001, epochs: 50, batch_size: 32, seed: 0 }
    }
}

/// Outcome of the per-class trigger optimization. `mask_norm` is `None` when
/// the optimization diverged for that class.
#[derive(Debug, Clone)]
pub struct ClassCleanse {
    pub class: usize,
    pub mask_norm: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NeuralCleanseReport {
    pub per_class: Vec<ClassCleanse>,
    /// Anomaly index per class; `None` where optimization failed.
    pub anomaly_indices: Vec<Option<f64>>,
    pub flagged: bool,
}

impl NeuralCleanseReport {
    pub fn max_anomaly_index(&self) -> Option<f64> {
        self.anomaly_indices
            .iter()
            .flatten()
            .copied()
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }
}

/// |norm - median| / (1.4826 * MAD) for each norm. A zero MAD (all norms
/// equal) yields index 0 everywhere deviation is 0 and +inf otherwise.
pub fn anomaly_indices(norms: &[f64]) -> Result<Vec<f64>> {
    if norms.is_empty() {
        return Err(SibaError::invalid("anomaly_indices on an empty list"));
    }
    if norms.iter().any(|n| !n.is_finite()) {
        return Err(SibaError::invalid("mask norms must be finite"));
    }
    let median = |values: &mut Vec<f64>| -> f64 {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len();
        if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        }
    };
    let med = median(&mut norms.to_vec());
    let mut deviations: Vec<f64> = norms.iter().map(|n| (n - med).abs()).collect();
    let mad = median(&mut deviations);
    Ok(norms
        .iter()
        .map(|n| {
            let dev = (n - med).abs();
            if mad == 0.0 {
                if dev == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                dev / (MAD_CONSISTENCY * mad)
            }
        })
        .collect())
}

/// Optimize a (mask, pattern) pair steering the whole probe set to `target`.
/// Returns the spatial mask's L1 norm and the final objective, or None on
/// divergence.
fn reverse_engineer_class(
    model: &ClassifierHandle,
    probe: &LabeledImageSet,
    target: usize,
    config: &NeuralCleanseConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    let shape = model.input_shape();
    let device = model.device();
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    // raw logits start near zero: mask ~0.5 everywhere, pattern mid-gray
    let raw_mask = Var::zeros((1, 1, h, w), DType::F32, device)?;
    let raw_pattern = Var::zeros((1, c, h, w), DType::F32, device)?;
    let params = ParamsAdamW { lr: config.lr, weight_decay: 0.0, ..Default::default() };
    let mut opt = AdamW::new(vec![raw_mask.clone(), raw_pattern.clone()], params)?;

    let mut last_loss = f64::NAN;
    for _epoch in 0..config.epochs {
        let mut i = 0;
        while i < probe.len() {
            let end = (i + config.batch_size).min(probe.len());
            let refs: Vec<&[f32]> = (i..end).map(|j| probe.image(j)).collect();
            let x = model.batch_tensor(&refs)?;
            let m = ops::sigmoid(raw_mask.as_tensor())?;
            let p = ops::sigmoid(raw_pattern.as_tensor())?;
            let ones = Tensor::ones_like(&m)?;
            let stamped = x
                .broadcast_mul(&ones.sub(&m)?)?
                .broadcast_add(&m.broadcast_mul(&p)?)?;
            let logits = model.logits_t(&stamped)?;
            let targets = labels_tensor(&vec![target; end - i], device)?;
            let ce = candle_nn::loss::cross_entropy(&logits, &targets)?;
            let reg = m.sum_all()?.affine(config.reg_coef, 0.0)?;
            let loss = ce.broadcast_add(&reg)?;
            last_loss = loss.to_scalar::<f32>()? as f64;
            if !last_loss.is_finite() {
                return Ok((None, None));
            }
            opt.backward_step(&loss)?;
            i = end;
        }
    }
    let m = ops::sigmoid(raw_mask.as_tensor())?;
    let norm = m.sum_all()?.to_scalar::<f32>()? as f64;
    if !norm.is_finite() {
        return Ok((None, None));
    }
    Ok((Some(norm), Some(last_loss)))
}

/// Run the per-class reverse-engineering sweep and the MAD outlier test.
/// Anomaly statistics are computed over the classes that converged; a class
/// that diverged carries `None` in both the norm and index slots.
pub fn neural_cleanse(
    model: &ClassifierHandle,
    probe_set: &LabeledImageSet,
    config: &NeuralCleanseConfig,
) -> Result<NeuralCleanseReport> {
    if probe_set.is_empty() {
        return Err(SibaError::invalid("neural_cleanse needs a non-empty probe set"));
    }
    let distinct: std::collections::BTreeSet<usize> = probe_set.labels().iter().copied().collect();
    if distinct.len() < 2 {
        return Err(SibaError::invalid("probe set must contain samples from multiple classes"));
    }
    let classes = model.num_classes();
    let mut per_class = Vec::with_capacity(classes);
    for target in 0..classes {
        let (mask_norm, final_loss) = reverse_engineer_class(model, probe_set, target, config)?;
        if mask_norm.is_none() {
            log::warn!("neural cleanse: optimization for class {target} diverged");
        }
        per_class.push(ClassCleanse { class: target, mask_norm, final_loss });
    }
    let ok_norms: Vec<f64> = per_class.iter().filter_map(|c| c.mask_norm).collect();
    if ok_norms.is_empty() {
        return Err(SibaError::Numeric(
            "neural cleanse diverged for every class".into(),
        ));
    }
    let ok_indices = anomaly_indices(&ok_norms)?;
    let mut iter = ok_indices.into_iter();
    let anomaly: Vec<Option<f64>> = per_class
        .iter()
        .map(|c| c.mask_norm.map(|_| iter.next().expect("one index per converged class")))
        .collect();
    let flagged = anomaly.iter().flatten().any(|&i| i > ANOMALY_THRESHOLD);
    Ok(NeuralCleanseReport { per_class, anomaly_indices: anomaly, flagged })
}

/// Plot-ready CSV: one row per class with the mask norm and anomaly index.
pub fn write_anomaly_csv(path: &Path, report: &NeuralCleanseReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "class,mask_l1,anomaly_index")?;
    for (c, idx) in report.per_class.iter().zip(&report.anomaly_indices) {
        let norm = c.mask_norm.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"));
        let index = idx.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"));
        writeln!(out, "{},{},{}", c.class, norm, index)?;
    }
    out.flush()?;
    Ok(())
}
