//! SGD training of surrogate and victim classifiers.

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SibaError};
use crate::model::{labels_tensor, Architecture, ClassifierHandle};
use crate::types::{ImageShape, LabeledImageSet};

/// Global gradient-norm clipping threshold. The small networks here carry no
/// normalization layers, so occasional large batches produce gradient spikes
/// that destabilize SGD; clipping keeps the recipe usable across
/// architectures without per-architecture learning-rate tuning.
const GRAD_CLIP_NORM: f64 = 5.0;

/// Training recipe. Defaults mirror the standard SGD image-classification
/// setup: momentum 0.9, weight decay 5e-4, step decay at the milestones.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub epochs: usize,
    pub initial_lr: f64,
    /// Epochs at which the learning rate is divided by 10. Strictly
    /// increasing and below `epochs`.
    pub lr_milestones: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub augment_crop: bool,
    pub augment_flip: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::SmallResnet,
            epochs: 100,
            initial_lr: 0.1,
            lr_milestones: vec![60, 90],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            augment_crop: true,
            augment_flip: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SibaError::invalid("batch_size must be >= 1"));
        }
        if self.initial_lr <= 0.0 {
            return Err(SibaError::invalid("initial_lr must be positive"));
        }
        let mut prev = None;
        for &m in &self.lr_milestones {
            if m >= self.epochs {
                return Err(SibaError::invalid(format!(
                    "milestone {m} must be < epochs {}",
                    self.epochs
                )));
            }
            if let Some(p) = prev {
                if m <= p {
                    return Err(SibaError::invalid("milestones must be strictly increasing"));
                }
            }
            prev = Some(m);
        }
        Ok(())
    }
}

/// What training recorded: the final mean train loss and benign accuracy on
/// the held-out split (when one was supplied).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub final_train_loss: f64,
    pub holdout_accuracy: Option<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Random crop (4px zero pad) and horizontal flip on a row-major HWC buffer.
fn augment(
    img: &[f32],
    shape: ImageShape,
    crop: bool,
    flip: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let mut out = img.to_vec();
    if crop {
        const PAD: isize = 4;
        let dy = rng.gen_range(-PAD..=PAD);
        let dx = rng.gen_range(-PAD..=PAD);
        if dy != 0 || dx != 0 {
            let mut shifted = vec![0.0f32; out.len()];
            for y in 0..h as isize {
                let sy = y + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w as isize {
                    let sx = x + dx;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = ((sy as usize * w) + sx as usize) * c;
                    let dst = ((y as usize * w) + x as usize) * c;
                    shifted[dst..dst + c].copy_from_slice(&out[src..src + c]);
                }
            }
            out = shifted;
        }
    }
    if flip && rng.gen_bool(0.5) {
        let mut flipped = vec![0.0f32; out.len()];
        for y in 0..h {
            for x in 0..w {
                let src = (y * w + x) * c;
                let dst = (y * w + (w - 1 - x)) * c;
                flipped[dst..dst + c].copy_from_slice(&out[src..src + c]);
            }
        }
        out = flipped;
    }
    out
}

/// Train a classifier on `data` with the given recipe. Deterministic for a
/// fixed seed. Non-finite loss aborts with a training error carrying the
/// epoch trace.
pub fn train_classifier(
    data: &LabeledImageSet,
    holdout: Option<&LabeledImageSet>,
    config: &TrainConfig,
) -> Result<(ClassifierHandle, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(SibaError::invalid("training set is empty"));
    }
    let model = ClassifierHandle::new(config.arch, data.shape(), data.num_classes(), config.seed)?;
    let report = train_existing(&model, data, holdout, config)?;
    Ok((model, report))
}

/// Run the SGD loop on an already-constructed model (used for warm starts).
pub fn train_existing(
    model: &ClassifierHandle,
    data: &LabeledImageSet,
    holdout: Option<&LabeledImageSet>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let device = model.device().clone();
    let dtype = model.dtype();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a11);
    let names: Vec<String> = model.params().keys().cloned().collect();
    let mut velocity: std::collections::BTreeMap<String, Tensor> = Default::default();

    let mut lr = config.initial_lr;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let shape = data.shape();

    for epoch in 0..config.epochs {
        if config.lr_milestones.contains(&epoch) {
            lr /= 10.0;
        }
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for batch_idx in indices.chunks(config.batch_size) {
            let mut owned: Vec<Vec<f32>> = Vec::with_capacity(batch_idx.len());
            let mut labels = Vec::with_capacity(batch_idx.len());
            for &i in batch_idx {
                let img = if config.augment_crop || config.augment_flip {
                    augment(data.image(i), shape, config.augment_crop, config.augment_flip, &mut rng)
                } else {
                    data.image(i).to_vec()
                };
                owned.push(img);
                labels.push(data.label(i));
            }
            let refs: Vec<&[f32]> = owned.iter().map(|v| v.as_slice()).collect();
            let x = model.batch_tensor(&refs)?;
            let y = labels_tensor(&labels, &device)?;
            let loss = candle_nn::loss::cross_entropy(&model.logits_t(&x)?, &y)?;
            let loss_val = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !loss_val.is_finite() {
                return Err(SibaError::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batches}; epoch losses so far: {epoch_losses:?}"
                )));
            }
            epoch_loss += loss_val;
            batches += 1;
            let grads = loss.backward()?;
            let mut grad_sq_sum = 0.0f64;
            for name in &names {
                let var = &model.params()[name];
                if let Some(grad) = grads.get(var.as_tensor()) {
                    grad_sq_sum += grad
                        .sqr()?
                        .sum_all()?
                        .to_dtype(DType::F64)?
                        .to_scalar::<f64>()?;
                }
            }
            let grad_norm = grad_sq_sum.sqrt();
            let clip_scale =
                if grad_norm > GRAD_CLIP_NORM { GRAD_CLIP_NORM / grad_norm } else { 1.0 };
            for name in &names {
                let var = &model.params()[name];
                let Some(grad) = grads.get(var.as_tensor()) else { continue };
                // v <- momentum * v + clip * grad + wd * w ; w <- w - lr * v
                let mut update = (grad * clip_scale)?;
                if config.weight_decay != 0.0 {
                    update = (update + (var.as_tensor() * config.weight_decay)?)?;
                }
                let v = match velocity.get(name) {
                    Some(prev) => ((prev * config.momentum)? + update)?,
                    None => update,
                };
                // detach so the velocity buffers do not keep each step's
                // computation graph (and transitively all prior steps) alive
                let v = v.detach();
                velocity.insert(name.clone(), v.clone());
                var.set(&(var.as_tensor() - (v * lr)?)?.to_dtype(dtype)?)?;
            }
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }

    let holdout_accuracy = match holdout {
        Some(set) if !set.is_empty() => {
            let preds = model.predict_dataset(set)?;
            let correct = preds.iter().zip(set.labels()).filter(|(p, l)| p == l).count();
            Some(correct as f64 / set.len() as f64)
        }
        _ => None,
    };
    Ok(TrainReport {
        final_train_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        holdout_accuracy,
        epoch_losses,
    })
}
