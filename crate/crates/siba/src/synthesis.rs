//! Sparse-and-invisible trigger synthesis: alternating sign-step updates
//! under the L-infinity ball with periodic top-k support re-selection, plus
//! the exhaustive projection oracle used to validate the top-k rule.

use candle_core::{DType, Var};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SibaError};
use crate::model::{hwc_to_tensor, labels_tensor, tensor_to_hwc, ClassifierHandle};
use crate::types::{
    l0_norm, linf_norm, ImageShape, LabeledImageSet, LabelRule, SparsityMask, TriggerPattern,
    EPS_TOLERANCE,
};

/// Hyperparameters of the synthesis loop.
#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    /// Mini-batch size M.
    pub batch_size: usize,
    /// Step size alpha; each update moves by alpha * eps per element.
    pub step_size: f32,
    /// Total iterations T.
    pub iterations: usize,
    /// Support re-selection period K (the mask updates when i mod K == 0).
    pub mask_update_period: usize,
    pub k_budget: usize,
    pub eps_budget: f32,
    pub label_rule: LabelRule,
    /// When set, one mask bit covers all channels of a spatial pixel and the
    /// element budget becomes k * channels.
    pub spatial_grouping: bool,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            step_size: 0.2,
            iterations: 200,
            mask_update_period: 5,
            k_budget: 100,
            eps_budget: 8.0 / 255.0,
            label_rule: LabelRule::all_to_one(0),
            spatial_grouping: false,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self, shape: ImageShape) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SibaError::invalid("batch_size must be >= 1"));
        }
        if self.step_size <= 0.0 {
            return Err(SibaError::invalid("step_size must be positive"));
        }
        if self.mask_update_period == 0 {
            return Err(SibaError::invalid("mask_update_period must be >= 1"));
        }
        if self.iterations > 0 && self.mask_update_period > self.iterations {
            return Err(SibaError::invalid("mask_update_period K must be <= iterations T"));
        }
        let d = shape.pixel_count();
        let budget = self.element_budget(shape);
        if self.k_budget == 0 || budget > d {
            return Err(SibaError::invalid(format!("k budget {budget} out of range (1..={d})")));
        }
        if !(0.0 < self.eps_budget && self.eps_budget <= 1.0) {
            return Err(SibaError::invalid("eps_budget must be in (0, 1]"));
        }
        Ok(())
    }

    /// Maximum nonzero elements of the produced trigger.
    pub fn element_budget(&self, shape: ImageShape) -> usize {
        if self.spatial_grouping {
            self.k_budget * shape.channels
        } else {
            self.k_budget
        }
    }
}

/// Loss trace and final pattern of one synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisTrace {
    pub losses: Vec<f32>,
    pub mask_update_iterations: Vec<usize>,
    pub final_trigger: TriggerPattern,
}

/// Gradient of the mean cross-entropy of the model on trigger-added,
/// range-clipped inputs against the rule-mapped labels, taken with respect to
/// the trigger. Returned row-major HWC.
pub fn poisoned_loss_gradient(
    model: &ClassifierHandle,
    batch: &LabeledImageSet,
    trigger: &TriggerPattern,
    label_rule: LabelRule,
) -> Result<Vec<f32>> {
    poisoned_loss_and_gradient(model, batch, trigger.values(), label_rule).map(|(_, g)| g)
}

/// As [`poisoned_loss_gradient`] but also returns the loss value, and takes
/// raw trigger values so the synthesis loop can probe unconstrained points.
pub fn poisoned_loss_and_gradient(
    model: &ClassifierHandle,
    batch: &LabeledImageSet,
    trigger_values: &[f32],
    label_rule: LabelRule,
) -> Result<(f64, Vec<f32>)> {
    if batch.is_empty() {
        return Err(SibaError::invalid("batch is empty"));
    }
    let shape = model.input_shape();
    if batch.shape() != shape || trigger_values.len() != shape.pixel_count() {
        return Err(SibaError::shape(format!(
            "batch shape {} / trigger length {} vs model input {}",
            batch.shape(),
            trigger_values.len(),
            shape
        )));
    }
    label_rule.validate(batch.num_classes())?;
    let refs: Vec<&[f32]> = (0..batch.len()).map(|i| batch.image(i)).collect();
    let x = model.batch_tensor(&refs)?;
    let t = hwc_to_tensor(trigger_values, shape, model.device(), model.dtype())?
        .reshape((1, shape.channels, shape.height, shape.width))?;
    let tv = Var::from_tensor(&t)?;
    let z = x.broadcast_add(tv.as_tensor())?.clamp(0f32, 1f32)?;
    let targets: Vec<usize> = batch
        .labels()
        .iter()
        .map(|&y| label_rule.map(y, batch.num_classes()))
        .collect();
    let y = labels_tensor(&targets, model.device())?;
    let loss = candle_nn::loss::cross_entropy(&model.logits_t(&z)?, &y)?;
    let loss_val = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let grads = loss.backward()?;
    let grad = match grads.get(tv.as_tensor()) {
        Some(g) => tensor_to_hwc(&g.squeeze(0)?, shape)?,
        // the trigger did not influence the loss (fully saturated inputs)
        None => vec![0.0; shape.pixel_count()],
    };
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(SibaError::Numeric("non-finite trigger gradient".into()));
    }
    Ok((loss_val, grad))
}

/// One projected sign step: clamp(t - alpha * eps * sign(grad)) into the
/// L-infinity ball of radius eps. sign(0) = 0.
pub fn linf_sign_step(trigger: &[f32], gradient: &[f32], alpha: f32, eps: f32) -> Result<Vec<f32>> {
    if trigger.len() != gradient.len() {
        return Err(SibaError::shape("trigger / gradient length mismatch"));
    }
    if alpha <= 0.0 || eps <= 0.0 {
        return Err(SibaError::invalid("alpha and eps must be positive"));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(SibaError::Numeric("non-finite gradient element".into()));
    }
    Ok(trigger
        .iter()
        .zip(gradient)
        .map(|(t, g)| {
            let sign = if *g > 0.0 {
                1.0
            } else if *g < 0.0 {
                -1.0
            } else {
                0.0
            };
            (t - alpha * eps * sign).clamp(-eps, eps)
        })
        .collect())
}

/// Mask with ones at the k largest |gradient| elements. Ties break toward the
/// lowest flat index.
pub fn topk_mask(gradient: &[f32], shape: ImageShape, k: usize) -> Result<SparsityMask> {
    let d = shape.pixel_count();
    if gradient.len() != d {
        return Err(SibaError::shape("gradient length does not match shape"));
    }
    if k > d {
        return Err(SibaError::invalid(format!("k = {k} > d = {d}")));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(SibaError::Numeric("non-finite gradient element".into()));
    }
    let mut order: Vec<usize> = (0..d).collect();
    // stable by construction: equal magnitudes keep ascending index order
    order.sort_by(|&a, &b| {
        gradient[b]
            .abs()
            .partial_cmp(&gradient[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut bits = vec![false; d];
    for &i in order.iter().take(k) {
        bits[i] = true;
    }
    SparsityMask::new(bits, shape)
}

/// Spatial variant: scores each pixel by the summed |gradient| over its
/// channels, selects k pixels, and sets every channel bit at those pixels.
pub fn topk_mask_spatial(gradient: &[f32], shape: ImageShape, k: usize) -> Result<SparsityMask> {
    let spatial = shape.spatial_count();
    if gradient.len() != shape.pixel_count() {
        return Err(SibaError::shape("gradient length does not match shape"));
    }
    if k > spatial {
        return Err(SibaError::invalid(format!("k = {k} > spatial positions = {spatial}")));
    }
    let c = shape.channels;
    let scores: Vec<f32> = (0..spatial)
        .map(|p| (0..c).map(|ch| gradient[p * c + ch].abs()).sum())
        .collect();
    let mut order: Vec<usize> = (0..spatial).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut bits = vec![false; shape.pixel_count()];
    for &p in order.iter().take(k) {
        for ch in 0..c {
            bits[p * c + ch] = true;
        }
    }
    SparsityMask::new(bits, shape)
}

/// Elementwise product of a trigger with a mask.
pub fn apply_mask(trigger: &TriggerPattern, mask: &SparsityMask) -> Result<TriggerPattern> {
    if trigger.shape() != mask.shape() {
        return Err(SibaError::shape("trigger / mask shape mismatch"));
    }
    let values: Vec<f32> = trigger
        .values()
        .iter()
        .zip(mask.bits())
        .map(|(v, b)| if *b { *v } else { 0.0 })
        .collect();
    TriggerPattern::new(values, trigger.shape(), trigger.k_budget(), trigger.eps_budget())
}

const ORACLE_MAX_DIM: usize = 20;

/// Exhaustive projection oracle: enumerates every k-element support, scores
/// the squared distance to the unprojected step s = -alpha * gradient, and
/// returns the projection of `v` onto the best support together with the
/// chosen support indices (sorted ascending). Exponential in d, so
/// guarded to d <= 20. Valid under the analytical solution's assumptions
/// (previous trigger 0, `v` derived from a sign step on the same gradient).
pub fn lemma1_bruteforce_projection(
    v: &[f32],
    gradient: &[f32],
    k: usize,
    alpha: f32,
) -> Result<(Vec<f32>, Vec<usize>)> {
    let d = v.len();
    if d != gradient.len() {
        return Err(SibaError::shape("v / gradient length mismatch"));
    }
    if d > ORACLE_MAX_DIM {
        return Err(SibaError::invalid(format!(
            "oracle refuses d = {d} > {ORACLE_MAX_DIM} (exponential enumeration)"
        )));
    }
    if k > d {
        return Err(SibaError::invalid(format!("k = {k} > d = {d}")));
    }
    let s: Vec<f32> = gradient.iter().map(|g| -alpha * g).collect();
    let mut best_subset: u32 = 0;
    let mut best_cost = f32::INFINITY;
    // iterate subsets of size k in ascending bit-pattern order so ties take
    // the lexicographically smallest index set
    for subset in 0u32..(1u32 << d) {
        if subset.count_ones() as usize != k {
            continue;
        }
        let mut cost = 0.0f32;
        for j in 0..d {
            if subset & (1 << j) != 0 {
                cost += (s[j] - v[j]) * (s[j] - v[j]);
            } else {
                cost += s[j] * s[j];
            }
        }
        if cost < best_cost {
            best_cost = cost;
            best_subset = subset;
        }
    }
    let values = (0..d)
        .map(|j| if best_subset & (1 << j) != 0 { v[j] } else { 0.0 })
        .collect();
    let support = (0..d).filter(|j| best_subset & (1 << j) != 0).collect();
    Ok((values, support))
}

/// How the support is chosen during the optimization loop.
#[derive(Debug, Clone)]
pub enum MaskSchedule {
    /// Re-select the top-k support every K iterations (the full method).
    Periodic,
    /// Keep one externally chosen mask for the whole run (the magnitude-only
    /// baseline).
    Frozen(SparsityMask),
}

/// Run the full synthesis loop (Periodic schedule).
pub fn synthesize_trigger(
    model: &ClassifierHandle,
    data: &LabeledImageSet,
    config: &SynthesisConfig,
) -> Result<SynthesisTrace> {
    synthesize_with_schedule(model, data, config, MaskSchedule::Periodic)
}

/// Shared loop behind [`synthesize_trigger`] and the frozen-mask baseline.
pub fn synthesize_with_schedule(
    model: &ClassifierHandle,
    data: &LabeledImageSet,
    config: &SynthesisConfig,
    schedule: MaskSchedule,
) -> Result<SynthesisTrace> {
    let shape = model.input_shape();
    config.validate(shape)?;
    if data.is_empty() {
        return Err(SibaError::invalid("synthesis data is empty"));
    }
    if data.shape() != shape {
        return Err(SibaError::shape("data shape does not match model input"));
    }
    label_budget_check(config, data)?;

    let d = shape.pixel_count();
    let element_budget = config.element_budget(shape);
    let eps = config.eps_budget;
    let mut trigger = vec![0.0f32; d];
    let mut mask = match &schedule {
        MaskSchedule::Periodic => SparsityMask::zeros(shape),
        MaskSchedule::Frozen(m) => {
            if m.count_ones() > element_budget {
                return Err(SibaError::invalid("frozen mask exceeds the element budget"));
            }
            m.clone()
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7219_6e1f);
    let mut pool: Vec<usize> = (0..data.len()).collect();
    pool.shuffle(&mut rng);
    let mut cursor = 0usize;
    let next_batch = |rng: &mut ChaCha8Rng, pool: &mut Vec<usize>, cursor: &mut usize| {
        let m = config.batch_size.min(data.len());
        let mut batch = Vec::with_capacity(m);
        while batch.len() < m {
            if *cursor >= pool.len() {
                pool.shuffle(rng);
                *cursor = 0;
            }
            batch.push(pool[*cursor]);
            *cursor += 1;
        }
        batch
    };

    let mut losses = Vec::with_capacity(config.iterations);
    let mut mask_updates = Vec::new();
    for iter in 0..config.iterations {
        let batch_indices = next_batch(&mut rng, &mut pool, &mut cursor);
        let batch = data.subset(&batch_indices)?;
        let (loss, grad) = poisoned_loss_and_gradient(model, &batch, &trigger, config.label_rule)?;
        losses.push(loss as f32);

        let update_mask = matches!(schedule, MaskSchedule::Periodic)
            && iter % config.mask_update_period == 0;
        if update_mask {
            mask = if config.spatial_grouping {
                topk_mask_spatial(&grad, shape, config.k_budget)?
            } else {
                topk_mask(&grad, shape, config.k_budget)?
            };
            mask_updates.push(iter);
        }

        trigger = linf_sign_step(&trigger, &grad, config.step_size, eps)?;
        for (t, b) in trigger.iter_mut().zip(mask.bits()) {
            if !*b {
                *t = 0.0;
            }
        }

        // per-iteration constraint invariants
        let l0 = l0_norm(&trigger)?;
        let linf = linf_norm(&trigger)?;
        assert!(
            l0 <= element_budget,
            "L0 invariant violated at iteration {iter}: {l0} > {element_budget}"
        );
        assert!(
            linf <= eps + EPS_TOLERANCE,
            "Linf invariant violated at iteration {iter}: {linf} > {eps}"
        );
    }

    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        if last >= first && losses.len() > 1 {
            log::warn!(
                "synthesis loss did not decrease over the run ({first} -> {last}); \
                 the surrogate may be too weak or the step size too large"
            );
        }
    }

    let final_trigger = TriggerPattern::new(trigger, shape, element_budget, eps)?;
    Ok(SynthesisTrace { losses, mask_update_iterations: mask_updates, final_trigger })
}

fn label_budget_check(config: &SynthesisConfig, data: &LabeledImageSet) -> Result<()> {
    config.label_rule.validate(data.num_classes())
}
