//! Poisoned-set construction: sample selection, label remapping, trigger
//! application (additive, patch and blended transforms), inference-time
//! amplification, and the Random / Sparse / patch / blended baselines.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SibaError};
use crate::model::ClassifierHandle;
use crate::synthesis::{synthesize_with_schedule, MaskSchedule, SynthesisConfig, SynthesisTrace};
use crate::types::{
    clip_in_place, ImageShape, LabeledImageSet, LabelRule, PoisonPlan, SparsityMask, TriggerPattern,
};

/// Anything that turns a clean image into its poisoned version.
pub trait PoisonTransform {
    fn apply(&self, image: &[f32], shape: ImageShape) -> Vec<f32>;
    fn name(&self) -> &'static str;
}

/// Additive trigger followed by a clip into [0, 1].
pub struct AdditiveTrigger<'a>(pub &'a TriggerPattern);

impl PoisonTransform for AdditiveTrigger<'_> {
    fn apply(&self, image: &[f32], _shape: ImageShape) -> Vec<f32> {
        let mut out: Vec<f32> =
            image.iter().zip(self.0.values()).map(|(x, t)| x + t).collect();
        clip_in_place(&mut out);
        out
    }

    fn name(&self) -> &'static str {
        "additive"
    }
}

/// Select round(rate * N) sample indices uniformly at random without
/// replacement. Under all-to-one, samples already in the target class stay
/// eligible.
pub fn make_poison_plan(
    dataset: &LabeledImageSet,
    rate: f64,
    label_rule: LabelRule,
    trigger: TriggerPattern,
    seed: u64,
) -> Result<PoisonPlan> {
    if !(0.0 < rate && rate <= 1.0) {
        return Err(SibaError::invalid(format!("poisoning rate {rate} not in (0, 1]")));
    }
    label_rule.validate(dataset.num_classes())?;
    let count = (rate * dataset.len() as f64).round() as usize;
    if count == 0 {
        return Err(SibaError::invalid(format!(
            "rate {rate} on {} samples selects zero poison targets",
            dataset.len()
        )));
    }
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let poisoned_indices: BTreeSet<usize> = indices.into_iter().take(count).collect();
    Ok(PoisonPlan { poisoned_indices, label_rule, trigger, poisoning_rate: rate })
}

/// Apply a plan to a training set: poisoned samples get the trigger and the
/// remapped label, everything else is untouched; order is preserved.
pub fn poison_training_set(dataset: &LabeledImageSet, plan: &PoisonPlan) -> Result<LabeledImageSet> {
    poison_training_set_with(dataset, &plan.poisoned_indices, plan.label_rule, &AdditiveTrigger(&plan.trigger))
}

/// Plan machinery shared by additive and non-additive (patch, blended)
/// attacks.
pub fn poison_training_set_with(
    dataset: &LabeledImageSet,
    poisoned_indices: &BTreeSet<usize>,
    label_rule: LabelRule,
    transform: &dyn PoisonTransform,
) -> Result<LabeledImageSet> {
    if let Some(&bad) = poisoned_indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(SibaError::invalid(format!("poison index {bad} out of range")));
    }
    let shape = dataset.shape();
    let mut images = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        if poisoned_indices.contains(&i) {
            images.push(transform.apply(dataset.image(i), shape));
            labels.push(label_rule.map(dataset.label(i), dataset.num_classes()));
        } else {
            images.push(dataset.image(i).to_vec());
            labels.push(dataset.label(i));
        }
    }
    LabeledImageSet::new(images, labels, dataset.num_classes(), shape)
}

/// Build the poisoned evaluation set: every image gets the trigger, every
/// label is remapped. Under all-to-one, samples whose ground truth already
/// equals the target are dropped since they cannot evidence misclassification.
pub fn poison_test_set(
    dataset: &LabeledImageSet,
    trigger: &TriggerPattern,
    label_rule: LabelRule,
) -> Result<LabeledImageSet> {
    poison_test_set_with(dataset, label_rule, &AdditiveTrigger(trigger))
}

pub fn poison_test_set_with(
    dataset: &LabeledImageSet,
    label_rule: LabelRule,
    transform: &dyn PoisonTransform,
) -> Result<LabeledImageSet> {
    label_rule.validate(dataset.num_classes())?;
    let shape = dataset.shape();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..dataset.len() {
        if let LabelRule::AllToOne { target } = label_rule {
            if dataset.label(i) == target {
                continue;
            }
        }
        images.push(transform.apply(dataset.image(i), shape));
        labels.push(label_rule.map(dataset.label(i), dataset.num_classes()));
    }
    LabeledImageSet::new(images, labels, dataset.num_classes(), shape)
}

/// Inference-time amplification: eps_test * sign(t) elementwise. The support
/// never grows; every surviving element sits at +-eps_test.
pub fn amplify_trigger(trigger: &TriggerPattern, eps_test: f32) -> Result<TriggerPattern> {
    if eps_test <= 0.0 {
        return Err(SibaError::invalid("eps_test must be positive"));
    }
    let values: Vec<f32> = trigger
        .values()
        .iter()
        .map(|v| {
            if *v > 0.0 {
                eps_test
            } else if *v < 0.0 {
                -eps_test
            } else {
                0.0
            }
        })
        .collect();
    TriggerPattern::new(values, trigger.shape(), trigger.k_budget(), eps_test.min(1.0))
}

/// Random baseline: k uniformly random positions, each at +-eps.
pub fn baseline_random_trigger(
    shape: ImageShape,
    k: usize,
    eps: f32,
    seed: u64,
) -> Result<TriggerPattern> {
    let d = shape.pixel_count();
    if k == 0 || k > d {
        return Err(SibaError::invalid(format!("k = {k} out of range (1..={d})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (0..d).collect();
    positions.shuffle(&mut rng);
    let mut values = vec![0.0f32; d];
    for &p in positions.iter().take(k) {
        values[p] = if rng.gen_bool(0.5) { eps } else { -eps };
    }
    TriggerPattern::new(values, shape, k, eps)
}

/// Sparse baseline: a random mask is fixed once and only the magnitudes are
/// optimized with the sign-step loop; the support never moves.
pub fn baseline_sparse_trigger(
    model: &ClassifierHandle,
    data: &LabeledImageSet,
    config: &SynthesisConfig,
) -> Result<SynthesisTrace> {
    let shape = model.input_shape();
    config.validate(shape)?;
    let d = shape.pixel_count();
    let budget = config.element_budget(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba5e);
    let mut positions: Vec<usize> = (0..d).collect();
    positions.shuffle(&mut rng);
    let mut bits = vec![false; d];
    for &p in positions.iter().take(budget) {
        bits[p] = true;
    }
    let mask = SparsityMask::new(bits, shape)?;
    synthesize_with_schedule(model, data, config, MaskSchedule::Frozen(mask))
}

/// Where a patch sits in the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchCorner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchStyle {
    Checkerboard,
    White,
}

/// A stamp that replaces (not adds to) a square patch region.
#[derive(Debug, Clone)]
pub struct PatchStamp {
    shape: ImageShape,
    patch_size: usize,
    style: PatchStyle,
    corner: PatchCorner,
}

/// BadNets-style patch trigger; defaults to the bottom-right corner.
pub fn baseline_patch_trigger(
    shape: ImageShape,
    patch_size: usize,
    style: PatchStyle,
    corner: PatchCorner,
) -> Result<PatchStamp> {
    if patch_size == 0 || patch_size > shape.height || patch_size > shape.width {
        return Err(SibaError::invalid(format!(
            "patch {patch_size}x{patch_size} does not fit inside {shape}"
        )));
    }
    Ok(PatchStamp { shape, patch_size, style, corner })
}

impl PatchStamp {
    /// Element count of the replaced region: patch_size^2 * channels.
    pub fn stamped_elements(&self) -> usize {
        self.patch_size * self.patch_size * self.shape.channels
    }

    fn origin(&self) -> (usize, usize) {
        let (h, w, p) = (self.shape.height, self.shape.width, self.patch_size);
        match self.corner {
            PatchCorner::TopLeft => (0, 0),
            PatchCorner::TopRight => (0, w - p),
            PatchCorner::BottomLeft => (h - p, 0),
            PatchCorner::BottomRight => (h - p, w - p),
        }
    }
}

impl PoisonTransform for PatchStamp {
    fn apply(&self, image: &[f32], shape: ImageShape) -> Vec<f32> {
        debug_assert_eq!(shape, self.shape);
        let mut out = image.to_vec();
        let (oy, ox) = self.origin();
        let c = shape.channels;
        for py in 0..self.patch_size {
            for px in 0..self.patch_size {
                let value = match self.style {
                    PatchStyle::White => 1.0,
                    PatchStyle::Checkerboard => ((py + px) % 2) as f32,
                };
                let base = ((oy + py) * shape.width + (ox + px)) * c;
                for ch in 0..c {
                    out[base + ch] = value;
                }
            }
        }
        out
    }

    fn name(&self) -> &'static str {
        "patch"
    }
}

/// Blended trigger: (1 - transparency) * image + transparency * pattern.
#[derive(Debug, Clone)]
pub struct BlendedPattern {
    pattern: Vec<f32>,
    transparency: f32,
}

pub fn baseline_blended_trigger(
    shape: ImageShape,
    pattern: Vec<f32>,
    transparency: f32,
) -> Result<BlendedPattern> {
    if pattern.len() != shape.pixel_count() {
        return Err(SibaError::shape("blend pattern does not match image shape"));
    }
    if !(0.0..=1.0).contains(&transparency) {
        return Err(SibaError::invalid("transparency must be in [0, 1]"));
    }
    Ok(BlendedPattern { pattern, transparency })
}

impl PoisonTransform for BlendedPattern {
    fn apply(&self, image: &[f32], _shape: ImageShape) -> Vec<f32> {
        let a = self.transparency;
        let mut out: Vec<f32> = image
            .iter()
            .zip(&self.pattern)
            .map(|(x, p)| (1.0 - a) * x + a * p)
            .collect();
        clip_in_place(&mut out);
        out
    }

    fn name(&self) -> &'static str {
        "blended"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape4() -> ImageShape {
        ImageShape::new(4, 4, 1).unwrap()
    }

    fn balanced_set(per_class: usize, classes: usize, s: ImageShape) -> LabeledImageSet {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                images.push(vec![((c * 7 + i) % 10) as f32 / 20.0 + 0.2; s.pixel_count()]);
                labels.push(c);
            }
        }
        LabeledImageSet::new(images, labels, classes, s).unwrap()
    }

    fn small_trigger(s: ImageShape) -> TriggerPattern {
        let mut v = vec![0.0f32; s.pixel_count()];
        v[0] = 0.03;
        v[5] = -0.02;
        TriggerPattern::new(v, s, 4, 0.05).unwrap()
    }

    #[test]
    fn plan_selects_exact_count() {
        let data = balanced_set(50, 10, shape4());
        let plan =
            make_poison_plan(&data, 0.01, LabelRule::all_to_one(0), small_trigger(shape4()), 1)
                .unwrap();
        assert_eq!(plan.poisoned_indices.len(), 5);
        let full = make_poison_plan(&data, 1.0, LabelRule::all_to_one(0), small_trigger(shape4()), 1)
            .unwrap();
        assert_eq!(full.poisoned_indices.len(), 500);
    }

    #[test]
    fn plan_is_deterministic_per_seed() {
        let data = balanced_set(20, 5, shape4());
        let t = small_trigger(shape4());
        let a = make_poison_plan(&data, 0.2, LabelRule::all_to_one(0), t.clone(), 9).unwrap();
        let b = make_poison_plan(&data, 0.2, LabelRule::all_to_one(0), t.clone(), 9).unwrap();
        assert_eq!(a.poisoned_indices, b.poisoned_indices);
        let c = make_poison_plan(&data, 0.2, LabelRule::all_to_one(0), t, 10).unwrap();
        assert_ne!(a.poisoned_indices, c.poisoned_indices);
    }

    #[test]
    fn plan_rejects_zero_yield() {
        let data = balanced_set(2, 2, shape4());
        let t = small_trigger(shape4());
        assert!(make_poison_plan(&data, 0.01, LabelRule::all_to_one(0), t.clone(), 0).is_err());
        assert!(make_poison_plan(&data, 0.0, LabelRule::all_to_one(0), t, 0).is_err());
    }

    #[test]
    fn training_poison_changes_only_planned_samples() {
        let data = balanced_set(10, 3, shape4());
        let plan =
            make_poison_plan(&data, 0.2, LabelRule::all_to_one(0), small_trigger(shape4()), 4)
                .unwrap();
        let poisoned = poison_training_set(&data, &plan).unwrap();
        assert_eq!(poisoned.len(), data.len());
        let mut changed_images = 0;
        let mut changed_labels = 0;
        for i in 0..data.len() {
            if poisoned.image(i) != data.image(i) {
                changed_images += 1;
                assert!(plan.poisoned_indices.contains(&i));
            }
            if poisoned.label(i) != data.label(i) {
                changed_labels += 1;
                assert_eq!(poisoned.label(i), 0);
            }
        }
        assert!(changed_images <= plan.poisoned_indices.len());
        assert!(changed_labels <= plan.poisoned_indices.len());
        // all pixels stay in range
        for i in 0..poisoned.len() {
            assert!(poisoned.image(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn all_to_all_wraps_last_class() {
        let data = balanced_set(2, 10, shape4());
        let idx: BTreeSet<usize> = (0..data.len()).collect();
        let poisoned = poison_training_set_with(
            &data,
            &idx,
            LabelRule::all_to_all(),
            &AdditiveTrigger(&small_trigger(shape4())),
        )
        .unwrap();
        for i in 0..data.len() {
            assert_eq!(poisoned.label(i), (data.label(i) + 1) % 10);
        }
    }

    #[test]
    fn test_set_excludes_target_class_under_all_to_one() {
        let data = balanced_set(10, 10, shape4());
        let t = small_trigger(shape4());
        let poisoned = poison_test_set(&data, &t, LabelRule::all_to_one(0)).unwrap();
        assert_eq!(poisoned.len(), 90);
        assert!(poisoned.labels().iter().all(|&l| l == 0));
        // all-to-all keeps every sample
        let a2a = poison_test_set(&data, &t, LabelRule::all_to_all()).unwrap();
        assert_eq!(a2a.len(), 100);
    }

    #[test]
    fn zero_trigger_keeps_images_but_remaps_labels() {
        let data = balanced_set(3, 4, shape4());
        let zero = TriggerPattern::zeros(shape4(), 1, 0.1).unwrap();
        let poisoned = poison_test_set(&data, &zero, LabelRule::all_to_all()).unwrap();
        for i in 0..data.len() {
            assert_eq!(poisoned.image(i), data.image(i));
            assert_eq!(poisoned.label(i), (data.label(i) + 1) % 4);
        }
    }

    #[test]
    fn amplify_saturates_and_preserves_support() {
        let t = small_trigger(shape4());
        let amp = amplify_trigger(&t, 16.0 / 255.0).unwrap();
        let support: Vec<usize> = t
            .values()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| (v.abs() > 0.0).then_some(i))
            .collect();
        let amp_support: Vec<usize> = amp
            .values()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| (v.abs() > 0.0).then_some(i))
            .collect();
        assert_eq!(support, amp_support);
        for &i in &support {
            assert!((amp.values()[i].abs() - 16.0 / 255.0).abs() < 1e-7);
        }
        assert!(amp.l0() <= t.l0());
        // zero trigger stays zero
        let zero = TriggerPattern::zeros(shape4(), 1, 0.1).unwrap();
        assert_eq!(amplify_trigger(&zero, 0.05).unwrap().l0(), 0);
    }

    #[test]
    fn random_baseline_meets_budgets_exactly() {
        let s = ImageShape::new(8, 8, 3).unwrap();
        let t = baseline_random_trigger(s, 20, 0.03, 11).unwrap();
        assert_eq!(t.l0(), 20);
        assert!((t.linf() - 0.03).abs() < 1e-7);
        assert!(t.values().iter().all(|v| *v == 0.0 || v.abs() == 0.03));
        // dense case
        let dense = baseline_random_trigger(s, s.pixel_count(), 0.03, 11).unwrap();
        assert_eq!(dense.l0(), s.pixel_count());
        // reproducible
        let again = baseline_random_trigger(s, 20, 0.03, 11).unwrap();
        assert_eq!(t.values(), again.values());
    }

    #[test]
    fn patch_replaces_bottom_right_by_default_geometry() {
        let s = ImageShape::new(8, 8, 3).unwrap();
        let stamp =
            baseline_patch_trigger(s, 3, PatchStyle::Checkerboard, PatchCorner::BottomRight)
                .unwrap();
        assert_eq!(stamp.stamped_elements(), 27);
        let image = vec![0.5f32; s.pixel_count()];
        let out = stamp.apply(&image, s);
        // top-left pixel untouched, bottom-right corner painted
        assert_eq!(out[0], 0.5);
        let corner = ((7 * 8) + 7) * 3;
        assert_eq!(out[corner], ((2 + 2) % 2) as f32);
        // spatial pixels changed = 9
        let mut changed = std::collections::BTreeSet::new();
        for p in 0..64 {
            if (0..3).any(|ch| out[p * 3 + ch] != 0.5) {
                changed.insert(p);
            }
        }
        // checkerboard leaves its zero cells at 0.0 != 0.5, so all 9 change
        assert_eq!(changed.len(), 9);
        // stamping twice is idempotent
        assert_eq!(stamp.apply(&out, s), out);
    }

    #[test]
    fn patch_must_fit() {
        let s = ImageShape::new(4, 4, 3).unwrap();
        assert!(baseline_patch_trigger(s, 5, PatchStyle::White, PatchCorner::TopLeft).is_err());
    }

    #[test]
    fn blended_endpoints() {
        let s = shape4();
        let pattern: Vec<f32> = (0..s.pixel_count()).map(|i| (i % 2) as f32).collect();
        let image = vec![0.5f32; s.pixel_count()];
        let id = baseline_blended_trigger(s, pattern.clone(), 0.0).unwrap();
        assert_eq!(id.apply(&image, s), image);
        let full = baseline_blended_trigger(s, pattern.clone(), 1.0).unwrap();
        assert_eq!(full.apply(&image, s), pattern);
        let partial = baseline_blended_trigger(s, pattern, 0.2).unwrap();
        let out = partial.apply(&image, s);
        for (o, x) in out.iter().zip(&image) {
            assert!((o - x).abs() <= 0.2 + 1e-6);
        }
    }
}
