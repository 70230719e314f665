//! Shared domain types: image shapes, triggers, sparsity masks, datasets and
//! poison plans, together with the norm computations everything else relies on.

use crate::error::{Result, SibaError};

/// Absolute slack allowed on the L-infinity budget check.
pub const EPS_TOLERANCE: f32 = 1e-6;

/// Height / width / channel dimensions of every image in a run.
///
/// The flattened element count `pixel_count` is the dimensionality `d` that
/// the sparsity and visibility constraints operate over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(SibaError::invalid("image dimensions must be >= 1"));
        }
        Ok(Self { height, width, channels })
    }

    /// Total element count d = H * W * C.
    pub fn pixel_count(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Number of spatial positions H * W.
    pub fn spatial_count(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Count of strictly nonzero elements.
pub fn l0_norm(values: &[f32]) -> Result<usize> {
    if values.is_empty() {
        return Err(SibaError::invalid("l0_norm of empty array"));
    }
    Ok(values.iter().filter(|v| v.abs() > 0.0).count())
}

/// Maximum absolute element.
pub fn linf_norm(values: &[f32]) -> Result<f32> {
    if values.is_empty() {
        return Err(SibaError::invalid("linf_norm of empty array"));
    }
    Ok(values.iter().fold(0.0f32, |m, v| m.max(v.abs())))
}

/// Clamp every element into the valid pixel range [0, 1].
pub fn clip_to_valid_range(image: &[f32]) -> Vec<f32> {
    image.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Clamp in place, same semantics as [`clip_to_valid_range`].
pub fn clip_in_place(image: &mut [f32]) {
    for v in image.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// An additive perturbation of image shape together with the budgets it was
/// generated under. Values are stored row-major (H, W, C) in normalized
/// intensity units.
///
/// The constructor rejects patterns that violate either budget, so a value of
/// this type always satisfies `l0 <= k_budget` and `linf <= eps_budget + tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPattern {
    values: Vec<f32>,
    shape: ImageShape,
    k_budget: usize,
    eps_budget: f32,
}

impl TriggerPattern {
    pub fn new(values: Vec<f32>, shape: ImageShape, k_budget: usize, eps_budget: f32) -> Result<Self> {
        if values.len() != shape.pixel_count() {
            return Err(SibaError::shape(format!(
                "trigger has {} elements, shape {} needs {}",
                values.len(),
                shape,
                shape.pixel_count()
            )));
        }
        if k_budget == 0 || k_budget > shape.pixel_count() {
            return Err(SibaError::invalid(format!(
                "k_budget {} out of range (1..={})",
                k_budget,
                shape.pixel_count()
            )));
        }
        if !(0.0 < eps_budget && eps_budget <= 1.0) {
            return Err(SibaError::invalid(format!("eps_budget {eps_budget} not in (0, 1]")));
        }
        let l0 = l0_norm(&values)?;
        if l0 > k_budget {
            return Err(SibaError::invalid(format!(
                "trigger violates L0 budget: {l0} nonzeros > k = {k_budget}"
            )));
        }
        let linf = linf_norm(&values)?;
        if linf > eps_budget + EPS_TOLERANCE {
            return Err(SibaError::invalid(format!(
                "trigger violates Linf budget: {linf} > eps = {eps_budget}"
            )));
        }
        Ok(Self { values, shape, k_budget, eps_budget })
    }

    /// All-zero trigger at the given budgets.
    pub fn zeros(shape: ImageShape, k_budget: usize, eps_budget: f32) -> Result<Self> {
        Self::new(vec![0.0; shape.pixel_count()], shape, k_budget, eps_budget)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn k_budget(&self) -> usize {
        self.k_budget
    }

    pub fn eps_budget(&self) -> f32 {
        self.eps_budget
    }

    pub fn l0(&self) -> usize {
        l0_norm(&self.values).expect("trigger is non-empty")
    }

    pub fn linf(&self) -> f32 {
        linf_norm(&self.values).expect("trigger is non-empty")
    }
}

/// Binary selection of perturbable elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMask {
    bits: Vec<bool>,
    shape: ImageShape,
}

impl SparsityMask {
    pub fn new(bits: Vec<bool>, shape: ImageShape) -> Result<Self> {
        if bits.len() != shape.pixel_count() {
            return Err(SibaError::shape(format!(
                "mask has {} bits, shape {} needs {}",
                bits.len(),
                shape,
                shape.pixel_count()
            )));
        }
        Ok(Self { bits, shape })
    }

    pub fn zeros(shape: ImageShape) -> Self {
        Self { bits: vec![false; shape.pixel_count()], shape }
    }

    pub fn ones(shape: ImageShape) -> Self {
        Self { bits: vec![true; shape.pixel_count()], shape }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    /// Number of selected elements.
    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Flat indices of the selected elements, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect()
    }
}

/// Label remapping applied to poisoned samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// Every poisoned sample is relabeled to one fixed target class.
    AllToOne { target: usize },
    /// Poisoned samples map to c(y) = (y + shift) mod C.
    AllToAll { shift: usize },
}

impl LabelRule {
    pub fn all_to_one(target: usize) -> Self {
        LabelRule::AllToOne { target }
    }

    pub fn all_to_all() -> Self {
        LabelRule::AllToAll { shift: 1 }
    }

    pub fn map(&self, label: usize, num_classes: usize) -> usize {
        match self {
            LabelRule::AllToOne { target } => *target,
            LabelRule::AllToAll { shift } => (label + shift) % num_classes,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self {
            LabelRule::AllToOne { target } if *target >= num_classes => Err(SibaError::invalid(
                format!("target class {target} >= num_classes {num_classes}"),
            )),
            _ => Ok(()),
        }
    }
}

/// An ordered collection of (image, label) pairs with fixed shape and class
/// count. Images are row-major (H, W, C) with values in [0, 1].
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    images: Vec<Vec<f32>>,
    labels: Vec<usize>,
    num_classes: usize,
    shape: ImageShape,
}

impl LabeledImageSet {
    pub fn new(
        images: Vec<Vec<f32>>,
        labels: Vec<usize>,
        num_classes: usize,
        shape: ImageShape,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(SibaError::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(SibaError::invalid("num_classes must be >= 1"));
        }
        for (i, img) in images.iter().enumerate() {
            if img.len() != shape.pixel_count() {
                return Err(SibaError::shape(format!(
                    "image {i} has {} elements, expected {}",
                    img.len(),
                    shape.pixel_count()
                )));
            }
            if img.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(SibaError::invalid(format!("image {i} has values outside [0, 1]")));
            }
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, l)| **l >= num_classes) {
            return Err(SibaError::invalid(format!(
                "label {l} at index {i} >= num_classes {num_classes}"
            )));
        }
        Ok(Self { images, labels, num_classes, shape })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i]
    }

    pub fn images(&self) -> &[Vec<f32>] {
        &self.images
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    /// New set containing the given sample indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(SibaError::invalid(format!("index {i} out of range")));
            }
            images.push(self.images[i].clone());
            labels.push(self.labels[i]);
        }
        LabeledImageSet::new(images, labels, self.num_classes, self.shape)
    }
}

/// Which samples get poisoned and how their labels are remapped.
#[derive(Debug, Clone)]
pub struct PoisonPlan {
    pub poisoned_indices: std::collections::BTreeSet<usize>,
    pub label_rule: LabelRule,
    pub trigger: TriggerPattern,
    pub poisoning_rate: f64,
}
