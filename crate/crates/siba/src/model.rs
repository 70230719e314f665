//! Classifier architectures and the handle exposing logits, loss, input
//! gradients, penultimate activations and channel masking.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SibaError};
use crate::types::{ImageShape, LabeledImageSet};

/// Supported desk-scale architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    SmallResnet,
    SmallVgg,
    SmallCnn,
}

impl Architecture {
    pub fn id(&self) -> &'static str {
        match self {
            Architecture::SmallResnet => "small-resnet",
            Architecture::SmallVgg => "small-vgg",
            Architecture::SmallCnn => "small-cnn",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "small-resnet" => Ok(Architecture::SmallResnet),
            "small-vgg" => Ok(Architecture::SmallVgg),
            "small-cnn" => Ok(Architecture::SmallCnn),
            other => Err(SibaError::invalid(format!("unknown architecture id {other:?}"))),
        }
    }

    /// Width of the penultimate feature layer.
    pub fn penultimate_channels(&self) -> usize {
        match self {
            Architecture::SmallResnet => 512,
            Architecture::SmallVgg => 256,
            Architecture::SmallCnn => 64,
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// A differentiable C-class classifier.
///
/// Cloning a handle shares the underlying parameters; [`ClassifierHandle::with_masked_channels`]
/// produces an inference view with chosen penultimate channels forced to zero
/// without touching the stored weights.
#[derive(Clone)]
pub struct ClassifierHandle {
    arch: Architecture,
    input_shape: ImageShape,
    num_classes: usize,
    params: BTreeMap<String, Var>,
    masked_channels: BTreeSet<usize>,
    dtype: DType,
    device: Device,
}

fn he_init(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f32).sqrt();
    // Box-Muller, fully deterministic given the seed
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
        let u2: f32 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f32::consts::PI * u2;
        out.push(r * th.cos() * std);
        if out.len() < n {
            out.push(r * th.sin() * std);
        }
    }
    out
}

impl ClassifierHandle {
    /// Freshly initialized model with deterministic, seed-derived weights.
    pub fn new(
        arch: Architecture,
        input_shape: ImageShape,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::new_with_dtype(arch, input_shape, num_classes, seed, DType::F32)
    }

    /// As [`ClassifierHandle::new`] with an explicit float width. F64 is used
    /// by the finite-difference gradient checks.
    pub fn new_with_dtype(
        arch: Architecture,
        input_shape: ImageShape,
        num_classes: usize,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(SibaError::invalid("classifier needs at least 2 classes"));
        }
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let conv = |name: &str,
                        cin: usize,
                        cout: usize,
                        ksize: usize,
                        params: &mut BTreeMap<String, Var>,
                        rng: &mut ChaCha8Rng|
         -> Result<()> {
            let fan_in = cin * ksize * ksize;
            let w = he_init(rng, fan_in, cout * cin * ksize * ksize);
            let w = Tensor::from_vec(w, (cout, cin, ksize, ksize), &device)?.to_dtype(dtype)?;
            let b = Tensor::zeros(cout, dtype, &device)?;
            params.insert(format!("{name}.weight"), Var::from_tensor(&w)?);
            params.insert(format!("{name}.bias"), Var::from_tensor(&b)?);
            Ok(())
        };
        let linear = |name: &str,
                          fin: usize,
                          fout: usize,
                          params: &mut BTreeMap<String, Var>,
                          rng: &mut ChaCha8Rng|
         -> Result<()> {
            let w = he_init(rng, fin, fout * fin);
            let w = Tensor::from_vec(w, (fout, fin), &device)?.to_dtype(dtype)?;
            let b = Tensor::zeros(fout, dtype, &device)?;
            params.insert(format!("{name}.weight"), Var::from_tensor(&w)?);
            params.insert(format!("{name}.bias"), Var::from_tensor(&b)?);
            Ok(())
        };
        let cin = input_shape.channels;
        match arch {
            Architecture::SmallCnn => {
                conv("conv1", cin, 16, 3, &mut params, &mut rng)?;
                conv("conv2", 16, 32, 3, &mut params, &mut rng)?;
                conv("conv3", 32, 64, 3, &mut params, &mut rng)?;
                linear("fc", 64, num_classes, &mut params, &mut rng)?;
            }
            Architecture::SmallVgg => {
                conv("conv1a", cin, 32, 3, &mut params, &mut rng)?;
                conv("conv1b", 32, 32, 3, &mut params, &mut rng)?;
                conv("conv2a", 32, 64, 3, &mut params, &mut rng)?;
                conv("conv2b", 64, 64, 3, &mut params, &mut rng)?;
                conv("conv3a", 64, 128, 3, &mut params, &mut rng)?;
                linear("fc1", 128, 256, &mut params, &mut rng)?;
                linear("fc2", 256, num_classes, &mut params, &mut rng)?;
            }
            Architecture::SmallResnet => {
                conv("stem", cin, 16, 3, &mut params, &mut rng)?;
                conv("b1.conv1", 16, 16, 3, &mut params, &mut rng)?;
                conv("b1.conv2", 16, 16, 3, &mut params, &mut rng)?;
                conv("b2.conv1", 16, 32, 3, &mut params, &mut rng)?;
                conv("b2.conv2", 32, 32, 3, &mut params, &mut rng)?;
                conv("b2.short", 16, 32, 1, &mut params, &mut rng)?;
                conv("b3.conv1", 32, 64, 3, &mut params, &mut rng)?;
                conv("b3.conv2", 64, 64, 3, &mut params, &mut rng)?;
                conv("b3.short", 32, 64, 1, &mut params, &mut rng)?;
                linear("fc1", 64, 512, &mut params, &mut rng)?;
                linear("fc2", 512, num_classes, &mut params, &mut rng)?;
                // downscale the residual branches at init (fixup-style) so the
                // unnormalized network starts near identity and trains stably
                for name in ["b1.conv2.weight", "b2.conv2.weight", "b3.conv2.weight"] {
                    let var = &params[name];
                    var.set(&(var.as_tensor() * 0.1)?.to_dtype(dtype)?)?;
                }
            }
        }
        Ok(Self {
            arch,
            input_shape,
            num_classes,
            params,
            masked_channels: BTreeSet::new(),
            dtype,
            device,
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn input_shape(&self) -> ImageShape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn masked_channels(&self) -> &BTreeSet<usize> {
        &self.masked_channels
    }

    /// Trainable parameters, name -> Var. Order is stable.
    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn p(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .as_tensor()
    }

    fn conv(&self, name: &str, x: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        let y = x.conv2d(w, pad, stride, 1, 1)?;
        let b = b.reshape((1, b.dim(0)?, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    fn linear(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        Ok(x.broadcast_matmul(&w.t()?)?.broadcast_add(b)?)
    }

    fn gap(x: &Tensor) -> Result<Tensor> {
        Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    fn res_block(&self, name: &str, x: &Tensor, cout_differs: bool, stride: usize) -> Result<Tensor> {
        let h = self.conv(&format!("{name}.conv1"), x, stride, 1)?.relu()?;
        let h = self.conv(&format!("{name}.conv2"), &h, 1, 1)?;
        let short = if cout_differs || stride != 1 {
            self.conv(&format!("{name}.short"), x, stride, 0)?
        } else {
            x.clone()
        };
        Ok((h + short)?.relu()?)
    }

    /// Penultimate feature vector (batch, channels) for an NCHW input tensor.
    pub fn features_t(&self, x: &Tensor) -> Result<Tensor> {
        let f = match self.arch {
            Architecture::SmallCnn => {
                let h = self.conv("conv1", x, 1, 1)?.relu()?.avg_pool2d(2)?;
                let h = self.conv("conv2", &h, 1, 1)?.relu()?.avg_pool2d(2)?;
                let h = self.conv("conv3", &h, 1, 1)?.relu()?;
                Self::gap(&h)?
            }
            Architecture::SmallVgg => {
                let h = self.conv("conv1a", x, 1, 1)?.relu()?;
                let h = self.conv("conv1b", &h, 1, 1)?.relu()?.avg_pool2d(2)?;
                let h = self.conv("conv2a", &h, 1, 1)?.relu()?;
                let h = self.conv("conv2b", &h, 1, 1)?.relu()?.avg_pool2d(2)?;
                let h = self.conv("conv3a", &h, 1, 1)?.relu()?;
                let h = Self::gap(&h)?;
                self.linear("fc1", &h)?.relu()?
            }
            Architecture::SmallResnet => {
                let h = self.conv("stem", x, 1, 1)?.relu()?;
                let h = self.res_block("b1", &h, false, 1)?;
                let h = self.res_block("b2", &h, true, 2)?;
                let h = self.res_block("b3", &h, true, 2)?;
                let h = Self::gap(&h)?;
                self.linear("fc1", &h)?.relu()?
            }
        };
        Ok(f)
    }

    fn final_linear(&self, features: &Tensor) -> Result<Tensor> {
        let name = match self.arch {
            Architecture::SmallCnn => "fc",
            Architecture::SmallVgg | Architecture::SmallResnet => "fc2",
        };
        self.linear(name, features)
    }

    fn channel_mask_tensor(&self) -> Result<Option<Tensor>> {
        if self.masked_channels.is_empty() {
            return Ok(None);
        }
        let n = self.arch.penultimate_channels();
        let mut mask = vec![1.0f32; n];
        for &c in &self.masked_channels {
            mask[c] = 0.0;
        }
        let t = Tensor::from_vec(mask, n, &self.device)?.to_dtype(self.dtype)?;
        Ok(Some(t))
    }

    /// Logits (batch, num_classes) for an NCHW input tensor, honoring any
    /// channel mask.
    pub fn logits_t(&self, x: &Tensor) -> Result<Tensor> {
        let mut f = self.features_t(x)?;
        if let Some(mask) = self.channel_mask_tensor()? {
            f = f.broadcast_mul(&mask)?;
        }
        self.final_linear(&f)
    }

    /// Build an NCHW tensor from row-major HWC images.
    pub fn batch_tensor(&self, images: &[&[f32]]) -> Result<Tensor> {
        batch_to_tensor(images, self.input_shape, &self.device, self.dtype)
    }

    /// Per-image logits.
    pub fn logits(&self, images: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(256) {
            let x = self.batch_tensor(chunk)?;
            let l = self.logits_t(&x)?.to_dtype(DType::F32)?;
            out.extend(l.to_vec2::<f32>()?);
        }
        Ok(out)
    }

    /// Argmax labels; ties resolve to the lowest class index.
    pub fn predict_labels(&self, images: &[&[f32]]) -> Result<Vec<usize>> {
        Ok(self
            .logits(images)?
            .iter()
            .map(|row| argmax_lowest(row))
            .collect())
    }

    pub fn predict_dataset(&self, data: &LabeledImageSet) -> Result<Vec<usize>> {
        let refs: Vec<&[f32]> = (0..data.len()).map(|i| data.image(i)).collect();
        self.predict_labels(&refs)
    }

    /// Softmax probabilities per image.
    pub fn probabilities(&self, images: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(256) {
            let x = self.batch_tensor(chunk)?;
            let l = self.logits_t(&x)?;
            let p = candle_nn::ops::softmax(&l, D::Minus1)?.to_dtype(DType::F32)?;
            out.extend(p.to_vec2::<f32>()?);
        }
        Ok(out)
    }

    /// Mean cross-entropy of the model on (images, labels).
    pub fn mean_loss(&self, images: &[&[f32]], labels: &[usize]) -> Result<f64> {
        let x = self.batch_tensor(images)?;
        let y = labels_tensor(labels, &self.device)?;
        let loss = candle_nn::loss::cross_entropy(&self.logits_t(&x)?, &y)?;
        Ok(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?)
    }

    /// Gradient of the mean cross-entropy loss with respect to the input
    /// images. Returns one row-major HWC gradient per image.
    pub fn input_gradient(&self, images: &[&[f32]], labels: &[usize]) -> Result<Vec<Vec<f32>>> {
        let x = self.batch_tensor(images)?;
        let xv = Var::from_tensor(&x)?;
        let y = labels_tensor(labels, &self.device)?;
        let loss = candle_nn::loss::cross_entropy(&self.logits_t(xv.as_tensor())?, &y)?;
        let grads = loss.backward()?;
        let gx = grads
            .get(xv.as_tensor())
            .ok_or_else(|| SibaError::Numeric("missing input gradient".into()))?;
        tensor_to_hwc_batch(gx, self.input_shape)
    }

    /// Per-sample penultimate activations (samples x channels).
    pub fn penultimate_activations(&self, images: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(256) {
            let x = self.batch_tensor(chunk)?;
            let f = self.features_t(&x)?.to_dtype(DType::F32)?;
            out.extend(f.to_vec2::<f32>()?);
        }
        Ok(out)
    }

    /// Inference view with the union of the current and given channels zeroed.
    /// Weights are shared, not copied, and never modified.
    pub fn with_masked_channels(&self, channels: &BTreeSet<usize>) -> Result<Self> {
        let n = self.arch.penultimate_channels();
        if let Some(&bad) = channels.iter().find(|&&c| c >= n) {
            return Err(SibaError::invalid(format!(
                "channel {bad} out of range for {} ({n} channels)",
                self.arch
            )));
        }
        let mut view = self.clone();
        view.masked_channels.extend(channels.iter().copied());
        Ok(view)
    }

    /// FNV-1a hash over all parameter bytes; used to check weights are
    /// untouched by masking and to key caches.
    pub fn params_hash(&self) -> Result<u64> {
        let mut h: u64 = 0xcbf29ce484222325;
        for (name, var) in &self.params {
            for b in name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
            }
            let vals = var
                .as_tensor()
                .flatten_all()?
                .to_dtype(DType::F32)?
                .to_vec1::<f32>()?;
            for v in vals {
                for b in v.to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100000001b3);
                }
            }
        }
        Ok(h)
    }

    /// Persist weights as safetensors plus a plain-text sidecar with the
    /// architecture id, shape, class count and any extra metadata.
    pub fn save(&self, path: &Path, extra: &[(String, String)]) -> Result<()> {
        let tensors: std::collections::HashMap<String, Tensor> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path)?;
        let meta_path = path.with_extension("meta");
        let mut meta = String::new();
        meta.push_str(&format!("arch={}\n", self.arch.id()));
        meta.push_str(&format!("num_classes={}\n", self.num_classes));
        meta.push_str(&format!(
            "input_shape={},{},{}\n",
            self.input_shape.height, self.input_shape.width, self.input_shape.channels
        ));
        for (k, v) in extra {
            meta.push_str(&format!("{k}={v}\n"));
        }
        std::fs::write(meta_path, meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = path.with_extension("meta");
        let meta = std::fs::read_to_string(&meta_path)?;
        let mut arch = None;
        let mut num_classes = None;
        let mut shape = None;
        for line in meta.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            match k {
                "arch" => arch = Some(Architecture::from_id(v)?),
                "num_classes" => {
                    num_classes =
                        Some(v.parse::<usize>().map_err(|e| SibaError::Config(e.to_string()))?)
                }
                "input_shape" => {
                    let dims: Vec<usize> = v
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| SibaError::Config(e.to_string()))?;
                    if dims.len() != 3 {
                        return Err(SibaError::Config("input_shape needs 3 dims".into()));
                    }
                    shape = Some(ImageShape::new(dims[0], dims[1], dims[2])?);
                }
                _ => {}
            }
        }
        let arch = arch.ok_or_else(|| SibaError::Config("sidecar missing arch".into()))?;
        let num_classes =
            num_classes.ok_or_else(|| SibaError::Config("sidecar missing num_classes".into()))?;
        let shape = shape.ok_or_else(|| SibaError::Config("sidecar missing input_shape".into()))?;
        let model = Self::new(arch, shape, num_classes, 0)?;
        let tensors = candle_core::safetensors::load(path, &model.device)?;
        for (name, var) in model.params.iter() {
            let t = tensors
                .get(name)
                .ok_or_else(|| SibaError::Config(format!("checkpoint missing tensor {name}")))?;
            var.set(t)?;
        }
        Ok(model)
    }
}

pub(crate) fn argmax_lowest(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn labels_tensor(labels: &[usize], device: &Device) -> Result<Tensor> {
    let ys: Vec<u32> = labels.iter().map(|l| *l as u32).collect();
    Ok(Tensor::from_vec(ys, labels.len(), device)?)
}

/// Row-major HWC image slices -> NCHW tensor.
pub(crate) fn batch_to_tensor(
    images: &[&[f32]],
    shape: ImageShape,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    if images.is_empty() {
        return Err(SibaError::invalid("empty batch"));
    }
    let d = shape.pixel_count();
    let mut flat = Vec::with_capacity(images.len() * d);
    for img in images {
        if img.len() != d {
            return Err(SibaError::shape(format!(
                "image has {} elements, expected {d}",
                img.len()
            )));
        }
        flat.extend_from_slice(img);
    }
    let t = Tensor::from_vec(flat, (images.len(), shape.height, shape.width, shape.channels), device)?;
    Ok(t.permute((0, 3, 1, 2))?.contiguous()?.to_dtype(dtype)?)
}

/// NCHW tensor -> per-image row-major HWC vectors.
pub(crate) fn tensor_to_hwc_batch(t: &Tensor, shape: ImageShape) -> Result<Vec<Vec<f32>>> {
    let hwc = t.permute((0, 2, 3, 1))?.contiguous()?.to_dtype(DType::F32)?;
    let n = hwc.dim(0)?;
    let flat = hwc.flatten_all()?.to_vec1::<f32>()?;
    let d = shape.pixel_count();
    Ok((0..n).map(|i| flat[i * d..(i + 1) * d].to_vec()).collect())
}

/// CHW tensor (single image) -> row-major HWC vector.
pub(crate) fn tensor_to_hwc(t: &Tensor, shape: ImageShape) -> Result<Vec<f32>> {
    let hwc = t.permute((1, 2, 0))?.contiguous()?.to_dtype(DType::F32)?;
    let flat = hwc.flatten_all()?.to_vec1::<f32>()?;
    debug_assert_eq!(flat.len(), shape.pixel_count());
    Ok(flat)
}

/// Row-major HWC vector -> CHW tensor.
pub(crate) fn hwc_to_tensor(
    values: &[f32],
    shape: ImageShape,
    device: &Device,
    dtype: DType,
) -> Result<Tensor> {
    let t = Tensor::from_vec(
        values.to_vec(),
        (shape.height, shape.width, shape.channels),
        device,
    )?;
    Ok(t.permute((2, 0, 1))?.contiguous()?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_shape() -> ImageShape {
        ImageShape::new(8, 8, 3).unwrap()
    }

    #[test]
    fn penultimate_widths_match_architectures() {
        assert_eq!(Architecture::SmallResnet.penultimate_channels(), 512);
        assert_eq!(Architecture::SmallVgg.penultimate_channels(), 256);
        assert_eq!(Architecture::SmallCnn.penultimate_channels(), 64);
    }

    #[test]
    fn logits_have_num_classes_entries() {
        for arch in [Architecture::SmallCnn, Architecture::SmallVgg, Architecture::SmallResnet] {
            let m = ClassifierHandle::new(arch, tiny_shape(), 5, 7).unwrap();
            let img = vec![0.5f32; tiny_shape().pixel_count()];
            let l = m.logits(&[&img]).unwrap();
            assert_eq!(l.len(), 1);
            assert_eq!(l[0].len(), 5, "{arch}");
        }
    }

    #[test]
    fn resnet_penultimate_is_512_and_finite_on_zero_input() {
        let m = ClassifierHandle::new(Architecture::SmallResnet, tiny_shape(), 4, 3).unwrap();
        let img = vec![0.0f32; tiny_shape().pixel_count()];
        let acts = m.penultimate_activations(&[&img]).unwrap();
        assert_eq!(acts[0].len(), 512);
        assert!(acts[0].iter().all(|v| v.is_finite()));
        // pure inference: repeated calls agree
        let again = m.penultimate_activations(&[&img]).unwrap();
        assert_eq!(acts, again);
    }

    #[test]
    fn identical_seeds_give_identical_models() {
        let a = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 3, 42).unwrap();
        let b = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 3, 42).unwrap();
        assert_eq!(a.params_hash().unwrap(), b.params_hash().unwrap());
        let c = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 3, 43).unwrap();
        assert_ne!(a.params_hash().unwrap(), c.params_hash().unwrap());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_lowest(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.9, 0.9]), 1);
    }

    #[test]
    fn batch_and_single_prediction_agree() {
        let m = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 4, 9).unwrap();
        let imgs: Vec<Vec<f32>> = (0..5)
            .map(|i| (0..tiny_shape().pixel_count()).map(|p| ((i * 37 + p) % 100) as f32 / 100.0).collect())
            .collect();
        let refs: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
        let batched = m.predict_labels(&refs).unwrap();
        for (i, img) in imgs.iter().enumerate() {
            assert_eq!(m.predict_labels(&[img]).unwrap()[0], batched[i]);
        }
    }

    #[test]
    fn masking_no_channels_is_identity_and_weights_untouched() {
        let m = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 4, 11).unwrap();
        let before = m.params_hash().unwrap();
        let view = m.with_masked_channels(&BTreeSet::new()).unwrap();
        let img: Vec<f32> = (0..tiny_shape().pixel_count()).map(|p| (p % 9) as f32 / 9.0).collect();
        assert_eq!(m.logits(&[&img]).unwrap(), view.logits(&[&img]).unwrap());
        assert_eq!(m.params_hash().unwrap(), before);
    }

    #[test]
    fn masking_all_channels_gives_bias_only_constant_logits() {
        let m = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 4, 11).unwrap();
        let all: BTreeSet<usize> = (0..64).collect();
        let view = m.with_masked_channels(&all).unwrap();
        let a: Vec<f32> = vec![0.1; tiny_shape().pixel_count()];
        let b: Vec<f32> = vec![0.9; tiny_shape().pixel_count()];
        assert_eq!(view.logits(&[&a]).unwrap(), view.logits(&[&b]).unwrap());
        assert_eq!(m.params_hash().unwrap(), view.params_hash().unwrap());
    }

    #[test]
    fn masking_composes_as_union() {
        let m = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 4, 13).unwrap();
        let a: BTreeSet<usize> = [1, 2, 3].into_iter().collect();
        let b: BTreeSet<usize> = [3, 10, 20].into_iter().collect();
        let union: BTreeSet<usize> = a.union(&b).copied().collect();
        let img: Vec<f32> = (0..tiny_shape().pixel_count()).map(|p| (p % 7) as f32 / 7.0).collect();
        let chained = m.with_masked_channels(&a).unwrap().with_masked_channels(&b).unwrap();
        let direct = m.with_masked_channels(&union).unwrap();
        assert_eq!(chained.logits(&[&img]).unwrap(), direct.logits(&[&img]).unwrap());
    }

    #[test]
    fn invalid_mask_index_rejected() {
        let m = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 4, 13).unwrap();
        let bad: BTreeSet<usize> = [64].into_iter().collect();
        assert!(m.with_masked_channels(&bad).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ClassifierHandle::new(Architecture::SmallCnn, tiny_shape(), 4, 21).unwrap();
        let path = dir.path().join("model.safetensors");
        m.save(&path, &[("note".into(), "test".into())]).unwrap();
        let back = ClassifierHandle::load(&path).unwrap();
        assert_eq!(back.arch(), Architecture::SmallCnn);
        assert_eq!(back.num_classes(), 4);
        assert_eq!(back.params_hash().unwrap(), m.params_hash().unwrap());
    }
}
