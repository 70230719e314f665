//! On-disk formats: the trigger binary format, directory-of-class-subdirectory
//! datasets, the CIFAR-10 binary archive layout, and poisoned-set export with
//! its manifest CSV.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SibaError};
use crate::types::{ImageShape, LabeledImageSet, TriggerPattern};

const TRIGGER_MAGIC: &[u8; 5] = b"SIBA1";

/// Serialize a trigger: magic "SIBA1", then height/width/channels/k_budget as
/// u32 LE, eps_budget as f64 LE, then d f64 LE values in row-major (H, W, C)
/// order.
pub fn write_trigger(path: &Path, trigger: &TriggerPattern) -> Result<()> {
    let mut buf = Vec::with_capacity(5 + 16 + 8 + trigger.values().len() * 8);
    buf.extend_from_slice(TRIGGER_MAGIC);
    let s = trigger.shape();
    for v in [s.height, s.width, s.channels, trigger.k_budget()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(trigger.eps_budget() as f64).to_le_bytes());
    for v in trigger.values() {
        buf.extend_from_slice(&(*v as f64).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_trigger(path: &Path) -> Result<TriggerPattern> {
    let data = fs::read(path)?;
    if data.len() < 5 + 16 + 8 || &data[..5] != TRIGGER_MAGIC {
        return Err(SibaError::invalid(format!("{} is not a trigger file", path.display())));
    }
    let u32_at = |off: usize| -> usize {
        u32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as usize
    };
    let (h, w, c, k) = (u32_at(5), u32_at(9), u32_at(13), u32_at(17));
    let eps = f64::from_le_bytes(data[21..29].try_into().unwrap()) as f32;
    let shape = ImageShape::new(h, w, c)?;
    let d = shape.pixel_count();
    if data.len() != 29 + d * 8 {
        return Err(SibaError::invalid(format!(
            "trigger file {} has {} payload bytes, expected {}",
            path.display(),
            data.len() - 29,
            d * 8
        )));
    }
    let values = data[29..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32)
        .collect();
    TriggerPattern::new(values, shape, k, eps)
}

/// Two-column CSV of the per-iteration synthesis loss.
pub fn write_loss_trace(path: &Path, losses: &[f32]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "iteration,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(f, "{i},{l}")?;
    }
    Ok(())
}

fn pixel_to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a dataset as class subdirectories of PNG files. Existing class
/// directories are replaced.
pub fn write_image_dir(root: &Path, data: &LabeledImageSet) -> Result<()> {
    fs::create_dir_all(root)?;
    let s = data.shape();
    let mut counters = vec![0usize; data.num_classes()];
    for i in 0..data.len() {
        let label = data.label(i);
        let dir = root.join(format!("class_{label}"));
        fs::create_dir_all(&dir)?;
        let bytes: Vec<u8> = data.image(i).iter().map(|v| pixel_to_u8(*v)).collect();
        let path = dir.join(format!("{:06}.png", counters[label]));
        counters[label] += 1;
        save_png(&path, &bytes, s)?;
    }
    Ok(())
}

fn save_png(path: &Path, bytes: &[u8], s: ImageShape) -> Result<()> {
    match s.channels {
        1 => {
            let img = image::GrayImage::from_raw(s.width as u32, s.height as u32, bytes.to_vec())
                .ok_or_else(|| SibaError::shape("gray buffer size mismatch"))?;
            img.save(path)?;
        }
        3 => {
            let img = image::RgbImage::from_raw(s.width as u32, s.height as u32, bytes.to_vec())
                .ok_or_else(|| SibaError::shape("rgb buffer size mismatch"))?;
            img.save(path)?;
        }
        c => return Err(SibaError::Unsupported(format!("{c}-channel PNG export"))),
    }
    Ok(())
}

/// Load a directory-of-class-subdirectories dataset. Class subdirectories are
/// assigned label indices in lexicographic order; files within a class are
/// read in lexicographic order.
pub fn read_image_dir(root: &Path) -> Result<LabeledImageSet> {
    let mut class_dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(SibaError::invalid(format!("{} has no class subdirectories", root.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<ImageShape> = None;
    for (label, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for path in files {
            let img = image::open(&path)?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            // channel count fixed by the first image seen
            let channels = shape.map(|s| s.channels).unwrap_or_else(|| {
                if img.color().channel_count() >= 3 {
                    3
                } else {
                    1
                }
            });
            let pixels = if channels == 1 {
                img.to_luma8().into_raw()
            } else {
                img.to_rgb8().into_raw()
            };
            let this = ImageShape::new(h, w, channels)?;
            match shape {
                None => shape = Some(this),
                Some(s) if s != this => {
                    return Err(SibaError::shape(format!(
                        "{} has shape {this}, dataset shape is {s}",
                        path.display()
                    )))
                }
                _ => {}
            }
            images.push(pixels.iter().map(|b| *b as f32 / 255.0).collect());
            labels.push(label);
        }
    }
    let shape = shape.ok_or_else(|| SibaError::invalid("dataset directory contains no images"))?;
    LabeledImageSet::new(images, labels, class_dirs.len(), shape)
}

/// Export a poisoned dataset: image directory layout plus a manifest CSV with
/// one row per sample: (index, original_label, new_label, poisoned_flag).
pub fn write_poisoned_set(
    root: &Path,
    poisoned: &LabeledImageSet,
    original_labels: &[usize],
    poisoned_indices: &BTreeSet<usize>,
) -> Result<()> {
    if original_labels.len() != poisoned.len() {
        return Err(SibaError::invalid("original_labels length mismatch"));
    }
    write_image_dir(root, poisoned)?;
    let mut f = fs::File::create(root.join("manifest.csv"))?;
    writeln!(f, "index,original_label,new_label,poisoned_flag")?;
    for i in 0..poisoned.len() {
        writeln!(
            f,
            "{i},{},{},{}",
            original_labels[i],
            poisoned.label(i),
            u8::from(poisoned_indices.contains(&i))
        )?;
    }
    Ok(())
}

const CIFAR_SIDE: usize = 32;
const CIFAR_CHANNELS: usize = 3;
const CIFAR_RECORD: usize = 1 + CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;
const CIFAR_CLASSES: usize = 10;

/// Parse one or more files in the CIFAR-10 binary layout: fixed 3073-byte
/// records of (label, 1024 red, 1024 green, 1024 blue), each plane row-major.
fn read_cifar10_files(paths: &[std::path::PathBuf]) -> Result<LabeledImageSet> {
    let shape = ImageShape::new(CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let mut data = Vec::new();
        fs::File::open(path)?.read_to_end(&mut data)?;
        if data.is_empty() || data.len() % CIFAR_RECORD != 0 {
            return Err(SibaError::invalid(format!(
                "{} is not a CIFAR-10 binary batch ({} bytes)",
                path.display(),
                data.len()
            )));
        }
        for record in data.chunks_exact(CIFAR_RECORD) {
            let label = record[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(SibaError::invalid(format!("label byte {label} out of range")));
            }
            // planar RGB -> interleaved HWC
            let mut img = vec![0.0f32; CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS];
            for c in 0..CIFAR_CHANNELS {
                let plane = &record[1 + c * 1024..1 + (c + 1) * 1024];
                for (p, byte) in plane.iter().enumerate() {
                    img[p * CIFAR_CHANNELS + c] = *byte as f32 / 255.0;
                }
            }
            images.push(img);
            labels.push(label);
        }
    }
    LabeledImageSet::new(images, labels, CIFAR_CLASSES, shape)
}

/// Load the five training batches from a CIFAR-10 binary archive directory.
pub fn read_cifar10_train(dir: &Path) -> Result<LabeledImageSet> {
    let paths: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    for p in &paths {
        if !p.exists() {
            return Err(SibaError::invalid(format!("missing CIFAR-10 batch {}", p.display())));
        }
    }
    read_cifar10_files(&paths)
}

/// Load the test batch from a CIFAR-10 binary archive directory.
pub fn read_cifar10_test(dir: &Path) -> Result<LabeledImageSet> {
    read_cifar10_files(&[dir.join("test_batch.bin")])
}

/// Write a dataset in the CIFAR-10 binary record format (single batch file).
/// Only valid for 32x32x3 ten-class data; used mainly for fixtures and export.
pub fn write_cifar10_batch(path: &Path, data: &LabeledImageSet) -> Result<()> {
    let expected = ImageShape::new(CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS)?;
    if data.shape() != expected || data.num_classes() != CIFAR_CLASSES {
        return Err(SibaError::invalid("CIFAR-10 batches must be 32x32x3 with 10 classes"));
    }
    let mut buf = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for i in 0..data.len() {
        buf.push(data.label(i) as u8);
        let img = data.image(i);
        for c in 0..CIFAR_CHANNELS {
            for p in 0..CIFAR_SIDE * CIFAR_SIDE {
                buf.push(pixel_to_u8(img[p * CIFAR_CHANNELS + c]));
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn trigger_roundtrip_preserves_everything() {
        let dir = tempdir().unwrap();
        let shape = ImageShape::new(2, 3, 3).unwrap();
        let mut values = vec![0.0f32; shape.pixel_count()];
        values[0] = 0.03;
        values[7] = -0.01;
        let t = TriggerPattern::new(values, shape, 5, 8.0 / 255.0).unwrap();
        let path = dir.path().join("t.bin");
        write_trigger(&path, &t).unwrap();
        let back = read_trigger(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.k_budget(), 5);
        assert_eq!(back.values(), t.values());
        assert!((back.eps_budget() - 8.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn trigger_header_layout_is_exact() {
        let dir = tempdir().unwrap();
        let shape = ImageShape::new(1, 1, 1).unwrap();
        let t = TriggerPattern::new(vec![0.5], shape, 1, 1.0).unwrap();
        let path = dir.path().join("t.bin");
        write_trigger(&path, &t).unwrap();
        let data = fs::read(&path).unwrap();
        assert_eq!(&data[..5], b"SIBA1");
        assert_eq!(u32::from_le_bytes(data[5..9].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(data[17..21].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(data[21..29].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(data[29..37].try_into().unwrap()), 0.5);
        assert_eq!(data.len(), 37);
    }

    #[test]
    fn rejects_corrupt_trigger_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"NOTSIBA000000000000000000000000000").unwrap();
        assert!(read_trigger(&path).is_err());
    }

    #[test]
    fn image_dir_roundtrip() {
        let dir = tempdir().unwrap();
        let shape = ImageShape::new(4, 4, 3).unwrap();
        let images: Vec<Vec<f32>> = (0..6)
            .map(|i| (0..shape.pixel_count()).map(|p| ((i * 31 + p * 7) % 256) as f32 / 255.0).collect())
            .collect();
        let labels = vec![0, 1, 2, 0, 1, 2];
        let data = LabeledImageSet::new(images, labels, 3, shape).unwrap();
        write_image_dir(dir.path(), &data).unwrap();
        let back = read_image_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back.num_classes(), 3);
        assert_eq!(back.shape(), shape);
        // same multiset of labels; order within class preserved
        let mut counts = [0; 3];
        for i in 0..back.len() {
            counts[back.label(i)] += 1;
        }
        assert_eq!(counts, [2, 2, 2]);
    }

    #[test]
    fn cifar10_binary_roundtrip() {
        let dir = tempdir().unwrap();
        let shape = ImageShape::new(32, 32, 3).unwrap();
        let images: Vec<Vec<f32>> = (0..10)
            .map(|i| (0..shape.pixel_count()).map(|p| ((i + p) % 256) as f32 / 255.0).collect())
            .collect();
        let labels: Vec<usize> = (0..10).collect();
        let data = LabeledImageSet::new(images, labels.clone(), 10, shape).unwrap();
        let path = dir.path().join("test_batch.bin");
        write_cifar10_batch(&path, &data).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 10 * 3073);
        let back = read_cifar10_test(dir.path()).unwrap();
        assert_eq!(back.len(), 10);
        assert_eq!(back.labels(), labels.as_slice());
        for i in 0..back.len() {
            for (a, b) in back.image(i).iter().zip(data.image(i)) {
                assert!((a - b).abs() < 1.0 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn cifar10_train_requires_all_batches() {
        let dir = tempdir().unwrap();
        assert!(read_cifar10_train(dir.path()).is_err());
    }

    #[test]
    fn manifest_records_poisoning() {
        let dir = tempdir().unwrap();
        let shape = ImageShape::new(2, 2, 1).unwrap();
        let data = LabeledImageSet::new(
            vec![vec![0.1; 4], vec![0.2; 4], vec![0.3; 4]],
            vec![0, 0, 1],
            2,
            shape,
        )
        .unwrap();
        let poisoned_indices: BTreeSet<usize> = [1].into_iter().collect();
        write_poisoned_set(dir.path(), &data, &[0, 1, 1], &poisoned_indices).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        let lines: Vec<_> = manifest.lines().collect();
        assert_eq!(lines[0], "index,original_label,new_label,poisoned_flag");
        assert_eq!(lines[2], "1,1,0,1");
        assert_eq!(lines[3], "2,1,1,0");
    }
}
