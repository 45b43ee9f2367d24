//! Dataset ingestion: IDX files and the synthetic separable generator.

use std::path::Path;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(buf: &[u8], off: usize, path: &Path) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(off..off + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Truncated {
            path: path.display().to_string(),
            need: off + 4,
            have: buf.len(),
        })?;
    Ok(u32::from_be_bytes(bytes))
}

fn check_len(buf: &[u8], need: usize, path: &Path) -> Result<()> {
    if buf.len() < need {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            need,
            have: buf.len(),
        });
    }
    Ok(())
}

/// Loads an IDX image/label file pair (big-endian headers, unsigned-byte
/// payloads). Pixels are scaled to `[0, 1]` by division by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    let magic = read_u32(&images, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.display().to_string(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n_images = read_u32(&images, 4, images_path)? as usize;
    let rows = read_u32(&images, 8, images_path)? as usize;
    let cols = read_u32(&images, 12, images_path)? as usize;
    let k = rows * cols;
    check_len(&images, 16 + n_images * k, images_path)?;

    let magic = read_u32(&labels, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.display().to_string(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_u32(&labels, 4, labels_path)? as usize;
    check_len(&labels, 8 + n_labels, labels_path)?;

    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let mut out = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let pixels = &images[16 + i * k..16 + (i + 1) * k];
        let x = Array1::from_iter(pixels.iter().map(|&p| f64::from(p) / 255.0));
        out.push(Sample::new(x, labels[8 + i] as usize));
    }
    Ok(out)
}

/// Writes an IDX image/label file pair, the inverse of [`load_idx`]. Used to
/// build fixtures and desk-scale subsets.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    pixels: &[u8],
    labels: &[u8],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let k = rows * cols;
    if k == 0 || pixels.len() % k != 0 || pixels.len() / k != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} pixels with {rows}x{cols} images do not match {} labels",
            pixels.len(),
            labels.len()
        )));
    }
    let n = labels.len() as u32;
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    std::fs::write(images_path, img)?;

    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend_from_slice(labels);
    std::fs::write(labels_path, lab)?;
    Ok(())
}

/// Recipe for a linearly separable synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    /// Minimum gap between the top two hidden logits; samples below it are
    /// rejected and redrawn.
    pub margin: f64,
    pub seed: u64,
}

// per-sample redraw budget before declaring the margin unreachable
const REJECTION_BUDGET: usize = 1000;

/// Draws `n` samples with standard-normal features labeled by the argmax of a
/// hidden linear map. Deterministic per seed.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    if spec.l < 2 || spec.n < spec.l || spec.k < spec.l {
        return Err(Error::InvalidArgument(format!(
            "bad synthetic shape: n={} k={} l={} (need n >= l and k >= l)",
            spec.n, spec.k, spec.l
        )));
    }
    if spec.margin < 0.0 || !spec.margin.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "margin must be finite and >= 0, got {}",
            spec.margin
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    // Orthonormal rows make the logits iid standard normal, so the argmax
    // label is uniform over classes by symmetry.
    let mut hidden: Vec<Vec<f64>> = (0..spec.l)
        .map(|_| (0..spec.k).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    for i in 0..spec.l {
        for j in 0..i {
            let dot: f64 = hidden[i].iter().zip(&hidden[j]).map(|(a, b)| a * b).sum();
            let prev = hidden[j].clone();
            for (v, p) in hidden[i].iter_mut().zip(&prev) {
                *v -= dot * p;
            }
        }
        let norm = hidden[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(Error::InvalidArgument(
                "degenerate hidden map draw; pick another seed".into(),
            ));
        }
        for v in &mut hidden[i] {
            *v /= norm;
        }
    }

    let mut out = Vec::with_capacity(spec.n);
    while out.len() < spec.n {
        let mut accepted = None;
        for _ in 0..REJECTION_BUDGET {
            let x: Vec<f64> = (0..spec.k).map(|_| normal.sample(&mut rng)).collect();
            let logits: Vec<f64> = hidden
                .iter()
                .map(|row| row.iter().zip(&x).map(|(w, v)| w * v).sum())
                .collect();
            let (mut best, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut label = 0;
            for (c, &z) in logits.iter().enumerate() {
                if z > best {
                    second = best;
                    best = z;
                    label = c;
                } else if z > second {
                    second = z;
                }
            }
            if best - second >= spec.margin {
                accepted = Some(Sample::new(Array1::from_vec(x), label));
                break;
            }
        }
        match accepted {
            Some(s) => out.push(s),
            None => {
                return Err(Error::RejectionBudget {
                    attempts: REJECTION_BUDGET,
                })
            }
        }
    }
    Ok(out)
}

/// Shuffled split into `(train, test)` with `train_frac` of the samples in
/// the first part.
pub fn split_train_test(
    samples: &[Sample],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(0.0 < train_frac && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_frac}"
        )));
    }
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = ((samples.len() as f64) * train_frac).round() as usize;
    if cut == 0 || cut == samples.len() {
        return Err(Error::InvalidArgument(format!(
            "split {train_frac} leaves an empty part for {} samples",
            samples.len()
        )));
    }
    let train = order[..cut].iter().map(|&i| samples[i].clone()).collect();
    let test = order[cut..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, test))
}
