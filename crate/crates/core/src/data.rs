//! MNIST IDX files, rotated-MNIST synthesis, and dataset splitting.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GcnError, Result};
use crate::tensor::Tensor4;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Mnist,
    MnistRot { seed: u64 },
}

/// Single-channel images scaled to `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    images: Tensor4,
    labels: Vec<u8>,
    provenance: Provenance,
}

impl ImageDataset {
    pub fn new(images: Tensor4, labels: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(GcnError::CountMismatch {
                images: images.batch(),
                labels: labels.len(),
            });
        }
        if images.channels() != 1 {
            return Err(GcnError::Shape(format!(
                "expected single-channel images, got shape {:?}",
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(GcnError::Format(format!("label {bad} outside 0..{NUM_CLASSES}")));
        }
        Ok(ImageDataset {
            images,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor4 {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let [_, c, h, w] = self.images.shape();
        [c, h, w]
    }

    /// Gathers the given samples, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> ImageDataset {
        let [_, c, h, w] = self.images.shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.images.sample(i));
        }
        ImageDataset {
            images: Tensor4::from_vec([indices.len(), c, h, w], data).expect("subset length"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance,
        }
    }

    /// Images and labels for a mini-batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor4, Vec<usize>) {
        let sub = self.subset(indices);
        let labels = sub.labels.iter().map(|&l| l as usize).collect();
        (sub.images, labels)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| GcnError::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| GcnError::Truncated {
            path: path.to_path_buf(),
            expected: (offset + 4) as u64,
            found: bytes.len() as u64,
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(GcnError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() < expected {
        return Err(GcnError::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Loads an IDX image file (magic `0x803`) and label file (magic `0x801`).
/// Pixel bytes are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset> {
    let img = read_file(images_path)?;
    check_magic(&img, IDX_IMAGES_MAGIC, images_path)?;
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    check_len(&img, 16 + n * rows * cols, images_path)?;

    let lab = read_file(labels_path)?;
    check_magic(&lab, IDX_LABELS_MAGIC, labels_path)?;
    let nl = be_u32(&lab, 4, labels_path)? as usize;
    check_len(&lab, 8 + nl, labels_path)?;
    if n != nl {
        return Err(GcnError::CountMismatch { images: n, labels: nl });
    }

    let pixels = img[16..16 + n * rows * cols]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let images = Tensor4::from_vec([n, 1, rows, cols], pixels)?;
    ImageDataset::new(images, lab[8..8 + n].to_vec(), Provenance::Mnist)
}

/// Writes a dataset back out as IDX, quantizing pixels to bytes.
pub fn write_idx(dataset: &ImageDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [n, _, h, w] = dataset.images.shape();
    let mut img = Vec::with_capacity(16 + n * h * w);
    for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        dataset
            .images
            .data()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(images_path, img).map_err(|e| GcnError::io(images_path, e))?;

    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&dataset.labels);
    fs::write(labels_path, lab).map_err(|e| GcnError::io(labels_path, e))
}

/// Rotates an `h x w` image about its center by `angle` radians using
/// inverse mapping and bilinear interpolation; samples outside are zero.
pub fn rotate_image(src: &[f64], h: usize, w: usize, angle: f64) -> Vec<f64> {
    let (sin, cos) = angle.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let at = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            src[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            out[y * w + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

/// Rotates every image by the matching angle.
pub fn rotate_with_angles(dataset: &ImageDataset, angles: &[f64]) -> Result<ImageDataset> {
    if angles.len() != dataset.len() {
        return Err(GcnError::Shape(format!(
            "{} angles for {} images",
            angles.len(),
            dataset.len()
        )));
    }
    let [n, c, h, w] = dataset.images.shape();
    let mut data = Vec::with_capacity(n * c * h * w);
    for (i, &angle) in angles.iter().enumerate() {
        for ch in 0..c {
            let plane = &dataset.images.sample(i)[ch * h * w..(ch + 1) * h * w];
            data.extend(rotate_image(plane, h, w, angle));
        }
    }
    Ok(ImageDataset {
        images: Tensor4::from_vec([n, c, h, w], data)?,
        labels: dataset.labels.clone(),
        provenance: dataset.provenance,
    })
}

/// Per-image rotation angles drawn uniformly from `[0, 2pi)`.
pub fn rotation_angles(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.0..TAU)).collect()
}

/// MNIST-rot: each image rotated by an independent uniform angle.
pub fn make_rot(dataset: &ImageDataset, seed: u64) -> Result<ImageDataset> {
    let mut out = rotate_with_angles(dataset, &rotation_angles(dataset.len(), seed))?;
    out.provenance = Provenance::MnistRot { seed };
    Ok(out)
}

/// Seeded permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Splits off `n_val` randomly chosen samples for validation. Both parts keep
/// the original sample order.
pub fn split_train_val(dataset: &ImageDataset, n_val: usize, seed: u64) -> Result<(ImageDataset, ImageDataset)> {
    if n_val > dataset.len() {
        return Err(GcnError::Config(format!(
            "validation size {n_val} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let perm = permutation(dataset.len(), seed);
    let mut val: Vec<usize> = perm[..n_val].to_vec();
    let mut train: Vec<usize> = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

/// Peak signal-to-noise ratio in dB for signals with peak value 1.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
