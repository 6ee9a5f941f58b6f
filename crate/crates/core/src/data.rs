//! Datasets: IDX image/label files and small synthetic benchmarks.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, ...sample_dims]`
    samples: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if samples.dims().len() < 2 {
            return Err(Error::Dataset("samples need a batch dimension".into()));
        }
        if samples.dims()[0] != labels.len() {
            return Err(Error::Dataset(format!(
                "{} samples but {} labels",
                samples.dims()[0],
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!("label {l} outside [0, {num_classes})")));
        }
        Ok(Self {
            samples,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_dims(&self) -> &[usize] {
        &self.samples.dims()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_dims().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.samples.data()[i * n..(i + 1) * n]
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

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    /// The first `n` samples (or all of them when fewer exist).
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut dims = vec![indices.len()];
        dims.extend_from_slice(self.sample_dims());
        Dataset::new(Tensor::new(dims, data)?, labels, self.num_classes, self.split)
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Truncated {
            needed: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::BadMagic {
            expected: format!("{expected:#010x}"),
            found: format!("{found:#010x}"),
        });
    }
    Ok(())
}

/// Parses an IDX3 image file; returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    check_magic(read_u32_be(bytes, 0)?, IDX_IMAGES_MAGIC)?;
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let needed = 16 + n * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            found: bytes.len(),
        });
    }
    Ok((n, rows, cols, &bytes[16..needed]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    check_magic(read_u32_be(bytes, 0)?, IDX_LABELS_MAGIC)?;
    let n = read_u32_be(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Truncated {
            needed: 8 + n,
            found: bytes.len(),
        });
    }
    Ok(&bytes[8..8 + n])
}

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]`; samples are `[1, rows, cols]`.
pub fn load_idx_pair(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img_bytes = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl_bytes = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let lbls = parse_idx_labels(&lbl_bytes)?;
    if lbls.len() != n {
        return Err(Error::Dataset(format!(
            "image count {n} does not match label count {}",
            lbls.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = lbls.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], data)?, labels, num_classes, split)
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from a directory.
pub fn load_idx_dataset(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let prefix = match split {
        Split::Train => "train",
        Split::Test | Split::Full => "t10k",
    };
    load_idx_pair(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes an IDX pair under the standard file names for `split`.
pub fn write_idx_dataset(
    dir: impl AsRef<Path>,
    split: Split,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let prefix = if split == Split::Train { "train" } else { "t10k" };
    let img = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lbl = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    fs::write(&img, encode_idx_images(rows, cols, pixels)).map_err(|e| Error::io(&img, e))?;
    fs::write(&lbl, encode_idx_labels(labels)).map_err(|e| Error::io(&lbl, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Moons,
    Gaussians,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" => Ok(Self::Moons),
            "gaussians" => Ok(Self::Gaussians),
            other => Err(Error::Config(format!("unknown synthetic dataset {other:?}"))),
        }
    }
}

const MOONS_NOISE: f64 = 0.1;

/// Two balanced classes in `[0, 1]^2`. Class `i % 2` for sample `i`, so the
/// first `n/2` rounded up are class 0.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Dataset(format!("need at least 2 samples, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let (x, y) = match kind {
            SyntheticKind::Moons => {
                let noise = Normal::new(0.0, MOONS_NOISE).unwrap();
                let t = rng.random_range(0.0..std::f64::consts::PI);
                let (x, y) = if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let (x, y) = (x + noise.sample(&mut rng), y + noise.sample(&mut rng));
                // Fixed affine map of the moons' support onto the unit square.
                ((x + 1.5) / 4.0, (y + 1.0) / 2.5)
            }
            SyntheticKind::Gaussians => {
                let noise = Normal::new(0.0, 0.12).unwrap();
                let c = if class == 0 { 0.35 } else { 0.65 };
                (c + noise.sample(&mut rng), c + noise.sample(&mut rng))
            }
        };
        data.push(x.clamp(0.0, 1.0));
        data.push(y.clamp(0.0, 1.0));
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, 2, Split::Full)
}

/// Procedural 28x28 "glyph" images in ten classes (bars, crosses, boxes, diagonals)
/// with random jitter and pixel noise. Returns `(pixels, labels)` ready for IDX encoding.
pub fn gen_glyph_images(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    const S: usize = 28;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0u8; n * S * S];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 10) as u8;
        labels.push(class);
        let img = &mut pixels[i * S * S..(i + 1) * S * S];
        let dx = rng.random_range(-3i32..=3);
        let dy = rng.random_range(-3i32..=3);
        let thick = rng.random_range(2i32..=3);
        let mut put = |x: i32, y: i32| {
            let (x, y) = (x + dx, y + dy);
            if (0..S as i32).contains(&x) && (0..S as i32).contains(&y) {
                img[y as usize * S + x as usize] = 255;
            }
        };
        for a in 6..22i32 {
            for t in 0..thick {
                match class {
                    0 => put(a, 8 + t),
                    1 => put(a, 18 + t),
                    2 => put(8 + t, a),
                    3 => put(18 + t, a),
                    4 => put(a, a + t),
                    5 => put(a, 27 - a - t),
                    6 => {
                        put(a, 13 + t);
                        put(13 + t, a);
                    }
                    7 => {
                        put(a, 6 + t);
                        put(a, 20 + t);
                        put(6 + t, a);
                        put(20 + t, a);
                    }
                    8 => {
                        put(a, 6 + t);
                        put(a, 13 + t);
                        put(a, 20 + t);
                    }
                    _ => {
                        put(a, a + t);
                        put(a, 27 - a - t);
                    }
                }
            }
        }
        for p in img.iter_mut() {
            let jitter: i32 = rng.random_range(-40..=40);
            *p = (i32::from(*p) + jitter).clamp(0, 255) as u8;
        }
    }
    (pixels, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = gen_synthetic(SyntheticKind::Moons, 1000, 7).unwrap();
        let b = gen_synthetic(SyntheticKind::Moons, 1000, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(SyntheticKind::Moons, 1000, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_is_balanced() {
        let d = gen_synthetic(SyntheticKind::Gaussians, 10, 1).unwrap();
        assert_eq!(d.labels().iter().filter(|&&l| l == 0).count(), 5);
        assert_eq!(d.labels().iter().filter(|&&l| l == 1).count(), 5);
    }

    #[test]
    fn synthetic_needs_two_samples() {
        assert!(gen_synthetic(SyntheticKind::Moons, 1, 0).is_err());
    }

    #[test]
    fn idx_header_and_scaling() {
        let pixels: Vec<u8> = vec![0, 255, 128, 255];
        let bytes = encode_idx_images(2, 2, &pixels);
        let (n, r, c, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, r, c), (1, 2, 2));
        assert_eq!(px, &pixels[..]);

        let dir = tempfile::tempdir().unwrap();
        write_idx_dataset(dir.path(), Split::Test, 2, 2, &pixels, &[3]).unwrap();
        let d = load_idx_dataset(dir.path(), Split::Test).unwrap();
        assert_eq!(d.sample_dims(), &[1, 2, 2]);
        assert_eq!(d.sample(0)[1], 1.0);
        assert_eq!(d.sample(0)[0], 0.0);
    }

    #[test]
    fn idx_errors() {
        let mut header_only = encode_idx_images(28, 28, &[]);
        header_only[7] = 5; // claims 5 images
        assert!(matches!(parse_idx_images(&header_only), Err(Error::Truncated { .. })));

        let labels = encode_idx_labels(&[1, 2]);
        assert!(matches!(parse_idx_images(&labels), Err(Error::BadMagic { .. })));

        let dir = tempfile::tempdir().unwrap();
        write_idx_dataset(dir.path(), Split::Test, 2, 2, &[0; 8], &[1]).unwrap();
        assert!(matches!(
            load_idx_dataset(dir.path(), Split::Test),
            Err(Error::Dataset(_))
        ));
    }
}
