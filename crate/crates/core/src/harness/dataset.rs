//! Datasets: a seeded synthetic generator, IDX (MNIST) files and the
//! CIFAR-10 binary batch format.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DatasetKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::nn::Dims;
use crate::tensor::FeatureMap;

/// Images in NHWC order with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub classes: usize,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.dims.len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn image_map(&self, i: usize) -> FeatureMap {
        FeatureMap {
            batch: 1,
            h: self.dims.h,
            w: self.dims.w,
            c: self.dims.c,
            values: self.image(i).to_vec(),
        }
    }

    /// Stacks the given samples into one batch.
    pub fn batch(&self, indices: &[usize]) -> (FeatureMap, Vec<usize>) {
        let mut values = Vec::with_capacity(indices.len() * self.dims.len());
        for &i in indices {
            values.extend_from_slice(self.image(i));
        }
        let map = FeatureMap {
            batch: indices.len(),
            h: self.dims.h,
            w: self.dims.w,
            c: self.dims.c,
            values,
        };
        (map, indices.iter().map(|&i| self.labels[i]).collect())
    }

    fn truncate(&mut self, limit: usize) {
        if limit > 0 && limit < self.len() {
            self.labels.truncate(limit);
            self.images.truncate(limit * self.dims.len());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: Dataset,
    pub test: Dataset,
}

pub const SYNTHETIC_SIDE: usize = 8;

/// Two classes of 8×8 single-channel oriented bars: class 0 horizontal,
/// class 1 vertical, with random position, length, intensity and
/// background noise.
pub fn synthetic(count: usize, seed: u64) -> Dataset {
    let side = SYNTHETIC_SIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.random_range(0..2usize);
        let mut img = [0.0f64; SYNTHETIC_SIDE * SYNTHETIC_SIDE];
        for v in img.iter_mut() {
            *v = rng.random_range(0.0..0.35);
        }
        let line = rng.random_range(0..side);
        let len = rng.random_range(4..=side);
        let start = rng.random_range(0..=side - len);
        let intensity = rng.random_range(0.6..1.0);
        for t in start..start + len {
            let (y, x) = if label == 0 { (line, t) } else { (t, line) };
            img[y * side + x] = (img[y * side + x] + intensity).min(1.0);
        }
        images.extend_from_slice(&img);
        labels.push(label);
    }
    Dataset {
        dims: Dims::new(side, side, 1),
        classes: 2,
        images,
        labels,
    }
}

fn data_err(path: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        offset,
        detail: detail.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| data_err(path, offset as u64, "truncated header"))
}

/// An IDX ubyte tensor: its dims and raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file whose element type is unsigned byte (`0x08`).
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxTensor> {
    let magic = be_u32(bytes, 0, path)?;
    if magic >> 16 != 0 || (magic >> 8) & 0xff != 0x08 {
        return Err(data_err(
            path,
            0,
            format!("bad IDX magic 0x{magic:08x}; expected 0x000008NN"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    if rank == 0 {
        return Err(data_err(path, 3, "IDX rank 0"));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(be_u32(bytes, 4 + 4 * i, path)? as usize);
    }
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let data = bytes
        .get(start..start + len)
        .ok_or_else(|| {
            data_err(
                path,
                bytes.len() as u64,
                format!("payload truncated: need {len} bytes after header"),
            )
        })?
        .to_vec();
    Ok(IdxTensor { dims, data })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image file (rank 3) and label file (rank 1).
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = parse_idx(&read(images)?, images)?;
    if img.dims.len() != 3 {
        return Err(data_err(
            images,
            3,
            format!("expected rank-3 images, got rank {}", img.dims.len()),
        ));
    }
    let lab = parse_idx(&read(labels)?, labels)?;
    if lab.dims.len() != 1 {
        return Err(data_err(
            labels,
            3,
            format!("expected rank-1 labels, got rank {}", lab.dims.len()),
        ));
    }
    if lab.dims[0] != img.dims[0] {
        return Err(data_err(
            labels,
            4,
            format!("{} labels for {} images", lab.dims[0], img.dims[0]),
        ));
    }
    let classes = lab
        .data
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m as usize + 1)
        .max(10);
    Ok(Dataset {
        dims: Dims::new(img.dims[1], img.dims[2], 1),
        classes,
        images: img.data.iter().map(|&b| b as f64 / 255.0).collect(),
        labels: lab.data.iter().map(|&b| b as usize).collect(),
    })
}

pub const CIFAR_RECORD: usize = 3073;

/// Decodes CIFAR-10 binary records: a label byte followed by 1024 red,
/// 1024 green and 1024 blue bytes of a 32×32 image.
pub fn parse_cifar(bytes: &[u8], path: &Path) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(data_err(
            path,
            whole as u64,
            format!("trailing partial record of {} bytes", bytes.len() - whole),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(data_err(
                path,
                (r * CIFAR_RECORD) as u64,
                format!("label {label} out of range 0..=9"),
            ));
        }
        labels.push(label);
        let px = &rec[1..];
        for p in 0..1024 {
            for ch in 0..3 {
                images.push(px[ch * 1024 + p] as f64 / 255.0);
            }
        }
    }
    Ok(Dataset {
        dims: Dims::new(32, 32, 3),
        classes: 10,
        images,
        labels,
    })
}

pub fn load_cifar(path: &Path) -> Result<Dataset> {
    parse_cifar(&read(path)?, path)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config {
        line: 0,
        detail: format!("{key} is required for this dataset"),
    })
}

/// Loads the train/test split named by the config.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<DataSplit> {
    let mut split = match cfg.dataset {
        DatasetKind::Synthetic => {
            return Ok(DataSplit {
                train: synthetic(cfg.train_size, cfg.data_seed),
                test: synthetic(cfg.test_size, cfg.data_seed ^ 0x5eed_7e57),
            })
        }
        DatasetKind::IdxMnist => DataSplit {
            train: load_idx(
                required(&cfg.train_images, "train_images")?,
                required(&cfg.train_labels, "train_labels")?,
            )?,
            test: load_idx(
                required(&cfg.test_images, "test_images")?,
                required(&cfg.test_labels, "test_labels")?,
            )?,
        },
        DatasetKind::Cifar10Binary => DataSplit {
            train: load_cifar(required(&cfg.train_images, "train_images")?)?,
            test: load_cifar(required(&cfg.test_images, "test_images")?)?,
        },
    };
    split.train.truncate(cfg.train_size);
    split.test.truncate(cfg.test_size);
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], data: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend(d.to_be_bytes());
        }
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn idx_images_parse_as_rank_three() {
        let bytes = idx_bytes(
            0x0000_0803,
            &[2, 2, 3],
            &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
        );
        let t = parse_idx(&bytes, Path::new("x")).unwrap();
        assert_eq!(t.dims, vec![2, 2, 3]);
        assert_eq!(t.data.len(), 12);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let bad = idx_bytes(0x0000_0d03, &[1, 1, 1], &[0]);
        match parse_idx(&bad, Path::new("x")) {
            Err(Error::Dataset { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let short = idx_bytes(0x0000_0803, &[2, 2, 2], &[0; 5]);
        match parse_idx(&short, Path::new("x")) {
            Err(Error::Dataset { offset, .. }) => assert_eq!(offset, 21),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cifar_record_layout() {
        let mut rec = vec![7u8];
        rec.extend(std::iter::repeat_n(10u8, 1024));
        rec.extend(std::iter::repeat_n(20u8, 1024));
        rec.extend(std::iter::repeat_n(30u8, 1024));
        let ds = parse_cifar(&rec, Path::new("c")).unwrap();
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.images.len(), 3072);
        assert_eq!(
            &ds.image(0)[..3],
            &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]
        );
        assert!(parse_cifar(&rec[..3000], Path::new("c")).is_err());
    }

    #[test]
    fn synthetic_is_seeded() {
        assert_eq!(synthetic(64, 9), synthetic(64, 9));
        assert_ne!(synthetic(64, 9).images, synthetic(64, 10).images);
        let ds = synthetic(200, 1);
        let ones = ds.labels.iter().filter(|&&l| l == 1).count();
        assert!(ones > 60 && ones < 140);
        assert!(ds.images.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
