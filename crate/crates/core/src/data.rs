//! Datasets: IDX (MNIST) files, synthetic Gaussian clusters, and random
//! per-device partitions.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learner::LocalDataset;
use crate::rng::{StreamKey, StreamTag};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// MNIST digit classes.
pub const IDX_CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Divide raw bytes by 255.
    #[default]
    ScaleToUnit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        normalization: Normalization,
    },
    Synthetic(SyntheticSpec),
}

/// Gaussian clusters with unit per-feature standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub features: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Expected distance between two class means, in cluster standard deviations.
    pub margin: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Synthetic(spec) => spec.validate(),
            DatasetSpec::Idx { .. } => Ok(()),
        }
    }

    /// `(F, C)` when known without touching the filesystem.
    pub fn shape_hint(&self) -> Option<(usize, usize)> {
        match self {
            DatasetSpec::Synthetic(spec) => Some((spec.features, spec.classes)),
            DatasetSpec::Idx { .. } => None,
        }
    }

    /// Loads or generates `(train, test)`.
    pub fn materialize(&self) -> Result<(LocalDataset, LocalDataset)> {
        match self {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                normalization,
            } => Ok((
                load_idx(train_images, train_labels, *normalization)?,
                load_idx(test_images, test_labels, *normalization)?,
            )),
            DatasetSpec::Synthetic(spec) => make_synthetic(spec),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.features == 0 {
            return Err(invalid("synthetic data needs C >= 2 classes and F >= 1 features"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(invalid("synthetic sample counts must be positive"));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(invalid("synthetic margin must be nonnegative"));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl IdxReader<'_> {
    fn need(&self, needed: usize) -> Result<()> {
        if self.bytes.len() < needed {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                needed,
                actual: self.bytes.len(),
            });
        }
        Ok(())
    }

    fn be_u32(&self, offset: usize) -> Result<u32> {
        self.need(offset + 4)?;
        let raw: [u8; 4] = self.bytes[offset..offset + 4].try_into().expect("4 bytes");
        Ok(u32::from_be_bytes(raw))
    }

    fn expect_magic(&self, expected: u32) -> Result<()> {
        let found = self.be_u32(0)?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                found,
                expected,
            });
        }
        Ok(())
    }
}

/// Parses an IDX image file into `(count, rows * cols, pixels)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let r = IdxReader { path, bytes };
    r.expect_magic(IDX_IMAGES_MAGIC)?;
    let count = r.be_u32(4)? as usize;
    let rows = r.be_u32(8)? as usize;
    let cols = r.be_u32(12)? as usize;
    let pixels = rows * cols;
    r.need(16 + count * pixels)?;
    Ok((count, pixels, bytes[16..16 + count * pixels].to_vec()))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let r = IdxReader { path, bytes };
    r.expect_magic(IDX_LABELS_MAGIC)?;
    let count = r.be_u32(4)? as usize;
    r.need(8 + count)?;
    Ok(bytes[8..8 + count].to_vec())
}

/// Reads an IDX image/label pair into a dataset with row-major pixel features.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    normalization: Normalization,
) -> Result<LocalDataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let (count, pixels, raw) = parse_idx_images(images, &read_file(images)?)?;
    let raw_labels = parse_idx_labels(labels, &read_file(labels)?)?;
    if raw_labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: raw_labels.len(),
        });
    }
    if pixels == 0 {
        return Err(invalid(format!("{}: images have zero pixels", images.display())));
    }
    let scale = match normalization {
        Normalization::None => 1.0,
        Normalization::ScaleToUnit => 1.0 / 255.0,
    };
    let features = raw.iter().map(|&b| b as f64 * scale).collect();
    let labels = raw_labels.iter().map(|&l| l as usize).collect();
    LocalDataset::new(features, labels, pixels, IDX_CLASSES)
}

/// Encodes images (each `rows * cols` bytes) in IDX format.
pub fn encode_idx_images(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        assert_eq!(img.len(), (rows * cols) as usize, "image size");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Class means are random directions of norm `margin / sqrt(2)`, so two means
/// are `margin` apart on average; samples add unit-variance Gaussian noise.
/// Train and test rows come from separate streams.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(LocalDataset, LocalDataset)> {
    spec.validate()?;
    let f = spec.features;
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            let mut rng = StreamKey::new(spec.seed, StreamTag::SyntheticMeans, 0).rng([c, 0, 0]);
            let dir: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius = spec.margin / std::f64::consts::SQRT_2;
            dir.into_iter().map(|v| v * radius / norm).collect()
        })
        .collect();

    let draw = |tag: StreamTag, per_class: usize| -> Result<LocalDataset> {
        let mut features = Vec::with_capacity(spec.classes * per_class * f);
        let mut labels = Vec::with_capacity(spec.classes * per_class);
        for (c, mean) in means.iter().enumerate() {
            for j in 0..per_class {
                let mut rng = StreamKey::new(spec.seed, tag, 0).rng([c, j, 0]);
                features.extend(mean.iter().map(|mu| mu + rng.sample::<f64, _>(StandardNormal)));
                labels.push(c);
            }
        }
        LocalDataset::new(features, labels, f, spec.classes)
    };
    Ok((
        draw(StreamTag::SyntheticTrain, spec.train_per_class)?,
        draw(StreamTag::SyntheticTest, spec.test_per_class)?,
    ))
}

/// Row indices of each device's local set: `per_device` distinct rows per
/// device, drawn independently across devices (sets may overlap).
pub fn partition_indices(
    train_len: usize,
    devices: usize,
    per_device: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if devices == 0 || per_device == 0 {
        return Err(invalid("partition needs at least one device and one sample per device"));
    }
    if per_device > train_len {
        return Err(invalid(format!(
            "per-device sample count {per_device} exceeds training set size {train_len}"
        )));
    }
    let key = StreamKey::new(seed, StreamTag::Partition, 0);
    Ok((0..devices)
        .map(|m| index::sample(&mut key.rng([m, 0, 0]), train_len, per_device).into_vec())
        .collect())
}

pub fn partition(
    train: &LocalDataset,
    devices: usize,
    per_device: usize,
    seed: u64,
) -> Result<Vec<LocalDataset>> {
    partition_indices(train.len(), devices, per_device, seed)?
        .into_iter()
        .enumerate()
        .map(|(m, idx)| Ok(train.subset(&idx)?.with_device(m)))
        .collect()
}
