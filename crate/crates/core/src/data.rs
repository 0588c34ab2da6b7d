//! Datasets: IDX (MNIST) ingestion, a synthetic Gaussian-cluster generator,
//! and the sample / feature partitioners.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numerics::{streams, SeededRng};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: {source}")]
    Read {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} at offset {offset}: {detail}")]
    Format {
        file: String,
        offset: usize,
        detail: String,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    IdxFiles { images: String, labels: String },
    Synthetic { seed: u64, separation: f64 },
    Subset,
}

/// `N` samples of `inputs` features in `[0, 1]` with one-hot labels over
/// `classes` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub inputs: usize,
    pub classes: usize,
    /// Row-major N x P.
    pub features: Vec<f64>,
    /// Row-major N x L, one-hot.
    pub labels: Vec<f64>,
    pub label_index: Vec<usize>,
    pub provenance: Provenance,
}

impl RawDataset {
    /// Builds a dataset from class indices; every label must be `< classes`.
    pub fn from_parts(
        inputs: usize,
        classes: usize,
        features: Vec<f64>,
        label_index: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if inputs == 0 || classes == 0 {
            return Err(Error::invalid(
                "datasets need at least one feature and one class",
            ));
        }
        if features.len() != inputs * label_index.len() {
            return Err(Error::Shape {
                context: "dataset features",
                expected: inputs * label_index.len(),
                got: features.len(),
            });
        }
        let mut labels = vec![0.0; classes * label_index.len()];
        for (n, &l) in label_index.iter().enumerate() {
            if l >= classes {
                return Err(Error::invalid(format!(
                    "label {l} of sample {n} >= {classes} classes"
                )));
            }
            labels[n * classes + l] = 1.0;
        }
        Ok(Self {
            inputs,
            classes,
            features,
            labels,
            label_index,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.label_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_index.is_empty()
    }

    pub fn z(&self, n: usize) -> &[f64] {
        &self.features[n * self.inputs..(n + 1) * self.inputs]
    }

    pub fn y(&self, n: usize) -> &[f64] {
        &self.labels[n * self.classes..(n + 1) * self.classes]
    }

    pub fn sample(&self, n: usize) -> Sample<'_> {
        Sample {
            z: self.z(n),
            y: self.y(n),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        (0..self.len()).map(|n| self.sample(n))
    }

    /// Re-encodes the labels over `classes` classes.
    pub fn with_classes(self, classes: usize) -> Result<Self> {
        Self::from_parts(
            self.inputs,
            classes,
            self.features,
            self.label_index,
            self.provenance,
        )
    }

    /// Features `range` of every sample, as an N x |range| matrix.
    pub fn feature_block(&self, range: Range<usize>) -> Vec<f64> {
        (0..self.len())
            .flat_map(|n| self.z(n)[range.clone()].iter().copied())
            .collect()
    }
}

fn read_file(path: &Path) -> std::result::Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Read {
        file: path.display().to_string(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, file: &str) -> std::result::Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Format {
            file: file.to_string(),
            offset,
            detail: format!("truncated header ({} bytes)", bytes.len()),
        })
}

/// Parses an IDX image file: returns `(count, pixels per image, pixels)`.
pub fn parse_idx_images(
    bytes: &[u8],
    file: &str,
) -> std::result::Result<(usize, usize, Vec<f64>), DataError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IDX_IMAGES {
        return Err(DataError::Format {
            file: file.into(),
            offset: 0,
            detail: format!("bad magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let rows = be_u32(bytes, 8, file)? as usize;
    let cols = be_u32(bytes, 12, file)? as usize;
    let pixels = rows * cols;
    let body = &bytes[16..];
    let need = count * pixels;
    if body.len() != need {
        return Err(DataError::Format {
            file: file.into(),
            offset: 16 + body.len().min(need),
            detail: format!("expected {need} pixel bytes, found {}", body.len()),
        });
    }
    Ok((
        count,
        pixels,
        body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    ))
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> std::result::Result<Vec<usize>, DataError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IDX_LABELS {
        return Err(DataError::Format {
            file: file.into(),
            offset: 0,
            detail: format!("bad magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(DataError::Format {
            file: file.into(),
            offset: 8 + body.len().min(count),
            detail: format!("expected {count} label bytes, found {}", body.len()),
        });
    }
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an IDX image/label pair. Pixels are scaled by 1/255; the number of
/// classes is the largest label plus one.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawDataset> {
    let img_name = images.display().to_string();
    let lbl_name = labels.display().to_string();
    let (count, pixels, features) = parse_idx_images(&read_file(images)?, &img_name)?;
    let label_index = parse_idx_labels(&read_file(labels)?, &lbl_name)?;
    if count != label_index.len() {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_index.len(),
        }
        .into());
    }
    let classes = label_index.iter().max().map_or(1, |m| m + 1);
    RawDataset::from_parts(
        pixels,
        classes,
        features,
        label_index,
        Provenance::IdxFiles {
            images: img_name,
            labels: lbl_name,
        },
    )
}

/// Gaussian class clusters squashed into `[0, 1]`.
///
/// Class `l` has mean `separation * e_(l mod P)`; each coordinate gets unit
/// Gaussian noise and is passed through the logistic function. Classes are
/// balanced (round-robin) and shuffled.
pub fn synth_dataset(
    seed: u64,
    n: usize,
    inputs: usize,
    classes: usize,
    separation: f64,
) -> Result<RawDataset> {
    if n == 0 || inputs == 0 || classes == 0 {
        return Err(Error::invalid(format!(
            "synthetic sizes N={n}, P={inputs}, L={classes} must be positive"
        )));
    }
    let mut rng = SeededRng::new(seed, streams::DATA);
    let mut label_index: Vec<usize> = (0..n).map(|k| k % classes).collect();
    label_index.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * inputs);
    for &l in &label_index {
        for p in 0..inputs {
            let mean = if p == l % inputs { separation } else { 0.0 };
            let x = mean + rng.standard_normal();
            features.push(1.0 / (1.0 + (-x).exp()));
        }
    }
    RawDataset::from_parts(
        inputs,
        classes,
        features,
        label_index,
        Provenance::Synthetic { seed, separation },
    )
}

/// `n` training samples plus a held-out test set of `n / 4` (20% of the
/// total), drawn from one synthetic population.
pub fn synth_train_test(
    seed: u64,
    n: usize,
    inputs: usize,
    classes: usize,
    separation: f64,
) -> Result<(RawDataset, RawDataset)> {
    let n_test = (n / 4).max(1);
    let all = synth_dataset(seed, n + n_test, inputs, classes, separation)?;
    let split = n * inputs;
    let test = RawDataset::from_parts(
        inputs,
        classes,
        all.features[split..].to_vec(),
        all.label_index[n..].to_vec(),
        all.provenance.clone(),
    )?;
    let train = RawDataset::from_parts(
        inputs,
        classes,
        all.features[..split].to_vec(),
        all.label_index[..n].to_vec(),
        all.provenance,
    )?;
    Ok((train, test))
}

fn balanced_blocks(total: usize, parts: usize) -> Vec<Range<usize>> {
    let (base, extra) = (total / parts, total % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Contiguous sample blocks `N_i`. Balanced by default (sizes differ by at
/// most one, larger blocks first); `sizes` gives explicit block sizes.
pub fn partition_samples(
    n: usize,
    clients: usize,
    sizes: Option<&[usize]>,
) -> Result<Vec<Range<usize>>> {
    if clients == 0 || clients > n {
        return Err(Error::invalid(format!(
            "cannot split {n} samples among {clients} clients"
        )));
    }
    match sizes {
        None => Ok(balanced_blocks(n, clients)),
        Some(sizes) => {
            if sizes.len() != clients || sizes.iter().sum::<usize>() != n || sizes.contains(&0) {
                return Err(Error::invalid(format!(
                    "block sizes {sizes:?} must be {clients} positive sizes summing to {n}"
                )));
            }
            let mut start = 0;
            Ok(sizes
                .iter()
                .map(|&len| {
                    let r = start..start + len;
                    start += len;
                    r
                })
                .collect())
        }
    }
}

/// Contiguous feature blocks `P_i`; the remainder goes to the lowest ids.
pub fn partition_features(p: usize, clients: usize) -> Result<Vec<Range<usize>>> {
    if clients == 0 || clients > p {
        return Err(Error::invalid(format!(
            "cannot split {p} features among {clients} clients"
        )));
    }
    Ok(balanced_blocks(p, clients))
}
