//! Reader for the IDX format used by MNIST-style image sets: a big-endian
//! magic number whose third byte is the element type and fourth the number
//! of dimensions, then one big-endian `u32` per dimension, then raw data.

use std::fs;
use std::path::Path;

use thiserror::Error;
use vbfl_core::learning::{DataShard, Dataset, LearnError};

const TYPE_U8: u8 = 0x08;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic number {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported element type {0:#04x} (only unsigned bytes)")]
    UnsupportedType(u8),
    #[error("file truncated: expected {expected} more bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("expected a {expected}-dimensional array, found {found}")]
    Rank { expected: usize, found: usize },
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// A decoded IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    let word = |i: usize| -> Result<u32, IdxError> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or(IdxError::Truncated {
                expected: i + 4,
                found: bytes.len(),
            })
    };
    let magic = word(0)?;
    let [z0, z1, ty, rank] = magic.to_be_bytes();
    if z0 != 0 || z1 != 0 || rank == 0 {
        return Err(IdxError::BadMagic(magic));
    }
    if ty != TYPE_U8 {
        return Err(IdxError::UnsupportedType(ty));
    }
    let dims = (0..rank as usize)
        .map(|k| word(4 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let start = 4 + 4 * rank as usize;
    let found = bytes.len().saturating_sub(start);
    let len = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or(IdxError::Truncated {
            expected: usize::MAX,
            found,
        })?;
    let data = bytes
        .get(start..)
        .and_then(|rest| rest.get(..len))
        .ok_or(IdxError::Truncated { expected: len, found })?;
    Ok(IdxArray {
        dims,
        data: data.to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray, IdxError> {
    let bytes = fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_idx(&bytes)
}

/// Pairs an image array (`n × rows × cols`, or `n × d`) with a label array
/// (`n`) into a shard. Pixels are scaled to `[0, 1]`.
pub fn to_shard(images: &IdxArray, labels: &IdxArray, classes: usize) -> Result<DataShard, IdxError> {
    if labels.dims.len() != 1 {
        return Err(IdxError::Rank {
            expected: 1,
            found: labels.dims.len(),
        });
    }
    if images.dims.len() < 2 {
        return Err(IdxError::Rank {
            expected: 2,
            found: images.dims.len(),
        });
    }
    let n = images.dims[0];
    if n != labels.dims[0] {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: labels.dims[0],
        });
    }
    let dim: usize = images.dims[1..].iter().product();
    let features = images.data.iter().map(|p| f64::from(*p) / 255.0).collect();
    let labels = labels.data.iter().map(|l| u32::from(*l)).collect();
    Ok(DataShard::new(dim, classes, features, labels, None)?)
}

/// Loads a train/test pair of IDX image and label files. The class count is
/// one more than the largest label seen.
pub fn load_idx_dataset(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
) -> Result<Dataset, IdxError> {
    let (ti, tl) = (read_idx(train_images)?, read_idx(train_labels)?);
    let (vi, vl) = (read_idx(test_images)?, read_idx(test_labels)?);
    let classes = tl
        .data
        .iter()
        .chain(&vl.data)
        .copied()
        .max()
        .map_or(1, |m| m as usize + 1);
    Ok(Dataset {
        train: to_shard(&ti, &tl, classes)?,
        test: to_shard(&vi, &vl, classes)?,
    })
}

/// Encodes an unsigned-byte IDX array.
pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, TYPE_U8, array.dims.len() as u8];
    for d in &array.dims {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}
