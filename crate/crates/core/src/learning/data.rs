use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::LearnError;
use crate::rng::SimRng;
use crate::DeviceId;

/// A set of labelled examples, optionally owned by one device.
///
/// Every example fetched through [`DataShard::example`] bumps an access
/// counter, which lets tests check that training only ever touches the shard
/// it was handed.
#[derive(Debug)]
pub struct DataShard {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<u32>,
    owner: Option<DeviceId>,
    reads: AtomicUsize,
}

impl Clone for DataShard {
    fn clone(&self) -> Self {
        DataShard {
            dim: self.dim,
            classes: self.classes,
            features: self.features.clone(),
            labels: self.labels.clone(),
            owner: self.owner,
            reads: AtomicUsize::new(self.reads()),
        }
    }
}

impl PartialEq for DataShard {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.classes == other.classes
            && self.owner == other.owner
            && self.labels == other.labels
            && self.features == other.features
    }
}

impl DataShard {
    pub fn new(
        dim: usize,
        classes: usize,
        features: Vec<f64>,
        labels: Vec<u32>,
        owner: Option<DeviceId>,
    ) -> Result<Self, LearnError> {
        if labels.is_empty() {
            return Err(LearnError::EmptyShard);
        }
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(LearnError::DimMismatch {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(LearnError::LabelOutOfRange { label, classes });
        }
        Ok(DataShard {
            dim,
            classes,
            features,
            labels,
            owner,
            reads: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false; construction rejects empty shards.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn owner(&self) -> Option<DeviceId> {
        self.owner
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of examples fetched so far.
    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn example(&self, i: usize) -> (&[f64], u32) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    /// Copies the selected examples into a new shard with the given owner.
    /// Does not count as reading the source.
    pub fn subset(&self, indices: &[usize], owner: Option<DeviceId>) -> Result<DataShard, LearnError> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(&self.features[i * self.dim..(i + 1) * self.dim]);
            labels.push(self.labels[i]);
        }
        DataShard::new(self.dim, self.classes, features, labels, owner)
    }

    /// Raw row access for bookkeeping such as sharding checks; not counted.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// A task's full training pool and shared test set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: DataShard,
    pub test: DataShard,
}

/// Synthetic K-class Gaussian-blob task.
///
/// Class centres are drawn once from `N(0, separation^2)` per coordinate;
/// each example is its class centre plus isotropic `N(0, spread^2)` noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub dim: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec {
            dim: 256,
            classes: 10,
            train_per_class: 600,
            test_per_class: 100,
            separation: 0.4,
            spread: 2.0,
            seed: 2021,
        }
    }
}

impl BlobSpec {
    pub fn generate(&self) -> Result<Dataset, LearnError> {
        if self.dim == 0 {
            return Err(LearnError::InvalidTask("dim must be positive"));
        }
        if self.classes < 2 {
            return Err(LearnError::InvalidTask("need at least two classes"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(LearnError::InvalidTask("per-class counts must be positive"));
        }
        let centre = Normal::new(0.0, self.separation)
            .map_err(|_| LearnError::InvalidTask("separation must be finite and non-negative"))?;
        let jitter = Normal::new(0.0, self.spread)
            .map_err(|_| LearnError::InvalidTask("spread must be finite and non-negative"))?;
        let mut rng = SimRng::seed_from_u64(self.seed);
        let centres: Vec<f64> = (0..self.classes * self.dim).map(|_| centre.sample(&mut rng)).collect();

        let mut draw = |per_class: usize| {
            let mut features = Vec::with_capacity(per_class * self.classes * self.dim);
            let mut labels = Vec::with_capacity(per_class * self.classes);
            for class in 0..self.classes {
                let c = &centres[class * self.dim..(class + 1) * self.dim];
                for _ in 0..per_class {
                    features.extend(c.iter().map(|m| m + jitter.sample(&mut rng)));
                    labels.push(class as u32);
                }
            }
            DataShard::new(self.dim, self.classes, features, labels, None)
        };
        let train = draw(self.train_per_class)?;
        let test = draw(self.test_per_class)?;
        Ok(Dataset { train, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shard_validation() {
        assert_eq!(
            DataShard::new(2, 2, vec![], vec![], None).unwrap_err(),
            LearnError::EmptyShard
        );
        assert!(matches!(
            DataShard::new(2, 2, vec![0.0; 3], vec![0], None),
            Err(LearnError::DimMismatch { .. })
        ));
        assert_eq!(
            DataShard::new(1, 2, vec![0.0], vec![2], None).unwrap_err(),
            LearnError::LabelOutOfRange { label: 2, classes: 2 }
        );
    }

    #[test]
    fn reads_are_counted_and_subset_is_free() {
        let s = DataShard::new(1, 2, vec![1.0, 2.0, 3.0], vec![0, 1, 0], None).unwrap();
        let sub = s.subset(&[2, 0], Some(DeviceId::from_index(4))).unwrap();
        assert_eq!(s.reads(), 0);
        assert_eq!(sub.example(0), (&[3.0][..], 0));
        assert_eq!(sub.reads(), 1);
        assert_eq!(sub.owner(), Some(DeviceId::from_index(4)));
    }

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let spec = BlobSpec {
            dim: 5,
            classes: 3,
            train_per_class: 10,
            test_per_class: 4,
            ..BlobSpec::default()
        };
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        assert_eq!(a.train.len(), 30);
        assert_eq!(a.test.label_counts(), vec![4, 4, 4]);
        let other = BlobSpec { seed: 1, ..spec }.generate().unwrap();
        assert_ne!(a, other);
    }
}
