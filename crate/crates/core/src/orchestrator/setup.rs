use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use thiserror::Error;

use super::config::{Role, RoleCounts, RolePolicy, Sharding, TestSplit};
use crate::learning::{DataShard, Dataset, LearnError};
use crate::DeviceId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShardError {
    #[error("{available} examples cannot cover {devices} devices")]
    TooFewExamples { available: usize, devices: usize },
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// Chunk sizes for `n` items over `parts`, with the remainder handed out one
/// each to the lowest parts.
fn chunk_sizes(n: usize, parts: usize) -> impl Iterator<Item = usize> {
    let (base, rem) = (n / parts, n % parts);
    (0..parts).map(move |i| base + usize::from(i < rem))
}

fn split(pool: &DataShard, devices: &[DeviceId], order: &[usize]) -> Result<Vec<DataShard>, ShardError> {
    let mut out = Vec::with_capacity(devices.len());
    let mut start = 0;
    for (d, size) in devices.iter().zip(chunk_sizes(order.len(), devices.len())) {
        out.push(pool.subset(&order[start..start + size], Some(*d))?);
        start += size;
    }
    Ok(out)
}

/// Splits the training pool into disjoint per-device shards and hands each
/// device its test set.
pub fn shard_dataset<R: RngCore + ?Sized>(
    data: &Dataset,
    devices: &[DeviceId],
    sharding: Sharding,
    test_split: TestSplit,
    rng: &mut R,
) -> Result<Vec<(DataShard, Arc<DataShard>)>, ShardError> {
    let n = devices.len();
    if data.train.len() < n {
        return Err(ShardError::TooFewExamples {
            available: data.train.len(),
            devices: n,
        });
    }
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    order.shuffle(rng);
    if sharding == Sharding::LabelSorted {
        let labels = data.train.labels();
        order.sort_by_key(|&i| labels[i]);
    }
    let train = split(&data.train, devices, &order)?;

    let tests: Vec<Arc<DataShard>> = match test_split {
        TestSplit::Shared => {
            let all = Arc::new(data.test.clone());
            (0..n).map(|_| all.clone()).collect()
        }
        TestSplit::Disjoint => {
            if data.test.len() < n {
                return Err(ShardError::TooFewExamples {
                    available: data.test.len(),
                    devices: n,
                });
            }
            let mut order: Vec<usize> = (0..data.test.len()).collect();
            order.shuffle(rng);
            split(&data.test, devices, &order)?.into_iter().map(Arc::new).collect()
        }
    };
    Ok(train.into_iter().zip(tests).collect())
}

/// Result of a role draw.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleAssignment {
    pub roles: BTreeMap<DeviceId, Role>,
    /// Set when too few devices were eligible and counts had to shrink.
    pub shrunk: Option<RoleCounts>,
}

impl RoleAssignment {
    pub fn with_role(&self, role: Role) -> Vec<DeviceId> {
        self.roles
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(d, _)| *d)
            .collect()
    }
}

/// Assigns roles among `eligible` devices (ascending id order).
pub fn assign_roles<R: RngCore + ?Sized>(
    round: u64,
    counts: RoleCounts,
    policy: &RolePolicy,
    eligible: &[DeviceId],
    rng: &mut R,
) -> RoleAssignment {
    match policy {
        RolePolicy::RandomEachRound => {
            let want = counts.shrink_to(eligible.len());
            let mut pool = eligible.to_vec();
            pool.shuffle(rng);
            let mut roles = BTreeMap::new();
            let mut it = pool.into_iter();
            for (role, k) in [
                (Role::Worker, want.workers),
                (Role::Validator, want.validators),
                (Role::Miner, want.miners),
            ] {
                for d in it.by_ref().take(k) {
                    roles.insert(d, role);
                }
            }
            RoleAssignment {
                roles,
                shrunk: (want != counts).then_some(want),
            }
        }
        RolePolicy::FixedSequence(seq) => {
            let entry = &seq[((round.max(1) - 1) % seq.len() as u64) as usize];
            let roles: BTreeMap<_, _> = entry
                .iter()
                .filter(|(d, _)| eligible.binary_search(d).is_ok())
                .map(|(d, r)| (*d, *r))
                .collect();
            let shrunk = (roles.len() < entry.len()).then(|| {
                let count = |role| roles.values().filter(|r| **r == role).count();
                RoleCounts::new(count(Role::Worker), count(Role::Validator), count(Role::Miner))
            });
            RoleAssignment { roles, shrunk }
        }
    }
}

/// Who sends to whom this round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Association {
    pub worker_to_validator: BTreeMap<DeviceId, DeviceId>,
    pub validator_to_miner: BTreeMap<DeviceId, DeviceId>,
}

/// Maps each worker to a uniformly drawn validator and each validator to a
/// uniformly drawn miner. `None` when there are no validators or no miners.
pub fn associate<R: RngCore + ?Sized>(
    workers: &[DeviceId],
    validators: &[DeviceId],
    miners: &[DeviceId],
    rng: &mut R,
) -> Option<Association> {
    if validators.is_empty() || miners.is_empty() {
        return None;
    }
    let worker_to_validator = workers
        .iter()
        .map(|w| (*w, validators[rng.random_range(0..validators.len())]))
        .collect();
    let validator_to_miner = validators
        .iter()
        .map(|v| (*v, miners[rng.random_range(0..miners.len())]))
        .collect();
    Some(Association {
        worker_to_validator,
        validator_to_miner,
    })
}
