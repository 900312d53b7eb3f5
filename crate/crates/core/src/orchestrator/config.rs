use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use crate::consensus::{PowParams, WaitTime, MAX_DIFFICULTY};
use crate::learning::{Arch, BlobSpec, TrainSpec};
use crate::protocol::SignatureMode;
use crate::rewards::{DEFAULT_KICK_R, DEFAULT_UNIT_REWARD};
use crate::validation::ValidationScheme;
use crate::DeviceId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Worker,
    Validator,
    Miner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Worker => "worker",
            Role::Validator => "validator",
            Role::Miner => "miner",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoleCounts {
    pub workers: usize,
    pub validators: usize,
    pub miners: usize,
}

impl RoleCounts {
    pub fn new(workers: usize, validators: usize, miners: usize) -> Self {
        RoleCounts {
            workers,
            validators,
            miners,
        }
    }

    pub fn total(&self) -> usize {
        self.workers + self.validators + self.miners
    }

    /// Shrinks to at most `available` devices, taking from workers first,
    /// then validators, then miners.
    pub fn shrink_to(self, available: usize) -> RoleCounts {
        let mut excess = self.total().saturating_sub(available);
        let mut take = |n: usize| {
            let t = n.min(excess);
            excess -= t;
            n - t
        };
        let workers = take(self.workers);
        let validators = take(self.validators);
        let miners = take(self.miners);
        RoleCounts {
            workers,
            validators,
            miners,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum RolePolicy {
    /// A fresh uniformly random assignment every round.
    #[default]
    RandomEachRound,
    /// Round `j` replays entry `(j - 1) % len`; devices absent from an entry
    /// stay idle.
    FixedSequence(Vec<BTreeMap<DeviceId, Role>>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Behaviors {
    /// Malicious workers add Gaussian noise to their trained update.
    pub worker_noise: bool,
    /// Malicious validators flip every vote.
    pub validator_flip: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub enum ConsensusKind {
    #[default]
    Pos,
    Pow(PowParams),
}

impl ConsensusKind {
    pub fn label(&self) -> &'static str {
        match self {
            ConsensusKind::Pos => "POS",
            ConsensusKind::Pow(_) => "POW",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Protocol {
    #[default]
    Vbfl,
    /// Every device trains every round and a central step averages all
    /// updates with no validation and no chain.
    VanillaFl,
}

/// Per-message delay: `link_delay + jitter * U[0, 1)` simulated seconds.
/// Transactions are delivered reliably whatever their delay; delays matter
/// for block propagation and the proof-of-work race.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NetworkModel {
    pub link_delay: f64,
    pub jitter: f64,
    pub block_wait: WaitTime,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Blobs(BlobSpec),
    /// IDX files; loaded by the caller and passed in.
    Idx {
        train_images: alloc::string::String,
        train_labels: alloc::string::String,
        test_images: alloc::string::String,
        test_labels: alloc::string::String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Softmax,
    Mlp { hidden: usize },
}

impl ModelKind {
    pub fn arch(self, inputs: usize, classes: usize) -> Arch {
        match self {
            ModelKind::Softmax => Arch::Softmax { inputs, classes },
            ModelKind::Mlp { hidden } => Arch::Mlp {
                inputs,
                hidden,
                classes,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sharding {
    #[default]
    Iid,
    /// Training pool sorted by label before splitting; strongly non-IID.
    LabelSorted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TestSplit {
    /// Every device evaluates on the full test set.
    #[default]
    Shared,
    Disjoint,
}

/// Full description of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n_devices: usize,
    pub role_counts: RoleCounts,
    pub role_policy: RolePolicy,
    pub malicious: BTreeSet<DeviceId>,
    pub behaviors: Behaviors,
    pub noise_variance: f64,
    pub vh: f64,
    /// Per-validator thresholds overriding `vh`.
    pub vh_overrides: BTreeMap<DeviceId, f64>,
    pub validation_scheme: ValidationScheme,
    pub kick_r: u32,
    pub unit_reward: u64,
    pub train: TrainSpec,
    pub protocol: Protocol,
    pub consensus: ConsensusKind,
    pub rounds: u64,
    pub master_seed: u64,
    pub network: NetworkModel,
    pub dataset: DatasetSpec,
    pub model: ModelKind,
    pub sharding: Sharding,
    pub test_split: TestSplit,
    pub signature: SignatureMode,
    /// Skip signature checks entirely, as if every signature verified.
    pub assume_verified: bool,
    /// Keep a full per-round trace for offline oracles (memory heavy).
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_devices: 20,
            role_counts: RoleCounts::new(12, 5, 3),
            role_policy: RolePolicy::RandomEachRound,
            malicious: BTreeSet::new(),
            behaviors: Behaviors::default(),
            noise_variance: 1.0,
            vh: 1.0,
            vh_overrides: BTreeMap::new(),
            validation_scheme: ValidationScheme::OneEpochProxy,
            kick_r: DEFAULT_KICK_R,
            unit_reward: DEFAULT_UNIT_REWARD,
            train: TrainSpec::default(),
            protocol: Protocol::Vbfl,
            consensus: ConsensusKind::Pos,
            rounds: 30,
            master_seed: 1,
            network: NetworkModel::default(),
            dataset: DatasetSpec::Blobs(BlobSpec::default()),
            model: ModelKind::Mlp { hidden: 32 },
            sharding: Sharding::Iid,
            test_split: TestSplit::Shared,
            signature: SignatureMode::Stub,
            assume_verified: false,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid `{key}`: {reason}")]
pub struct ConfigError {
    pub key: &'static str,
    pub reason: &'static str,
}

fn bad(key: &'static str, reason: &'static str) -> ConfigError {
    ConfigError { key, reason }
}

impl SimConfig {
    pub fn device_ids(&self) -> impl Iterator<Item = DeviceId> {
        (0..self.n_devices as u32).map(DeviceId::from_index)
    }

    /// The `k` highest-index devices. Equal-stake ties favour the smallest
    /// id, so this keeps malicious miners from winning by tie-break alone.
    pub fn highest_ids(n_devices: usize, k: usize) -> BTreeSet<DeviceId> {
        (n_devices.saturating_sub(k)..n_devices)
            .map(|i| DeviceId::from_index(i as u32))
            .collect()
    }

    pub fn threshold_for(&self, validator: DeviceId) -> f64 {
        self.vh_overrides.get(&validator).copied().unwrap_or(self.vh)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.role_counts;
        if self.n_devices == 0 || self.n_devices > u32::MAX as usize {
            return Err(bad("devices", "must be positive"));
        }
        if c.workers == 0 {
            return Err(bad("workers", "must be at least 1"));
        }
        if c.validators == 0 {
            return Err(bad("validators", "must be at least 1"));
        }
        if c.miners == 0 {
            return Err(bad("miners", "must be at least 1"));
        }
        if self.protocol == Protocol::Vbfl && c.total() != self.n_devices {
            return Err(bad(
                "devices",
                "workers + validators + miners must equal the device count",
            ));
        }
        let ids: BTreeSet<_> = self.device_ids().collect();
        if !self.malicious.is_subset(&ids) {
            return Err(bad("malicious", "names a device outside the device set"));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(bad("noise_variance", "must be finite and positive"));
        }
        if !self.vh.is_finite() || self.vh_overrides.values().any(|v| !v.is_finite()) {
            return Err(bad("vh", "must be finite"));
        }
        if !self.vh_overrides.keys().all(|d| ids.contains(d)) {
            return Err(bad("vh", "override names a device outside the device set"));
        }
        if self.kick_r == 0 {
            return Err(bad("kick_r", "must be at least 1"));
        }
        if self.unit_reward == 0 {
            return Err(bad("unit_reward", "must be at least 1"));
        }
        self.train.validate().map_err(|_| {
            bad(
                "train",
                "epochs and batch size must be at least 1 and the learning rate positive",
            )
        })?;
        if let ConsensusKind::Pow(p) = &self.consensus {
            if p.difficulty > MAX_DIFFICULTY {
                return Err(bad("pow_difficulty", "at most 64 nibbles"));
            }
            let rate_ok = |r: &f64| r.is_finite() && *r > 0.0;
            if !rate_ok(&p.default_hash_rate) || !p.hash_rate.values().all(rate_ok) {
                return Err(bad("hash_rate", "must be finite and positive"));
            }
        }
        let n = &self.network;
        if !(n.link_delay.is_finite() && n.link_delay >= 0.0 && n.jitter.is_finite() && n.jitter >= 0.0) {
            return Err(bad("network", "delays must be finite and non-negative"));
        }
        if let WaitTime::Finite(w) = n.block_wait {
            if !(w.is_finite() && w >= 0.0) {
                return Err(bad("block_wait", "must be finite and non-negative"));
            }
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return Err(bad("hidden", "must be at least 1"));
        }
        if let RolePolicy::FixedSequence(seq) = &self.role_policy {
            if seq.is_empty() {
                return Err(bad("role_sequence", "must contain at least one round"));
            }
            if !seq.iter().all(|r| r.keys().all(|d| ids.contains(d))) {
                return Err(bad("role_sequence", "names a device outside the device set"));
            }
        }
        Ok(())
    }
}
