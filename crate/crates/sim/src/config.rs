//! TOML experiment files. Every key is optional and overrides the base
//! configuration (a preset, or the library defaults); unknown keys are
//! rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vbfl_core::consensus::{PowParams, WaitTime};
use vbfl_core::learning::{BlobSpec, TrainSpec};
use vbfl_core::orchestrator::{
    ConfigError, ConsensusKind, DatasetSpec, ModelKind, Protocol, Role, RolePolicy, Sharding, SimConfig, TestSplit,
};
use vbfl_core::protocol::SignatureMode;
use vbfl_core::validation::ValidationScheme;
use vbfl_core::DeviceId;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigFileError {
    ConfigFileError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolName {
    Vbfl,
    Vanilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ConsensusName {
    Pos,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    OneEpoch,
    Legacy,
}

impl From<SchemeName> for ValidationScheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::OneEpoch => ValidationScheme::OneEpochProxy,
            SchemeName::Legacy => ValidationScheme::Legacy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    WorkerNoise,
    ValidatorFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignatureName {
    Stub,
    KeyedHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShardingName {
    Iid,
    LabelSorted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestSplitName {
    Shared,
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<u32>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSection {
    Softmax,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSection {
    Blobs {
        dim: Option<usize>,
        classes: Option<usize>,
        train_per_class: Option<usize>,
        test_per_class: Option<usize>,
        separation: Option<f64>,
        spread: Option<f64>,
        seed: Option<u64>,
    },
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockWait {
    Named(String),
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub link_delay: Option<f64>,
    pub jitter: Option<f64>,
    /// `"unlimited"` or a number of simulated seconds.
    pub block_wait: Option<BlockWait>,
}

/// One experiment, as written in a config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Preset to start from; later keys override it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub protocol: Option<ProtocolName>,
    pub devices: Option<usize>,
    pub workers: Option<usize>,
    pub validators: Option<usize>,
    pub miners: Option<usize>,
    /// Number of malicious devices, taken from the highest indices.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub malicious: Option<usize>,
    /// Explicit malicious device indices; overrides `malicious`.
    pub malicious_ids: Option<Vec<u32>>,
    pub behaviors: Option<Vec<Behavior>>,
    pub noise_variance: Option<f64>,
    pub vh: Option<f64>,
    /// Per-validator thresholds, keyed by device index.
    pub vh_overrides: Option<BTreeMap<String, f64>>,
    pub validation_scheme: Option<SchemeName>,
    pub kick_r: Option<u32>,
    pub unit_reward: Option<u64>,
    pub rounds: Option<u64>,
    pub seed: Option<u64>,
    pub consensus: Option<ConsensusName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pow_difficulty: Option<u32>,
    /// Attempts per simulated second, keyed by device index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hash_rates: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub literal_nonce: Option<bool>,
    pub signature: Option<SignatureName>,
    pub assume_verified: Option<bool>,
    pub sharding: Option<ShardingName>,
    pub test_split: Option<TestSplitName>,
    /// One string per round, one letter per device: `W`, `V`, `M`, or `-`
    /// for idle. Replayed cyclically. Absent means random roles each round.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role_sequence: Option<Vec<String>>,
    pub train: Option<TrainSection>,
    pub model: Option<ModelSection>,
    pub task: Option<TaskSection>,
    pub network: Option<NetworkSection>,
}

fn index_map(key: &'static str, m: &BTreeMap<String, f64>) -> Result<BTreeMap<DeviceId, f64>, ConfigFileError> {
    m.iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|i| (DeviceId::from_index(i), *v))
                .map_err(|_| invalid(key, format!("key {k:?} is not a device index")))
        })
        .collect()
}

fn index_of(d: DeviceId) -> u32 {
    d.index() as u32
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("every config value has a TOML form")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Applies every key that is set onto `base`, then validates.
    pub fn apply(&self, mut c: SimConfig) -> Result<SimConfig, ConfigFileError> {
        if let Some(p) = self.protocol {
            c.protocol = match p {
                ProtocolName::Vbfl => Protocol::Vbfl,
                ProtocolName::Vanilla => Protocol::VanillaFl,
            };
        }
        if let Some(n) = self.devices {
            c.n_devices = n;
        }
        if let Some(n) = self.workers {
            c.role_counts.workers = n;
        }
        if let Some(n) = self.validators {
            c.role_counts.validators = n;
        }
        if let Some(n) = self.miners {
            c.role_counts.miners = n;
        }
        if let Some(k) = self.malicious {
            if k > c.n_devices {
                return Err(invalid("malicious", "more malicious devices than devices"));
            }
            c.malicious = SimConfig::highest_ids(c.n_devices, k);
        }
        if let Some(ids) = &self.malicious_ids {
            c.malicious = ids.iter().map(|i| DeviceId::from_index(*i)).collect();
        }
        if let Some(bs) = &self.behaviors {
            c.behaviors.worker_noise = bs.contains(&Behavior::WorkerNoise);
            c.behaviors.validator_flip = bs.contains(&Behavior::ValidatorFlip);
        }
        if let Some(v) = self.noise_variance {
            c.noise_variance = v;
        }
        if let Some(v) = self.vh {
            c.vh = v;
        }
        if let Some(m) = &self.vh_overrides {
            c.vh_overrides = index_map("vh_overrides", m)?;
        }
        if let Some(s) = self.validation_scheme {
            c.validation_scheme = s.into();
        }
        if let Some(k) = self.kick_r {
            c.kick_r = k;
        }
        if let Some(u) = self.unit_reward {
            c.unit_reward = u;
        }
        if let Some(r) = self.rounds {
            c.rounds = r;
        }
        if let Some(s) = self.seed {
            c.master_seed = s;
        }
        let pow_keys = self.pow_difficulty.is_some() || self.hash_rates.is_some() || self.literal_nonce.is_some();
        match self.consensus {
            Some(ConsensusName::Pos) => c.consensus = ConsensusKind::Pos,
            Some(ConsensusName::Pow) if !matches!(c.consensus, ConsensusKind::Pow(_)) => {
                c.consensus = ConsensusKind::Pow(PowParams::new(1));
            }
            _ => {}
        }
        match &mut c.consensus {
            ConsensusKind::Pow(p) => {
                if let Some(d) = self.pow_difficulty {
                    p.difficulty = d;
                }
                if let Some(m) = &self.hash_rates {
                    p.hash_rate = index_map("hash_rates", m)?;
                }
                if let Some(l) = self.literal_nonce {
                    p.literal_nonce = l;
                }
            }
            ConsensusKind::Pos if pow_keys => {
                return Err(invalid(
                    "pow_difficulty",
                    "proof-of-work keys need `consensus = \"pow\"`",
                ));
            }
            ConsensusKind::Pos => {}
        }
        if let Some(s) = self.signature {
            c.signature = match s {
                SignatureName::Stub => SignatureMode::Stub,
                SignatureName::KeyedHash => SignatureMode::KeyedHash,
            };
        }
        if let Some(a) = self.assume_verified {
            c.assume_verified = a;
        }
        if let Some(s) = self.sharding {
            c.sharding = match s {
                ShardingName::Iid => Sharding::Iid,
                ShardingName::LabelSorted => Sharding::LabelSorted,
            };
        }
        if let Some(t) = self.test_split {
            c.test_split = match t {
                TestSplitName::Shared => TestSplit::Shared,
                TestSplitName::Disjoint => TestSplit::Disjoint,
            };
        }
        if let Some(seq) = &self.role_sequence {
            c.role_policy = RolePolicy::FixedSequence(parse_role_sequence(seq, c.n_devices)?);
        }
        if let Some(t) = &self.train {
            let base = c.train;
            c.train = TrainSpec::new(
                t.epochs.unwrap_or(base.epochs),
                t.learning_rate.unwrap_or(base.learning_rate),
                t.batch_size.unwrap_or(base.batch_size),
            );
        }
        if let Some(m) = &self.model {
            c.model = match m {
                ModelSection::Softmax => ModelKind::Softmax,
                ModelSection::Mlp { hidden } => ModelKind::Mlp { hidden: *hidden },
            };
        }
        if let Some(t) = &self.task {
            c.dataset = match t {
                TaskSection::Blobs {
                    dim,
                    classes,
                    train_per_class,
                    test_per_class,
                    separation,
                    spread,
                    seed,
                } => {
                    let b = match &c.dataset {
                        DatasetSpec::Blobs(b) => *b,
                        DatasetSpec::Idx { .. } => BlobSpec::default(),
                    };
                    DatasetSpec::Blobs(BlobSpec {
                        dim: dim.unwrap_or(b.dim),
                        classes: classes.unwrap_or(b.classes),
                        train_per_class: train_per_class.unwrap_or(b.train_per_class),
                        test_per_class: test_per_class.unwrap_or(b.test_per_class),
                        separation: separation.unwrap_or(b.separation),
                        spread: spread.unwrap_or(b.spread),
                        seed: seed.unwrap_or(b.seed),
                    })
                }
                TaskSection::Idx {
                    train_images,
                    train_labels,
                    test_images,
                    test_labels,
                } => DatasetSpec::Idx {
                    train_images: train_images.clone(),
                    train_labels: train_labels.clone(),
                    test_images: test_images.clone(),
                    test_labels: test_labels.clone(),
                },
            };
        }
        if let Some(n) = &self.network {
            if let Some(d) = n.link_delay {
                c.network.link_delay = d;
            }
            if let Some(j) = n.jitter {
                c.network.jitter = j;
            }
            match &n.block_wait {
                None => {}
                Some(BlockWait::Named(s)) if s == "unlimited" => c.network.block_wait = WaitTime::Unlimited,
                Some(BlockWait::Named(s)) => {
                    return Err(invalid(
                        "block_wait",
                        format!("expected \"unlimited\" or seconds, got {s:?}"),
                    ))
                }
                Some(BlockWait::Seconds(s)) => c.network.block_wait = WaitTime::Finite(*s),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// The complete file form of `c`: applying it to any base reproduces `c`.
    pub fn from_sim(c: &SimConfig) -> Self {
        let indexed = |m: &BTreeMap<DeviceId, f64>| -> BTreeMap<String, f64> {
            m.iter().map(|(d, v)| (index_of(*d).to_string(), *v)).collect()
        };
        let mut behaviors = Vec::new();
        if c.behaviors.worker_noise {
            behaviors.push(Behavior::WorkerNoise);
        }
        if c.behaviors.validator_flip {
            behaviors.push(Behavior::ValidatorFlip);
        }
        let (consensus, pow) = match &c.consensus {
            ConsensusKind::Pos => (ConsensusName::Pos, None),
            ConsensusKind::Pow(p) => (ConsensusName::Pow, Some(p)),
        };
        FileConfig {
            preset: None,
            protocol: Some(match c.protocol {
                Protocol::Vbfl => ProtocolName::Vbfl,
                Protocol::VanillaFl => ProtocolName::Vanilla,
            }),
            devices: Some(c.n_devices),
            workers: Some(c.role_counts.workers),
            validators: Some(c.role_counts.validators),
            miners: Some(c.role_counts.miners),
            malicious: None,
            malicious_ids: Some(c.malicious.iter().map(|d| index_of(*d)).collect()),
            behaviors: Some(behaviors),
            noise_variance: Some(c.noise_variance),
            vh: Some(c.vh),
            vh_overrides: Some(indexed(&c.vh_overrides)),
            validation_scheme: Some(match c.validation_scheme {
                ValidationScheme::OneEpochProxy => SchemeName::OneEpoch,
                ValidationScheme::Legacy => SchemeName::Legacy,
            }),
            kick_r: Some(c.kick_r),
            unit_reward: Some(c.unit_reward),
            rounds: Some(c.rounds),
            seed: Some(c.master_seed),
            consensus: Some(consensus),
            pow_difficulty: pow.map(|p| p.difficulty),
            hash_rates: pow.map(|p| indexed(&p.hash_rate)),
            literal_nonce: pow.map(|p| p.literal_nonce),
            signature: Some(match c.signature {
                SignatureMode::Stub => SignatureName::Stub,
                SignatureMode::KeyedHash => SignatureName::KeyedHash,
            }),
            assume_verified: Some(c.assume_verified),
            sharding: Some(match c.sharding {
                Sharding::Iid => ShardingName::Iid,
                Sharding::LabelSorted => ShardingName::LabelSorted,
            }),
            test_split: Some(match c.test_split {
                TestSplit::Shared => TestSplitName::Shared,
                TestSplit::Disjoint => TestSplitName::Disjoint,
            }),
            role_sequence: match &c.role_policy {
                RolePolicy::RandomEachRound => None,
                RolePolicy::FixedSequence(seq) => Some(format_role_sequence(seq, c.n_devices)),
            },
            train: Some(TrainSection {
                epochs: Some(c.train.epochs),
                learning_rate: Some(c.train.learning_rate),
                batch_size: Some(c.train.batch_size),
            }),
            model: Some(match c.model {
                ModelKind::Softmax => ModelSection::Softmax,
                ModelKind::Mlp { hidden } => ModelSection::Mlp { hidden },
            }),
            task: Some(match &c.dataset {
                DatasetSpec::Blobs(b) => TaskSection::Blobs {
                    dim: Some(b.dim),
                    classes: Some(b.classes),
                    train_per_class: Some(b.train_per_class),
                    test_per_class: Some(b.test_per_class),
                    separation: Some(b.separation),
                    spread: Some(b.spread),
                    seed: Some(b.seed),
                },
                DatasetSpec::Idx {
                    train_images,
                    train_labels,
                    test_images,
                    test_labels,
                } => TaskSection::Idx {
                    train_images: train_images.clone(),
                    train_labels: train_labels.clone(),
                    test_images: test_images.clone(),
                    test_labels: test_labels.clone(),
                },
            }),
            network: Some(NetworkSection {
                link_delay: Some(c.network.link_delay),
                jitter: Some(c.network.jitter),
                block_wait: Some(match c.network.block_wait {
                    WaitTime::Unlimited => BlockWait::Named("unlimited".into()),
                    WaitTime::Finite(s) => BlockWait::Seconds(s),
                }),
            }),
        }
    }
}

pub fn parse_role_sequence(seq: &[String], n: usize) -> Result<Vec<BTreeMap<DeviceId, Role>>, ConfigFileError> {
    seq.iter()
        .map(|line| {
            if line.chars().count() != n {
                return Err(invalid(
                    "role_sequence",
                    format!("{line:?} must have one letter per device ({n})"),
                ));
            }
            line.chars()
                .enumerate()
                .filter(|(_, ch)| *ch != '-')
                .map(|(i, ch)| {
                    let role = match ch.to_ascii_uppercase() {
                        'W' => Role::Worker,
                        'V' => Role::Validator,
                        'M' => Role::Miner,
                        other => return Err(invalid("role_sequence", format!("unknown role letter {other:?}"))),
                    };
                    Ok((DeviceId::from_index(i as u32), role))
                })
                .collect()
        })
        .collect()
}

pub fn format_role_sequence(seq: &[BTreeMap<DeviceId, Role>], n: usize) -> Vec<String> {
    seq.iter()
        .map(|round| {
            (0..n as u32)
                .map(|i| match round.get(&DeviceId::from_index(i)) {
                    Some(Role::Worker) => 'W',
                    Some(Role::Validator) => 'V',
                    Some(Role::Miner) => 'M',
                    None => '-',
                })
                .collect()
        })
        .collect()
}

/// Device indices of a set, for display.
pub fn indices(ids: &BTreeSet<DeviceId>) -> Vec<u32> {
    ids.iter().map(|d| index_of(*d)).collect()
}
