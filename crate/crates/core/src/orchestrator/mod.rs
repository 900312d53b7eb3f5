//! Round driver: role assignment, association, the per-round pipeline from
//! local training to block processing, and the vanilla FL baseline.

mod config;
mod metrics;
mod round;
mod setup;

pub use config::{
    Behaviors, ConfigError, ConsensusKind, DatasetSpec, ModelKind, NetworkModel, Protocol, Role, RoleCounts,
    RolePolicy, Sharding, SimConfig, TestSplit,
};
pub use metrics::{
    DeviceFailure, DeviceStake, InvariantKind, InvariantViolation, RoundMetrics, RoundTrace, SkipReason,
};
pub use setup::{assign_roles, associate, shard_dataset, Association, RoleAssignment, ShardError};

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::RngCore;
use thiserror::Error;

use crate::consensus::ConsensusError;
use crate::learning::{init_global_model, Arch, DataShard, Dataset, LearnError, ModelParams};
use crate::protocol::{model_hash, Block, Blockchain, SignError, Signer};
use crate::rewards::StakeLedger;
use crate::rng::{self, SeedTree, SimRng};
use crate::validation::ValidationError;
use crate::DeviceId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset must be loaded by the caller for this task")]
    DatasetNotProvided,
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error("device {device}: {source}")]
    Learn { device: DeviceId, source: LearnError },
    #[error(transparent)]
    Sign(#[from] SignError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
}

impl SimError {
    fn learn(device: DeviceId) -> impl FnOnce(LearnError) -> SimError {
        move |source| SimError::Learn { device, source }
    }

    fn validation(device: DeviceId) -> impl FnOnce(ValidationError) -> SimError {
        move |e| match e {
            ValidationError::Learn(source) => SimError::Learn { device, source },
            ValidationError::NotPretrained => unreachable!("validators pretrain before voting"),
        }
    }
}

/// One simulated device and everything it keeps between rounds.
#[derive(Debug)]
pub struct Device {
    pub id: DeviceId,
    pub malicious: bool,
    pub train: DataShard,
    pub test: Arc<DataShard>,
    pub chain: Blockchain,
    pub ledger: StakeLedger,
    pub global: Arc<ModelParams>,
    batches: SimRng,
    noise: SimRng,
}

/// A running experiment.
pub struct Simulation {
    config: SimConfig,
    arch: Arch,
    signer: Signer,
    devices: Vec<Device>,
    round: u64,
    roles_rng: SimRng,
    assoc_rng: SimRng,
    net_rng: SimRng,
    pow_rng: SimRng,
}

impl Simulation {
    /// Generates the built-in synthetic task, then sets up the run.
    pub fn from_config(config: SimConfig) -> Result<Self, SimError> {
        let data = match &config.dataset {
            DatasetSpec::Blobs(spec) => spec.generate().map_err(|source| SimError::Learn {
                device: DeviceId::GENESIS,
                source,
            })?,
            DatasetSpec::Idx { .. } => return Err(SimError::DatasetNotProvided),
        };
        Simulation::new(config, &data)
    }

    pub fn new(config: SimConfig, data: &Dataset) -> Result<Self, SimError> {
        config.validate()?;
        let seeds = SeedTree::new(config.master_seed);
        let arch = config.model.arch(data.train.dim(), data.train.classes());
        let ids: Vec<DeviceId> = config.device_ids().collect();
        let shards = shard_dataset(
            data,
            &ids,
            config.sharding,
            config.test_split,
            &mut seeds.stream(rng::SHARD),
        )?;
        let g0 =
            init_global_model(arch, seeds.stream(rng::INIT).next_u64()).map_err(SimError::learn(DeviceId::GENESIS))?;
        let genesis = Arc::new(Block::genesis(model_hash(&g0)));
        let g0 = Arc::new(g0);

        let mut signer = Signer::new(config.signature, config.assume_verified);
        for id in &ids {
            signer.register_derived(*id, config.master_seed);
        }

        let mut devices = Vec::with_capacity(ids.len());
        for (id, (train, test)) in ids.iter().copied().zip(shards) {
            let mut chain = Blockchain::new();
            chain
                .append(genesis.clone(), &signer, &Default::default())
                .expect("genesis always extends an empty chain");
            devices.push(Device {
                id,
                malicious: config.malicious.contains(&id),
                train,
                test,
                chain,
                ledger: StakeLedger::new(config.unit_reward, config.kick_r),
                global: g0.clone(),
                batches: seeds.device_stream(rng::BATCHES, id),
                noise: seeds.device_stream(rng::NOISE, id),
            });
        }

        Ok(Simulation {
            arch,
            signer,
            devices,
            round: 0,
            roles_rng: seeds.stream(rng::ROLES),
            assoc_rng: seeds.stream(rng::ASSOC),
            net_rng: seeds.stream(rng::NET),
            pow_rng: seeds.stream(rng::POW),
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn signer(&self) -> &Signer {
        &self.signer
    }

    /// Rounds completed so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device(&self, id: DeviceId) -> Option<&Device> {
        self.devices.get(self.index_of(id)?)
    }

    fn index_of(&self, id: DeviceId) -> Option<usize> {
        self.devices.binary_search_by_key(&id, |d| d.id).ok()
    }

    /// Runs the next round.
    pub fn run_round(&mut self) -> Result<RoundMetrics, SimError> {
        self.round += 1;
        match self.config.protocol {
            config::Protocol::Vbfl => self.vbfl_round(),
            config::Protocol::VanillaFl => self.vanilla_round(),
        }
    }

    /// Runs all configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>, SimError> {
        let mut out = Vec::new();
        while self.round < self.config.rounds {
            out.push(self.run_round()?);
        }
        Ok(out)
    }

    /// Re-verifies every device's chain from genesis.
    pub fn verify_chains(&self) -> Result<(), InvariantViolation> {
        for d in &self.devices {
            d.chain.verify(&self.signer).map_err(|(i, _)| InvariantViolation {
                round: self.round,
                device: d.id,
                kind: InvariantKind::BrokenChain(i),
            })?;
        }
        Ok(())
    }
}

/// Runs a configured experiment to completion and re-verifies every chain.
pub fn run_simulation(config: SimConfig, data: &Dataset) -> Result<(Simulation, Vec<RoundMetrics>), SimError> {
    let mut sim = Simulation::new(config, data)?;
    let metrics = sim.run()?;
    sim.verify_chains()?;
    Ok((sim, metrics))
}

/// The same experiment as plain federated learning: no roles, no votes, no
/// chain.
pub fn run_vanilla_fl(mut config: SimConfig, data: &Dataset) -> Result<Vec<RoundMetrics>, SimError> {
    config.protocol = Protocol::VanillaFl;
    Simulation::new(config, data)?.run()
}
