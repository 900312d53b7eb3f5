use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use super::config::{Role, RoleCounts};
use crate::consensus::ConsensusError;
use crate::protocol::{Block, ChainError, ValidatorTransaction, WorkerTransaction};
use crate::rewards::{Earnings, LedgerEvent, StakeLedger};
use crate::validation::VadRecord;
use crate::DeviceId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipReason {
    NoValidators,
    NoMiners,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::NoValidators => "no eligible validators",
            SkipReason::NoMiners => "no eligible miners",
        }
    }
}

/// A device-level problem that did not abort the round.
#[derive(Clone, Debug, PartialEq)]
pub enum DeviceFailure {
    /// The device could not select a block (all candidates blacklisted).
    Select(DeviceId, ConsensusError),
    /// The device rejected the block it was handed.
    Append(DeviceId, ChainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeviceStake {
    pub device: DeviceId,
    pub earnings: Earnings,
    pub malicious: bool,
    pub blacklisted: bool,
}

impl DeviceStake {
    pub fn stake(&self) -> u64 {
        self.earnings.total()
    }
}

/// Observable outputs of one round.
///
/// Stakes and events are read from one reporting device: the lowest-id
/// device nobody has blacklisted. In the benign network every replica
/// agrees, so the choice is immaterial.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    /// `POS`, `POW` or `NONE` for the vanilla baseline.
    pub consensus: &'static str,
    pub skipped: Option<SkipReason>,
    pub winner: Option<DeviceId>,
    pub winner_malicious: bool,
    /// Miners selected different blocks.
    pub forked: bool,
    /// Mean test accuracy of the global model held by each non-blacklisted
    /// device.
    pub global_accuracy: f64,
    pub roles: BTreeMap<DeviceId, Role>,
    pub shrunk_roles: Option<RoleCounts>,
    pub stakes: Vec<DeviceStake>,
    pub vad: Vec<VadRecord>,
    pub events: Vec<(DeviceId, LedgerEvent)>,
    pub failures: Vec<DeviceFailure>,
    pub trace: Option<RoundTrace>,
}

/// Everything needed to recompute a round's aggregation and rewards from
/// raw transactions.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrace {
    pub workers: BTreeSet<DeviceId>,
    pub worker_txs: Vec<Arc<WorkerTransaction>>,
    /// Validator transactions each miner accepted, in arrival order.
    pub received_vtx: BTreeMap<DeviceId, Vec<ValidatorTransaction>>,
    pub candidates: BTreeMap<DeviceId, Arc<Block>>,
    /// The block each device appended.
    pub appended: BTreeMap<DeviceId, Arc<Block>>,
    pub reporter: DeviceId,
    pub ledger_before: StakeLedger,
    pub ledger_after: StakeLedger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvariantKind {
    StakeDecreased,
    /// Credited stake differs from the rewards the block records.
    StakeNotConserved,
    /// A device blacklisted before the block mined it, voted in it or was
    /// paid by it.
    BlacklistedParticipant,
    /// Full hash-link verification failed at the given block index.
    BrokenChain(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("invariant violated in round {round} on device {device}: {kind:?}")]
pub struct InvariantViolation {
    pub round: u64,
    pub device: DeviceId,
    pub kind: InvariantKind,
}
