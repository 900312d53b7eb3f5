//! Vote aggregation, candidate blocks, stake-based block selection and the
//! proof-of-work race used as a baseline.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::RngCore;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::protocol::{Block, Hash, SignError, Signer, ValidatorTransaction, Vote, VoteTally};
use crate::rewards::{miner_reward, validator_reward, StakeLedger};
use crate::DeviceId;

/// Hash output length in hex nibbles; the largest meaningful difficulty.
pub const MAX_DIFFICULTY: u32 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsensusError {
    #[error("no blocks to select from")]
    NoBlocks,
    #[error("every received block was mined by a blacklisted device")]
    AllBlacklisted,
    #[error("no miners in the race")]
    NoMiners,
    #[error("difficulty {0} exceeds {MAX_DIFFICULTY} nibbles")]
    DifficultyTooHigh(u32),
    #[error("hash rate of {0} must be finite and positive")]
    InvalidHashRate(DeviceId),
    #[error(transparent)]
    Sign(#[from] SignError),
}

/// Votes grouped per worker, plus the bookkeeping the miner is paid for.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Aggregation {
    /// One tally per worker, in ascending worker id order.
    pub tallies: Vec<VoteTally>,
    /// Accepted (verified, non-duplicate) votes per validator.
    pub votes_per_validator: BTreeMap<DeviceId, u64>,
    /// Transactions dropped as duplicates of an earlier (validator, worker)
    /// vote, or wrapping a different transaction than the worker's first.
    pub rejected: usize,
}

impl Aggregation {
    pub fn accepted(&self) -> u64 {
        self.votes_per_validator.values().sum()
    }
}

/// Groups verified validator transactions by worker. The first vote of each
/// (validator, worker) pair counts; later ones are rejected.
pub fn aggregate_votes<'a, I>(vtxs: I) -> Aggregation
where
    I: IntoIterator<Item = &'a ValidatorTransaction>,
{
    let mut by_worker: BTreeMap<DeviceId, VoteTally> = BTreeMap::new();
    let mut out = Aggregation::default();
    for vtx in vtxs {
        let tally = by_worker.entry(vtx.worker()).or_insert_with(|| VoteTally {
            worker_tx: vtx.inner.clone(),
            positives: 0,
            negatives: 0,
            voters: BTreeSet::new(),
        });
        let same_tx = Arc::ptr_eq(&tally.worker_tx, &vtx.inner) || *tally.worker_tx == *vtx.inner;
        if !same_tx || !tally.voters.insert(vtx.validator) {
            out.rejected += 1;
            continue;
        }
        match vtx.vote {
            Vote::Positive => tally.positives += 1,
            Vote::Negative => tally.negatives += 1,
        }
        *out.votes_per_validator.entry(vtx.validator).or_default() += 1;
    }
    out.tallies = by_worker.into_values().collect();
    out
}

/// Builds and seals a miner's candidate block. Each accepted vote is paid to
/// its validator as one verification plus one vote; the miner is paid per
/// accepted validator transaction.
pub fn build_candidate(
    miner: DeviceId,
    round: u64,
    prev_hash: Hash,
    base_model_hash: Hash,
    aggregation: &Aggregation,
    unit: u64,
    signer: &Signer,
) -> Result<Block, SignError> {
    let validator_rewards = aggregation
        .votes_per_validator
        .iter()
        .map(|(v, n)| {
            (
                *v,
                validator_reward(*n, *n, unit).expect("votes never exceed verifications"),
            )
        })
        .collect();
    Block::unsealed(
        round,
        miner,
        prev_hash,
        base_model_hash,
        aggregation.tallies.clone(),
        miner_reward(aggregation.accepted(), unit),
        validator_rewards,
    )
    .seal(signer)
}

/// Picks the block whose miner holds the most stake in `ledger`; ties go to
/// the smallest miner id. Blocks from miners `ledger` has blacklisted are
/// never chosen.
pub fn pos_select<'a>(blocks: &'a [Arc<Block>], ledger: &StakeLedger) -> Result<&'a Arc<Block>, ConsensusError> {
    if blocks.is_empty() {
        return Err(ConsensusError::NoBlocks);
    }
    blocks
        .iter()
        .filter(|b| !ledger.is_blacklisted(b.miner))
        .max_by_key(|b| (ledger.stake(b.miner), Reverse(b.miner)))
        .ok_or(ConsensusError::AllBlacklisted)
}

/// Proof-of-work race parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PowParams {
    /// Required leading zero hex nibbles of the block hash.
    pub difficulty: u32,
    /// Hash attempts per simulated second, per miner.
    pub hash_rate: BTreeMap<DeviceId, f64>,
    /// Rate of miners missing from `hash_rate`.
    pub default_hash_rate: f64,
    /// Grind a real nonce for the winning block instead of leaving it zero.
    pub literal_nonce: bool,
}

impl PowParams {
    pub fn new(difficulty: u32) -> Self {
        PowParams {
            difficulty,
            hash_rate: BTreeMap::new(),
            default_hash_rate: 1.0,
            literal_nonce: false,
        }
    }

    pub fn rate_of(&self, miner: DeviceId) -> f64 {
        self.hash_rate.get(&miner).copied().unwrap_or(self.default_hash_rate)
    }

    /// Expected attempts per solution: `16^difficulty`.
    pub fn expected_attempts(&self) -> f64 {
        libm::pow(16.0, f64::from(self.difficulty))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowOutcome {
    pub winner: DeviceId,
    pub mining_times: BTreeMap<DeviceId, f64>,
}

/// Draws each miner's time to a solution as an exponential variate with
/// rate `hash_rate / 16^difficulty`, in ascending miner order. The earliest
/// time wins; ties go to the smallest id. Difficulty 0 needs no work: every
/// time is zero.
pub fn pow_race<R: RngCore + ?Sized>(
    params: &PowParams,
    miners: &BTreeSet<DeviceId>,
    rng: &mut R,
) -> Result<PowOutcome, ConsensusError> {
    if miners.is_empty() {
        return Err(ConsensusError::NoMiners);
    }
    if params.difficulty > MAX_DIFFICULTY {
        return Err(ConsensusError::DifficultyTooHigh(params.difficulty));
    }
    let attempts = params.expected_attempts();
    let mut times = BTreeMap::new();
    for &m in miners {
        let rate = params.rate_of(m);
        if !(rate.is_finite() && rate > 0.0) {
            return Err(ConsensusError::InvalidHashRate(m));
        }
        let t = if params.difficulty == 0 {
            0.0
        } else {
            Exp::new(rate / attempts)
                .map_err(|_| ConsensusError::InvalidHashRate(m))?
                .sample(rng)
        };
        times.insert(m, t);
    }
    let winner = *times
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
        .expect("non-empty")
        .0;
    Ok(PowOutcome {
        winner,
        mining_times: times,
    })
}

pub fn leading_zero_nibbles(hash: &Hash) -> u32 {
    let mut n = 0;
    for byte in hash {
        if *byte == 0 {
            n += 2;
        } else {
            if byte >> 4 == 0 {
                n += 1;
            }
            break;
        }
    }
    n
}

/// Increments the nonce from zero until the content hash has `difficulty`
/// leading zero nibbles, then re-seals. `None` if `max_attempts` run out.
pub fn mine_nonce(
    mut block: Block,
    difficulty: u32,
    max_attempts: u64,
    signer: &Signer,
) -> Result<Option<Block>, ConsensusError> {
    if difficulty > MAX_DIFFICULTY {
        return Err(ConsensusError::DifficultyTooHigh(difficulty));
    }
    for nonce in 0..max_attempts {
        block.nonce = nonce;
        if leading_zero_nibbles(&block.compute_content_hash()) >= difficulty {
            return Ok(Some(block.seal(signer)?));
        }
    }
    Ok(None)
}

/// How long a miner waits for other miners' blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum WaitTime {
    #[default]
    Unlimited,
    /// Simulated seconds after the miner's own block is ready.
    Finite(f64),
}

impl WaitTime {
    pub fn admits(self, arrival: f64) -> bool {
        match self {
            WaitTime::Unlimited => true,
            WaitTime::Finite(deadline) => arrival <= deadline,
        }
    }
}

/// A miner's view during one round.
#[derive(Clone, Debug)]
pub struct MinerState {
    pub miner: DeviceId,
    pub received_vtx: Vec<ValidatorTransaction>,
    pub candidate: Option<Arc<Block>>,
    pub received_blocks: Vec<Arc<Block>>,
    pub wait: WaitTime,
}

impl MinerState {
    pub fn new(miner: DeviceId, wait: WaitTime) -> Self {
        MinerState {
            miner,
            received_vtx: Vec::new(),
            candidate: None,
            received_blocks: Vec::new(),
            wait,
        }
    }

    /// Closes vote collection and builds this miner's candidate.
    pub fn build_candidate(
        &mut self,
        round: u64,
        prev_hash: Hash,
        base_model_hash: Hash,
        unit: u64,
        signer: &Signer,
    ) -> Result<(Arc<Block>, Aggregation), SignError> {
        let agg = aggregate_votes(&self.received_vtx);
        let block = Arc::new(build_candidate(
            self.miner,
            round,
            prev_hash,
            base_model_hash,
            &agg,
            unit,
            signer,
        )?);
        self.candidate = Some(block.clone());
        Ok((block, agg))
    }

    /// Collects the own candidate plus every propagated `(block, arrival)`
    /// that lands within the wait time, dropping blacklisted miners' blocks.
    pub fn collect_blocks<I>(&mut self, propagated: I, blacklist: &BTreeSet<DeviceId>) -> &[Arc<Block>]
    where
        I: IntoIterator<Item = (Arc<Block>, f64)>,
    {
        self.received_blocks.clear();
        self.received_blocks.extend(self.candidate.iter().cloned());
        for (block, arrival) in propagated {
            if block.miner == self.miner || blacklist.contains(&block.miner) {
                continue;
            }
            if self.wait.admits(arrival) {
                self.received_blocks.push(block);
            }
        }
        &self.received_blocks
    }
}
