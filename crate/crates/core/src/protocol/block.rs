use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::encode::{Canonical, DecodeError, Decoder, Encoder};
use super::sign::{SignError, Signature, Signer};
use super::tx::WorkerTransaction;
use super::{sha256, Hash, ZERO_HASH};
use crate::learning::ModelParams;
use crate::DeviceId;

/// Aggregated votes on one worker's update, as recorded by a miner.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteTally {
    pub worker_tx: Arc<WorkerTransaction>,
    pub positives: u32,
    pub negatives: u32,
    pub voters: BTreeSet<DeviceId>,
}

impl VoteTally {
    pub fn worker(&self) -> DeviceId {
        self.worker_tx.worker
    }

    pub fn update(&self) -> &ModelParams {
        &self.worker_tx.update
    }

    /// An update is accepted when it has at least as many Positive as
    /// Negative votes.
    pub fn qualified(&self) -> bool {
        self.positives >= self.negatives
    }
}

impl Canonical for VoteTally {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&*self.worker_tx)
            .u32(self.positives)
            .u32(self.negatives)
            .len_prefix(self.voters.len());
        for v in &self.voters {
            enc.put(v);
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let worker_tx = dec.get()?;
        let positives = dec.u32()?;
        let negatives = dec.u32()?;
        let n = dec.len_prefix(DeviceId::LEN)?;
        let mut voters = BTreeSet::new();
        for _ in 0..n {
            if !voters.insert(dec.get::<DeviceId>()?) {
                return Err(DecodeError::Invalid("duplicate voter"));
            }
        }
        if positives as usize + negatives as usize != voters.len() {
            return Err(DecodeError::Invalid("vote counts do not match voter set"));
        }
        Ok(VoteTally {
            worker_tx,
            positives,
            negatives,
            voters,
        })
    }
}

/// A candidate or legitimate block.
///
/// `content_hash` covers every other field except `signature`; the miner
/// signs `content_hash`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub round: u64,
    pub miner: DeviceId,
    pub prev_hash: Hash,
    /// Hash of the global model the recorded updates were trained from.
    pub base_model_hash: Hash,
    pub tallies: Vec<VoteTally>,
    pub miner_reward: u64,
    pub validator_rewards: BTreeMap<DeviceId, u64>,
    /// Proof-of-work nonce; zero when the block is not ground.
    pub nonce: u64,
    pub content_hash: Hash,
    pub signature: Signature,
}

impl Block {
    /// An unsealed block; call [`Block::seal`] before propagating it.
    pub fn unsealed(
        round: u64,
        miner: DeviceId,
        prev_hash: Hash,
        base_model_hash: Hash,
        tallies: Vec<VoteTally>,
        miner_reward: u64,
        validator_rewards: BTreeMap<DeviceId, u64>,
    ) -> Self {
        Block {
            round,
            miner,
            prev_hash,
            base_model_hash,
            tallies,
            miner_reward,
            validator_rewards,
            nonce: 0,
            content_hash: ZERO_HASH,
            signature: [0; 32],
        }
    }

    /// Round-0 block anchoring the initial global model. Carries no
    /// signature.
    pub fn genesis(initial_model_hash: Hash) -> Self {
        let mut b = Block::unsealed(
            0,
            DeviceId::GENESIS,
            ZERO_HASH,
            initial_model_hash,
            Vec::new(),
            0,
            BTreeMap::new(),
        );
        b.content_hash = b.compute_content_hash();
        b
    }

    pub fn is_genesis(&self) -> bool {
        self.round == 0 && self.miner == DeviceId::GENESIS && self.prev_hash == ZERO_HASH
    }

    fn encode_content(&self, enc: &mut Encoder) {
        enc.u64(self.round)
            .put(&self.miner)
            .raw(&self.prev_hash)
            .raw(&self.base_model_hash)
            .len_prefix(self.tallies.len());
        for t in &self.tallies {
            enc.put(t);
        }
        enc.u64(self.miner_reward).len_prefix(self.validator_rewards.len());
        for (id, r) in &self.validator_rewards {
            enc.put(id).u64(*r);
        }
        enc.u64(self.nonce);
    }

    pub fn compute_content_hash(&self) -> Hash {
        let mut enc = Encoder::new();
        self.encode_content(&mut enc);
        sha256(&enc.finish())
    }

    /// Hashes the content and signs the hash with the miner's key.
    pub fn seal(mut self, signer: &Signer) -> Result<Block, SignError> {
        self.content_hash = self.compute_content_hash();
        self.signature = signer.sign(self.miner, &self.content_hash)?;
        Ok(self)
    }

    /// Content hash is current and, except for genesis, the miner's
    /// signature over it verifies.
    pub fn verify_seal(&self, signer: &Signer) -> bool {
        if self.compute_content_hash() != self.content_hash {
            return false;
        }
        if self.is_genesis() {
            return self.signature == [0; 32];
        }
        signer.verify(self.miner, &self.content_hash, &self.signature)
    }

    /// Tallies must name distinct workers.
    pub fn has_distinct_workers(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.tallies.iter().all(|t| seen.insert(t.worker()))
    }

    pub fn tally_for(&self, worker: DeviceId) -> Option<&VoteTally> {
        self.tallies.iter().find(|t| t.worker() == worker)
    }
}

impl Canonical for Block {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_content(enc);
        enc.raw(&self.content_hash).raw(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let round = dec.u64()?;
        let miner = dec.get()?;
        let prev_hash = dec.array()?;
        let base_model_hash = dec.array()?;
        let n = dec.len_prefix(1)?;
        let tallies = (0..n).map(|_| dec.get()).collect::<Result<Vec<_>, _>>()?;
        let miner_reward = dec.u64()?;
        let n = dec.len_prefix(DeviceId::LEN + 8)?;
        let mut validator_rewards = BTreeMap::new();
        for _ in 0..n {
            let id: DeviceId = dec.get()?;
            if validator_rewards.insert(id, dec.u64()?).is_some() {
                return Err(DecodeError::Invalid("duplicate validator reward"));
            }
        }
        Ok(Block {
            round,
            miner,
            prev_hash,
            base_model_hash,
            tallies,
            miner_reward,
            validator_rewards,
            nonce: dec.u64()?,
            content_hash: dec.array()?,
            signature: dec.array()?,
        })
    }
}
