use alloc::sync::Arc;
use alloc::vec::Vec;

use super::encode::{Canonical, DecodeError, Decoder, Encoder};
use super::sign::{SignError, Signature, Signer};
use super::{sha256, Hash};
use crate::learning::ModelParams;
use crate::DeviceId;

/// A validator's verdict on one local update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vote {
    Positive,
    Negative,
}

impl Vote {
    /// The vote a compromised validator reports instead of its honest one.
    pub fn flipped(self) -> Vote {
        match self {
            Vote::Positive => Vote::Negative,
            Vote::Negative => Vote::Positive,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Vote::Positive => 'P',
            Vote::Negative => 'N',
        }
    }
}

impl Canonical for Vote {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.u8(match self {
            Vote::Positive => 1,
            Vote::Negative => 0,
        });
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            1 => Ok(Vote::Positive),
            0 => Ok(Vote::Negative),
            tag => Err(DecodeError::InvalidTag { what: "Vote", tag }),
        }
    }
}

/// A worker's signed local update together with its self-reported reward.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerTransaction {
    pub round: u64,
    pub worker: DeviceId,
    pub update: ModelParams,
    pub expected_reward: u64,
    pub epochs: u32,
    pub train_size: u64,
    pub signature: Signature,
}

impl WorkerTransaction {
    pub fn new_signed(
        round: u64,
        worker: DeviceId,
        update: ModelParams,
        epochs: u32,
        train_size: u64,
        expected_reward: u64,
        signer: &Signer,
    ) -> Result<Self, SignError> {
        let mut tx = WorkerTransaction {
            round,
            worker,
            update,
            expected_reward,
            epochs,
            train_size,
            signature: [0; 32],
        };
        tx.signature = signer.sign(worker, &tx.signing_payload())?;
        Ok(tx)
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.u64(self.round)
            .put(&self.worker)
            .put(&self.update)
            .u64(self.expected_reward)
            .u32(self.epochs)
            .u64(self.train_size);
    }

    pub fn signing_payload(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.finish()
    }

    pub fn verify(&self, signer: &Signer) -> bool {
        signer.verify(self.worker, &self.signing_payload(), &self.signature)
    }

    /// Digest of the full encoding; distinguishes conflicting copies.
    pub fn digest(&self) -> Hash {
        sha256(&self.encode())
    }
}

impl Canonical for WorkerTransaction {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.raw(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(WorkerTransaction {
            round: dec.u64()?,
            worker: dec.get()?,
            update: dec.get()?,
            expected_reward: dec.u64()?,
            epochs: dec.u32()?,
            train_size: dec.u64()?,
            signature: dec.array()?,
        })
    }
}

/// A validator's signed vote on one worker transaction, with the duty
/// rewards it claims for verifying and voting.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatorTransaction {
    pub round: u64,
    pub validator: DeviceId,
    pub inner: Arc<WorkerTransaction>,
    pub vote: Vote,
    pub verify_reward: u64,
    pub vali_reward: u64,
    pub signature: Signature,
}

impl ValidatorTransaction {
    /// Builds and signs a vote. The round is taken from the wrapped worker
    /// transaction, which keeps the two consistent by construction.
    pub fn new_signed(
        validator: DeviceId,
        inner: Arc<WorkerTransaction>,
        vote: Vote,
        verify_reward: u64,
        vali_reward: u64,
        signer: &Signer,
    ) -> Result<Self, SignError> {
        let mut tx = ValidatorTransaction {
            round: inner.round,
            validator,
            inner,
            vote,
            verify_reward,
            vali_reward,
            signature: [0; 32],
        };
        tx.signature = signer.sign(validator, &tx.signing_payload())?;
        Ok(tx)
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.u64(self.round)
            .put(&self.validator)
            .put(&*self.inner)
            .put(&self.vote)
            .u64(self.verify_reward)
            .u64(self.vali_reward);
    }

    pub fn signing_payload(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.finish()
    }

    pub fn verify(&self, signer: &Signer) -> bool {
        self.inner.round == self.round && signer.verify(self.validator, &self.signing_payload(), &self.signature)
    }

    pub fn worker(&self) -> DeviceId {
        self.inner.worker
    }
}

impl Canonical for ValidatorTransaction {
    fn encode_to(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.raw(&self.signature);
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tx = ValidatorTransaction {
            round: dec.u64()?,
            validator: dec.get()?,
            inner: dec.get()?,
            vote: dec.get()?,
            verify_reward: dec.u64()?,
            vali_reward: dec.u64()?,
            signature: dec.array()?,
        };
        if tx.inner.round != tx.round {
            return Err(DecodeError::Invalid(
                "validator transaction round differs from wrapped worker transaction",
            ));
        }
        Ok(tx)
    }
}
