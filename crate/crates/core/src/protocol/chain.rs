use alloc::collections::BTreeSet;
use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use super::block::Block;
use super::sign::Signer;
use super::{Hash, ZERO_HASH};
use crate::DeviceId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("block does not extend the chain tip (stale or forked block)")]
    HashMismatch { expected: Hash, got: Hash },
    #[error("block content hash does not match its content")]
    BadContentHash,
    #[error("block signature does not verify")]
    BadSignature,
    #[error("block mined by blacklisted device {0}")]
    BlacklistedMiner(DeviceId),
    #[error("block round {got} does not follow tip round {tip}")]
    NonIncreasingRound { tip: u64, got: u64 },
    #[error("block records more than one tally for the same worker")]
    DuplicateTally,
}

/// One device's copy of the chain. Blocks are shared between devices that
/// hold the same block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Blockchain {
    blocks: Vec<Arc<Block>>,
}

impl Blockchain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    pub fn tip(&self) -> Option<&Arc<Block>> {
        self.blocks.last()
    }

    /// Hash the next block must reference; all zeros on an empty chain.
    pub fn tip_hash(&self) -> Hash {
        self.tip().map_or(ZERO_HASH, |b| b.content_hash)
    }

    /// Appends `block` after checking the link, the seal and the miner
    /// against the appending device's blacklist.
    pub fn append(
        &mut self,
        block: Arc<Block>,
        signer: &Signer,
        blacklist: &BTreeSet<DeviceId>,
    ) -> Result<(), ChainError> {
        check_block(self.tip().map(|b| &**b), &block, signer)?;
        if blacklist.contains(&block.miner) {
            return Err(ChainError::BlacklistedMiner(block.miner));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Re-checks every hash link and seal from genesis to tip. Returns the
    /// index of the first bad block.
    pub fn verify(&self, signer: &Signer) -> Result<(), (usize, ChainError)> {
        let mut prev: Option<&Block> = None;
        for (i, b) in self.blocks.iter().enumerate() {
            check_block(prev, b, signer).map_err(|e| (i, e))?;
            prev = Some(b);
        }
        Ok(())
    }
}

fn check_block(tip: Option<&Block>, block: &Block, signer: &Signer) -> Result<(), ChainError> {
    let expected = tip.map_or(ZERO_HASH, |b| b.content_hash);
    if block.prev_hash != expected {
        return Err(ChainError::HashMismatch {
            expected,
            got: block.prev_hash,
        });
    }
    if let Some(t) = tip {
        if block.round <= t.round {
            return Err(ChainError::NonIncreasingRound {
                tip: t.round,
                got: block.round,
            });
        }
    }
    if block.compute_content_hash() != block.content_hash {
        return Err(ChainError::BadContentHash);
    }
    if !block.verify_seal(signer) {
        return Err(ChainError::BadSignature);
    }
    if !block.has_distinct_workers() {
        return Err(ChainError::DuplicateTally);
    }
    Ok(())
}
