//! Transactions, blocks, the hash-linked chain, canonical byte encoding and
//! the pluggable signature scheme.

mod block;
mod chain;
mod encode;
mod sign;
mod tx;

pub use block::{Block, VoteTally};
pub use chain::{Blockchain, ChainError};
pub use encode::{Canonical, DecodeError, Decoder, Encoder};
pub use sign::{SignError, Signature, SignatureMode, Signer};
pub use tx::{ValidatorTransaction, Vote, WorkerTransaction};

use sha2::{Digest, Sha256};

use crate::learning::ModelParams;

/// Name of the hash function used for block and model digests; written into
/// run manifests.
pub const HASH_FUNCTION: &str = "SHA-256";

pub type Hash = [u8; 32];

pub const ZERO_HASH: Hash = [0u8; 32];

pub fn sha256(bytes: &[u8]) -> Hash {
    Sha256::digest(bytes).into()
}

/// Digest of a model's canonical encoding.
pub fn model_hash(params: &ModelParams) -> Hash {
    sha256(&params.encode())
}
