//! Engine for a blockchained federated-learning system in which per-round
//! validators vote on local model updates and a stake-based consensus picks
//! the block whose votes drive global aggregation.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO; file
//! formats, the command-line front end and dataset loaders live in the
//! companion `vbfl` crate.
#![no_std]

extern crate alloc;

pub mod consensus;
pub mod device;
pub mod learning;
pub mod orchestrator;
pub mod protocol;
pub mod rewards;
pub mod rng;
pub mod validation;

pub use device::DeviceId;
