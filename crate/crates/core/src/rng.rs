//! Named random substreams derived from one master seed.
//!
//! Every consumer of randomness in a run draws from its own stream so that
//! changing how one subsystem uses randomness (for example the noise injected
//! by malicious workers) leaves every other subsystem's draws untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::DeviceId;

pub type SimRng = ChaCha12Rng;

pub const SHARD: &str = "shard";
pub const INIT: &str = "init";
pub const ROLES: &str = "roles";
pub const ASSOC: &str = "assoc";
pub const BATCHES: &str = "batches";
pub const NOISE: &str = "noise";
pub const POW: &str = "pow";
pub const NET: &str = "net";

/// Derives independent ChaCha streams from `(master_seed, name[, device])`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        SeedTree { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, name: &str) -> SimRng {
        SimRng::from_seed(self.derive(name, None))
    }

    pub fn device_stream(&self, name: &str, device: DeviceId) -> SimRng {
        SimRng::from_seed(self.derive(name, Some(device)))
    }

    fn derive(&self, name: &str, device: Option<DeviceId>) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"vbfl/substream/v1");
        h.update(self.master.to_le_bytes());
        h.update((name.len() as u32).to_le_bytes());
        h.update(name.as_bytes());
        match device {
            Some(d) => {
                h.update([1u8]);
                h.update(d.as_bytes());
            }
            None => h.update([0u8]),
        }
        h.finalize().into()
    }
}
