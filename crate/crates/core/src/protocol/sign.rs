use alloc::collections::BTreeMap;

use hmac::{Hmac, KeyInit, Mac};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::DeviceId;

pub type Signature = [u8; 32];

/// How signatures are produced and checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignatureMode {
    /// `SHA-256(payload || secret)`; verification recomputes it.
    Stub,
    /// HMAC-SHA-256 keyed by the device secret.
    KeyedHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignError {
    #[error("device {0} has no registered key material")]
    Unregistered(DeviceId),
}

/// Holds per-device key material for every simulated device.
///
/// With `assume_verified` set, [`Signer::verify`] accepts everything, which
/// reproduces an emulation in which signature checking is taken for granted.
#[derive(Clone, Debug)]
pub struct Signer {
    mode: SignatureMode,
    assume_verified: bool,
    secrets: BTreeMap<DeviceId, [u8; 32]>,
}

impl Signer {
    pub fn new(mode: SignatureMode, assume_verified: bool) -> Self {
        Signer {
            mode,
            assume_verified,
            secrets: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> SignatureMode {
        self.mode
    }

    pub fn assumes_verified(&self) -> bool {
        self.assume_verified
    }

    pub fn register(&mut self, device: DeviceId, secret: [u8; 32]) {
        self.secrets.insert(device, secret);
    }

    /// Registers a secret derived from a run seed, so key material is
    /// reproducible without being stored.
    pub fn register_derived(&mut self, device: DeviceId, seed: u64) {
        let mut h = Sha256::new();
        h.update(b"vbfl/device-secret/v1");
        h.update(seed.to_le_bytes());
        h.update(device.as_bytes());
        self.register(device, h.finalize().into());
    }

    pub fn is_registered(&self, device: DeviceId) -> bool {
        self.secrets.contains_key(&device)
    }

    pub fn sign(&self, device: DeviceId, payload: &[u8]) -> Result<Signature, SignError> {
        let secret = self.secrets.get(&device).ok_or(SignError::Unregistered(device))?;
        Ok(self.compute(secret, payload))
    }

    pub fn verify(&self, device: DeviceId, payload: &[u8], signature: &Signature) -> bool {
        if self.assume_verified {
            return true;
        }
        let Some(secret) = self.secrets.get(&device) else {
            return false;
        };
        match self.mode {
            SignatureMode::Stub => self.compute(secret, payload) == *signature,
            SignatureMode::KeyedHash => {
                let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("any key length");
                mac.update(payload);
                mac.verify_slice(signature).is_ok()
            }
        }
    }

    fn compute(&self, secret: &[u8; 32], payload: &[u8]) -> Signature {
        match self.mode {
            SignatureMode::Stub => {
                let mut h = Sha256::new();
                h.update(payload);
                h.update(secret);
                h.finalize().into()
            }
            SignatureMode::KeyedHash => {
                let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("any key length");
                mac.update(payload);
                mac.finalize().into_bytes().into()
            }
        }
    }
}
