use alloc::string::String;
use core::fmt;

/// Identity of a participating device. In the protocol this doubles as the
/// device's public key; ordering is lexicographic over the raw bytes and is
/// used for every deterministic tie-break.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId([u8; DeviceId::LEN]);

impl DeviceId {
    pub const LEN: usize = 8;

    /// Reserved id carried by the synthetic genesis block.
    pub const GENESIS: DeviceId = DeviceId([0xff; Self::LEN]);

    pub const fn from_bytes(bytes: [u8; Self::LEN]) -> Self {
        DeviceId(bytes)
    }

    /// Id of the `index`-th simulated device. Big-endian so that id order
    /// matches index order.
    pub fn from_index(index: u32) -> Self {
        DeviceId(u64::from(index).to_be_bytes())
    }

    /// Inverse of [`DeviceId::from_index`] (ids built otherwise map to their
    /// big-endian value).
    pub fn index(&self) -> u64 {
        u64::from_be_bytes(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; Self::LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; Self::LEN] = bytes.try_into().ok()?;
        Some(DeviceId(arr))
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({})", self.to_hex())
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}
