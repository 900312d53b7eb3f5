//! Canonical byte encoding.
//!
//! Fixed field order, little-endian integers, IEEE-754 binary64 reals,
//! `u32` length prefixes on every variable-length sequence. The layout of
//! each type is documented in `docs/wire-format.md`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use crate::learning::{Arch, ModelParams};
use crate::DeviceId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("input ended early")]
    UnexpectedEnd,
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("invalid tag {tag} for {what}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    /// Fixed-width bytes, no length prefix.
    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Length-prefixed bytes.
    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(bytes.len() as u32).raw(bytes)
    }

    pub fn len_prefix(&mut self, n: usize) -> &mut Self {
        self.u32(n as u32)
    }

    pub fn put<T: Canonical>(&mut self, v: &T) -> &mut Self {
        v.encode_to(self);
        self
    }
}

pub struct Decoder<'a> {
    input: &'a [u8],
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Decoder { input }
    }

    pub fn remaining(&self) -> usize {
        self.input.len()
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.input.len() < n {
            return Err(DecodeError::UnexpectedEnd);
        }
        let (head, tail) = self.input.split_at(n);
        self.input = tail;
        Ok(head)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.raw(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.raw(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u32()? as usize;
        self.raw(n)
    }

    /// Reads a sequence length, rejecting counts that cannot possibly fit in
    /// the remaining input given a minimum element size.
    pub fn len_prefix(&mut self, min_elem: usize) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem.max(1)) > self.remaining() {
            return Err(DecodeError::UnexpectedEnd);
        }
        Ok(n)
    }

    pub fn get<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::decode_from(self)
    }
}

/// Types with a canonical, injective byte encoding.
pub trait Canonical: Sized {
    fn encode_to(&self, enc: &mut Encoder);
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError>;

    fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_to(&mut enc);
        enc.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let v = Self::decode_from(&mut dec)?;
        match dec.remaining() {
            0 => Ok(v),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

impl Canonical for DeviceId {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.raw(self.as_bytes());
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(DeviceId::from_bytes(dec.array()?))
    }
}

impl Canonical for Arch {
    fn encode_to(&self, enc: &mut Encoder) {
        match *self {
            Arch::Softmax { inputs, classes } => {
                enc.u8(0).u32(inputs as u32).u32(classes as u32);
            }
            Arch::Mlp {
                inputs,
                hidden,
                classes,
            } => {
                enc.u8(1).u32(inputs as u32).u32(hidden as u32).u32(classes as u32);
            }
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let arch = match dec.u8()? {
            0 => Arch::Softmax {
                inputs: dec.u32()? as usize,
                classes: dec.u32()? as usize,
            },
            1 => Arch::Mlp {
                inputs: dec.u32()? as usize,
                hidden: dec.u32()? as usize,
                classes: dec.u32()? as usize,
            },
            tag => return Err(DecodeError::InvalidTag { what: "Arch", tag }),
        };
        arch.validate().map_err(|_| DecodeError::Invalid("architecture"))?;
        Ok(arch)
    }
}

impl Canonical for ModelParams {
    fn encode_to(&self, enc: &mut Encoder) {
        enc.put(&self.arch()).len_prefix(self.len());
        for v in self.values() {
            enc.f64(*v);
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let arch: Arch = dec.get()?;
        let n = dec.len_prefix(8)?;
        let values = (0..n).map(|_| dec.f64()).collect::<Result<Vec<_>, _>>()?;
        ModelParams::new(arch, values).map_err(|_| DecodeError::Invalid("parameter count"))
    }
}

impl<T: Canonical> Canonical for Arc<T> {
    fn encode_to(&self, enc: &mut Encoder) {
        (**self).encode_to(enc)
    }

    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        T::decode_from(dec).map(Arc::new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn primitives_are_little_endian() {
        let mut e = Encoder::new();
        e.u32(1).u64(2).f64(1.0).bytes(&[9, 9]);
        assert_eq!(
            e.finish(),
            vec![1, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xf0, 0x3f, 2, 0, 0, 0, 9, 9]
        );
    }

    #[test]
    fn model_round_trip_and_errors() {
        let m = ModelParams::new(Arch::Softmax { inputs: 1, classes: 2 }, vec![1.5, -2.0, 0.0, 3.25]).unwrap();
        let bytes = m.encode();
        assert_eq!(ModelParams::decode(&bytes).unwrap(), m);
        assert_eq!(
            ModelParams::decode(&bytes[..bytes.len() - 1]),
            Err(DecodeError::UnexpectedEnd)
        );
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(ModelParams::decode(&extra), Err(DecodeError::TrailingBytes(1)));
        let mut bad_tag = bytes;
        bad_tag[0] = 7;
        assert!(matches!(
            ModelParams::decode(&bad_tag),
            Err(DecodeError::InvalidTag { what: "Arch", tag: 7 })
        ));
    }

    #[test]
    fn absurd_lengths_fail_fast() {
        let mut e = Encoder::new();
        e.put(&Arch::Softmax { inputs: 1, classes: 2 }).u32(u32::MAX);
        assert_eq!(ModelParams::decode(&e.finish()), Err(DecodeError::UnexpectedEnd));
    }
}
