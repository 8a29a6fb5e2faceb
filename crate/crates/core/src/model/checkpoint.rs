//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "CTPN"  u16 version  u32 field_count  u32 x field_count   model config
//! u32 tensor_count
//! tensor_count x { u32 rank, u32 x rank dims, f32 x numel }
//! ```
//!
//! Tensors are the parameters in declaration order followed by the running
//! mean and variance of every batch-norm layer.

use alloc::format;
use alloc::vec::Vec;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CTPN";
pub const CHECKPOINT_VERSION: u16 = 1;

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let b = bytes
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
    *pos += 4;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

impl<T: Real> Model<T> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let fields = self.config.to_fields();
        out.extend_from_slice(&(fields.len() as u32).to_le_bytes());
        for f in fields {
            out.extend_from_slice(&(f as u32).to_le_bytes());
        }
        let count = self.params.len() + 2 * self.stats.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for p in &self.params {
            p.value.write_le(&mut out);
        }
        for s in &self.stats {
            s.mean.write_le(&mut out);
            s.var.write_le(&mut out);
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.get(..4) != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("missing CTPN magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], *bytes.get(5).unwrap_or(&0)]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut pos = 6;
        let n_fields = read_u32(bytes, &mut pos)? as usize;
        if n_fields > 1024 {
            return Err(Error::Checkpoint(format!("implausible config field count {n_fields}")));
        }
        let fields = (0..n_fields)
            .map(|_| read_u32(bytes, &mut pos).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let config = ModelConfig::from_fields(&fields)?;
        let mut model = Model::build(&config, 0)?;

        let count = read_u32(bytes, &mut pos)? as usize;
        let expected = model.params.len() + 2 * model.stats.len();
        if count != expected {
            return Err(Error::Checkpoint(format!("expected {expected} tensors, found {count}")));
        }
        let mut next = |into: &mut Tensor<T>| -> Result<()> {
            let (t, used) = Tensor::<T>::read_le(&bytes[pos..])?;
            if t.shape() != into.shape() {
                return Err(Error::Checkpoint(format!("tensor shape {:?}, expected {:?}", t.shape(), into.shape())));
            }
            pos += used;
            *into = t;
            Ok(())
        };
        for p in model.params.iter_mut() {
            next(&mut p.value)?;
        }
        for s in model.stats.iter_mut() {
            next(&mut s.mean)?;
            next(&mut s.var)?;
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig::tiny();
        let mut m = Model::<f32>::build(&cfg, 5).unwrap();
        m.stats[0].mean.data_mut()[0] = 0.123;
        let bytes = m.to_checkpoint_bytes();
        assert_eq!(&bytes[..4], b"CTPN");
        let back = Model::<f32>::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.stats, m.stats);
        assert_eq!(back.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::<f32>::build(&ModelConfig::tiny(), 5).unwrap();
        let bytes = m.to_checkpoint_bytes();
        assert!(Model::<f32>::from_checkpoint_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::<f32>::from_checkpoint_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Model::<f32>::from_checkpoint_bytes(&extra).is_err());
    }
}
