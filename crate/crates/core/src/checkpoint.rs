//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GEOSCKPT"
//! version  u32
//! config   input_side u32, n_blocks u32, filters u32 × n_blocks, latent_dim u32, num_classes u32
//! stage    u8       0 = pretrain, 1 = multitask, 255 = none
//! seed     u64
//! step     u64
//! tensors  u32 count, then per tensor:
//!          name_len u16, name utf-8, ndim u8, dims u32 × ndim, values f64 × prod(dims)
//! optim    u64 t, u64 len, m f64 × len, v f64 × len
//! crc32    u32 over every preceding byte
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a write-then-read is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{ModelParams, NetworkConfig};
use crate::optim::OptimizerState;
use crate::training::Stage;

const MAGIC: &[u8; 8] = b"GEOSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub stage: Option<Stage>,
    pub seed: u64,
    pub step: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.0.reserve(vs.len() * 8);
        for v in vs {
            self.0.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

fn stage_tag(stage: Option<Stage>) -> u8 {
    match stage {
        Some(Stage::Pretrain) => 0,
        Some(Stage::Multitask) => 1,
        None => 255,
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let cfg = ck.params.config();
    let mut w = Writer(Vec::with_capacity(64 + ck.params.len() * 24));
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(cfg.input_side as u32);
    w.u32(cfg.filters.len() as u32);
    for &f in &cfg.filters {
        w.u32(f as u32);
    }
    w.u32(cfg.latent_dim as u32);
    w.u32(cfg.num_classes as u32);
    w.u8(stage_tag(ck.stage));
    w.u64(ck.seed);
    w.u64(ck.step);
    let tensors = ck.params.layout().tensors();
    w.u32(tensors.len() as u32);
    for t in tensors {
        w.u16(t.name.len() as u16);
        w.0.extend_from_slice(t.name.as_bytes());
        w.u8(t.shape.len() as u8);
        for &d in &t.shape {
            w.u32(d as u32);
        }
        w.f64s(&ck.params.values()[t.range.clone()]);
    }
    w.u64(ck.optimizer.t);
    w.u64(ck.optimizer.m.len() as u64);
    w.f64s(&ck.optimizer.m);
    w.f64s(&ck.optimizer.v);
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

/// Parses a checkpoint; when `expected` is given, the stored network
/// config must match it exactly.
pub fn decode(bytes: &[u8], expected: Option<&NetworkConfig>) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::CorruptCheckpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::CorruptCheckpoint("checksum mismatch (truncated or damaged)".into()));
    }

    let mut r = Reader { buf: body, pos: 12 };
    let input_side = r.u32()? as usize;
    let n_blocks = r.u32()? as usize;
    if n_blocks > 64 {
        return Err(Error::CorruptCheckpoint(format!("implausible block count {n_blocks}")));
    }
    let filters = (0..n_blocks)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let config = NetworkConfig {
        input_side,
        filters,
        latent_dim: r.u32()? as usize,
        num_classes: r.u32()? as usize,
    };
    if let Some(exp) = expected {
        if exp != &config {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {config:?}, expected {exp:?}"
            )));
        }
    }
    let stage = match r.u8()? {
        0 => Some(Stage::Pretrain),
        1 => Some(Stage::Multitask),
        255 => None,
        other => return Err(Error::CorruptCheckpoint(format!("unknown stage tag {other}"))),
    };
    let seed = r.u64()?;
    let step = r.u64()?;

    let layout = crate::network::ParamLayout::new(&config)
        .map_err(|e| Error::CorruptCheckpoint(format!("stored config invalid: {e}")))?;
    let n_tensors = r.u32()? as usize;
    if n_tensors != layout.tensors().len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{n_tensors} tensors stored, architecture has {}",
            layout.tensors().len()
        )));
    }
    let mut values = Vec::with_capacity(layout.total());
    for spec in layout.tensors() {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not utf-8".into()))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != spec.name || shape != spec.shape {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {name} {shape:?} does not match expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        values.extend(r.f64s(spec.range.len())?);
    }
    let t = r.u64()?;
    let len = r.u64()? as usize;
    if len != values.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "optimizer state holds {len} entries, model has {}",
            values.len()
        )));
    }
    let m = r.f64s(len)?;
    let v = r.f64s(len)?;
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params: ModelParams::from_values(config, values)?,
        optimizer: OptimizerState { m, v, t },
        stage,
        seed,
        step,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<&NetworkConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{count_params, init_params};

    fn sample() -> Checkpoint {
        let params = init_params(4, &NetworkConfig::tiny()).unwrap();
        let n = params.len();
        let mut optimizer = OptimizerState::new(n);
        optimizer.m[3] = -1.25e-7;
        optimizer.v[5] = f64::MIN_POSITIVE;
        optimizer.t = 17;
        Checkpoint {
            params,
            optimizer,
            stage: Some(Stage::Multitask),
            seed: 99,
            step: 17,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let back = decode(&encode(&ck), Some(ck.params.config())).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.seed, 99);
        assert_eq!(back.stage, Some(Stage::Multitask));
        assert_eq!(count_params(&back.params), count_params(&ck.params));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.params.values()), bits(ck.params.values()));
        assert_eq!(bits(&back.optimizer.m), bits(&ck.optimizer.m));
        assert_eq!(bits(&back.optimizer.v), bits(&ck.optimizer.v));
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let ck = sample();
        let mut other = NetworkConfig::tiny();
        other.latent_dim = 8;
        assert!(matches!(
            decode(&encode(&ck), Some(&other)),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn truncation_and_damage_are_detected() {
        let bytes = encode(&sample());
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode(&bytes[..cut], None),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x10;
        assert!(matches!(decode(&flipped, None), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[8] = 9;
        assert!(matches!(
            decode(&bytes, None),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }
}
