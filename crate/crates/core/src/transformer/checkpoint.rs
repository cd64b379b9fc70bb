//! Flat little-endian checkpoint format.
//!
//! ```text
//! b"P2PM"
//! u32 version (= 1)
//! u32 x 7   d_model, layers, heads, window, horizon, ffn_mult, use_acceleration (0/1)
//! u32       tensor count
//! per tensor: u32 rank, u32 x rank dims, f64 x prod(dims) values
//! ```
//!
//! Tensor order: normalizer mean `[8]`, normalizer std `[8]`, offset scale
//! `[1]`, embedding, then per layer `wq wk wv wo ln1_gain ln1_bias w1 b1 w2
//! b2 ln2_gain ln2_bias`, then heads `drone_w drone_b behavior_w behavior_b
//! intent_w intent_b traj_w traj_b`.

use std::path::Path;

use super::{ModelConfig, Normalizer, Parameters, Tensor, Weights};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tokenizer::TOKEN_DIM;

const MAGIC: &[u8; 4] = b"P2PM";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, shape: &[usize], data: &[f64]) {
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint(cfg: &ModelConfig, params: &Parameters) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    for v in [
        cfg.d_model,
        cfg.layers,
        cfg.heads,
        cfg.window,
        cfg.horizon,
        cfg.ffn_mult,
        usize::from(cfg.use_acceleration),
    ] {
        put_u32(&mut out, v as u32);
    }
    let tensors = params.weights.tensors();
    put_u32(&mut out, (tensors.len() + 3) as u32);
    let n = &params.normalizer;
    put_tensor(&mut out, &[TOKEN_DIM], &n.mean);
    put_tensor(&mut out, &[TOKEN_DIM], &n.std);
    put_tensor(&mut out, &[1], &[n.offset_scale]);
    for t in tensors {
        put_tensor(&mut out, &t.shape, &t.data);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 4 {
            return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Tensor { shape, data })
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, Parameters)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("missing P2PM magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut fields = [0usize; 7];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    let cfg = ModelConfig {
        d_model: fields[0],
        layers: fields[1],
        heads: fields[2],
        window: fields[3],
        horizon: fields[4],
        ffn_mult: fields[5],
        use_acceleration: match fields[6] {
            0 => false,
            1 => true,
            v => return Err(Error::Checkpoint(format!("bad use_acceleration flag {v}"))),
        },
    };
    cfg.validate()?;

    // shapes come from a freshly built model; the file must match them
    let mut weights = Weights::init(&cfg, 0);
    let count = r.u32()? as usize;
    let expected = weights.tensors().len() + 3;
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} tensors, found {count}"
        )));
    }
    let mut fixed = |shape: &[usize]| -> Result<Vec<f64>> {
        let t = r.tensor()?;
        if t.shape != shape {
            return Err(Error::Checkpoint(format!(
                "normalizer tensor has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t.data)
    };
    let mean = fixed(&[TOKEN_DIM])?;
    let std = fixed(&[TOKEN_DIM])?;
    let offset_scale = fixed(&[1])?[0];
    let normalizer = Normalizer {
        mean: mean.try_into().expect("checked shape"),
        std: std.try_into().expect("checked shape"),
        offset_scale,
    };
    let names = weights.names();
    for (slot, name) in weights.tensors_mut().into_iter().zip(names) {
        let t = r.tensor()?;
        if t.shape != slot.shape {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?}, expected {:?}",
                t.shape, slot.shape
            )));
        }
        *slot = t;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let params = Parameters {
        normalizer,
        weights,
    };
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters"));
    }
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &Parameters) -> Result<()> {
    write_atomic(path, &write_checkpoint(cfg, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Parameters)> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let cfg = ModelConfig {
            use_acceleration: false,
            ..ModelConfig::small(16, 2, 8, 5)
        };
        let mut params = Parameters::init(&cfg, 7);
        params.normalizer.mean[3] = 1.25;
        params.normalizer.std[0] = 80.0;
        params.normalizer.offset_scale = 12.5;
        let bytes = write_checkpoint(&cfg, &params);
        assert_eq!(&bytes[..4], b"P2PM");
        let (cfg2, params2) = read_checkpoint(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(params2, params);
        assert_eq!(write_checkpoint(&cfg2, &params2), bytes);
    }

    #[test]
    fn header_layout() {
        let cfg = ModelConfig::small(8, 1, 4, 2);
        let bytes = write_checkpoint(&cfg, &Parameters::init(&cfg, 0));
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        assert_eq!(word(0), 1);
        assert_eq!(
            (1..8).map(word).collect::<Vec<_>>(),
            vec![8, 1, 4, 4, 2, 4, 1]
        );
        // 3 normalizer tensors + embed + 12 per layer + 8 head tensors
        assert_eq!(word(8), 3 + 1 + 12 + 8);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let cfg = ModelConfig::small(8, 1, 4, 2);
        let bytes = write_checkpoint(&cfg, &Parameters::init(&cfg, 0));
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
    }
}
