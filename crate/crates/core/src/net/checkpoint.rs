//! Versioned binary checkpoint plus a human-readable manifest.
//!
//! Layout (little-endian): magic `OFCK`, version u16, then the hyper block
//! as a u32 length followed by JSON with model config, normalization,
//! hyperparameters and epoch. Next the tensor count u32 and, per tensor in
//! declaration order, its name (u16 length, UTF-8), rows u32, cols u32 and
//! f64 values. Then the Adam state: step u64, length u64, first moments,
//! second moments. Last the shuffling generator: seed u64, stream u64, word
//! position u128.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::NormStats;

use super::optim::AdamState;
use super::train::RngState;
use super::{Hyper, Layout, ModelConfig, ModelParams, NetError};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OFCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub hyper: Hyper,
    pub adam: AdamState,
    pub rng: RngState,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperBlock {
    config: ModelConfig,
    norm: NormStats,
    hyper: Hyper,
    epoch: usize,
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>, NetError> {
    ck.params.check()?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let block = HyperBlock {
        config: ck.params.config.clone(),
        norm: ck.params.norm.clone(),
        hyper: ck.hyper.clone(),
        epoch: ck.epoch,
    };
    let json = serde_json::to_vec(&block).map_err(|e| NetError::Format(e.to_string()))?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let layout = &ck.params.layout;
    out.extend_from_slice(&(layout.tensors.len() as u32).to_le_bytes());
    for t in &layout.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        out.extend_from_slice(&f64_bytes(&ck.params.values[t.range()]));
    }
    out.extend_from_slice(&ck.adam.step.to_le_bytes());
    out.extend_from_slice(&(ck.adam.m.len() as u64).to_le_bytes());
    out.extend_from_slice(&f64_bytes(&ck.adam.m));
    out.extend_from_slice(&f64_bytes(&ck.adam.v));
    out.extend_from_slice(&ck.rng.seed.to_le_bytes());
    out.extend_from_slice(&ck.rng.stream.to_le_bytes());
    out.extend_from_slice(&ck.rng.word_pos.to_le_bytes());
    Ok(out)
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<(), NetError> {
    w.write_all(&encode_checkpoint(ck)?)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                NetError::Format(format!("checkpoint truncated at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], NetError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NetError> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| NetError::Format("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, NetError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(NetError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = u32::from_le_bytes(c.array()?) as usize;
    let block: HyperBlock =
        serde_json::from_slice(c.take(len)?).map_err(|e| NetError::Format(e.to_string()))?;
    let mut params = ModelParams::zeros(block.config, block.norm)?;
    let expected = Layout::new(&params.config);
    let count = u32::from_le_bytes(c.array()?) as usize;
    if count != expected.tensors.len() {
        return Err(NetError::Format(format!(
            "{count} tensors, config implies {}",
            expected.tensors.len()
        )));
    }
    for spec in &expected.tensors {
        let name_len = u16::from_le_bytes(c.array()?) as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| NetError::Format("tensor name".into()))?;
        let rows = u32::from_le_bytes(c.array()?) as usize;
        let cols = u32::from_le_bytes(c.array()?) as usize;
        if name != spec.name || rows != spec.rows || cols != spec.cols {
            return Err(NetError::Format(format!(
                "tensor {name} {rows}x{cols} does not match {} {}x{}",
                spec.name, spec.rows, spec.cols
            )));
        }
        let values = c.f64s(spec.len())?;
        params.values[spec.range()].copy_from_slice(&values);
    }
    let step = u64::from_le_bytes(c.array()?);
    let n = u64::from_le_bytes(c.array()?) as usize;
    if n != params.layout.total {
        return Err(NetError::Format("optimizer state length".into()));
    }
    let m = c.f64s(n)?;
    let v = c.f64s(n)?;
    let rng = RngState {
        seed: u64::from_le_bytes(c.array()?),
        stream: u64::from_le_bytes(c.array()?),
        word_pos: u128::from_le_bytes(c.array()?),
    };
    if c.pos != buf.len() {
        return Err(NetError::Format("trailing bytes in checkpoint".into()));
    }
    params.check()?;
    Ok(Checkpoint {
        params,
        hyper: block.hyper,
        adam: AdamState { step, m, v },
        rng,
        epoch: block.epoch,
    })
}

/// Text manifest: shapes and SHA-256 of every tensor, the optimizer state and
/// the whole encoded file.
pub fn checkpoint_manifest(ck: &Checkpoint) -> Result<String, NetError> {
    let bytes = encode_checkpoint(ck)?;
    let mut s = String::new();
    let _ = writeln!(s, "format OFCK {CHECKPOINT_VERSION}");
    let _ = writeln!(s, "variant {}", ck.params.config.variant);
    let _ = writeln!(s, "epoch {}", ck.epoch);
    let _ = writeln!(s, "parameters {}", ck.params.layout.total);
    for t in &ck.params.layout.tensors {
        let _ = writeln!(
            s,
            "tensor {} {}x{} sha256={}",
            t.name,
            t.rows,
            t.cols,
            sha256_hex(&f64_bytes(&ck.params.values[t.range()]))
        );
    }
    let _ = writeln!(
        s,
        "adam step={} m={} v={}",
        ck.adam.step,
        sha256_hex(&f64_bytes(&ck.adam.m)),
        sha256_hex(&f64_bytes(&ck.adam.v))
    );
    let _ = writeln!(
        s,
        "rng seed={} stream={} word_pos={}",
        ck.rng.seed, ck.rng.stream, ck.rng.word_pos
    );
    let _ = writeln!(s, "file sha256={}", sha256_hex(&bytes));
    Ok(s)
}
