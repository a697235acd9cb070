use std::collections::HashMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::{AdamState, TrainConfig, TrainState};
use crate::config::KeyValues;
use crate::error::{GenexError, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8] = b"GENEX1\n";

const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

fn manifest(state: &TrainState, tensors: usize) -> String {
    let mut kv = state.model.to_kv();
    state.train.write_kv(&mut kv);
    kv.set("adam.t", state.adam.t);
    kv.set("epoch", state.epoch);
    kv.set("global_step", state.global_step);
    kv.set("seed", state.seed);
    let losses: Vec<String> = state.epoch_losses.iter().map(f64::to_string).collect();
    kv.set("epoch_losses", losses.join(","));
    kv.set("tensors", tensors);
    kv.to_text()
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u64(out, name.len() as u64);
    out.extend_from_slice(name.as_bytes());
    put_u64(out, t.shape().len() as u64);
    for &d in t.shape() {
        put_u64(out, d as u64);
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serialises the state to bytes in the checkpoint layout.
pub fn checkpoint_bytes(state: &TrainState) -> Vec<u8> {
    let n = state.params.len() + state.adam.m.len() + state.adam.v.len();
    let man = manifest(state, n);
    let mut out = Vec::from(MAGIC);
    put_u64(&mut out, man.len() as u64);
    out.extend_from_slice(man.as_bytes());
    for (name, t) in state.params.iter() {
        put_tensor(&mut out, name, t);
    }
    for (name, t) in &state.adam.m {
        put_tensor(&mut out, &format!("{M_PREFIX}{name}"), t);
    }
    for (name, t) in &state.adam.v {
        put_tensor(&mut out, &format!("{V_PREFIX}{name}"), t);
    }
    out
}

/// Writes atomically through a temporary file in the same directory.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(state);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| GenexError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| GenexError::io(path, e))
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
            .ok_or_else(|| GenexError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| GenexError::Checkpoint(format!("implausible {what} {v}")))
    }
}

fn parse_u64(kv: &KeyValues, key: &str) -> Result<u64> {
    kv.get(key)?
        .ok_or_else(|| GenexError::Checkpoint(format!("manifest lacks {key}")))
}

/// Parses checkpoint bytes. Nothing is returned unless the whole file is valid.
pub fn parse_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<TrainState> {
    if !bytes.starts_with(MAGIC) {
        return Err(GenexError::Checkpoint("bad magic or version".into()));
    }
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let man_len = r.len("manifest length")?;
    let man = std::str::from_utf8(r.take(man_len)?)
        .map_err(|_| GenexError::Checkpoint("manifest is not UTF-8".into()))?;
    let kv = KeyValues::parse(man)?;
    let stored = ModelConfig::from_kv(&kv)?;
    let cfg = expected.cloned().unwrap_or_else(|| stored.clone());
    let train = TrainConfig::default().apply(&kv)?;
    let count = parse_u64(&kv, "tensors")? as usize;
    let mut named: HashMap<String, Tensor<f32>> = HashMap::new();
    for _ in 0..count {
        let name_len = r.len("name length")?;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| GenexError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.len("rank")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len("dimension")?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| GenexError::Checkpoint(format!("tensor {name} is implausibly large")))?;
        let payload = r.take(numel * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| GenexError::Checkpoint(format!("tensor {name}: {e}")))?;
        if named.insert(name.clone(), t).is_some() {
            return Err(GenexError::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(GenexError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut m = HashMap::new();
    let mut v = HashMap::new();
    let mut p = HashMap::new();
    for (name, t) in named {
        if let Some(n) = name.strip_prefix(M_PREFIX) {
            m.insert(n.to_string(), t);
        } else if let Some(n) = name.strip_prefix(V_PREFIX) {
            v.insert(n.to_string(), t);
        } else {
            p.insert(name, t);
        }
    }
    let params = ModelParams::from_tensors(&cfg, p)?;
    let ordered = |mut src: HashMap<String, Tensor<f32>>, prefix: &str| -> Result<IndexMap<String, Tensor<f32>>> {
        let mut out = IndexMap::new();
        for (name, param) in params.iter() {
            let t = src
                .remove(name)
                .ok_or_else(|| GenexError::Checkpoint(format!("missing tensor {prefix}{name}")))?;
            if t.shape() != param.shape() {
                return Err(GenexError::Checkpoint(format!("tensor {prefix}{name} has wrong shape")));
            }
            out.insert(name.to_string(), t);
        }
        if let Some(extra) = src.keys().min() {
            return Err(GenexError::Checkpoint(format!("unexpected tensor {prefix}{extra}")));
        }
        Ok(out)
    };
    let adam = AdamState {
        config: train.adam,
        t: parse_u64(&kv, "adam.t")?,
        m: ordered(m, M_PREFIX)?,
        v: ordered(v, V_PREFIX)?,
    };
    let epoch_losses = match kv.get_str("epoch_losses") {
        Some("") | None => Vec::new(),
        Some(s) => s
            .split(',')
            .map(|x| x.parse::<f64>().map_err(|e| GenexError::Checkpoint(format!("epoch_losses: {e}"))))
            .collect::<Result<_>>()?,
    };
    Ok(TrainState {
        model: stored,
        train,
        params,
        adam,
        epoch: parse_u64(&kv, "epoch")?,
        global_step: parse_u64(&kv, "global_step")?,
        seed: parse_u64(&kv, "seed")?,
        epoch_losses,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| GenexError::io(path, e))?;
    parse_checkpoint(&bytes, None)
}

/// Loads a checkpoint whose tensors must fit `cfg`; the error names the
/// first tensor that does not.
pub fn load_checkpoint_for(path: &Path, cfg: &ModelConfig) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| GenexError::io(path, e))?;
    parse_checkpoint(&bytes, Some(cfg))
}
