//! Named parameter storage, gradient buffers and binary checkpoints.
//!
//! Checkpoint layout (all integers little-endian):
//! `MFCKPT\0\0`, format version u32, config text (u32 length + UTF-8), tensor
//! count u32, then per tensor: name (u32 length + UTF-8), dtype (u32 length +
//! `f64`), rank u32, dims u64 each, and the row-major payload as f64.

use std::collections::HashMap;

use thiserror::Error;

use super::{Tensor, TensorError};

pub type ParamId = usize;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter; panics on duplicate names, which would
    /// break the one-slot-per-tensor checkpoint contract.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, t))| (i, n.as_str(), t))
    }

    /// Copies values of same-named, same-shaped parameters from `other`.
    /// Returns the names that were copied.
    pub fn load_matching(&mut self, other: &ParamStore) -> Vec<String> {
        let mut copied = Vec::new();
        for (id, name) in self.names.iter().enumerate() {
            if let Some(src) = other.id(name).map(|j| other.get(j)) {
                if src.shape() == self.values[id].shape() {
                    self.values[id] = src.clone();
                    copied.push(name.clone());
                }
            }
        }
        copied
    }
}

/// Per-parameter gradient accumulators; `None` means no gradient reached
/// the parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub values: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            values: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.values[id].as_ref()
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        match &mut self.values[id] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: &Grads) {
        for (id, g) in other.values.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(id, g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.values.iter_mut().flatten() {
            for x in &mut g.data {
                *x *= factor;
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
    #[error(transparent)]
    Shape(#[from] TensorError),
}

const MAGIC: &[u8; 8] = b"MFCKPT\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub params: ParamStore,
}

pub fn write_checkpoint(config: &str, params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, config);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        put_str(&mut out, name);
        put_str(&mut out, "f64");
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols as u64).to_le_bytes());
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Invalid("non-UTF-8 text".into()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config = r.string()?;
    let n = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let name = r.string()?;
        let dtype = r.string()?;
        if dtype != "f64" {
            return Err(CheckpointError::Invalid(format!("dtype `{dtype}`")));
        }
        if r.u32()? != 2 {
            return Err(CheckpointError::Invalid(format!("rank of `{name}`")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let len = rows.checked_mul(cols).ok_or(CheckpointError::Truncated)?;
        let raw = r.take(len.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.id(&name).is_some() {
            return Err(CheckpointError::Invalid(format!("duplicate tensor `{name}`")));
        }
        params.add(name, Tensor::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Invalid("trailing bytes".into()));
    }
    Ok(Checkpoint { config, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_is_byte_exact() {
        let mut p = ParamStore::new();
        p.add(
            "a",
            Tensor::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap(),
        );
        p.add("b.bias", Tensor::zeros(1, 3));
        let bytes = write_checkpoint("d=4\nheads=2\n", &p);
        let ck = read_checkpoint(&bytes).unwrap();
        assert_eq!(ck.config, "d=4\nheads=2\n");
        assert_eq!(write_checkpoint(&ck.config, &ck.params), bytes);
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated)
        ));
        assert!(matches!(read_checkpoint(b"nope"), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn grads_accumulate() {
        let mut p = ParamStore::new();
        let id = p.add("x", Tensor::zeros(1, 2));
        let mut g = Grads::zeros_like(&p);
        assert!(g.get(id).is_none());
        g.accumulate(id, &Tensor::full(1, 2, 1.5));
        g.accumulate(id, &Tensor::full(1, 2, 0.5));
        assert_eq!(g.get(id).unwrap().data, vec![2.0, 2.0]);
    }
}
