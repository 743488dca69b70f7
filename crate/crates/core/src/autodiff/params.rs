use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AutodiffError, GradientMap, Tape, Tensor2, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor2>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor under a unique name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor2 {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor2)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor2::len).sum()
    }

    /// Registers every tensor as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams, AutodiffError> {
        let vars = self.values.iter().map(|v| tape.param(v.clone())).collect::<Result<_, _>>()?;
        Ok(BoundParams { vars })
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update((v.rows() as u64).to_le_bytes());
            h.update((v.cols() as u64).to_le_bytes());
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Writes the checkpoint container.
    ///
    /// Layout: magic `KSPC`, `u32` format version, `u64` header length, JSON
    /// header, then each tensor's values as little-endian `f64` in header
    /// order.
    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<(), AutodiffError> {
        let mut offset = 0u64;
        let tensors = self
            .names
            .iter()
            .zip(&self.values)
            .map(|(name, v)| {
                let e = TensorEntry { name: name.clone(), rows: v.rows(), cols: v.cols(), offset };
                offset += v.len() as u64 * 8;
                e
            })
            .collect();
        let header = CheckpointHeader { version: CHECKPOINT_VERSION, tensors, meta };
        let header_bytes = serde_json::to_vec(&header).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for v in &self.values {
            for x in v.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ParamStore::save`], returning the store
    /// and the free-form metadata block.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), AutodiffError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let header_len = u64::from_le_bytes(u64buf) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let mut store = ParamStore::new();
        for e in header.tensors {
            let start = e.offset as usize;
            let end = start + e.rows * e.cols * 8;
            if end > body.len() {
                return Err(AutodiffError::Checkpoint(format!("tensor {} truncated", e.name)));
            }
            let data = body[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.insert(e.name, Tensor2::new(e.rows, e.cols, data)?);
        }
        Ok((store, header.meta))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KSPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

/// Tape variables for every tensor in a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps variables already on a tape, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Collects the gradient of every bound parameter, in store order.
    pub fn collect(&self, grads: &GradientMap) -> Vec<Tensor2> {
        self.vars.iter().map(|&v| grads.get(v).cloned().expect("bound parameter missing from gradient map")).collect()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
