//! Versioned checkpoint container: a JSON metadata block followed by named
//! little-endian `f32` arrays.
//!
//! Layout: magic `RECK`, version `u32`, metadata length `u64`, metadata
//! JSON, array count `u32`, then per array: name length `u32`, UTF-8 name,
//! dtype `u32` (1 = f32), rank `u32`, dims (`u64` each), payload.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::DTYPE_F32;
use crate::nn::{load_values, AdamW, AdamWConfig, Params};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RECK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 of a value's canonical JSON form.
pub fn spec_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("spec serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    spec_hash: String,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// What the file holds, e.g. `toy-vae`, `bwe`, `m2s`.
    pub kind: String,
    /// Hash of the architecture the arrays belong to.
    pub spec_hash: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, ArrayD<f32>)>,
}

/// Serializable snapshot of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| Error::format("rng.seed", e.to_string()))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::format("rng.seed", "expected 32 bytes"))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::format("rng.word_pos", "not an integer"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Optimizer metadata stored next to its moment arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: AdamWConfig,
    pub steps: u64,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, spec_hash: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            spec_hash: spec_hash.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push_params(&mut self, prefix: &str, model: &dyn Params<f32>) {
        for (name, v) in model.named_values() {
            self.arrays.push((format!("{prefix}.{name}"), v));
        }
    }

    /// Loads every parameter of `model` from arrays under `prefix`; extra or
    /// missing arrays are errors.
    pub fn load_params(&self, prefix: &str, model: &mut dyn Params<f32>) -> Result<()> {
        let values = self.section(prefix);
        if values.len() != model.named_values().len() {
            return Err(Error::Mismatch(format!(
                "`{prefix}` has {} arrays in the file, model has {} parameters",
                values.len(),
                model.named_values().len()
            )));
        }
        load_values(model, &values)
    }

    fn section(&self, prefix: &str) -> BTreeMap<String, ArrayD<f32>> {
        let lead = format!("{prefix}.");
        self.arrays
            .iter()
            .filter_map(|(n, v)| n.strip_prefix(&lead).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn push_optimizer(&mut self, prefix: &str, opt: &AdamW<f32>) -> OptimizerMeta {
        for (name, m, v) in &opt.state {
            self.arrays.push((format!("{prefix}.m.{name}"), m.clone()));
            self.arrays.push((format!("{prefix}.v.{name}"), v.clone()));
        }
        OptimizerMeta {
            config: opt.config,
            steps: opt.steps,
        }
    }

    /// Rebuilds an optimizer whose state follows `model`'s parameter order.
    pub fn load_optimizer(&self, prefix: &str, meta: &OptimizerMeta, model: &dyn Params<f32>) -> Result<AdamW<f32>> {
        let m = self.section(&format!("{prefix}.m"));
        let v = self.section(&format!("{prefix}.v"));
        let mut opt = AdamW::new(meta.config);
        opt.steps = meta.steps;
        if m.is_empty() && v.is_empty() {
            // never stepped
            return Ok(opt);
        }
        let mut err = None;
        model.visit("", &mut |name, p| {
            match (m.get(name), v.get(name)) {
                (Some(a), Some(b)) if a.shape() == p.shape() && b.shape() == p.shape() => {
                    opt.state.push((name.to_string(), a.clone(), b.clone()))
                }
                _ => {
                    err.get_or_insert_with(|| Error::Mismatch(format!("optimizer state for `{name}` missing or misshapen")));
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if opt.state.len() != m.len() || opt.state.len() != v.len() {
            return Err(Error::Mismatch(format!("optimizer `{prefix}` has extra state arrays")));
        }
        Ok(opt)
    }

    pub fn require_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Mismatch(format!(
                "checkpoint holds a `{}` model, expected `{kind}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn require(&self, kind: &str, spec_hash: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Mismatch(format!(
                "checkpoint holds a `{}` model, expected `{kind}`",
                self.kind
            )));
        }
        if self.spec_hash != spec_hash {
            return Err(Error::Mismatch(format!(
                "architecture hash {} does not match expected {spec_hash}",
                self.spec_hash
            )));
        }
        Ok(())
    }

    pub fn meta_field<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::format(format!("meta.{key}"), "missing"))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::format(format!("meta.{key}"), e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            spec_hash: self.spec_hash.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&DTYPE_F32.to_le_bytes());
            out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format("magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Mismatch(format!(
                "checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let meta_len = r.u64("meta_len")? as usize;
        let header: Header =
            serde_json::from_slice(r.take(meta_len, "meta")?).map_err(|e| Error::format("meta", e.to_string()))?;
        let count = r.u32("array_count")?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let n = r.u32("name_len")? as usize;
            let name = std::str::from_utf8(r.take(n, "name")?)
                .map_err(|_| Error::format("name", "not UTF-8"))?
                .to_string();
            if r.u32("dtype")? != DTYPE_F32 {
                return Err(Error::format("dtype", format!("unsupported dtype for `{name}`")));
            }
            let ndim = r.u32("ndim")? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u64("dims")? as usize);
            }
            let len: usize = dims.iter().product();
            let payload = r.take(len * 4, "payload")?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let a = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::format("dims", e.to_string()))?;
            arrays.push((name, a));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("payload", "trailing bytes after last array"));
        }
        Ok(Self {
            kind: header.kind,
            spec_hash: header.spec_hash,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable listing of the metadata and every array.
    pub fn manifest(&self) -> String {
        let mut s = format!(
            "kind: {}\nversion: {CHECKPOINT_VERSION}\nspec_hash: {}\nmeta: {}\narrays ({}):\n",
            self.kind,
            self.spec_hash,
            serde_json::to_string_pretty(&self.meta).unwrap_or_default(),
            self.arrays.len()
        );
        let mut total = 0;
        for (name, a) in &self.arrays {
            total += a.len();
            s.push_str(&format!("  {name} {:?} f32\n", a.shape()));
        }
        s.push_str(&format!("total scalars: {total}\n"));
        s
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::format(field, "truncated")),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}
