//! Binary checkpoint: `PAMF` magic, little-endian version and dimension
//! header, length-prefixed id vocabularies, then row-major `f64` arrays.
//! A JSON manifest is written next to it with the `.json` extension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelParams, RecsysError, TrainConfig, Vocabulary};
use crate::util::{atomic_write, sha256_hex};

const MAGIC: &[u8; 4] = b"PAMF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub dim: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub seed: u64,
    pub config_hash: String,
    pub config: TrainConfig,
    pub checkpoint_sha256: String,
}

pub fn manifest_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(params.users.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(params.items.len() as u64).to_le_bytes());
    buf.extend_from_slice(&params.rng_seed.to_le_bytes());
    for id in params.users.ids() {
        put_str(&mut buf, id);
    }
    for id in params.items.ids() {
        put_str(&mut buf, id);
    }
    put_f64s(&mut buf, &params.user_factors);
    put_f64s(&mut buf, &params.item_factors);
    put_f64s(&mut buf, &params.output_weights);
    put_f64s(&mut buf, &params.item_bias);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| "truncated".to_string())?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("overflow")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let dim = r.u32()? as usize;
    let n_users = r.u64()? as usize;
    let n_items = r.u64()? as usize;
    let rng_seed = r.u64()?;
    let users: Vec<String> = (0..n_users).map(|_| r.string()).collect::<Result<_, _>>()?;
    let items: Vec<String> = (0..n_items).map(|_| r.string()).collect::<Result<_, _>>()?;
    let users = Vocabulary::new(users);
    let items = Vocabulary::new(items);
    if users.len() != n_users || items.len() != n_items {
        return Err("duplicate ids in vocabulary".into());
    }
    let params = ModelParams {
        user_factors: r.f64s(n_users * dim)?,
        item_factors: r.f64s(n_items * dim)?,
        output_weights: r.f64s(dim)?,
        item_bias: r.f64s(n_items)?,
        users,
        items,
        dim,
        rng_seed,
    };
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    if !params.is_finite() {
        return Err("non-finite parameters".into());
    }
    Ok(params)
}

pub fn save_model(path: &Path, params: &ModelParams, config: &TrainConfig) -> Result<ModelManifest, RecsysError> {
    let bytes = encode(params);
    atomic_write(path, &bytes)?;
    let config_json = serde_json::to_vec(config).expect("config serializes");
    let manifest = ModelManifest {
        format_version: VERSION,
        dim: params.dim,
        n_users: params.users.len(),
        n_items: params.items.len(),
        seed: params.rng_seed,
        config_hash: sha256_hex(&config_json),
        config: config.clone(),
        checkpoint_sha256: sha256_hex(&bytes),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    atomic_write(&manifest_path(path), &json)?;
    Ok(manifest)
}

pub fn load_model(path: &Path) -> Result<ModelParams, RecsysError> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|reason| RecsysError::Checkpoint { path: path.display().to_string(), reason })
}
