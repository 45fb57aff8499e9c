//! Versioned checkpoint container.
//!
//! The payload file is little-endian binary:
//!
//! ```text
//! magic "TIPCKPT\0" | u32 version | config | u32 n_meta | (str key, str value)*
//! | u32 n_tensors | (str name, u32 rank, u64 dims*, f64 data*)*
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8. Next to it, a text
//! manifest (`<payload>.manifest`) lists the version, the SHA-256 of the
//! payload and one `tensor <name> <dims>` line per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;

use super::{ModelConfig, ModelError, ModelParams, ParamKey, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TIPCKPT\0";

/// Parameters plus free-form metadata (training config, epoch, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f64>,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f64>) -> Self {
        Self {
            params,
            metadata: Vec::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn manifest_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let cfg = ckpt.params.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    for v in [cfg.n_agents, cfg.t_past, cfg.t_future, cfg.k_samples, cfg.hidden] {
        put_u64(&mut buf, v as u64);
    }
    buf.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    buf.push(cfg.has_task_encoder as u8);
    buf.extend_from_slice(&cfg.position_scale.to_le_bytes());
    put_u32(&mut buf, ckpt.metadata.len() as u32);
    for (k, v) in &ckpt.metadata {
        put_str(&mut buf, k);
        put_str(&mut buf, v);
    }
    put_u32(&mut buf, ckpt.params.keys().len() as u32);
    for (key, t) in ckpt.params.iter() {
        put_str(&mut buf, key.name());
        put_u32(&mut buf, t.shape().len() as u32);
        for d in t.shape() {
            put_u64(&mut buf, *d as u64);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn checksum(payload: &[u8]) -> String {
    hex(&Sha256::digest(payload))
}

fn manifest_text(ckpt: &Checkpoint, sum: &str) -> String {
    let mut s = format!("version={CHECKPOINT_VERSION}\nsha256={sum}\n");
    for (key, t) in ckpt.params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("tensor {} {}\n", key.name(), dims.join("x")));
    }
    s
}

/// Writes the payload to `path` and the manifest next to it.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let payload = encode(ckpt);
    let sum = checksum(&payload);
    fs::write(path, &payload)?;
    fs::write(manifest_path(path), manifest_text(ckpt, &sum))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| ModelError::Format("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ModelError::Format("invalid utf-8 string".into()))
    }
}

fn decode(payload: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: payload, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config = ModelConfig {
        n_agents: r.usize()?,
        t_past: r.usize()?,
        t_future: r.usize()?,
        k_samples: r.usize()?,
        hidden: r.usize()?,
        dropout_rate: r.f64()?,
        has_task_encoder: match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(ModelError::Format(format!("bad flag byte {b}"))),
        },
        position_scale: r.f64()?,
    };
    let n_meta = r.u32()?;
    let mut metadata = Vec::new();
    for _ in 0..n_meta {
        metadata.push((r.str()?, r.str()?));
    }
    let n_tensors = r.u32()?;
    let mut named = Vec::new();
    for _ in 0..n_tensors {
        let name = r.str()?;
        let key = ParamKey::from_name(&name)
            .ok_or_else(|| ModelError::Format(format!("unknown tensor {name}")))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n.saturating_mul(8) > payload.len() {
            return Err(ModelError::Format(format!("tensor {name} larger than file")));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| ModelError::Format(format!("{name}: {e}")))?;
        named.push((key, t));
    }
    if r.pos != payload.len() {
        return Err(ModelError::Format("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params: ModelParams::from_tensors(config, named)?,
        metadata,
    })
}

/// Reads a checkpoint, verifying the manifest checksum when a manifest is
/// present.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let payload = fs::read(path)?;
    let mpath = manifest_path(path);
    if mpath.exists() {
        let manifest = fs::read_to_string(&mpath)?;
        let mut listed = None;
        for line in manifest.lines() {
            if let Some(v) = line.strip_prefix("version=") {
                let found: u32 = v
                    .trim()
                    .parse()
                    .map_err(|_| ModelError::Format(format!("bad manifest version {v}")))?;
                if found != CHECKPOINT_VERSION {
                    return Err(ModelError::VersionMismatch {
                        found,
                        expected: CHECKPOINT_VERSION,
                    });
                }
            } else if let Some(v) = line.strip_prefix("sha256=") {
                listed = Some(v.trim().to_string());
            }
        }
        let listed = listed.ok_or_else(|| ModelError::Format("manifest lacks sha256".into()))?;
        let actual = checksum(&payload);
        if listed != actual {
            return Err(ModelError::ChecksumMismatch {
                manifest: listed,
                payload: actual,
            });
        }
    }
    decode(&payload)
}
