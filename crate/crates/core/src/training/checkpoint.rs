//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "MLSTMCK1"
//! header     u32 length + UTF-8 `key=value` lines
//! count      u32
//! tensor*    u32 len + store label, u32 len + name, u64 rows, u64 cols,
//!            u8 frozen, rows*cols f64
//! checksum   32 bytes, SHA-256 of everything above
//! ```
//!
//! Header keys: `kind` (`full` or `meta`), `arch`, `d`, `h`, `m`, `z`,
//! `shared_h`, `private_embeddings`, `vocab_size`, `vocab_hash`, and one
//! `task` line per task (`id classification N lambda` or
//! `id tagging lambda TAG...`).

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::multitask::{Architecture, ModelConfig, MultiTaskModel, TaskInfo};
use crate::numeric::{Matrix, ParamStore};
use crate::task::HeadKind;

const MAGIC: &[u8; 8] = b"MLSTMCK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Full,
    Meta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub arch: Architecture,
    pub cfg: ModelConfig,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub tasks: Vec<TaskInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub store: String,
    pub name: String,
    pub value: Matrix,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<StoredTensor>,
}

fn header_of(model: &MultiTaskModel, kind: CheckpointKind, vocab_hash: &str) -> CheckpointHeader {
    CheckpointHeader {
        kind,
        arch: model.arch,
        cfg: model.cfg.clone(),
        vocab_size: model.vocab_size,
        vocab_hash: vocab_hash.to_string(),
        tasks: model.tasks.clone(),
    }
}

fn stored(store: &ParamStore, name: &str) -> Result<StoredTensor> {
    let e = store.entry(name)?;
    Ok(StoredTensor {
        store: store.label().to_string(),
        name: name.to_string(),
        value: e.value.clone(),
        frozen: e.frozen,
    })
}

impl Checkpoint {
    /// Every tensor of every store.
    pub fn full(model: &MultiTaskModel, vocab_hash: &str) -> Result<Self> {
        let mut tensors = Vec::new();
        for store in std::iter::once(&model.shared).chain(&model.private) {
            for name in store.names() {
                tensors.push(stored(store, name)?);
            }
        }
        Ok(Checkpoint {
            header: header_of(model, CheckpointKind::Full, vocab_hash),
            tensors,
        })
    }

    /// Only the `meta.*` tensors that task `k` reads.
    pub fn meta_only(model: &MultiTaskModel, k: usize, vocab_hash: &str) -> Result<Self> {
        let store = model
            .meta_store(k)
            .ok_or_else(|| Error::Unsupported(format!("a {} model has no Meta-LSTM", model.arch)))?;
        let tensors = store
            .names()
            .filter(|n| n.starts_with("meta."))
            .map(|n| stored(store, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            header: header_of(model, CheckpointKind::Meta, vocab_hash),
            tensors,
        })
    }

    /// The meta tensors as a store, for transfer.
    pub fn meta_store(&self) -> Result<ParamStore> {
        let mut out = ParamStore::new("meta");
        for t in self.tensors.iter().filter(|t| t.name.starts_with("meta.")) {
            out.insert(t.name.clone(), t.value.clone())?;
        }
        if out.is_empty() {
            return Err(Error::Structural("checkpoint holds no Meta-LSTM tensors".into()));
        }
        Ok(out)
    }

    /// Fails unless the stored `(d, h, m, z)` equal `cfg`'s.
    pub fn check_dims(&self, cfg: &ModelConfig) -> Result<()> {
        let c = &self.header.cfg;
        let found = (c.d, c.h, c.m, c.z);
        let expected = (cfg.d, cfg.h, cfg.m, cfg.z);
        if found != expected {
            return Err(Error::DimMismatch {
                what: "checkpoint (d, h, m, z)".into(),
                expected: format!("{expected:?}"),
                found: format!("{found:?}"),
            });
        }
        Ok(())
    }

    /// Rebuilds the model a full checkpoint was taken from.
    pub fn to_model(&self) -> Result<MultiTaskModel> {
        if self.header.kind != CheckpointKind::Full {
            return Err(Error::Unsupported("a meta-only checkpoint cannot rebuild a model".into()));
        }
        let h = &self.header;
        let mut model = MultiTaskModel::new(h.arch, h.tasks.clone(), &h.cfg, h.vocab_size, 0)?;
        let expected = model.param_count();
        let mut loaded = 0;
        for t in &self.tensors {
            let store = if t.store == model.shared.label() {
                &mut model.shared
            } else {
                model
                    .private
                    .iter_mut()
                    .find(|s| s.label() == t.store)
                    .ok_or_else(|| Error::Structural(format!("unknown store `{}` in checkpoint", t.store)))?
            };
            store.set_value(&t.name, t.value.clone())?;
            store.set_frozen(&t.name, t.frozen)?;
            loaded += t.value.len();
        }
        if loaded != expected {
            return Err(Error::Structural(format!(
                "checkpoint covers {loaded} of {expected} parameters"
            )));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let header = format_header(&self.header);
        put_bytes(&mut out, header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_bytes(&mut out, t.store.as_bytes());
            put_bytes(&mut out, t.name.as_bytes());
            out.extend_from_slice(&(t.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.value.cols() as u64).to_le_bytes());
            out.push(t.frozen as u8);
            for v in t.value.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Structural("not a checkpoint file".into()));
        }
        let header = std::str::from_utf8(r.bytes()?)
            .map_err(|_| Error::Structural("checkpoint header is not UTF-8".into()))?;
        let header = parse_header(header)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let store = r.string()?;
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let frozen = r.take(1)?[0] != 0;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Structural("tensor size overflows".into()))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Structural("tensor size overflows".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(StoredTensor {
                store,
                name,
                value: Matrix::from_vec(rows, cols, data)?,
                frozen,
            });
        }
        if r.pos != body.len() {
            return Err(Error::Structural("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes through a temporary file and a rename, so a failed save leaves
    /// no partial checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

/// Hex SHA-256 over the names, shapes and values of `names` in `store`.
pub fn tensor_hash(store: &ParamStore, names: &[String]) -> Result<String> {
    let mut h = Sha256::new();
    for name in names {
        let v = store.value(name)?;
        h.update(name.as_bytes());
        h.update((v.rows() as u64).to_le_bytes());
        h.update((v.cols() as u64).to_le_bytes());
        for x in v.as_slice() {
            h.update(x.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
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
            .ok_or_else(|| Error::Structural("checkpoint ends early".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Structural("name is not UTF-8".into()))
    }
}

fn format_header(h: &CheckpointHeader) -> String {
    let mut s = String::new();
    let kind = match h.kind {
        CheckpointKind::Full => "full",
        CheckpointKind::Meta => "meta",
    };
    s.push_str(&format!("kind={kind}\narch={}\n", h.arch));
    s.push_str(&format!(
        "d={}\nh={}\nm={}\nz={}\nshared_h={}\nprivate_embeddings={}\n",
        h.cfg.d, h.cfg.h, h.cfg.m, h.cfg.z, h.cfg.shared_h, h.cfg.private_embeddings as u8
    ));
    s.push_str(&format!("vocab_size={}\nvocab_hash={}\n", h.vocab_size, h.vocab_hash));
    for t in &h.tasks {
        match &t.head {
            HeadKind::Classification { n_classes } => {
                s.push_str(&format!("task={} classification {} {:?}\n", t.id, n_classes, t.lambda))
            }
            HeadKind::Tagging { tags } => {
                s.push_str(&format!("task={} tagging {:?} {}\n", t.id, t.lambda, tags.join(" ")))
            }
        }
    }
    s
}

fn parse_header(text: &str) -> Result<CheckpointHeader> {
    let bad = |msg: String| Error::Structural(format!("checkpoint header: {msg}"));
    let mut kind = None;
    let mut arch = None;
    let mut cfg = ModelConfig::default();
    let mut vocab_size = None;
    let mut vocab_hash = String::new();
    let mut tasks = Vec::new();
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line `{line}`")))?;
        let num = || value.parse::<usize>().map_err(|_| bad(format!("`{key}` is not a count")));
        match key {
            "kind" => {
                kind = Some(match value {
                    "full" => CheckpointKind::Full,
                    "meta" => CheckpointKind::Meta,
                    _ => return Err(bad(format!("kind `{value}`"))),
                })
            }
            "arch" => arch = Some(value.parse::<Architecture>()?),
            "d" => cfg.d = num()?,
            "h" => cfg.h = num()?,
            "m" => cfg.m = num()?,
            "z" => cfg.z = num()?,
            "shared_h" => cfg.shared_h = num()?,
            "private_embeddings" => cfg.private_embeddings = num()? != 0,
            "vocab_size" => vocab_size = Some(num()?),
            "vocab_hash" => vocab_hash = value.to_string(),
            "task" => tasks.push(parse_task(value).ok_or_else(|| bad(format!("task `{value}`")))?),
            _ => return Err(bad(format!("unknown key `{key}`"))),
        }
    }
    Ok(CheckpointHeader {
        kind: kind.ok_or_else(|| bad("missing kind".into()))?,
        arch: arch.ok_or_else(|| bad("missing arch".into()))?,
        cfg,
        vocab_size: vocab_size.ok_or_else(|| bad("missing vocab_size".into()))?,
        vocab_hash,
        tasks,
    })
}

fn parse_task(value: &str) -> Option<TaskInfo> {
    let mut f = value.split(' ');
    let id = f.next()?.to_string();
    match f.next()? {
        "classification" => {
            let n_classes = f.next()?.parse().ok()?;
            let lambda = f.next()?.parse().ok()?;
            Some(TaskInfo {
                id,
                head: HeadKind::Classification { n_classes },
                lambda,
            })
        }
        "tagging" => {
            let lambda = f.next()?.parse().ok()?;
            let tags = f.map(str::to_string).collect();
            Some(TaskInfo {
                id,
                head: HeadKind::Tagging { tags },
                lambda,
            })
        }
        _ => None,
    }
}
