//! Binary checkpoint container.
//!
//! Layout: `TKB1`, a `u32` header length and that many bytes of UTF-8 JSON,
//! a `u32` tensor count, then per tensor a `u32`-prefixed name, a `u32` rank,
//! `u64` dimensions and the row-major values as little-endian `f64`. A CRC32
//! of everything before it closes the file. All integers are little-endian.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::dataset::{EntityId, Vocabulary};
use crate::encoders::{ConceptEncoder, EncoderConfig, EncoderResources};
use crate::error::{Error, Result};
use crate::kernels::Tensor;
use crate::rng::RngState;
use crate::transe::EmbeddingStore;
use crate::{Real, PRECISION};

pub const CHECKPOINT_VERSION: u64 = 1;
const MAGIC: &[u8; 4] = b"TKB1";
const VELOCITY_PREFIX: &str = "velocity/";

/// Positions of the training random streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainRng {
    pub shuffle: RngState,
    pub corrupt: RngState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub best_mean_rank: Option<Real>,
    /// Evaluations since the best one.
    pub stale: usize,
}

/// Everything needed to evaluate a model or resume its training.
///
/// In joint mode `store` holds the relation table being trained and, as entity
/// rows, the encoder outputs for every described entity as of the last
/// completed epoch. Rows of entities without a description are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub training_entities: Vec<EntityId>,
    pub epoch: usize,
    pub rng: TrainRng,
    pub early_stopping: EarlyStopping,
    pub store: EmbeddingStore,
    pub encoder: Option<ConceptEncoder>,
    /// Momentum buffers keyed by the name of the tensor they follow.
    pub velocities: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct EncoderHeader {
    config: EncoderConfig,
    resources: EncoderResources,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u64,
    precision: String,
    config: TrainConfig,
    vocab: Vocabulary,
    training_entities: Vec<EntityId>,
    epoch: usize,
    rng: TrainRng,
    early_stopping: EarlyStopping,
    encoder: Option<EncoderHeader>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("checkpoint field too large: {v}")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_u32(buf, name.len())?;
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.shape().len())?;
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        #[allow(clippy::unnecessary_cast)]
        buf.extend_from_slice(&(v as f64).to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Integrity(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32("tensor name")?;
        let name = std::str::from_utf8(self.take(len, "tensor name")?)
            .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = self.u32("tensor rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.u64("tensor shape")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Integrity(format!("tensor `{name}` has an impossible shape")))?;
        let raw = self.take(count, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Real).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Integrity(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn is_joint(&self) -> bool {
        self.encoder.is_some()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            precision: PRECISION.to_owned(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            training_entities: self.training_entities.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            early_stopping: self.early_stopping.clone(),
            encoder: self.encoder.as_ref().map(|e| EncoderHeader { config: e.config(), resources: e.resources() }),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::State(format!("cannot encode header: {e}")))?;
        let mut tensors: Vec<(String, &Tensor)> =
            vec![("store.entities".into(), self.store.entities()), ("store.relations".into(), self.store.relations())];
        if let Some(enc) = &self.encoder {
            tensors.extend(enc.named_parameters().into_iter().map(|(n, p)| (n, &p.value)));
        }
        tensors.extend(self.velocities.iter().map(|(n, t)| (format!("{VELOCITY_PREFIX}{n}"), t)));

        let mut buf = MAGIC.to_vec();
        put_u32(&mut buf, json.len())?;
        buf.extend_from_slice(&json);
        put_u32(&mut buf, tensors.len())?;
        for (name, t) in tensors {
            put_tensor(&mut buf, &name, t)?;
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 {
            return Err(Error::Integrity(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Integrity("missing TKB1 magic bytes".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::Integrity("checksum mismatch (file truncated or corrupted)".into()));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let len = r.u32("header length")?;
        let value: serde_json::Value = serde_json::from_slice(r.take(len, "header")?)
            .map_err(|e| Error::Integrity(format!("header is not valid JSON: {e}")))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(CHECKPOINT_VERSION) => {}
            other => {
                let found = other.map_or_else(|| "missing".to_owned(), |v| v.to_string());
                return Err(Error::UnsupportedVersion(found));
            }
        }
        let precision = value.get("precision").and_then(|v| v.as_str()).unwrap_or("missing");
        if precision != PRECISION {
            return Err(Error::PrecisionMismatch { expected: PRECISION.to_owned(), found: precision.to_owned() });
        }
        let header: Header =
            serde_json::from_value(value).map_err(|e| Error::Integrity(format!("malformed header: {e}")))?;

        let count = r.u32("tensor count")?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let (name, t) = r.tensor()?;
            tensors.insert(name, t);
        }
        if r.pos != body.len() {
            return Err(Error::Integrity(format!("{} unexpected trailing bytes", body.len() - r.pos)));
        }
        let mut take =
            |name: &str| tensors.remove(name).ok_or_else(|| Error::Integrity(format!("missing tensor `{name}`")));
        let store = EmbeddingStore::new(take("store.entities")?, take("store.relations")?, header.config.distance)?;
        let encoder = match &header.encoder {
            Some(h) => Some(ConceptEncoder::from_parts(&h.config, &h.resources, &tensors)?),
            None => None,
        };
        let velocities = tensors
            .into_iter()
            .filter_map(|(n, t)| n.strip_prefix(VELOCITY_PREFIX).map(|s| (s.to_owned(), t)))
            .collect();
        Ok(Checkpoint {
            config: header.config,
            vocab: header.vocab,
            training_entities: header.training_entities,
            epoch: header.epoch,
            rng: header.rng,
            early_stopping: header.early_stopping,
            store,
            encoder,
            velocities,
        })
    }

    /// Writes to a temporary file next to `path` and renames it into place,
    /// so an interrupted save never leaves a partial checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| Error::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
