//! LRCK checkpoint files.
//!
//! ```text
//! "LRCK" | version u32 = 1 | ranker_kind u32 | relevance_kind u32
//! | d_model u32 | d_proj u32 | d_hidden u32 | block_count u32 | n_tensors u32
//! n_tensors × { name_len u32 | name utf-8 | rank u32 | dims u32×rank | f32 data }
//! trailer_len u32 | trailer utf-8 JSON {"config": …, "dataset_fingerprint": …}
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainConfig;
use crate::feature_store::write_atomic;
use crate::numkernel::Tensor2;
use crate::rankers::{Layout, RankerKind, RankerParams, RankerSpec, RelevanceKind};

pub const LRCK_MAGIC: &[u8; 4] = b"LRCK";
pub const LRCK_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt checkpoint at byte {offset}: {what}")]
    Corrupt { offset: usize, what: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: RankerSpec,
    pub tensors: Vec<NamedTensor>,
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    config: TrainConfig,
    dataset_fingerprint: String,
}

impl Checkpoint {
    pub fn from_params(params: &RankerParams, config: TrainConfig, dataset_fingerprint: String) -> Self {
        let layout = params.layout();
        let tensors = layout
            .tensors
            .iter()
            .zip(params.tensors())
            .map(|(spec, t)| NamedTensor {
                name: spec.name.clone(),
                dims: if spec.vector {
                    vec![spec.cols]
                } else {
                    vec![spec.rows, spec.cols]
                },
                data: t.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Self {
            spec: *params.spec(),
            tensors,
            config,
            dataset_fingerprint,
        }
    }

    /// Rebuilds scoring parameters in full precision.
    pub fn to_params(&self) -> RankerParams {
        let layout = Layout::for_spec(&self.spec);
        let tensors = layout
            .tensors
            .iter()
            .zip(&self.tensors)
            .map(|(s, t)| Tensor2::from_vec(s.rows, s.cols, t.data.iter().map(|&v| v as f64).collect()))
            .collect();
        RankerParams::from_tensors(self.spec, tensors).expect("checkpoint validated against its layout")
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn tensor_names(&self) -> Vec<&str> {
        self.tensors.iter().map(|t| t.name.as_str()).collect()
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(LRCK_MAGIC);
    put(&mut out, LRCK_VERSION);
    let s = &ckpt.spec;
    put(&mut out, match s.kind {
        RankerKind::Listwise => 0,
        RankerKind::Pointwise => 1,
    });
    put(&mut out, match s.relevance {
        RelevanceKind::Cosine => 0,
        RelevanceKind::Learnable => 1,
    });
    for v in [s.d_model, s.d_proj, s.d_hidden, s.block_count, ckpt.tensors.len()] {
        put(&mut out, v as u32);
    }
    for t in &ckpt.tensors {
        put(&mut out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        put(&mut out, t.dims.len() as u32);
        for &d in &t.dims {
            put(&mut out, d as u32);
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let trailer = serde_json::to_vec(&Trailer {
        config: ckpt.config.clone(),
        dataset_fingerprint: ckpt.dataset_fingerprint.clone(),
    })
    .expect("config serializes");
    put(&mut out, trailer.len() as u32);
    out.extend_from_slice(&trailer);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Corrupt {
                offset: self.pos,
                what: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut rd = Reader { bytes, pos: 0 };
    let magic = rd
        .take(4, "magic")
        .map_err(|_| CheckpointError::Format("file too short for LRCK magic".into()))?;
    if magic != LRCK_MAGIC {
        return Err(CheckpointError::Format(format!(
            "bad magic {:?}, expected \"LRCK\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = rd.u32("version")?;
    if version != LRCK_VERSION {
        return Err(CheckpointError::Format(format!("unsupported LRCK version {version}")));
    }
    let kind = match rd.u32("ranker_kind")? {
        0 => RankerKind::Listwise,
        1 => RankerKind::Pointwise,
        k => return Err(CheckpointError::Format(format!("unknown ranker kind {k}"))),
    };
    let relevance = match rd.u32("relevance_kind")? {
        0 => RelevanceKind::Cosine,
        1 => RelevanceKind::Learnable,
        k => return Err(CheckpointError::Format(format!("unknown relevance kind {k}"))),
    };
    let d_model = rd.u32("d_model")? as usize;
    let d_proj = rd.u32("d_proj")? as usize;
    let d_hidden = rd.u32("d_hidden")? as usize;
    let block_count = rd.u32("block_count")? as usize;
    let n_tensors = rd.u32("n_tensors")? as usize;

    let mut tensors = Vec::with_capacity(n_tensors.min(1024));
    for i in 0..n_tensors {
        let what = format!("tensor {i}");
        let name_len = rd.u32(&what)? as usize;
        let name = std::str::from_utf8(rd.take(name_len, &what)?)
            .map_err(|_| CheckpointError::Format(format!("tensor {i} name is not UTF-8")))?
            .to_owned();
        let rank = rd.u32(&what)? as usize;
        if rank > 4 {
            return Err(CheckpointError::Format(format!("tensor {name} has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(rd.u32(&what)? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = rd.take(4 * len, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, dims, data });
    }
    let trailer_len = rd.u32("trailer length")? as usize;
    let trailer: Trailer = serde_json::from_slice(rd.take(trailer_len, "trailer")?)
        .map_err(|e| CheckpointError::Format(format!("trailer JSON: {e}")))?;
    if rd.pos != bytes.len() {
        return Err(CheckpointError::Corrupt {
            offset: rd.pos,
            what: "trailing bytes after trailer".into(),
        });
    }

    let spec = RankerSpec {
        kind,
        relevance,
        d_model,
        d_proj,
        d_hidden,
        block_count,
        variant: trailer.config.variant,
    };
    let c = &trailer.config;
    if c.ranker != kind || c.relevance != relevance || c.d_proj != d_proj || c.d_hidden != d_hidden
        || c.block_count != block_count
    {
        return Err(CheckpointError::Format(
            "header fields disagree with the embedded training config".into(),
        ));
    }
    spec.validate().map_err(|e| CheckpointError::Format(e.to_string()))?;
    check_tensor_set(&spec, &tensors)?;
    Ok(Checkpoint {
        spec,
        tensors,
        config: trailer.config,
        dataset_fingerprint: trailer.dataset_fingerprint,
    })
}

/// Requires exactly the layout's tensors, in layout order, with its shapes.
fn check_tensor_set(spec: &RankerSpec, tensors: &[NamedTensor]) -> Result<(), CheckpointError> {
    let layout = Layout::for_spec(spec);
    let expected: BTreeSet<&str> = layout.names().collect();
    let present: BTreeSet<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
    let missing: Vec<&str> = expected.difference(&present).copied().collect();
    let extra: Vec<&str> = present.difference(&expected).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CheckpointError::Format(format!(
            "tensor set does not match a {:?}/{:?} ranker: missing [{}], unexpected [{}]",
            spec.kind,
            spec.relevance,
            missing.join(", "),
            extra.join(", ")
        )));
    }
    for (want, got) in layout.tensors.iter().zip(tensors) {
        let dims = if want.vector {
            vec![want.cols]
        } else {
            vec![want.rows, want.cols]
        };
        if want.name != got.name || dims != got.dims {
            return Err(CheckpointError::Format(format!(
                "expected tensor {} {:?}, found {} {:?}",
                want.name, dims, got.name, got.dims
            )));
        }
    }
    Ok(())
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &encode_checkpoint(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Objective;

    fn small(kind: RankerKind) -> Checkpoint {
        let mut config = TrainConfig::new(kind, Objective::Cls);
        config.d_proj = 4;
        config.d_hidden = 6;
        let params = RankerParams::init(config.ranker_spec(8), 3).unwrap();
        Checkpoint::from_params(&params, config, "abc".into())
    }

    #[test]
    fn bytes_round_trip() {
        for kind in [RankerKind::Listwise, RankerKind::Pointwise] {
            let c = small(kind);
            let back = decode_checkpoint(&encode_checkpoint(&c)).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = encode_checkpoint(&small(RankerKind::Listwise));
        for cut in [10, 60, bytes.len() - 3] {
            assert!(matches!(
                decode_checkpoint(&bytes[..cut]),
                Err(CheckpointError::Corrupt { .. })
            ));
        }
    }

    #[test]
    fn kind_mismatch_lists_missing_tensors() {
        let mut c = small(RankerKind::Listwise);
        c.spec.kind = RankerKind::Pointwise;
        c.config.ranker = RankerKind::Pointwise;
        let err = decode_checkpoint(&encode_checkpoint(&c)).unwrap_err().to_string();
        assert!(err.contains("blocks.0.fc1.weight"), "{err}");
        assert!(err.contains("blocks.0.attn.q.weight"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_checkpoint(&small(RankerKind::Pointwise));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::Format(_))));
    }
}
