//! Feature datasets: the LRFD binary layout, its JSON sidecar, and the
//! assembly of K-candidate groups from stored response pools.
//!
//! Layout (little-endian):
//!
//! ```text
//! "LRFD" | version u32 = 1 | d_model u32 | flags u32 | count u64
//! count × { query_id u64 | K u32 | instruction f32×d_model
//!           | K × { label f32 | feature f32×d_model } }
//! ```
//!
//! Bit 0 of `flags` marks regression labels. Metadata lives next to the
//! payload in `<path>.meta.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const LRFD_MAGIC: &[u8; 4] = b"LRFD";
pub const LRFD_VERSION: u32 = 1;
const FLAG_REGRESSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// Redraw budget per query, as a multiple of the requested group count.
pub const RETRY_FACTOR: usize = 10;

#[derive(Debug, Error)]
pub enum FeatureStoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("query {query_id}: feature has {got} entries, expected d_model = {expected}")]
    DimensionMismatch {
        query_id: u64,
        expected: usize,
        got: usize,
    },
    #[error("query {query_id}: non-finite feature value")]
    NonFinite { query_id: u64 },
    #[error("query {query_id}: response list is empty")]
    EmptyResponses { query_id: u64 },
    #[error("query {query_id}: label {label} is not valid for {mode:?} data")]
    BadLabel {
        query_id: u64,
        label: f32,
        mode: LabelMode,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt dataset at byte {offset}: {what}")]
    Corrupt { offset: usize, what: String },
    #[error("invalid metadata: {0}")]
    Meta(String),
    #[error("invalid sampling request: {0}")]
    Sampling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSettings {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub num_samples: u32,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        Self {
            temperature: 1.5,
            max_new_tokens: 1024,
            num_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub d_model: usize,
    pub label_mode: LabelMode,
    #[serde(default)]
    pub layer_index: Option<i64>,
    #[serde(default)]
    pub layer_fraction: Option<f64>,
    #[serde(default)]
    pub num_layers: Option<u32>,
    #[serde(default)]
    pub source_model: String,
    #[serde(default)]
    pub sampling: Option<SamplingSettings>,
    /// Where in the layer the hidden state was read, as stamped by the producer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_state_capture: Option<String>,
}

impl DatasetMeta {
    pub fn new(d_model: usize, label_mode: LabelMode) -> Self {
        Self {
            d_model,
            label_mode,
            layer_index: None,
            layer_fraction: None,
            num_layers: None,
            source_model: String::new(),
            sampling: None,
            hidden_state_capture: None,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureStoreError> {
        if self.d_model == 0 {
            return Err(FeatureStoreError::Meta("d_model must be positive".into()));
        }
        if let Some(f) = self.layer_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(FeatureStoreError::Meta(format!(
                    "layer_fraction {f} outside (0, 1]"
                )));
            }
            if let (Some(idx), Some(n)) = (self.layer_index, self.num_layers) {
                let expected = (f * n as f64).floor() as i64;
                if idx != expected {
                    return Err(FeatureStoreError::Meta(format!(
                        "layer_index {idx} != floor({f} x {n}) = {expected}"
                    )));
                }
            }
        }
        if let Some(s) = &self.sampling {
            if s.num_samples < 1 {
                return Err(FeatureStoreError::Meta("num_samples must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub feature: Vec<f32>,
    pub label: f32,
}

/// One query: its instruction feature and the pool of sampled responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub query_id: u64,
    pub instruction: Vec<f32>,
    pub responses: Vec<Response>,
}

impl FeatureRecord {
    pub fn validate(&self, d_model: usize, mode: LabelMode) -> Result<(), FeatureStoreError> {
        let query_id = self.query_id;
        if self.responses.is_empty() {
            return Err(FeatureStoreError::EmptyResponses { query_id });
        }
        let features =
            std::iter::once(&self.instruction).chain(self.responses.iter().map(|r| &r.feature));
        for f in features {
            if f.len() != d_model {
                return Err(FeatureStoreError::DimensionMismatch {
                    query_id,
                    expected: d_model,
                    got: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(FeatureStoreError::NonFinite { query_id });
            }
        }
        for r in &self.responses {
            let ok = match mode {
                LabelMode::Classification => r.label == 0.0 || r.label == 1.0,
                LabelMode::Regression => r.label.is_finite(),
            };
            if !ok {
                return Err(FeatureStoreError::BadLabel {
                    query_id,
                    label: r.label,
                    mode,
                });
            }
        }
        Ok(())
    }

    pub fn positive_rate(&self) -> f64 {
        let pos = self.responses.iter().filter(|r| r.label == 1.0).count();
        pos as f64 / self.responses.len() as f64
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Serializes records to the LRFD byte layout after validating them.
pub fn encode_dataset(
    records: &[FeatureRecord],
    meta: &DatasetMeta,
) -> Result<Vec<u8>, FeatureStoreError> {
    meta.validate()?;
    let d = meta.d_model;
    for r in records {
        r.validate(d, meta.label_mode)?;
    }
    let payload: usize = records
        .iter()
        .map(|r| 12 + 4 * d + r.responses.len() * (4 + 4 * d))
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(LRFD_MAGIC);
    out.extend_from_slice(&LRFD_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    let flags = match meta.label_mode {
        LabelMode::Classification => 0,
        LabelMode::Regression => FLAG_REGRESSION,
    };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.query_id.to_le_bytes());
        out.extend_from_slice(&(r.responses.len() as u32).to_le_bytes());
        put_f32s(&mut out, &r.instruction);
        for resp in &r.responses {
            out.extend_from_slice(&resp.label.to_le_bytes());
            put_f32s(&mut out, &resp.feature);
        }
    }
    Ok(out)
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Header fields recovered from an LRFD payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LrfdHeader {
    pub d_model: usize,
    pub label_mode: LabelMode,
    pub count: u64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FeatureStoreError> {
        if self.bytes.len() - self.pos < n {
            return Err(FeatureStoreError::Corrupt {
                offset: self.pos,
                what: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FeatureStoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FeatureStoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, FeatureStoreError> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(Vec<FeatureRecord>, LrfdHeader), FeatureStoreError> {
    let mut rd = Reader { bytes, pos: 0 };
    let magic = rd
        .take(4, "magic")
        .map_err(|_| FeatureStoreError::Format("file too short for LRFD magic".into()))?;
    if magic != LRFD_MAGIC {
        return Err(FeatureStoreError::Format(format!(
            "bad magic {:?}, expected \"LRFD\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = rd.u32("version")?;
    if version != LRFD_VERSION {
        return Err(FeatureStoreError::Format(format!(
            "unsupported LRFD version {version}"
        )));
    }
    let d_model = rd.u32("d_model")? as usize;
    if d_model == 0 {
        return Err(FeatureStoreError::Format("d_model is zero".into()));
    }
    let flags = rd.u32("flags")?;
    let label_mode = if flags & FLAG_REGRESSION != 0 {
        LabelMode::Regression
    } else {
        LabelMode::Classification
    };
    let count = rd.u64("count")?;
    let mut records = Vec::new();
    for i in 0..count {
        let what = format!("record {i}");
        let query_id = rd.u64(&what)?;
        let k = rd.u32(&what)? as usize;
        let instruction = rd.f32s(d_model, &what)?;
        let mut responses = Vec::with_capacity(k.min(1 << 16));
        for _ in 0..k {
            let label = f32::from_le_bytes(rd.take(4, &what)?.try_into().unwrap());
            let feature = rd.f32s(d_model, &what)?;
            responses.push(Response { feature, label });
        }
        records.push(FeatureRecord {
            query_id,
            instruction,
            responses,
        });
    }
    if rd.pos != bytes.len() {
        return Err(FeatureStoreError::Corrupt {
            offset: rd.pos,
            what: format!("{} trailing bytes after last record", bytes.len() - rd.pos),
        });
    }
    Ok((
        records,
        LrfdHeader {
            d_model,
            label_mode,
            count,
        },
    ))
}

/// SHA-256 of the canonical LRFD encoding, hex-encoded.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn dataset_fingerprint(
    records: &[FeatureRecord],
    meta: &DatasetMeta,
) -> Result<String, FeatureStoreError> {
    Ok(fingerprint_bytes(&encode_dataset(records, meta)?))
}

/// Writes `bytes` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_dataset(
    records: &[FeatureRecord],
    meta: &DatasetMeta,
    path: &Path,
) -> Result<(), FeatureStoreError> {
    let bytes = encode_dataset(records, meta)?;
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| FeatureStoreError::Io { path: p, source }
    };
    write_atomic(path, &bytes).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
    write_atomic(&side, &json).map_err(io_err(&side))?;
    Ok(())
}

/// Reads an LRFD file and its sidecar. A missing sidecar yields metadata
/// reconstructed from the header alone.
pub fn read_dataset(path: &Path) -> Result<(Vec<FeatureRecord>, DatasetMeta), FeatureStoreError> {
    let bytes = fs::read(path).map_err(|source| FeatureStoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (records, header) = decode_dataset(&bytes)?;
    let side = sidecar_path(path);
    let meta = match fs::read(&side) {
        Ok(raw) => {
            let meta: DatasetMeta = serde_json::from_slice(&raw)
                .map_err(|e| FeatureStoreError::Meta(format!("{}: {e}", side.display())))?;
            if meta.d_model != header.d_model || meta.label_mode != header.label_mode {
                return Err(FeatureStoreError::Meta(format!(
                    "sidecar says d_model={} {:?}, payload says d_model={} {:?}",
                    meta.d_model, meta.label_mode, header.d_model, header.label_mode
                )));
            }
            meta.validate()?;
            meta
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            log::warn!("no sidecar at {}, using header metadata", side.display());
            DatasetMeta::new(header.d_model, header.label_mode)
        }
        Err(source) => return Err(FeatureStoreError::Io { path: side, source }),
    };
    for r in &records {
        r.validate(meta.d_model, meta.label_mode)?;
    }
    Ok((records, meta))
}

/// K candidates drawn from one query's response pool. Features are
/// borrowed from the owning [`FeatureRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup<'a> {
    pub query_id: u64,
    pub instruction: &'a [f32],
    pub candidates: Vec<&'a [f32]>,
    pub labels: Vec<f64>,
    /// Positions of the candidates in the record's response list.
    pub response_indices: Vec<usize>,
}

impl<'a> CandidateGroup<'a> {
    pub fn from_indices(record: &'a FeatureRecord, indices: Vec<usize>) -> Self {
        Self {
            query_id: record.query_id,
            instruction: &record.instruction,
            candidates: indices
                .iter()
                .map(|&i| record.responses[i].feature.as_slice())
                .collect(),
            labels: indices
                .iter()
                .map(|&i| record.responses[i].label as f64)
                .collect(),
            response_indices: indices,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn is_mixed(&self) -> bool {
        self.labels.contains(&1.0) && self.labels.contains(&0.0)
    }

    pub fn d_model(&self) -> usize {
        self.instruction.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample<'a> {
    pub groups: Vec<CandidateGroup<'a>>,
    /// Records with fewer than K responses.
    pub skipped_short: usize,
    /// Records that exhausted the redraw budget before reaching N groups.
    pub under_filled: usize,
}

/// Mixes a run seed with a query id into an independent stream seed.
pub fn query_seed(seed: u64, query_id: u64) -> u64 {
    let mut z = seed ^ query_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws up to `n` groups of `k` candidates per query for training.
///
/// In classification mode a group must hold at least one positive and one
/// negative; failing draws are retried up to `RETRY_FACTOR × n` times per
/// query. Regression groups are never filtered.
pub fn sample_groups<'a>(
    records: &'a [FeatureRecord],
    k: usize,
    n: usize,
    mode: LabelMode,
    seed: u64,
) -> Result<GroupSample<'a>, FeatureStoreError> {
    if k < 2 {
        return Err(FeatureStoreError::Sampling(format!("group size must be >= 2, got {k}")));
    }
    draw_groups(records, k, n, mode == LabelMode::Classification, seed)
}

/// Draws exactly `n` groups of `k` candidates per query with no label
/// filtering, as used for evaluation.
pub fn sample_eval_groups<'a>(
    records: &'a [FeatureRecord],
    k: usize,
    n: usize,
    seed: u64,
) -> Result<GroupSample<'a>, FeatureStoreError> {
    if k < 1 {
        return Err(FeatureStoreError::Sampling("group size must be >= 1".into()));
    }
    draw_groups(records, k, n, false, seed)
}

fn draw_groups<'a>(
    records: &'a [FeatureRecord],
    k: usize,
    n: usize,
    require_mixed: bool,
    seed: u64,
) -> Result<GroupSample<'a>, FeatureStoreError> {
    if n < 1 {
        return Err(FeatureStoreError::Sampling("groups per query must be >= 1".into()));
    }
    let per_query: Vec<Option<(Vec<CandidateGroup<'a>>, bool)>> = records
        .par_iter()
        .map(|record| {
            let pool = record.responses.len();
            if pool < k {
                return None;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(query_seed(seed, record.query_id));
            let mut groups = Vec::with_capacity(n);
            let budget = if require_mixed { RETRY_FACTOR * n } else { n };
            for _ in 0..budget {
                if groups.len() == n {
                    break;
                }
                let mut picked = index::sample(&mut rng, pool, k).into_vec();
                picked.shuffle(&mut rng);
                let group = CandidateGroup::from_indices(record, picked);
                if require_mixed && !group.is_mixed() {
                    continue;
                }
                groups.push(group);
            }
            let short = groups.len() < n;
            Some((groups, short))
        })
        .collect();

    let mut out = GroupSample {
        groups: Vec::new(),
        skipped_short: 0,
        under_filled: 0,
    };
    for entry in per_query {
        match entry {
            None => out.skipped_short += 1,
            Some((groups, short)) => {
                out.under_filled += short as usize;
                out.groups.extend(groups);
            }
        }
    }
    if out.skipped_short > 0 {
        log::warn!(
            "{} records have fewer than {k} responses and were skipped",
            out.skipped_short
        );
    }
    Ok(out)
}

/// Splits records into (train, validation) by query. The validation side
/// receives `round(fraction × count)` queries, clamped so neither side is empty.
pub fn split_by_query(
    records: Vec<FeatureRecord>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<FeatureRecord>, Vec<FeatureRecord>), FeatureStoreError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(FeatureStoreError::Sampling(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let count = records.len();
    if count < 2 {
        return Err(FeatureStoreError::Sampling(format!(
            "need at least 2 queries to split, got {count}"
        )));
    }
    let n_val = ((fraction * count as f64).round() as usize).clamp(1, count - 1);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; count];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (r, v) in records.into_iter().zip(is_val) {
        if v {
            val.push(r);
        } else {
            train.push(r);
        }
    }
    Ok((train, val))
}

/// Per-dimension mean and standard deviation over every stored feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn compute(records: &[FeatureRecord], d_model: usize) -> Self {
        let mut sum = vec![0.0; d_model];
        let mut sq = vec![0.0; d_model];
        let mut n = 0usize;
        let all = records.iter().flat_map(|r| {
            std::iter::once(&r.instruction).chain(r.responses.iter().map(|x| &x.feature))
        });
        for f in all {
            for (j, &v) in f.iter().enumerate() {
                sum[j] += v as f64;
                sq[j] += (v as f64) * (v as f64);
            }
            n += 1;
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-12))
            .collect();
        Self { mean, std }
    }

    /// Opt-in standardization; nothing in the pipeline applies it implicitly.
    pub fn apply(&self, records: &mut [FeatureRecord]) {
        let fix = |f: &mut Vec<f32>| {
            for (j, v) in f.iter_mut().enumerate() {
                *v = ((*v as f64 - self.mean[j]) / self.std[j]) as f32;
            }
        };
        for r in records {
            fix(&mut r.instruction);
            for resp in &mut r.responses {
                fix(&mut resp.feature);
            }
        }
    }
}
