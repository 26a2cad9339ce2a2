//! Bit-exact file formats and the synthetic layer-band dataset generator.
//!
//! Formats (all multi-byte integers little-endian):
//!
//! * embedding stacks (`.embs`): a 20-byte header (magic `EMBS`, version
//!   u32 = 1, then T, H, L as u32) followed by exactly L*T*H f32 payload
//!   values in `[l][t][h]` order, so a layer truncation is a prefix read.
//!   Values are f32 on disk, f64 in memory.
//! * parameter containers (`.embp`): magic `EMBP`, version u32 = 1, a
//!   UTF-8 metadata block of `key=value` lines, then named f64 tensors.
//! * key files: one `<id> <bonafide|spoof>` record per line, single-space
//!   separated; score files: `<id> <float>`. Duplicate ids are rejected.
//!
//! All writers go through a temp file plus rename so partial outputs are
//! never left behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::encoder::EmbeddingStack;
use crate::eval::{Label, ScoreRecord, ScoreSet};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tensor, TensorError};

pub const STACK_MAGIC: [u8; 4] = *b"EMBS";
pub const PARAMS_MAGIC: [u8; 4] = *b"EMBP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported format version {found}")]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{path}: file holds {actual} bytes, header implies {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: truncated header ({len} bytes)")]
    TruncatedHeader { path: PathBuf, len: usize },
    #[error("{path}: zero dimension in header (T={t}, H={h}, L={l})")]
    ZeroHeaderDim { path: PathBuf, t: u32, h: u32, l: u32 },
    #[error("{path}:{line}: malformed record {content:?}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        content: String,
    },
    #[error("{path}:{line}: unknown label {token:?}")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: duplicate id {id}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("ids present in key but missing in scores: {0:?}")]
    MissingScores(Vec<String>),
    #[error("scored ids absent from key: {0:?}")]
    UnscoredIds(Vec<String>),
    #[error("planted band [{lo},{hi}] invalid for {layers} layers")]
    InvalidBand { lo: usize, hi: usize, layers: usize },
    #[error("synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut tmp = path.to_path_buf();
    tmp.set_extension(format!("tmp.{}.{n}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

// ── Embedding stack files ────────────────────────────────────────────

/// Serialize a stack: header + f32 payload in `[l][t][h]` order.
pub fn stack_to_bytes(stack: &EmbeddingStack) -> Vec<u8> {
    let (t, h, l) = (
        stack.num_frames(),
        stack.hidden_dim(),
        stack.num_layers(),
    );
    let mut out = Vec::with_capacity(20 + 4 * t * h * l);
    out.extend_from_slice(&STACK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(l as u32).to_le_bytes());
    let data = stack.data().data();
    for li in 0..l {
        for ti in 0..t {
            for hi in 0..h {
                let v = data[(ti * h + hi) * l + li] as f32;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn write_stack(path: &Path, stack: &EmbeddingStack) -> Result<(), DataError> {
    atomic_write(path, &stack_to_bytes(stack))
}

/// Parse a stack from raw bytes; the utterance id is supplied by the
/// caller (normally the file stem).
pub fn stack_from_bytes(
    path: &Path,
    bytes: &[u8],
    utterance_id: &str,
) -> Result<EmbeddingStack, DataError> {
    if bytes.len() < 20 {
        return Err(DataError::TruncatedHeader {
            path: path.to_path_buf(),
            len: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("slice len");
    if magic != STACK_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("slice len"));
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let (t, h, l) = (word(8), word(12), word(16));
    if t == 0 || h == 0 || l == 0 {
        return Err(DataError::ZeroHeaderDim {
            path: path.to_path_buf(),
            t,
            h,
            l,
        });
    }
    let expected = 20u64 + 4 * t as u64 * h as u64 * l as u64;
    if bytes.len() as u64 != expected {
        return Err(DataError::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let (t, h, l) = (t as usize, h as usize, l as usize);
    let mut data = vec![0.0f64; t * h * l];
    let mut off = 20;
    for li in 0..l {
        for ti in 0..t {
            for hi in 0..h {
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("slice len"));
                data[(ti * h + hi) * l + li] = v as f64;
                off += 4;
            }
        }
    }
    Ok(EmbeddingStack::new(
        Tensor::new(vec![t, h, l], data)?,
        utterance_id,
    )?)
}

pub fn read_stack(path: &Path) -> Result<EmbeddingStack, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stack_from_bytes(path, &bytes, &id)
}

// ── Key and score files ──────────────────────────────────────────────

fn parse_two_columns(
    path: &Path,
    content: &str,
) -> Result<Vec<(usize, String, String)>, DataError> {
    let mut rows = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            return Err(DataError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                content: line.to_string(),
            });
        }
        let Some((id, rest)) = line.split_once(' ') else {
            return Err(DataError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                content: line.to_string(),
            });
        };
        if id.is_empty() || rest.is_empty() || rest.contains(' ') {
            return Err(DataError::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                content: line.to_string(),
            });
        }
        rows.push((line_no, id.to_string(), rest.to_string()));
    }
    Ok(rows)
}

/// Read a key file (`<id> <bonafide|spoof>` per line) into an ordered map.
pub fn read_key_file(path: &Path) -> Result<BTreeMap<String, Label>, DataError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    let mut map = BTreeMap::new();
    for (line, id, token) in parse_two_columns(path, &content)? {
        let label = match token.as_str() {
            "bonafide" => Label::Bonafide,
            "spoof" => Label::Spoof,
            _ => {
                return Err(DataError::UnknownLabel {
                    path: path.to_path_buf(),
                    line,
                    token,
                })
            }
        };
        if map.insert(id.clone(), label).is_some() {
            return Err(DataError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id,
            });
        }
    }
    Ok(map)
}

/// Read a score file (`<id> <float>` per line) into an ordered map.
pub fn read_score_file(path: &Path) -> Result<BTreeMap<String, f64>, DataError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    let mut map = BTreeMap::new();
    for (line, id, token) in parse_two_columns(path, &content)? {
        let score: f64 = token.parse().map_err(|_| DataError::MalformedLine {
            path: path.to_path_buf(),
            line,
            content: format!("{id} {token}"),
        })?;
        if !score.is_finite() {
            return Err(DataError::MalformedLine {
                path: path.to_path_buf(),
                line,
                content: format!("{id} {token}"),
            });
        }
        if map.insert(id.clone(), score).is_some() {
            return Err(DataError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id,
            });
        }
    }
    Ok(map)
}

/// Serialize a key map in id order.
pub fn key_file_to_string(key: &BTreeMap<String, Label>) -> String {
    let mut out = String::new();
    for (id, label) in key {
        out.push_str(&format!("{id} {}\n", label.as_str()));
    }
    out
}

/// Serialize a score map in id order.
pub fn score_file_to_string(scores: &BTreeMap<String, f64>) -> String {
    let mut out = String::new();
    for (id, score) in scores {
        out.push_str(&format!("{id} {score}\n"));
    }
    out
}

/// Join a key map with a score map into a [`ScoreSet`]. Every key id must
/// be scored and every scored id must appear in the key.
pub fn join_scores(
    key: &BTreeMap<String, Label>,
    scores: &BTreeMap<String, f64>,
) -> Result<ScoreSet, DataError> {
    let missing: Vec<String> = key
        .keys()
        .filter(|id| !scores.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(DataError::MissingScores(missing));
    }
    let extra: Vec<String> = scores
        .keys()
        .filter(|id| !key.contains_key(*id))
        .cloned()
        .collect();
    if !extra.is_empty() {
        return Err(DataError::UnscoredIds(extra));
    }
    let records = key
        .iter()
        .map(|(id, &label)| ScoreRecord {
            utterance_id: id.clone(),
            label,
            score: scores[id],
        })
        .collect();
    ScoreSet::new(records).map_err(|e| DataError::InvalidSpec(e.to_string()))
}

// ── Parameter containers ─────────────────────────────────────────────

/// Named f64 tensors plus `key=value` metadata, e.g. a trained model
/// checkpoint.
#[derive(Debug, Clone, Default)]
pub struct ParamContainer {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl ParamContainer {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

pub fn params_to_bytes(container: &ParamContainer) -> Vec<u8> {
    let mut meta = String::new();
    for (k, v) in &container.meta {
        meta.push_str(&format!("{k}={v}\n"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&PARAMS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(container.tensors.len() as u32).to_le_bytes());
    for (name, tensor) in &container.tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_params(path: &Path, container: &ParamContainer) -> Result<(), DataError> {
    atomic_write(path, &params_to_bytes(container))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.off + n > self.bytes.len() {
            return Err(DataError::SizeMismatch {
                path: self.path.to_path_buf(),
                expected: (self.off + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn word(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("slice len")))
    }

    fn utf8(&mut self, n: usize) -> Result<String, DataError> {
        let raw = self.take(n)?;
        std::str::from_utf8(raw)
            .map(str::to_string)
            .map_err(|_| DataError::MalformedLine {
                path: self.path.to_path_buf(),
                line: 0,
                content: "non-UTF-8 string field".to_string(),
            })
    }
}

pub fn read_params(path: &Path) -> Result<ParamContainer, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 12 {
        return Err(DataError::TruncatedHeader {
            path: path.to_path_buf(),
            len: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("slice len");
    if magic != PARAMS_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        off: 4,
    };
    let version = cur.word()?;
    if version != FORMAT_VERSION {
        return Err(DataError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let meta_len = cur.word()? as usize;
    let meta_str = cur.utf8(meta_len)?;
    let mut meta = BTreeMap::new();
    for line in meta_str.lines() {
        if let Some((k, v)) = line.split_once('=') {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    let count = cur.word()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.word()? as usize;
        let name = cur.utf8(name_len)?;
        let rank = cur.word()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.word()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(8 * n)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk len")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if cur.off != bytes.len() {
        return Err(DataError::SizeMismatch {
            path: path.to_path_buf(),
            expected: cur.off as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(ParamContainer { meta, tensors })
}

// ── Synthetic layer-band dataset ─────────────────────────────────────

/// Generation recipe: both classes are iid Gaussian noise; spoof stacks
/// additionally receive +delta along a fixed random unit direction of the
/// hidden dimension, only inside the planted layer band.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Utterances per class.
    pub num_utts: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// 1-based inclusive planted band.
    pub band_lo: usize,
    pub band_hi: usize,
    /// Shift magnitude delta (0 disables the planted signal).
    pub effect_size: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_utts: 200,
            frames_min: 6,
            frames_max: 12,
            hidden_dim: 16,
            num_layers: 6,
            band_lo: 1,
            band_hi: 2,
            effect_size: 5.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.band_lo < 1 || self.band_lo > self.band_hi || self.band_hi > self.num_layers {
            return Err(DataError::InvalidBand {
                lo: self.band_lo,
                hi: self.band_hi,
                layers: self.num_layers,
            });
        }
        if self.num_utts == 0 {
            return Err(DataError::InvalidSpec("num_utts must be positive".into()));
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(DataError::InvalidSpec(format!(
                "invalid frame range {}..={}",
                self.frames_min, self.frames_max
            )));
        }
        if self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(DataError::InvalidSpec("zero dimension".into()));
        }
        if self.noise_std.is_nan() || self.noise_std <= 0.0 {
            return Err(DataError::InvalidSpec("noise_std must be positive".into()));
        }
        if !self.effect_size.is_finite() || self.effect_size < 0.0 {
            return Err(DataError::InvalidSpec(
                "effect_size must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// The fixed unit direction the spoof-class shift follows.
    pub fn shift_direction(&self) -> Vec<f64> {
        let mut rng = stream_rng(self.seed, Stream::Data);
        let mut u: Vec<f64> = (0..self.hidden_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut u {
            *v /= norm;
        }
        u
    }
}

/// Deterministically generate the labeled stacks described by `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<(EmbeddingStack, Label)>, DataError> {
    spec.validate()?;
    let u = spec.shift_direction();
    let mut rng = stream_rng(spec.seed, Stream::Data);
    // skip the draws consumed by the direction so utterance noise follows it
    for _ in 0..spec.hidden_dim {
        let _: f64 = rng.sample(StandardNormal);
    }

    let (h, l) = (spec.hidden_dim, spec.num_layers);
    let width = digits(spec.num_utts);
    let mut out = Vec::with_capacity(2 * spec.num_utts);
    for (label, prefix) in [(Label::Bonafide, "bona"), (Label::Spoof, "spoof")] {
        for idx in 0..spec.num_utts {
            let t = rng.random_range(spec.frames_min..=spec.frames_max);
            let mut data = vec![0.0f64; t * h * l];
            for v in &mut data {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * spec.noise_std;
            }
            if label == Label::Spoof && spec.effect_size > 0.0 {
                for ti in 0..t {
                    for hi in 0..h {
                        let shift = spec.effect_size * u[hi];
                        for li in (spec.band_lo - 1)..spec.band_hi {
                            data[(ti * h + hi) * l + li] += shift;
                        }
                    }
                }
            }
            let id = format!("{prefix}_{idx:0width$}");
            out.push((
                EmbeddingStack::new(Tensor::new(vec![t, h, l], data)?, id)?,
                label,
            ));
        }
    }
    Ok(out)
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len().max(4)
}

/// Write a generated dataset as one `.embs` file per utterance plus
/// `key.txt` and `manifest.txt`.
pub fn write_dataset(
    dir: &Path,
    items: &[(EmbeddingStack, Label)],
    spec: &SyntheticSpec,
) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut key = BTreeMap::new();
    for (stack, label) in items {
        key.insert(stack.utterance_id().to_string(), *label);
        write_stack(&dir.join(format!("{}.embs", stack.utterance_id())), stack)?;
    }
    atomic_write(&dir.join("key.txt"), key_file_to_string(&key).as_bytes())?;
    let manifest = format!(
        "utterances={}\nutterances_per_class={}\nseed={}\nhidden_dim={}\nnum_layers={}\nband={}..{}\neffect_size={}\nnoise_std={}\n",
        items.len(),
        spec.num_utts,
        spec.seed,
        spec.hidden_dim,
        spec.num_layers,
        spec.band_lo,
        spec.band_hi,
        spec.effect_size,
        spec.noise_std,
    );
    atomic_write(&dir.join("manifest.txt"), manifest.as_bytes())
}

/// Load every `.embs` file of a dataset directory with its label from
/// `key.txt`, in id order.
pub fn read_dataset(dir: &Path) -> Result<Vec<(EmbeddingStack, Label)>, DataError> {
    let key = read_key_file(&dir.join("key.txt"))?;
    let mut out = Vec::with_capacity(key.len());
    for (id, label) in &key {
        let stack = read_stack(&dir.join(format!("{id}.embs")))?;
        out.push((stack, *label));
    }
    Ok(out)
}
