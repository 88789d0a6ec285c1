//! On-disk dataset format.
//!
//! All binary files are little-endian. A file starts with a 4-byte magic and
//! a `u32` format version, followed by a type-specific header and a sequence
//! of maps. Every map is written as
//!
//! ```text
//! u8  kind tag      (see MapKind::tag)
//! u8  dtype tag     (1 = f32, 2 = u8)
//! u16 reserved      (0)
//! u32 rows
//! u32 cols
//! u32 crc32         (IEEE, over the payload bytes)
//! ... rows*cols values, row-major
//! ```
//!
//! Sample files (`samples/<id>.bin`, magic `TAAS`) carry
//! `u64 sample_id, u64 profile_id, u32 combo_index, f64 amplitude_scale,
//! u32 map_count` before their maps. Prediction files
//! (`predictions/<model_id>.bin`, magic `TAAP`) carry
//! `u32 id_len, id bytes (UTF-8), u32 count` and then, per sample,
//! `u64 sample_id` followed by an `insult_ce` and an `insult_delta` f32 map.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::maps::MapKind;

pub const FORMAT_VERSION: u32 = 1;
pub const SAMPLE_MAGIC: [u8; 4] = *b"TAAS";
pub const PREDICTION_MAGIC: [u8; 4] = *b"TAAP";
const MAP_HEADER_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {found:?}, expected {expected:?}")]
    Magic { found: [u8; 4], expected: [u8; 4] },
    #[error("format version {0} is not supported (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("truncated file: needed {needed} more bytes while reading {what}")]
    Truncated { what: String, needed: usize },
    #[error("checksum mismatch in {kind} map: stored {stored:08x}, computed {computed:08x}")]
    Checksum { kind: String, stored: u32, computed: u32 },
    #[error("unknown {what} tag {tag}")]
    Tag { what: &'static str, tag: u8 },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("split: {0}")]
    Split(String),
    #[error("prediction ids do not match: missing {missing:?}, unexpected {unexpected:?}")]
    Ids { missing: Vec<u64>, unexpected: Vec<u64> },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::U8 => 2,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        match t {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::U8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapData {
    F32(Array2<f32>),
    U8(Array2<u8>),
}

impl MapData {
    pub fn dtype(&self) -> Dtype {
        match self {
            MapData::F32(_) => Dtype::F32,
            MapData::U8(_) => Dtype::U8,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        match self {
            MapData::F32(a) => a.dim(),
            MapData::U8(a) => a.dim(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            MapData::F32(a) => a.iter().flat_map(|v| v.to_le_bytes()).collect(),
            MapData::U8(a) => a.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredMap {
    pub kind: MapKind,
    pub data: MapData,
}

impl StoredMap {
    pub fn f32(kind: MapKind, values: &Array2<f64>) -> Self {
        Self { kind, data: MapData::F32(values.mapv(|v| v as f32)) }
    }

    pub fn u8(kind: MapKind, codes: Array2<u8>) -> Self {
        Self { kind, data: MapData::U8(codes) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub profile_id: u64,
    pub combo_index: u32,
    pub amplitude_scale: f64,
    pub maps: Vec<StoredMap>,
}

impl SampleRecord {
    pub fn physical(&self, kind: MapKind) -> Option<&Array2<f32>> {
        self.maps.iter().find_map(|m| match (&m.data, m.kind == kind) {
            (MapData::F32(a), true) => Some(a),
            _ => None,
        })
    }

    pub fn grayscale(&self, kind: MapKind) -> Option<&Array2<u8>> {
        self.maps.iter().find_map(|m| match (&m.data, m.kind == kind) {
            (MapData::U8(a), true) => Some(a),
            _ => None,
        })
    }
}

fn write_map(out: &mut Vec<u8>, map: &StoredMap) {
    let (rows, cols) = map.data.dim();
    let payload = map.data.payload();
    out.push(map.kind.tag());
    out.push(map.data.dtype().tag());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StoreError> {
        if self.buf.len() - self.pos < n {
            return Err(StoreError::Truncated { what: what.to_string(), needed: n - (self.buf.len() - self.pos) });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, StoreError> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64, StoreError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn preamble(&mut self, magic: [u8; 4]) -> Result<(), StoreError> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != magic {
            return Err(StoreError::Magic { found, expected: magic });
        }
        let v = self.u32("format version")?;
        if v != FORMAT_VERSION {
            return Err(StoreError::Version(v));
        }
        Ok(())
    }

    fn map(&mut self) -> Result<StoredMap, StoreError> {
        let kind_tag = self.u8("map kind")?;
        let kind = MapKind::from_tag(kind_tag).ok_or(StoreError::Tag { what: "map kind", tag: kind_tag })?;
        let dtype_tag = self.u8("map dtype")?;
        let dtype = Dtype::from_tag(dtype_tag).ok_or(StoreError::Tag { what: "dtype", tag: dtype_tag })?;
        let reserved = self.u16("map header")?;
        if reserved != 0 {
            return Err(StoreError::Malformed(format!("reserved header field is {reserved}")));
        }
        let rows = self.u32("map rows")? as usize;
        let cols = self.u32("map cols")? as usize;
        let stored = self.u32("map checksum")?;
        let width = match dtype {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        };
        let n = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(width))
            .ok_or_else(|| StoreError::Malformed(format!("map shape {rows}x{cols} overflows")))?;
        let payload = self.take(n, &format!("{} payload", kind.name()))?;
        let computed = crc32fast::hash(payload);
        if computed != stored {
            return Err(StoreError::Checksum { kind: kind.name().to_string(), stored, computed });
        }
        let data = match dtype {
            Dtype::F32 => MapData::F32(
                Array2::from_shape_vec(
                    (rows, cols),
                    payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                )
                .unwrap(),
            ),
            Dtype::U8 => MapData::U8(Array2::from_shape_vec((rows, cols), payload.to_vec()).unwrap()),
        };
        Ok(StoredMap { kind, data })
    }

    fn finish(&self) -> Result<(), StoreError> {
        if self.pos != self.buf.len() {
            return Err(StoreError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_sample(record: &SampleRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + record.maps.len() * (MAP_HEADER_BYTES + 41 * 41 * 4));
    out.extend_from_slice(&SAMPLE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&record.sample_id.to_le_bytes());
    out.extend_from_slice(&record.profile_id.to_le_bytes());
    out.extend_from_slice(&record.combo_index.to_le_bytes());
    out.extend_from_slice(&record.amplitude_scale.to_le_bytes());
    out.extend_from_slice(&(record.maps.len() as u32).to_le_bytes());
    for m in &record.maps {
        write_map(&mut out, m);
    }
    out
}

pub fn decode_sample(bytes: &[u8]) -> Result<SampleRecord, StoreError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.preamble(SAMPLE_MAGIC)?;
    let sample_id = c.u64("sample id")?;
    let profile_id = c.u64("profile id")?;
    let combo_index = c.u32("combo index")?;
    let amplitude_scale = c.f64("amplitude scale")?;
    let count = c.u32("map count")?;
    let maps = (0..count).map(|_| c.map()).collect::<Result<Vec<_>, _>>()?;
    c.finish()?;
    Ok(SampleRecord { sample_id, profile_id, combo_index, amplitude_scale, maps })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_all(path: &Path) -> Result<Vec<u8>, StoreError> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
    Ok(buf)
}

pub fn write_sample(path: &Path, record: &SampleRecord) -> Result<(), StoreError> {
    write_atomic(path, &encode_sample(record))
}

pub fn read_sample(path: &Path) -> Result<SampleRecord, StoreError> {
    decode_sample(&read_all(path)?)
}

/// Predicted insult maps for one sample, in physical units on the padded grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sample_id: u64,
    pub theta_ce: Array2<f32>,
    pub theta_delta: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub model_id: String,
    pub predictions: Vec<Prediction>,
}

pub fn encode_predictions(set: &PredictionSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&PREDICTION_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.model_id.len() as u32).to_le_bytes());
    out.extend_from_slice(set.model_id.as_bytes());
    out.extend_from_slice(&(set.predictions.len() as u32).to_le_bytes());
    for p in &set.predictions {
        out.extend_from_slice(&p.sample_id.to_le_bytes());
        write_map(&mut out, &StoredMap { kind: MapKind::InsultCe, data: MapData::F32(p.theta_ce.clone()) });
        write_map(&mut out, &StoredMap { kind: MapKind::InsultDelta, data: MapData::F32(p.theta_delta.clone()) });
    }
    out
}

pub fn decode_predictions(bytes: &[u8]) -> Result<PredictionSet, StoreError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.preamble(PREDICTION_MAGIC)?;
    let len = c.u32("model id length")? as usize;
    let model_id = String::from_utf8(c.take(len, "model id")?.to_vec())
        .map_err(|e| StoreError::Malformed(format!("model id is not UTF-8: {e}")))?;
    let count = c.u32("prediction count")?;
    let mut predictions = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let sample_id = c.u64("sample id")?;
        let mut grab = |want: MapKind| -> Result<Array2<f32>, StoreError> {
            let m = c.map()?;
            match (m.kind == want, m.data) {
                (true, MapData::F32(a)) => Ok(a),
                (_, d) => Err(StoreError::Malformed(format!(
                    "sample {sample_id}: expected f32 {} map, found {:?} {}",
                    want.name(),
                    d.dtype(),
                    m.kind.name()
                ))),
            }
        };
        let theta_ce = grab(MapKind::InsultCe)?;
        let theta_delta = grab(MapKind::InsultDelta)?;
        predictions.push(Prediction { sample_id, theta_ce, theta_delta });
    }
    c.finish()?;
    Ok(PredictionSet { model_id, predictions })
}

/// Require predictions for exactly the `expected` ids.
pub fn check_prediction_ids(set: &PredictionSet, expected: &[u64]) -> Result<(), StoreError> {
    let have: BTreeSet<u64> = set.predictions.iter().map(|p| p.sample_id).collect();
    let want: BTreeSet<u64> = expected.iter().copied().collect();
    let missing: Vec<u64> = want.difference(&have).copied().collect();
    let unexpected: Vec<u64> = have.difference(&want).copied().collect();
    if missing.is_empty() && unexpected.is_empty() && have.len() == set.predictions.len() {
        Ok(())
    } else {
        Err(StoreError::Ids { missing, unexpected })
    }
}

/// Deterministic train/test partition; both lists come back sorted.
pub fn split_dataset(ids: &[u64], n_test: usize, seed: u64) -> Result<(Vec<u64>, Vec<u64>), StoreError> {
    let unique: BTreeSet<u64> = ids.iter().copied().collect();
    if unique.len() != ids.len() {
        return Err(StoreError::Split("sample ids are not unique".into()));
    }
    if n_test == 0 || n_test >= ids.len() {
        return Err(StoreError::Split(format!("cannot hold out {n_test} of {} samples", ids.len())));
    }
    let mut order: Vec<u64> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Dataset-level metadata written as `manifest.json`.
///
/// Keys are flat scalars or lists; wall overrides are a flat name-to-number map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_z: usize,
    pub n_theta: usize,
    pub padded_cols: usize,
    pub dilatation_min: f64,
    pub dilatation_max: f64,
    pub distensibility_min: f64,
    pub distensibility_max: f64,
    pub master_seed: u64,
    pub split_seed: u64,
    pub profiles: usize,
    pub combos: usize,
    pub grf_surface_fraction: f64,
    pub grf_boundary_softness: f64,
    pub grf_length_circ: f64,
    pub grf_length_axial: f64,
    pub grf_reference_radius: f64,
    pub grf_vessel_length: f64,
    pub grf_boundary_value: f64,
    pub calibration_target: f64,
    pub calibration_tolerance: f64,
    pub smoothing_sigma: f64,
    pub wall_overrides: std::collections::BTreeMap<String, f64>,
    pub sample_count: usize,
    pub sample_ids: Vec<u64>,
    pub train_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
    pub generator_hash: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::Manifest(m));
        if self.format_version != FORMAT_VERSION {
            return Err(StoreError::Version(self.format_version));
        }
        if self.sample_ids.len() != self.sample_count {
            return bad(format!("{} ids listed for {} samples", self.sample_ids.len(), self.sample_count));
        }
        let train: BTreeSet<u64> = self.train_ids.iter().copied().collect();
        let test: BTreeSet<u64> = self.test_ids.iter().copied().collect();
        if train.intersection(&test).next().is_some() {
            return bad("train and test ids overlap".into());
        }
        let all: BTreeSet<u64> = self.sample_ids.iter().copied().collect();
        let union: BTreeSet<u64> = train.union(&test).copied().collect();
        if union != all || train.len() + test.len() != self.sample_count {
            return bad("train and test ids do not partition the samples".into());
        }
        if self.padded_cols != self.n_theta + 1 {
            return bad(format!("padded width {} for {} columns", self.padded_cols, self.n_theta));
        }
        Ok(())
    }

    pub fn dilatation_range(&self) -> (f64, f64) {
        (self.dilatation_min, self.dilatation_max)
    }

    pub fn distensibility_range(&self) -> (f64, f64) {
        (self.distensibility_min, self.distensibility_max)
    }
}

/// SHA-256 over the generator identity and its effective configuration.
pub fn generator_hash(config_json: &str) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_NAME").as_bytes());
    h.update(b"\0");
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update(b"\0");
    h.update(config_json.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of arbitrary bytes as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A dataset directory: `manifest.json`, `samples/`, `predictions/`, `exports/`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| StoreError::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<(), StoreError> {
        manifest.validate()?;
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        write_atomic(&root.join("manifest.json"), format!("{text}\n").as_bytes())
    }

    pub fn sample_path(root: &Path, id: u64) -> PathBuf {
        root.join("samples").join(format!("{id:05}.bin"))
    }

    pub fn read_sample(&self, id: u64) -> Result<SampleRecord, StoreError> {
        let rec = read_sample(&Self::sample_path(&self.root, id))?;
        if rec.sample_id != id {
            return Err(StoreError::Malformed(format!("file for sample {id} holds sample {}", rec.sample_id)));
        }
        Ok(rec)
    }

    pub fn read_samples(&self, ids: &[u64]) -> Result<Vec<SampleRecord>, StoreError> {
        crate::par::try_map_slice(ids, |&id| self.read_sample(id))
    }

    pub fn prediction_path(&self, model_id: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{model_id}.bin"))
    }

    /// Write predictions after checking them against the test split.
    pub fn write_predictions(&self, set: &PredictionSet) -> Result<PathBuf, StoreError> {
        check_prediction_ids(set, &self.manifest.test_ids)?;
        let path = self.prediction_path(&set.model_id);
        write_atomic(&path, &encode_predictions(set))?;
        Ok(path)
    }

    /// Sample ids present under `samples/`, from a directory scan.
    pub fn scan_sample_ids(root: &Path) -> Result<Vec<u64>, StoreError> {
        let dir = root.join("samples");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".bin") {
                if let Ok(id) = stem.parse() {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }
}

pub fn read_predictions(path: &Path) -> Result<PredictionSet, StoreError> {
    decode_predictions(&read_all(path)?)
}

pub fn write_predictions_file(path: &Path, set: &PredictionSet) -> Result<(), StoreError> {
    write_atomic(path, &encode_predictions(set))
}
