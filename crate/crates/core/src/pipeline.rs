//! Dataset generation: profiles x combos, each calibrated to the target
//! dilatation, turned into maps and written as a dataset directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnr::{calibrate_amplitude, solve_node, Calibration, CalibrationSettings, GnrError, SolverSettings};
use crate::grf::{stream_seed, GrfConfig, GrfError, GrfSampler, InsultField, COMBO_COUNT};
use crate::maps::{field_map, to_grayscale, vessel_maps, MapError, MapKind, QuantRanges};
use crate::store::{self, Dataset, DatasetManifest, SampleRecord, StoreError, StoredMap, FORMAT_VERSION};
use crate::wall::{WallError, WallModel, WallParameters};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grf(#[from] GrfError),
    #[error(transparent)]
    Wall(#[from] WallError),
    #[error("sample {sample_id} (profile {profile_id}, combo {combo}): {source}")]
    Sample { sample_id: u64, profile_id: u64, combo: usize, source: GnrError },
    #[error("sample {sample_id} (profile {profile_id}, combo {combo}) cannot reach d_max {target}: {achieved:.4} at the clamp scale {scale:.4}")]
    Unreached { sample_id: u64, profile_id: u64, combo: usize, target: f64, achieved: f64, scale: f64 },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl PipelineError {
    /// True for failures of the numerical model rather than of input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, PipelineError::Sample { .. } | PipelineError::Unreached { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub profiles: usize,
    pub combos: usize,
    /// Master seed; profile `i` samples from `stream_seed(seed, i)`.
    pub seed: u64,
    pub split_seed: u64,
    /// Held-out samples; `None` holds out a tenth.
    pub n_test: Option<usize>,
    pub grf: GrfConfig,
    pub wall: BTreeMap<String, f64>,
    pub solver: SolverSettings,
    pub calibration: CalibrationSettings,
    pub ranges: QuantRanges,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            profiles: 100,
            combos: COMBO_COUNT,
            seed: 20_240_601,
            split_seed: 7,
            n_test: None,
            grf: GrfConfig::default(),
            wall: BTreeMap::new(),
            solver: SolverSettings::default(),
            calibration: CalibrationSettings::default(),
            ranges: QuantRanges::default(),
        }
    }
}

impl GenerateConfig {
    pub fn sample_count(&self) -> usize {
        self.profiles * self.combos
    }

    /// Held-out samples: one tenth by default, at least one when there are two or more.
    pub fn test_count(&self) -> usize {
        let n = self.sample_count();
        self.n_test.unwrap_or(if n > 1 { (n / 10).max(1) } else { 0 })
    }

    pub fn wall_parameters(&self) -> Result<WallParameters, PipelineError> {
        let overrides: serde_json::Map<String, serde_json::Value> =
            self.wall.iter().map(|(k, v)| (k.clone(), serde_json::json!(v))).collect();
        Ok(WallParameters::default().with_overrides(&overrides)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.profiles == 0 {
            return Err(PipelineError::Config("profiles must be > 0".into()));
        }
        if self.combos == 0 || self.combos > COMBO_COUNT {
            return Err(PipelineError::Config(format!("combos must be in 1..={COMBO_COUNT}")));
        }
        self.grf.validate()?;
        self.wall_parameters()?.validate()?;
        let c = &self.calibration;
        if !(c.target > 1.0) || !(c.tolerance > 0.0) || !(c.max_scale > 0.0) {
            return Err(PipelineError::Config(format!("invalid calibration settings {c:?}")));
        }
        if !(self.solver.smoothing_sigma >= 0.0) || !(self.solver.tolerance > 0.0) {
            return Err(PipelineError::Config(format!("invalid solver settings {:?}", self.solver)));
        }
        for (name, (lo, hi)) in [("dilatation", self.ranges.dilatation), ("distensibility", self.ranges.distensibility)] {
            if !(hi > lo) {
                return Err(PipelineError::Config(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        let n = self.sample_count();
        let t = self.test_count();
        if n > 1 && (t == 0 || t >= n) {
            return Err(PipelineError::Config(format!("cannot hold out {t} of {n} samples")));
        }
        Ok(())
    }

    pub fn sample_id(&self, profile: usize, combo: usize) -> u64 {
        (profile * self.combos + combo) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub sample_id: u64,
    pub profile_id: u64,
    pub combo: usize,
    pub amplitude_scale: f64,
    pub max_dilatation: f64,
    pub apex_row: usize,
    pub apex_col: usize,
    pub apex_distensibility: f64,
    pub apex_stress_circ: f64,
    pub calibration_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub samples: Vec<SampleSummary>,
    pub baseline_distensibility: f64,
    pub mean_max_dilatation: f64,
    pub std_max_dilatation: f64,
    pub mean_apex_distensibility: f64,
    pub std_apex_distensibility: f64,
    pub elapsed_seconds: f64,
}

/// A calibrated sample held in memory.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub record: SampleRecord,
    pub summary: SampleSummary,
}

pub fn sample_profiles(cfg: &GenerateConfig) -> Result<Vec<InsultField>, PipelineError> {
    let sampler = GrfSampler::new(&cfg.grf)?;
    Ok(crate::par::map_indices(cfg.profiles, |i| sampler.sample(stream_seed(cfg.seed, i as u64), i as u64)))
}

/// Turn a calibrated vessel into a stored record.
pub fn build_record(
    sample_id: u64,
    field: &InsultField,
    cal: &Calibration,
    ranges: &QuantRanges,
) -> Result<SampleRecord, PipelineError> {
    let v = &cal.vessel;
    let mut maps = vec![StoredMap::f32(MapKind::ThetaStar, &field_map(MapKind::ThetaStar, &field.theta_star).values)];
    let heat = vessel_maps(v);
    for m in &heat {
        maps.push(StoredMap::f32(m.kind, &m.values));
    }
    for m in heat.iter().filter(|m| matches!(m.kind, MapKind::Dilatation | MapKind::Distensibility)) {
        let range = if m.kind == MapKind::Dilatation { ranges.dilatation } else { ranges.distensibility };
        maps.push(StoredMap::u8(m.kind, to_grayscale(m, range)?.codes));
    }
    Ok(SampleRecord {
        sample_id,
        profile_id: field.profile_id,
        combo_index: v.pair.combo_index as u32,
        amplitude_scale: cal.scale,
        maps,
    })
}

fn summarize(sample_id: u64, field: &InsultField, k: usize, cal: &Calibration) -> SampleSummary {
    let v = &cal.vessel;
    let apex = v.apex();
    SampleSummary {
        sample_id,
        profile_id: field.profile_id,
        combo: k,
        amplitude_scale: cal.scale,
        max_dilatation: cal.max_dilatation,
        apex_row: apex.0,
        apex_col: apex.1,
        apex_distensibility: v.distensibility()[apex],
        apex_stress_circ: v.nodes[apex].stress_sys.circ,
        calibration_evaluations: cal.history.len(),
    }
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count().max(1) as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Sample, calibrate and map every (profile, combo) pair in memory.
pub fn generate_samples(cfg: &GenerateConfig) -> Result<(Vec<GeneratedSample>, GenerationReport), PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let model = WallModel::new(cfg.wall_parameters()?)?;
    let profiles = sample_profiles(cfg)?;
    let tasks: Vec<(usize, usize)> = (0..cfg.profiles).flat_map(|p| (0..cfg.combos).map(move |k| (p, k))).collect();
    let generated = crate::par::try_map_slice(&tasks, |&(p, k)| -> Result<GeneratedSample, PipelineError> {
        let field = &profiles[p];
        let sample_id = cfg.sample_id(p, k);
        let cal = calibrate_amplitude(field, k, &model, &cfg.solver, &cfg.calibration).map_err(|source| {
            PipelineError::Sample { sample_id, profile_id: field.profile_id, combo: k, source }
        })?;
        if !cal.reached {
            return Err(PipelineError::Unreached {
                sample_id,
                profile_id: field.profile_id,
                combo: k,
                target: cfg.calibration.target,
                achieved: cal.max_dilatation,
                scale: cal.scale,
            });
        }
        log::debug!("sample {sample_id}: scale {:.5}, d_max {:.4}", cal.scale, cal.max_dilatation);
        Ok(GeneratedSample {
            summary: summarize(sample_id, field, k, &cal),
            record: build_record(sample_id, field, &cal, &cfg.ranges)?,
        })
    })?;
    let baseline = solve_node(0.0, 0.0, &model, &cfg.solver)
        .map_err(|source| PipelineError::Sample { sample_id: u64::MAX, profile_id: u64::MAX, combo: 0, source })?;
    let (mean_d, std_d) = mean_std(generated.iter().map(|g| g.summary.max_dilatation));
    let (mean_a, std_a) = mean_std(generated.iter().map(|g| g.summary.apex_distensibility));
    let report = GenerationReport {
        samples: generated.iter().map(|g| g.summary.clone()).collect(),
        baseline_distensibility: baseline.distensibility(),
        mean_max_dilatation: mean_d,
        std_max_dilatation: std_d,
        mean_apex_distensibility: mean_a,
        std_apex_distensibility: std_a,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((generated, report))
}

pub fn build_manifest(cfg: &GenerateConfig, ids: Vec<u64>) -> Result<DatasetManifest, PipelineError> {
    let (train_ids, test_ids) = if ids.len() > 1 {
        store::split_dataset(&ids, cfg.test_count(), cfg.split_seed)?
    } else {
        (ids.clone(), Vec::new())
    };
    let config_json = serde_json::to_string(cfg).expect("config serializes");
    Ok(DatasetManifest {
        format_version: FORMAT_VERSION,
        n_z: cfg.grf.n_z,
        n_theta: cfg.grf.n_theta,
        padded_cols: cfg.grf.n_theta + 1,
        dilatation_min: cfg.ranges.dilatation.0,
        dilatation_max: cfg.ranges.dilatation.1,
        distensibility_min: cfg.ranges.distensibility.0,
        distensibility_max: cfg.ranges.distensibility.1,
        master_seed: cfg.seed,
        split_seed: cfg.split_seed,
        profiles: cfg.profiles,
        combos: cfg.combos,
        grf_surface_fraction: cfg.grf.surface_fraction,
        grf_boundary_softness: cfg.grf.boundary_softness,
        grf_length_circ: cfg.grf.length_circ,
        grf_length_axial: cfg.grf.length_axial,
        grf_reference_radius: cfg.grf.reference_radius,
        grf_vessel_length: cfg.grf.vessel_length,
        grf_boundary_value: cfg.grf.boundary_value,
        calibration_target: cfg.calibration.target,
        calibration_tolerance: cfg.calibration.tolerance,
        smoothing_sigma: cfg.solver.smoothing_sigma,
        wall_overrides: cfg.wall.clone(),
        sample_count: ids.len(),
        sample_ids: ids,
        train_ids,
        test_ids,
        generator_hash: store::generator_hash(&config_json),
    })
}

/// Write samples, manifest and generation report under `out`.
pub fn write_dataset(
    out: &Path,
    cfg: &GenerateConfig,
    samples: &[GeneratedSample],
    report: &GenerationReport,
) -> Result<DatasetManifest, PipelineError> {
    crate::par::try_map_slice(samples, |s| store::write_sample(&Dataset::sample_path(out, s.record.sample_id), &s.record))?;
    let manifest = build_manifest(cfg, samples.iter().map(|s| s.record.sample_id).collect())?;
    Dataset::write_manifest(out, &manifest)?;
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    let path = out.join("generation_report.json");
    std::fs::write(&path, text + "\n").map_err(|source| StoreError::Io { path, source })?;
    Ok(manifest)
}

pub fn generate(cfg: &GenerateConfig, out: &Path) -> Result<(DatasetManifest, GenerationReport), PipelineError> {
    let (samples, report) = generate_samples(cfg)?;
    let manifest = write_dataset(out, cfg, &samples, &report)?;
    Ok((manifest, report))
}
