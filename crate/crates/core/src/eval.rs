//! Relative L2 scoring of insult predictions, region-filtered errors and
//! signed error maps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::{unpad, MapKind};
use crate::store::{Prediction, PredictionSet, SampleRecord};

/// Normalized-insult threshold for the filtered region.
pub const REGION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground truth for predicted sample {0}")]
    UnknownSample(u64),
    #[error("sample {sample_id}: predicted shape {predicted:?} vs true {truth:?}")]
    Shape { sample_id: u64, predicted: (usize, usize), truth: (usize, usize) },
    #[error("sample {sample_id} lacks the {kind} map")]
    MissingMap { sample_id: u64, kind: &'static str },
    #[error("prediction set is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Insult {
    Ce,
    Delta,
}

impl Insult {
    pub const BOTH: [Insult; 2] = [Insult::Ce, Insult::Delta];

    pub fn kind(self) -> MapKind {
        match self {
            Insult::Ce => MapKind::InsultCe,
            Insult::Delta => MapKind::InsultDelta,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Insult::Ce => "theta_ce",
            Insult::Delta => "theta_delta",
        }
    }
}

/// Squared error and squared truth norms over the masked entries.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Sums {
    err: f64,
    norm: f64,
    count: usize,
}

fn sums(pred: &Array2<f64>, truth: &Array2<f64>, mask: Option<&Array2<bool>>) -> Sums {
    let mut s = Sums::default();
    for ((idx, &p), &t) in pred.indexed_iter().zip(truth.iter()) {
        if mask.map_or(true, |m| m[idx]) {
            s.err += (p - t) * (p - t);
            s.norm += t * t;
            s.count += 1;
        }
    }
    s
}

/// `||pred - truth|| / ||truth||`, or `None` when the truth norm is zero.
pub fn relative_l2(pred: &Array2<f64>, truth: &Array2<f64>) -> Option<f64> {
    let s = sums(pred, truth, None);
    (s.norm > 0.0).then(|| (s.err / s.norm).sqrt())
}

/// Relative L2 over masked entries; `None` for an empty mask or zero norm.
pub fn filtered_relative_l2(pred: &Array2<f64>, truth: &Array2<f64>, mask: &Array2<bool>) -> Option<f64> {
    let s = sums(pred, truth, Some(mask));
    (s.count > 0 && s.norm > 0.0).then(|| (s.err / s.norm).sqrt())
}

/// Signed `pred - truth` per node.
pub fn abs_error_map(pred: &Array2<f64>, truth: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(pred.dim());
    Zip::from(&mut out).and(pred).and(truth).for_each(|o, &p, &t| *o = p - t);
    out
}

/// Error maps for both insults of one prediction on the padded grid.
pub fn abs_error_maps(pred: &Prediction, truth: &SampleRecord) -> Result<[Array2<f64>; 2], EvalError> {
    let p = |a: &Array2<f32>| a.mapv(|v| v as f64);
    let t = |k: Insult| truth_map(truth, k.kind());
    Ok([abs_error_map(&p(&pred.theta_ce), &t(Insult::Ce)?), abs_error_map(&p(&pred.theta_delta), &t(Insult::Delta)?)])
}

fn truth_map(rec: &SampleRecord, kind: MapKind) -> Result<Array2<f64>, EvalError> {
    rec.physical(kind)
        .map(|a| a.mapv(|v| v as f64))
        .ok_or(EvalError::MissingMap { sample_id: rec.sample_id, kind: kind.name() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample_id: u64,
    pub theta_ce: Option<f64>,
    pub theta_delta: Option<f64>,
    pub theta_ce_filtered: Option<f64>,
    pub theta_delta_filtered: Option<f64>,
    pub region_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Mean of per-sample relative errors.
    pub mean: f64,
    /// Relative error of all samples stacked into one vector.
    pub stacked: f64,
    pub samples: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsultScore {
    pub full: Aggregate,
    pub filtered: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_hash: String,
    pub region_threshold: f64,
    pub scores: BTreeMap<String, InsultScore>,
    pub samples: Vec<SampleError>,
}

impl EvalReport {
    pub fn score(&self, insult: Insult) -> &InsultScore {
        &self.scores[insult.name()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per model, columns per insult.
    pub fn table(reports: &[EvalReport]) -> String {
        let width = reports.iter().map(|r| r.model_id.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>10} {:>10} {:>10} {:>10}  {:>10} {:>10}",
            "model", "ce mean", "ce stack", "dl mean", "dl stack", "ce >=0.5", "dl >=0.5"
        );
        for r in reports {
            let ce = r.score(Insult::Ce);
            let dl = r.score(Insult::Delta);
            let _ = writeln!(
                s,
                "{:<width$}  {:>10.5} {:>10.5} {:>10.5} {:>10.5}  {:>10.5} {:>10.5}",
                r.model_id, ce.full.mean, ce.full.stacked, dl.full.mean, dl.full.stacked, ce.filtered.mean, dl.filtered.mean
            );
        }
        s
    }
}

fn aggregate(per_sample: &[Option<f64>], totals: Sums) -> Aggregate {
    let good: Vec<f64> = per_sample.iter().flatten().copied().collect();
    let mean = if good.is_empty() { f64::NAN } else { good.iter().sum::<f64>() / good.len() as f64 };
    let stacked = if totals.norm > 0.0 { (totals.err / totals.norm).sqrt() } else { f64::NAN };
    Aggregate { mean, stacked, samples: good.len(), excluded: per_sample.len() - good.len() }
}

/// Score a prediction set against stored samples on the unpadded grid.
pub fn evaluate(preds: &PredictionSet, truth: &[SampleRecord], dataset_hash: &str) -> Result<EvalReport, EvalError> {
    if preds.predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let by_id: BTreeMap<u64, &SampleRecord> = truth.iter().map(|r| (r.sample_id, r)).collect();
    let mut preds_sorted: Vec<&Prediction> = preds.predictions.iter().collect();
    preds_sorted.sort_by_key(|p| p.sample_id);

    let mut samples = Vec::with_capacity(preds_sorted.len());
    let mut totals = [[Sums::default(); 2]; 2];
    for p in preds_sorted {
        let rec = by_id.get(&p.sample_id).ok_or(EvalError::UnknownSample(p.sample_id))?;
        let star = unpad(&truth_map(rec, MapKind::ThetaStar)?);
        let mask = star.mapv(|v| v >= REGION_THRESHOLD);
        let region_nodes = mask.iter().filter(|&&m| m).count();
        let mut full = [None; 2];
        let mut filt = [None; 2];
        for (k, insult) in Insult::BOTH.into_iter().enumerate() {
            let raw = match insult {
                Insult::Ce => &p.theta_ce,
                Insult::Delta => &p.theta_delta,
            };
            let t_pad = truth_map(rec, insult.kind())?;
            if raw.dim() != t_pad.dim() {
                return Err(EvalError::Shape { sample_id: p.sample_id, predicted: raw.dim(), truth: t_pad.dim() });
            }
            let pr = unpad(&raw.mapv(|v| v as f64));
            let tr = unpad(&t_pad);
            let s_full = sums(&pr, &tr, None);
            let s_filt = sums(&pr, &tr, Some(&mask));
            for (tot, s) in totals[k].iter_mut().zip([s_full, s_filt]) {
                tot.err += s.err;
                tot.norm += s.norm;
                tot.count += s.count;
            }
            full[k] = relative_l2(&pr, &tr);
            filt[k] = filtered_relative_l2(&pr, &tr, &mask);
            if full[k].is_none() {
                log::warn!("sample {}: {} truth has zero norm, excluded", p.sample_id, insult.name());
            }
            if filt[k].is_none() {
                log::warn!("sample {}: no nodes with normalized insult >= {REGION_THRESHOLD} for {}, excluded from the filtered score", p.sample_id, insult.name());
            }
        }
        samples.push(SampleError {
            sample_id: p.sample_id,
            theta_ce: full[0],
            theta_delta: full[1],
            theta_ce_filtered: filt[0],
            theta_delta_filtered: filt[1],
            region_nodes,
        });
    }

    let mut scores = BTreeMap::new();
    for (k, insult) in Insult::BOTH.into_iter().enumerate() {
        let (f, g): (Vec<_>, Vec<_>) = samples
            .iter()
            .map(|s| match insult {
                Insult::Ce => (s.theta_ce, s.theta_ce_filtered),
                Insult::Delta => (s.theta_delta, s.theta_delta_filtered),
            })
            .unzip();
        scores.insert(
            insult.name().to_string(),
            InsultScore { full: aggregate(&f, totals[k][0]), filtered: aggregate(&g, totals[k][1]) },
        );
    }
    Ok(EvalReport {
        model_id: preds.model_id.clone(),
        dataset_hash: dataset_hash.to_string(),
        region_threshold: REGION_THRESHOLD,
        scores,
        samples,
    })
}

/// Predictions that copy the stored ground truth.
pub fn echo_predictions(truth: &[SampleRecord], model_id: &str) -> Result<PredictionSet, EvalError> {
    let predictions = truth
        .iter()
        .map(|r| {
            let get = |k: MapKind| {
                r.physical(k).cloned().ok_or(EvalError::MissingMap { sample_id: r.sample_id, kind: k.name() })
            };
            Ok(Prediction { sample_id: r.sample_id, theta_ce: get(MapKind::InsultCe)?, theta_delta: get(MapKind::InsultDelta)? })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(PredictionSet { model_id: model_id.to_string(), predictions })
}
