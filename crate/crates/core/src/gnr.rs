//! Per-node mechanobiologically equilibrated growth and remodeling.
//!
//! Each grid node is solved independently: a 2x2 system in the evolved
//! circumferential stretch and mass fold at systole, followed by a scalar
//! elastic unload to diastole with the composition frozen. Axial stretch is
//! held at 1 throughout. Radii can then be smoothed over the grid to stand in
//! for the wall's spatial coupling.

use std::collections::HashMap;

use ndarray::Array2;
use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grf::{combo_weights, make_insult_pair, GrfError, InsultField, InsultPair};
use crate::grf::{MAX_ELASTIN_INSULT, MAX_MECHANOSENSING_INSULT};
use crate::par;
use crate::wall::{mass_fractions, mixture_stress, MixtureState, StressState, WallError, WallModel};

pub const STRETCH_BOUNDS: (f64, f64) = (0.5, 3.0);
pub const MASS_BOUNDS: (f64, f64) = (0.1, 10.0);
const UNLOAD_BRACKET: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnrError {
    #[error("no equilibrium for theta_ce = {theta_ce}, theta_delta = {theta_delta}: {reason} (last iterate stretch {stretch}, mass {mass_fold}, residuals {residuals:?}, {iterations} iterations)")]
    NodeFailure {
        theta_ce: f64,
        theta_delta: f64,
        reason: String,
        stretch: f64,
        mass_fold: f64,
        residuals: [f64; 2],
        iterations: usize,
    },
    #[error("diastolic unload failed at stretch {stretch}, mass {mass_fold}: {reason}")]
    UnloadFailure { stretch: f64, mass_fold: f64, reason: String },
    #[error("node ({row}, {col}) failed: {source}")]
    Vessel { row: usize, col: usize, source: Box<GnrError> },
    #[error("calibration of combo {combo} did not bracket d_max = {target}; sweep {history:?}")]
    Calibration { combo: usize, target: f64, history: Vec<(f64, Option<f64>)> },
    #[error("insult input: {0}")]
    Insult(#[from] GrfError),
    #[error("insult fields have shapes {0:?} and {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error(transparent)]
    Wall(#[from] WallError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Max-norm tolerance on the dimensionless residuals.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Radius smoothing in grid cells; 0 disables it.
    pub smoothing_sigma: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 200, max_halvings: 8, smoothing_sigma: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveMethod {
    /// Already at the root on the initial guess.
    Initial,
    Newton,
    /// Mass fold eliminated in closed form, stretch bracketed.
    Elimination,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeEquilibrium {
    pub theta_ce: f64,
    pub theta_delta: f64,
    /// Evolved circumferential stretch at systole.
    pub stretch_sys: f64,
    pub mass_fold: f64,
    pub r_sys: f64,
    pub r_dia: f64,
    pub h_sys: f64,
    pub h_dia: f64,
    /// Elastic circumferential stretch from systole to diastole.
    pub unload_stretch: f64,
    pub stress_sys: StressState,
    /// Residuals re-evaluated at the returned state.
    pub residuals: [f64; 2],
    pub iterations: usize,
    pub method: SolveMethod,
}

impl NodeEquilibrium {
    pub fn distensibility(&self) -> f64 {
        (self.r_sys - self.r_dia) / self.r_dia
    }
}

fn systolic_state(model: &WallModel, theta_ce: f64, theta_delta: f64, stretch: f64, mass_fold: f64) -> MixtureState {
    MixtureState {
        stretch: [stretch, 1.0],
        elastic_stretch: [1.0, 1.0],
        mass_fold,
        elastin_stiffness: model.params.c_e * (1.0 - theta_ce),
        mechanosensing: theta_delta,
    }
}

/// Dimensionless residuals: Laplace balance and set-point deviation.
pub fn node_residuals(
    model: &WallModel,
    theta_ce: f64,
    theta_delta: f64,
    stretch: f64,
    mass_fold: f64,
) -> Result<([f64; 2], StressState), WallError> {
    let p = &model.params;
    let state = systolic_state(model, theta_ce, theta_delta, stretch, mass_fold);
    let s = mixture_stress(&state, p)?;
    let (_, total) = mass_fractions(mass_fold, p);
    let tension = s.circ * p.h_o * total / stretch;
    let load = model.load_factor * p.p_sys * p.r_o * stretch;
    let r1 = tension / load - 1.0;
    let r2 = (1.0 - theta_delta) * s.mean / model.sigma_o - 1.0;
    Ok(([r1, r2], s))
}

fn max_norm(r: &[f64; 2]) -> f64 {
    r[0].abs().max(r[1].abs())
}

fn clamp_box(x: [f64; 2]) -> [f64; 2] {
    [x[0].clamp(STRETCH_BOUNDS.0, STRETCH_BOUNDS.1), x[1].clamp(MASS_BOUNDS.0, MASS_BOUNDS.1)]
}

fn check_insults(theta_ce: f64, theta_delta: f64) -> Result<(), GnrError> {
    if !(0.0..=MAX_ELASTIN_INSULT).contains(&theta_ce) || !(0.0..=MAX_MECHANOSENSING_INSULT).contains(&theta_delta) {
        return Err(GrfError::Domain(format!("insults ({theta_ce}, {theta_delta}) outside their ranges")).into());
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Iterate {
    x: [f64; 2],
    r: [f64; 2],
    iterations: usize,
}

fn newton(model: &WallModel, ce: f64, dl: f64, settings: &SolverSettings) -> Result<Iterate, Iterate> {
    let eval = |x: [f64; 2]| node_residuals(model, ce, dl, x[0], x[1]).ok().map(|(r, _)| r);
    let mut x = clamp_box([1.0 + 0.5 * dl + 0.3 * ce, 1.0]);
    let Some(mut r) = eval(x) else {
        return Err(Iterate { x, r: [f64::NAN; 2], iterations: 0 });
    };
    for it in 0..settings.max_iterations {
        if max_norm(&r) < settings.tolerance {
            return Ok(Iterate { x, r, iterations: it });
        }
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let h = 1e-7 * x[k].abs().max(1.0);
            let mut up = x;
            let mut dn = x;
            up[k] += h;
            dn[k] -= h;
            let (Some(ru), Some(rd)) = (eval(up), eval(dn)) else {
                return Err(Iterate { x, r, iterations: it });
            };
            for i in 0..2 {
                jac[i][k] = (ru[i] - rd[i]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(Iterate { x, r, iterations: it });
        }
        let dx = [
            -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
        ];
        let norm = max_norm(&r);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let trial = clamp_box([x[0] + t * dx[0], x[1] + t * dx[1]]);
            if let Some(rt) = eval(trial) {
                if max_norm(&rt) < norm {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((xn, rn)) => {
                x = xn;
                r = rn;
            }
            None => return Err(Iterate { x, r, iterations: it + 1 }),
        }
    }
    if max_norm(&r) < settings.tolerance {
        Ok(Iterate { x, r, iterations: settings.max_iterations })
    } else {
        Err(Iterate { x, r, iterations: settings.max_iterations })
    }
}

/// Mass fold satisfying the Laplace balance at `stretch`.
///
/// Circumferential tension `sigma_circ * M` is affine in the mass fold, so two
/// evaluations determine it exactly.
pub fn balancing_mass_fold(model: &WallModel, theta_ce: f64, theta_delta: f64, stretch: f64) -> Result<f64, WallError> {
    let p = &model.params;
    let tension = |rho: f64| -> Result<f64, WallError> {
        let s = mixture_stress(&systolic_state(model, theta_ce, theta_delta, stretch, rho), p)?;
        Ok(s.circ * mass_fractions(rho, p).1)
    };
    let t1 = tension(1.0)?;
    let slope = tension(2.0)? - t1;
    let need = model.load_factor * p.p_sys * p.r_o * stretch * stretch / p.h_o;
    Ok(1.0 + (need - t1) / slope)
}

fn eliminated_residual(model: &WallModel, ce: f64, dl: f64, stretch: f64) -> Option<(f64, f64)> {
    let rho = balancing_mass_fold(model, ce, dl, stretch).ok()?;
    if !(MASS_BOUNDS.0..=MASS_BOUNDS.1).contains(&rho) {
        return None;
    }
    let (r, _) = node_residuals(model, ce, dl, stretch, rho).ok()?;
    Some((r[1], rho))
}

fn elimination(model: &WallModel, ce: f64, dl: f64, settings: &SolverSettings) -> Result<Iterate, String> {
    // bracket the set-point residual on a stretch scan outward from the baseline
    const STEPS: usize = 500;
    let (lo, hi) = STRETCH_BOUNDS;
    let grid = |i: usize| lo + (hi - lo) * i as f64 / STEPS as f64;
    let values: Vec<Option<f64>> = (0..=STEPS).map(|i| eliminated_residual(model, ce, dl, grid(i)).map(|v| v.0)).collect();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..STEPS {
        if let (Some(a), Some(b)) = (values[i], values[i + 1]) {
            if a == 0.0 || a * b < 0.0 {
                let (xa, xb) = (grid(i), grid(i + 1));
                let dist = (0.5 * (xa + xb) - 1.0).abs();
                if best.map_or(true, |(ba, bb)| dist < (0.5 * (ba + bb) - 1.0).abs()) {
                    best = Some((xa, xb));
                }
            }
        }
    }
    let (a, b) = best.ok_or_else(|| "set-point residual has no sign change for any admissible stretch".to_string())?;
    let mut conv = SimpleConvergency { eps: 1e-15, max_iter: 200 };
    let f = |s: f64| eliminated_residual(model, ce, dl, s).map_or(f64::NAN, |v| v.0);
    let stretch = find_root_brent(a, b, f, &mut conv).map_err(|e| format!("stretch bracket refinement: {e:?}"))?;
    let rho = balancing_mass_fold(model, ce, dl, stretch).map_err(|e| e.to_string())?;
    let (r, _) = node_residuals(model, ce, dl, stretch, rho).map_err(|e| e.to_string())?;
    if max_norm(&r) >= settings.tolerance {
        return Err(format!("bracketed root leaves residuals {r:?}"));
    }
    Ok(Iterate { x: [stretch, rho], r, iterations: conv.max_iter })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unload {
    pub stretch: f64,
    pub r_dia: f64,
    pub h_dia: f64,
}

/// Diastolic radius with the evolved composition frozen.
pub fn elastic_unload(node: &NodeEquilibrium, model: &WallModel) -> Result<Unload, GnrError> {
    let p = &model.params;
    let fail = |reason: String| GnrError::UnloadFailure { stretch: node.stretch_sys, mass_fold: node.mass_fold, reason };
    let load = model.load_factor * p.p_dia * node.r_sys / node.h_sys;
    let residual = |el: f64| -> f64 {
        let state = MixtureState {
            elastic_stretch: [el, 1.0],
            ..systolic_state(model, node.theta_ce, node.theta_delta, node.stretch_sys, node.mass_fold)
        };
        match mixture_stress(&state, p) {
            Ok(s) => s.circ / (load * el * el) - 1.0,
            Err(_) => f64::NAN,
        }
    };
    let (a, b) = UNLOAD_BRACKET;
    let (fa, fb) = (residual(a), residual(b));
    if !(fa < 0.0 && fb > 0.0) {
        return Err(fail(format!("residual {fa} at {a} and {fb} at {b} do not bracket a stable root")));
    }
    let mut conv = SimpleConvergency { eps: 1e-15, max_iter: 200 };
    let el = find_root_brent(a, b, residual, &mut conv).map_err(|e| fail(format!("{e:?}")))?;
    if !el.is_finite() {
        return Err(fail("non-finite root".into()));
    }
    Ok(Unload { stretch: el, r_dia: node.r_sys * el, h_dia: node.h_sys / el })
}

/// Systolic equilibrium and diastolic unload for one node.
pub fn solve_node(theta_ce: f64, theta_delta: f64, model: &WallModel, settings: &SolverSettings) -> Result<NodeEquilibrium, GnrError> {
    check_insults(theta_ce, theta_delta)?;
    let solved = match newton(model, theta_ce, theta_delta, settings) {
        Ok(it) => Ok((it, if it.iterations == 0 { SolveMethod::Initial } else { SolveMethod::Newton })),
        Err(last) => match elimination(model, theta_ce, theta_delta, settings) {
            Ok(it) => Ok((it, SolveMethod::Elimination)),
            Err(reason) => Err(GnrError::NodeFailure {
                theta_ce,
                theta_delta,
                reason,
                stretch: last.x[0],
                mass_fold: last.x[1],
                residuals: last.r,
                iterations: last.iterations,
            }),
        },
    };
    let (it, method) = solved?;
    let [stretch, mass_fold] = it.x;
    let (residuals, stress) = node_residuals(model, theta_ce, theta_delta, stretch, mass_fold)?;
    let (_, total) = mass_fractions(mass_fold, &model.params);
    let mut node = NodeEquilibrium {
        theta_ce,
        theta_delta,
        stretch_sys: stretch,
        mass_fold,
        r_sys: model.params.r_o * stretch,
        r_dia: f64::NAN,
        h_sys: model.params.h_o * total / stretch,
        h_dia: f64::NAN,
        unload_stretch: f64::NAN,
        stress_sys: stress,
        residuals,
        iterations: it.iterations,
        method,
    };
    let unload = elastic_unload(&node, model)?;
    node.r_dia = unload.r_dia;
    node.h_dia = unload.h_dia;
    node.unload_stretch = unload.stretch;
    Ok(node)
}

/// Separable Gaussian blur, periodic along columns and mirrored along rows.
///
/// The kernel spans `ceil(4 sigma)` cells each way and is normalized to unit
/// mass; `sigma = 0` returns the input unchanged.
pub fn gaussian_smooth(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if !(sigma > 0.0) {
        return field.clone();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut w: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let (rows, cols) = field.dim();
    let mirror = |i: isize| -> usize {
        let n = rows as isize;
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period);
        (if m < n { m } else { period - m }) as usize
    };
    let mut along_theta = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let jj = (j as isize + k as isize - radius).rem_euclid(cols as isize) as usize;
                acc += wk * field[[i, jj]];
            }
            along_theta[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                acc += wk * along_theta[[mirror(i as isize + k as isize - radius), j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolvedVessel {
    pub nodes: Array2<NodeEquilibrium>,
    pub pair: InsultPair,
    pub smoothing_sigma: f64,
    /// Systolic and diastolic radii after smoothing.
    pub r_sys: Array2<f64>,
    pub r_dia: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressMaps {
    pub circ: Array2<f64>,
    pub axial: Array2<f64>,
    pub shear: Array2<f64>,
}

impl EvolvedVessel {
    /// Mean diastolic radius over the first and last rows.
    pub fn end_radius(&self) -> f64 {
        let last = self.r_dia.nrows() - 1;
        let row_sum = |i: usize| self.r_dia.row(i).sum();
        (row_sum(0) + row_sum(last)) / (2 * self.r_dia.ncols()) as f64
    }

    /// Diastolic dilatation on the unpadded grid.
    pub fn dilatation(&self) -> Array2<f64> {
        let end = self.end_radius();
        self.r_dia.mapv(|r| r / end)
    }

    pub fn max_dilatation(&self) -> f64 {
        self.dilatation().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn distensibility(&self) -> Array2<f64> {
        let mut out = &self.r_sys - &self.r_dia;
        out /= &self.r_dia;
        out
    }

    /// Grid index of the largest dilatation (first hit in row-major order).
    pub fn apex(&self) -> (usize, usize) {
        let d = self.dilatation();
        let mut best = (0, 0);
        for ((i, j), &v) in d.indexed_iter() {
            if v > d[best] {
                best = (i, j);
            }
        }
        best
    }

    pub fn stress_maps(&self) -> StressMaps {
        StressMaps {
            circ: self.nodes.mapv(|n| n.stress_sys.circ),
            axial: self.nodes.mapv(|n| n.stress_sys.axial),
            shear: self.nodes.mapv(|n| n.stress_sys.shear),
        }
    }
}

/// Solve every node of `pair`. Nodes with bit-identical insults share a solve.
pub fn solve_vessel(pair: &InsultPair, model: &WallModel, settings: &SolverSettings) -> Result<EvolvedVessel, GnrError> {
    if pair.theta_ce.dim() != pair.theta_delta.dim() {
        return Err(GnrError::Shape(pair.theta_ce.shape().to_vec(), pair.theta_delta.shape().to_vec()));
    }
    let (rows, cols) = pair.theta_ce.dim();
    let mut keys: Vec<(f64, f64)> = Vec::new();
    let mut first_at: Vec<(usize, usize)> = Vec::new();
    let mut lookup: HashMap<(u64, u64), usize> = HashMap::new();
    let mut slot = Array2::<usize>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let (ce, dl) = (pair.theta_ce[[i, j]], pair.theta_delta[[i, j]]);
            let idx = *lookup.entry((ce.to_bits(), dl.to_bits())).or_insert_with(|| {
                keys.push((ce, dl));
                first_at.push((i, j));
                keys.len() - 1
            });
            slot[[i, j]] = idx;
        }
    }
    let solved = par::try_map_indices(keys.len(), |k| {
        let (ce, dl) = keys[k];
        solve_node(ce, dl, model, settings).map_err(|e| {
            let (row, col) = first_at[k];
            GnrError::Vessel { row, col, source: Box::new(e) }
        })
    })?;
    let nodes = slot.mapv(|k| solved[k]);
    let raw_sys = nodes.mapv(|n| n.r_sys);
    let raw_dia = nodes.mapv(|n| n.r_dia);
    Ok(EvolvedVessel {
        r_sys: gaussian_smooth(&raw_sys, settings.smoothing_sigma),
        r_dia: gaussian_smooth(&raw_dia, settings.smoothing_sigma),
        nodes,
        pair: pair.clone(),
        smoothing_sigma: settings.smoothing_sigma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub target: f64,
    pub tolerance: f64,
    pub max_scale: f64,
    pub max_evaluations: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self { target: 1.5, tolerance: 0.01, max_scale: 1.2, max_evaluations: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub scale: f64,
    pub max_dilatation: f64,
    /// False when the target is out of reach inside the insult range clamps.
    pub reached: bool,
    /// Every evaluated `(scale, d_max)`; `None` marks a failed vessel solve.
    pub history: Vec<(f64, Option<f64>)>,
    pub vessel: EvolvedVessel,
}

/// Largest scale keeping the apex insults inside their ranges.
pub fn scale_limit(field: &InsultField, k: usize, max_scale: f64) -> Result<f64, GrfError> {
    let (s_ce, s_dl) = combo_weights(k)?;
    let apex = field.theta_star.iter().cloned().fold(0.0, f64::max);
    let mut limit = max_scale;
    if apex > 0.0 {
        if s_ce > 0.0 {
            limit = limit.min(MAX_ELASTIN_INSULT / (s_ce * apex));
        }
        if s_dl > 0.0 {
            limit = limit.min(MAX_MECHANOSENSING_INSULT / (s_dl * apex));
        }
    }
    Ok(limit)
}

/// Find the amplitude scale whose vessel peaks at the target dilatation.
///
/// Regula falsi with the Illinois modification on `d_max(scale) - target`; a
/// scale whose vessel has no equilibrium counts as an overshoot and is handled
/// by bisection.
pub fn calibrate_amplitude(
    field: &InsultField,
    k: usize,
    model: &WallModel,
    solver: &SolverSettings,
    cal: &CalibrationSettings,
) -> Result<Calibration, GnrError> {
    let s_max = scale_limit(field, k, cal.max_scale)?;
    let mut history = Vec::new();
    let evaluate = |s: f64, history: &mut Vec<(f64, Option<f64>)>| -> Option<EvolvedVessel> {
        let pair = make_insult_pair(field, k, s).ok()?;
        let v = solve_vessel(&pair, model, solver).ok();
        history.push((s, v.as_ref().map(|v| v.max_dilatation())));
        v
    };
    let done = |s: f64, v: EvolvedVessel, reached: bool, history: Vec<(f64, Option<f64>)>| Calibration {
        scale: s,
        max_dilatation: v.max_dilatation(),
        reached,
        history,
        vessel: v,
    };

    let (mut lo, mut f_lo) = (0.0, 1.0 - cal.target);
    let top = evaluate(s_max, &mut history);
    let mut f_hi = match &top {
        Some(v) => v.max_dilatation() - cal.target,
        None => f64::INFINITY,
    };
    let mut hi = s_max;
    if let Some(v) = top {
        if f_hi.abs() <= cal.tolerance {
            return Ok(done(s_max, v, true, history));
        }
        if f_hi < 0.0 {
            log::warn!("combo {k}: d_max {:.4} at the clamp scale {s_max:.4} is below target {}", v.max_dilatation(), cal.target);
            return Ok(done(s_max, v, false, history));
        }
    }
    let mut side = 0i8;
    for _ in 0..cal.max_evaluations {
        let s = if f_hi.is_finite() { (lo * f_hi - hi * f_lo) / (f_hi - f_lo) } else { 0.5 * (lo + hi) };
        let s = if s > lo && s < hi { s } else { 0.5 * (lo + hi) };
        match evaluate(s, &mut history) {
            Some(v) => {
                let f = v.max_dilatation() - cal.target;
                if f.abs() <= cal.tolerance {
                    return Ok(done(s, v, true, history));
                }
                if f < 0.0 {
                    lo = s;
                    f_lo = f;
                    if side == -1 {
                        f_hi *= 0.5;
                    }
                    side = -1;
                } else {
                    hi = s;
                    f_hi = f;
                    if side == 1 {
                        f_lo *= 0.5;
                    }
                    side = 1;
                }
            }
            None => {
                hi = s;
                f_hi = f64::INFINITY;
                side = 0;
            }
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Err(GnrError::Calibration { combo: k, target: cal.target, history })
}
