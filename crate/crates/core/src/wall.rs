//! Constrained-mixture membrane model of the aortic wall.
//!
//! Three constituents share the wall: an elastin-dominated matrix (neo-Hookean,
//! never turned over), smooth muscle (circumferential) and collagen (axial,
//! circumferential and two symmetric diagonal families). Stresses are
//! wall-averaged Cauchy components of a thin membrane with `sigma_rr = 0`.
//!
//! Kinematics are split in two: `stretch` takes the original in vivo state to
//! the evolved natural configuration of the remodeled constituents, and
//! `elastic_stretch` takes the evolved configuration to the current one.
//! Elastin follows the total stretch; muscle and collagen sit at their
//! deposition stretches in the evolved configuration and only feel the
//! elastic part. Diagonal collagen is laid down along the direction the
//! mixture has carried it to, `tan(alpha) = (stretch_circ / stretch_axial) tan(alpha_0)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// kPa per mmHg.
pub const KPA_PER_MMHG: f64 = 0.1333;
/// Largest admissible exponent in the fiber exponentials.
pub const EXPONENT_LIMIT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WallError {
    #[error("{constituent:?} exponent {exponent:.1} exceeds {EXPONENT_LIMIT} at I4 = {i4}")]
    FiberOverflow { constituent: Constituent, i4: f64, exponent: f64 },
    #[error("invalid wall parameters: {0}")]
    Invalid(String),
    #[error("invalid mixture state: {0}")]
    State(String),
    #[error("unknown wall parameter `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Constituent {
    Elastin,
    Muscle,
    Collagen,
}

/// Geometric, material and turnover constants (mm, kPa).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WallParameters {
    pub r_o: f64,
    pub h_o: f64,
    pub l_o: f64,
    pub phi_e: f64,
    pub phi_m: f64,
    pub phi_c: f64,
    pub beta_circ: f64,
    pub beta_axial: f64,
    pub beta_diag: f64,
    /// Diagonal collagen angle from the axial direction (degrees).
    pub alpha_0_deg: f64,
    pub c_e: f64,
    pub c1_m: f64,
    pub c2_m: f64,
    pub c1_c: f64,
    pub c2_c: f64,
    pub g_e_circ: f64,
    pub g_e_axial: f64,
    pub g_m: f64,
    pub g_c: f64,
    pub delta: f64,
    /// Smooth muscle to collagen turnover ratio; encoded by the shared mass fold.
    pub eta: f64,
    /// Shear-to-intramural gain ratio; inactive at mechanobiological equilibrium.
    pub gain_ratio: f64,
    pub p_sys: f64,
    pub p_dia: f64,
}

impl Default for WallParameters {
    fn default() -> Self {
        Self {
            r_o: 0.808,
            h_o: 0.041,
            l_o: 10.0,
            phi_e: 0.354,
            phi_m: 0.298,
            phi_c: 0.348,
            beta_circ: 0.077,
            beta_axial: 0.035,
            beta_diag: 0.888,
            alpha_0_deg: 50.3,
            c_e: 92.6,
            c1_m: 0.32,
            c2_m: 31.1,
            c1_c: 4446.5,
            c2_c: 2.45,
            g_e_circ: 2.11,
            g_e_axial: 2.03,
            g_m: 1.20,
            g_c: 1.06,
            delta: 0.0,
            eta: 1.0,
            gain_ratio: 0.2,
            p_sys: 120.0 * KPA_PER_MMHG,
            p_dia: 80.0 * KPA_PER_MMHG,
        }
    }
}

impl WallParameters {
    /// Radial elastin deposition stretch; elastin is deposited isochorically.
    pub fn g_e_radial(&self) -> f64 {
        1.0 / (self.g_e_circ * self.g_e_axial)
    }

    pub fn alpha_0(&self) -> f64 {
        self.alpha_0_deg.to_radians()
    }

    pub fn validate(&self) -> Result<(), WallError> {
        let mass = self.phi_e + self.phi_m + self.phi_c;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(WallError::Invalid(format!("mass fractions sum to {mass}")));
        }
        let beta = self.beta_circ + self.beta_axial + self.beta_diag;
        if (beta - 1.0).abs() > 1e-6 {
            return Err(WallError::Invalid(format!("collagen orientation fractions sum to {beta}")));
        }
        let positive = [
            ("r_o", self.r_o),
            ("h_o", self.h_o),
            ("l_o", self.l_o),
            ("g_e_circ", self.g_e_circ),
            ("g_e_axial", self.g_e_axial),
            ("g_m", self.g_m),
            ("g_c", self.g_c),
            ("p_sys", self.p_sys),
            ("p_dia", self.p_dia),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(WallError::Invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(WallError::Invalid(format!("delta {} not in [0,1)", self.delta)));
        }
        Ok(())
    }

    /// Apply `key = value` overrides from a JSON object of numbers.
    pub fn with_overrides(&self, overrides: &serde_json::Map<String, serde_json::Value>) -> Result<Self, WallError> {
        let mut value = serde_json::to_value(self).expect("parameters serialize");
        let obj = value.as_object_mut().expect("parameters are an object");
        for (k, v) in overrides {
            if !obj.contains_key(k) {
                return Err(WallError::UnknownKey(k.clone()));
            }
            obj.insert(k.clone(), v.clone());
        }
        serde_json::from_value(value).map_err(|e| WallError::Invalid(e.to_string()))
    }
}

/// Mixture configuration used by [`mixture_stress`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureState {
    /// Stretch of the evolved natural configuration relative to the original
    /// in vivo state, (circumferential, axial).
    pub stretch: [f64; 2],
    /// Elastic stretch from the evolved configuration, (circumferential, axial).
    pub elastic_stretch: [f64; 2],
    /// Common fold change of smooth muscle and collagen referential mass.
    pub mass_fold: f64,
    /// Elastin stiffness after insult (kPa).
    pub elastin_stiffness: f64,
    pub mechanosensing: f64,
}

impl MixtureState {
    pub fn baseline(params: &WallParameters) -> Self {
        Self {
            stretch: [1.0, 1.0],
            elastic_stretch: [1.0, 1.0],
            mass_fold: 1.0,
            elastin_stiffness: params.c_e,
            mechanosensing: params.delta,
        }
    }

    /// Total stretch relative to the original in vivo state.
    pub fn total_stretch(&self) -> [f64; 2] {
        [self.stretch[0] * self.elastic_stretch[0], self.stretch[1] * self.elastic_stretch[1]]
    }

    fn check(&self) -> Result<(), WallError> {
        let all = [self.stretch[0], self.stretch[1], self.elastic_stretch[0], self.elastic_stretch[1]];
        if all.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(WallError::State(format!("non-positive stretch in {self:?}")));
        }
        if !(self.mass_fold > 0.0) || !self.mass_fold.is_finite() {
            return Err(WallError::State(format!("mass fold {} must be > 0", self.mass_fold)));
        }
        if !(self.elastin_stiffness >= 0.0) {
            return Err(WallError::State("negative elastin stiffness".into()));
        }
        Ok(())
    }
}

/// Wall-averaged Cauchy stress components (kPa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressState {
    pub circ: f64,
    pub axial: f64,
    pub mean: f64,
    pub shear: f64,
}

impl StressState {
    pub fn from_components(circ: f64, axial: f64) -> Self {
        Self { circ, axial, mean: (circ + axial) / 3.0, shear: (circ - axial) / 2.0 }
    }
}

/// Stored energy of one constituent per unit volume of that constituent.
///
/// Elastin takes `I1`, fibers take `I4`. The elastin energy is
/// `c^e / 2 (I1 - 3)`, the coefficient convention under which the Table A
/// stiffness holds the baseline vessel in equilibrium.
pub fn constituent_energy(constituent: Constituent, invariant: f64, params: &WallParameters) -> Result<f64, WallError> {
    match constituent {
        Constituent::Elastin => Ok(0.5 * params.c_e * (invariant - 3.0)),
        Constituent::Muscle => fiber_energy(constituent, invariant, params.c1_m, params.c2_m),
        Constituent::Collagen => fiber_energy(constituent, invariant, params.c1_c, params.c2_c),
    }
}

fn fiber_exponent(constituent: Constituent, i4: f64, c2: f64) -> Result<f64, WallError> {
    let exponent = c2 * (i4 - 1.0) * (i4 - 1.0);
    if exponent > EXPONENT_LIMIT || !exponent.is_finite() {
        return Err(WallError::FiberOverflow { constituent, i4, exponent });
    }
    Ok(exponent)
}

fn fiber_energy(constituent: Constituent, i4: f64, c1: f64, c2: f64) -> Result<f64, WallError> {
    let e = fiber_exponent(constituent, i4, c2)?;
    Ok(c1 / (4.0 * c2) * e.exp_m1())
}

/// Uniaxial Cauchy stress `2 I4 dW/dI4` of a fiber family.
pub fn fiber_stress(constituent: Constituent, i4: f64, params: &WallParameters) -> Result<f64, WallError> {
    let (c1, c2) = match constituent {
        Constituent::Muscle => (params.c1_m, params.c2_m),
        Constituent::Collagen => (params.c1_c, params.c2_c),
        Constituent::Elastin => return Err(WallError::State("elastin is not a fiber family".into())),
    };
    let e = fiber_exponent(constituent, i4, c2)?;
    Ok(c1 * i4 * (i4 - 1.0) * e.exp())
}

/// Current volume fractions `(elastin, muscle, collagen)` and total mass
/// `M = phi_e + (phi_m + phi_c) rho` relative to the original wall.
pub fn mass_fractions(mass_fold: f64, params: &WallParameters) -> ([f64; 3], f64) {
    let total = params.phi_e + (params.phi_m + params.phi_c) * mass_fold;
    (
        [
            params.phi_e / total,
            params.phi_m * mass_fold / total,
            params.phi_c * mass_fold / total,
        ],
        total,
    )
}

/// Diagonal collagen direction in the evolved configuration: (sin^2, cos^2).
fn diagonal_direction(state: &MixtureState, params: &WallParameters) -> (f64, f64) {
    let a0 = params.alpha_0();
    let s = state.stretch[0] * a0.sin();
    let c = state.stretch[1] * a0.cos();
    let n = s * s + c * c;
    (s * s / n, c * c / n)
}

/// Elastin stretches `(circ, axial, radial)` including deposition stretch.
pub fn elastin_stretches(state: &MixtureState, params: &WallParameters) -> [f64; 3] {
    let [lt, lz] = state.total_stretch();
    [params.g_e_circ * lt, params.g_e_axial * lz, params.g_e_radial() / (lt * lz)]
}

pub fn mixture_stress(state: &MixtureState, params: &WallParameters) -> Result<StressState, WallError> {
    state.check()?;
    let (frac, _) = mass_fractions(state.mass_fold, params);
    let [et, ez, er] = elastin_stretches(state, params);
    let ce = state.elastin_stiffness;
    let elastin_circ = ce * (et * et - er * er);
    let elastin_axial = ce * (ez * ez - er * er);

    let [ut, uz] = state.elastic_stretch;
    let muscle = fiber_stress(Constituent::Muscle, (params.g_m * ut).powi(2), params)?;
    let gc2 = params.g_c * params.g_c;
    let col_circ = fiber_stress(Constituent::Collagen, gc2 * ut * ut, params)?;
    let col_axial = fiber_stress(Constituent::Collagen, gc2 * uz * uz, params)?;
    let (s2, c2) = diagonal_direction(state, params);
    let diag_sq = ut * ut * s2 + uz * uz * c2;
    let col_diag = fiber_stress(Constituent::Collagen, gc2 * diag_sq, params)?;
    // share of the diagonal fiber stress along each axis in the current direction
    let w_circ = ut * ut * s2 / diag_sq;
    let w_axial = uz * uz * c2 / diag_sq;

    let collagen_circ = params.beta_circ * col_circ + params.beta_diag * w_circ * col_diag;
    let collagen_axial = params.beta_axial * col_axial + params.beta_diag * w_axial * col_diag;

    let circ = frac[0] * elastin_circ + frac[1] * muscle + frac[2] * collagen_circ;
    let axial = frac[0] * elastin_axial + frac[2] * collagen_axial;
    Ok(StressState::from_components(circ, axial))
}

/// Volume-fraction weighted stored energy of the mixture at `state`, with
/// fibers measured from their deposition stretch in the evolved configuration.
pub fn mixture_energy(state: &MixtureState, params: &WallParameters) -> Result<f64, WallError> {
    state.check()?;
    let (frac, _) = mass_fractions(state.mass_fold, params);
    let [et, ez, er] = elastin_stretches(state, params);
    let i1 = et * et + ez * ez + er * er;
    let scale = if params.c_e > 0.0 { state.elastin_stiffness / params.c_e } else { 0.0 };
    let w_e = scale * constituent_energy(Constituent::Elastin, i1, params)?;
    let [ut, uz] = state.elastic_stretch;
    let w_m = constituent_energy(Constituent::Muscle, (params.g_m * ut).powi(2), params)?;
    let gc2 = params.g_c * params.g_c;
    let (s2, c2) = diagonal_direction(state, params);
    let w_c = params.beta_circ * constituent_energy(Constituent::Collagen, gc2 * ut * ut, params)?
        + params.beta_axial * constituent_energy(Constituent::Collagen, gc2 * uz * uz, params)?
        + params.beta_diag * constituent_energy(Constituent::Collagen, gc2 * (ut * ut * s2 + uz * uz * c2), params)?;
    Ok(frac[0] * w_e + frac[1] * w_m + frac[2] * w_c)
}

/// Homeostatic set-point: mean stress of the baseline wall.
pub fn set_point(params: &WallParameters) -> Result<f64, WallError> {
    Ok(mixture_stress(&MixtureState::baseline(params), params)?.mean)
}

/// Sensed stress deviation `(1 - delta) sigma / sigma_o - 1`.
pub fn stimulus(sigma_mean: f64, sigma_o: f64, delta: f64) -> f64 {
    (1.0 - delta) * sigma_mean / sigma_o - 1.0
}

/// Parameters together with the quantities fixed by the baseline state.
#[derive(Debug, Clone, PartialEq)]
pub struct WallModel {
    pub params: WallParameters,
    /// Homeostatic mean stress (kPa).
    pub sigma_o: f64,
    /// Baseline circumferential stress.
    pub sigma_circ_o: f64,
    /// Ratio of baseline membrane tension to the Laplace load `P_sys r_o`.
    ///
    /// The membrane carries the luminal load through `sigma_circ h = load_factor P r`;
    /// fixing the factor on the baseline makes the original vessel an exact
    /// equilibrium at systole.
    pub load_factor: f64,
}

impl WallModel {
    pub fn new(params: WallParameters) -> Result<Self, WallError> {
        params.validate()?;
        let base = mixture_stress(&MixtureState::baseline(&params), &params)?;
        if !(base.mean > 0.0) {
            return Err(WallError::Invalid(format!("baseline mean stress {} is not positive", base.mean)));
        }
        let load_factor = base.circ * params.h_o / (params.p_sys * params.r_o);
        Ok(Self { sigma_o: base.mean, sigma_circ_o: base.circ, load_factor, params })
    }
}

impl Default for WallModel {
    fn default() -> Self {
        Self::new(WallParameters::default()).expect("default parameters are valid")
    }
}
