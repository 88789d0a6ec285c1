//! Boundary-conditioned, circumferentially periodic Gaussian random insult
//! fields and their split into elastic-fiber and mechanosensing contributions.
//!
//! Nodes live on an `n_z x n_theta` grid: `z_i = i * l_o / (n_z - 1)` and
//! `theta_j = 2 pi j / n_theta`. The axial end rows are the boundary set.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{erf_inv, normal_quantile};

/// Upper end of the elastic-fiber insult range.
pub const MAX_ELASTIN_INSULT: f64 = 0.48;
/// Upper end of the mechanosensing insult range.
pub const MAX_MECHANOSENSING_INSULT: f64 = 0.28;
/// Number of elastin/mechanosensing combinations assigned to each profile.
pub const COMBO_COUNT: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrfError {
    #[error("invalid GRF parameter: {0}")]
    Domain(String),
    #[error("boundary covariance block is singular beyond the regularization floor")]
    SingularBoundary,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrfConfig {
    pub surface_fraction: f64,
    pub boundary_softness: f64,
    /// Circumferential correlation length (mm).
    pub length_circ: f64,
    /// Axial correlation length (mm).
    pub length_axial: f64,
    pub reference_radius: f64,
    pub vessel_length: f64,
    pub n_z: usize,
    pub n_theta: usize,
    pub boundary_value: f64,
    pub seed: u64,
}

impl Default for GrfConfig {
    fn default() -> Self {
        Self {
            surface_fraction: 0.23,
            boundary_softness: 0.2,
            length_circ: 4.5,
            length_axial: 4.5,
            reference_radius: 0.808,
            vessel_length: 10.0,
            n_z: 41,
            n_theta: 40,
            boundary_value: 0.0,
            seed: 0,
        }
    }
}

impl GrfConfig {
    pub fn validate(&self) -> Result<(), GrfError> {
        let phi = self.surface_fraction;
        if !(phi > 0.0 && phi < 1.0) {
            return Err(GrfError::Domain(format!("surface fraction {phi} not in (0,1)")));
        }
        if !(self.boundary_softness > 0.0) {
            return Err(GrfError::Domain("boundary softness must be > 0".into()));
        }
        if !(self.length_circ > 0.0 && self.length_axial > 0.0) {
            return Err(GrfError::Domain("correlation lengths must be > 0".into()));
        }
        if !(self.reference_radius > 0.0 && self.vessel_length > 0.0) {
            return Err(GrfError::Domain("vessel geometry must be positive".into()));
        }
        if self.n_z < 4 || self.n_theta < 4 {
            return Err(GrfError::Domain(format!(
                "grid {}x{} too small (need >= 4x4)",
                self.n_z, self.n_theta
            )));
        }
        if !(0.0..=1.0).contains(&self.boundary_value) {
            return Err(GrfError::Domain("boundary value must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn node_z(&self, i: usize) -> f64 {
        self.vessel_length * i as f64 / (self.n_z - 1) as f64
    }

    pub fn node_theta(&self, j: usize) -> f64 {
        std::f64::consts::TAU * j as f64 / self.n_theta as f64
    }

    pub fn node(&self, i: usize, j: usize) -> GridPoint {
        GridPoint { z: self.node_z(i), theta: self.node_theta(j) }
    }

    /// Flat node indices of the two axial end rows (row-major order).
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let last = (self.n_z - 1) * self.n_theta;
        (0..self.n_theta).chain(last..last + self.n_theta).collect()
    }
}

/// A point on the reference (z, theta) domain; z in mm, theta in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub z: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrfMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of the latent field for insult fraction `phi` and
/// boundary softness `eps`.
pub fn grf_moments(phi: f64, eps: f64) -> Result<GrfMoments, GrfError> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(GrfError::Domain(format!("surface fraction {phi} not in (0,1)")));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(GrfError::Domain(format!("boundary softness {eps} must be > 0")));
    }
    let u = erf_inv(1.0 - 2.0 * phi);
    let mean = 0.5 - u * (-u * u).exp() / (eps * std::f64::consts::PI.sqrt());
    let variance = (-2.0 * u * u).exp() / (2.0 * std::f64::consts::PI * eps * eps);
    Ok(GrfMoments { mean, variance })
}

/// Chordal distance between two angles on a circle of radius `radius`.
pub fn circumferential_distance(theta_a: f64, theta_b: f64, radius: f64) -> f64 {
    2.0 * radius * (0.5 * (theta_a - theta_b).abs()).sin().abs()
}

/// Squared-exponential covariance, periodic in theta through the chordal
/// distance.
pub fn covariance(a: GridPoint, b: GridPoint, cfg: &GrfConfig, variance: f64) -> f64 {
    let dt = circumferential_distance(a.theta, b.theta, cfg.reference_radius) / cfg.length_circ;
    let dz = (a.z - b.z).abs() / cfg.length_axial;
    variance * (-0.5 * (dt * dt + dz * dz)).exp()
}

/// Dense covariance over all grid nodes in row-major (z, theta) order.
pub fn covariance_matrix(cfg: &GrfConfig, variance: f64) -> DMatrix<f64> {
    let n = cfg.n_z * cfg.n_theta;
    let points: Vec<GridPoint> = (0..n)
        .map(|k| cfg.node(k / cfg.n_theta, k % cfg.n_theta))
        .collect();
    DMatrix::from_fn(n, n, |r, c| covariance(points[r], points[c], cfg, variance))
}

#[derive(Debug, Clone)]
pub struct ConditionedGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Condition a multivariate normal on every boundary node taking
/// `boundary_value`. `jitter` is added to the diagonal of the boundary block
/// before factorization; the interior block of the result is symmetrized and
/// all blocks touching the boundary are exactly zero.
pub fn condition_on_boundary(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    boundary: &[usize],
    boundary_value: f64,
    jitter: f64,
) -> Result<ConditionedGaussian, GrfError> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(GrfError::Shape(format!("covariance is {}x{}, mean has {n}", cov.nrows(), cov.ncols())));
    }
    if boundary.is_empty() {
        return Err(GrfError::Domain("boundary set is empty".into()));
    }
    let mut is_boundary = vec![false; n];
    for &b in boundary {
        if b >= n || is_boundary[b] {
            return Err(GrfError::Domain(format!("boundary index {b} out of range or repeated")));
        }
        is_boundary[b] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&i| !is_boundary[i]).collect();
    let nb = boundary.len();
    let na = interior.len();

    let mut out_mean = mean.clone();
    let mut out_cov = DMatrix::zeros(n, n);
    for &b in boundary {
        out_mean[b] = boundary_value;
    }
    if na == 0 {
        return Ok(ConditionedGaussian { mean: out_mean, cov: out_cov });
    }

    let mut s_bb = DMatrix::from_fn(nb, nb, |r, c| cov[(boundary[r], boundary[c])]);
    for d in 0..nb {
        s_bb[(d, d)] += jitter;
    }
    let chol = s_bb.cholesky().ok_or(GrfError::SingularBoundary)?;
    let s_ba = DMatrix::from_fn(nb, na, |r, c| cov[(boundary[r], interior[c])]);
    let resid = DVector::from_fn(nb, |r, _| boundary_value - mean[boundary[r]]);
    // gain = Sigma_bb^-1 Sigma_ba, so Sigma_ab Sigma_bb^-1 = gain^T
    let gain = chol.solve(&s_ba);
    let shift = gain.transpose() * resid;
    let reduction = s_ba.transpose() * &gain;
    for (ia, &a) in interior.iter().enumerate() {
        out_mean[a] = mean[a] + shift[ia];
    }
    for (ia, &a) in interior.iter().enumerate() {
        for (ic, &c) in interior.iter().enumerate() {
            let v = cov[(a, c)] - reduction[(ia, ic)];
            let vt = cov[(c, a)] - reduction[(ic, ia)];
            out_cov[(a, c)] = 0.5 * (v + vt);
        }
    }
    Ok(ConditionedGaussian { mean: out_mean, cov: out_cov })
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Normalized insult profile on the (z, theta) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InsultField {
    pub theta_star: Array2<f64>,
    pub profile_id: u64,
}

/// 64-bit stream derivation: SplitMix64 finalizer applied to
/// `master ^ splitmix(stream)`, so neighbouring ids give unrelated seeds.
pub fn stream_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reusable sampler for one GRF configuration.
///
/// The covariance is a product of an axial and a circumferential kernel and
/// the boundary set is the two end rows, so conditioning acts only on the
/// axial factor: `Sigma'_aa = var * (K_z,aa - K_z,ab K_z,bb^-1 K_z,ba) (x) K_theta`.
/// Both factors are small; their PSD square roots are computed once.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    cfg: GrfConfig,
    moments: GrfMoments,
    row_mean: Vec<f64>,
    sqrt_axial: DMatrix<f64>,
    sqrt_circ: DMatrix<f64>,
}

impl GrfSampler {
    pub fn new(cfg: &GrfConfig) -> Result<Self, GrfError> {
        cfg.validate()?;
        let moments = grf_moments(cfg.surface_fraction, cfg.boundary_softness)?;
        let nz = cfg.n_z;
        let nt = cfg.n_theta;
        let kz = DMatrix::from_fn(nz, nz, |r, c| {
            let d = (cfg.node_z(r) - cfg.node_z(c)) / cfg.length_axial;
            (-0.5 * d * d).exp()
        });
        let kt = DMatrix::from_fn(nt, nt, |r, c| {
            let d = circumferential_distance(cfg.node_theta(r), cfg.node_theta(c), cfg.reference_radius)
                / cfg.length_circ;
            (-0.5 * d * d).exp()
        });
        let mean = DVector::from_element(nz, moments.mean);
        let cond = condition_on_boundary(&mean, &kz, &[0, nz - 1], cfg.boundary_value, 1e-10)?;
        let interior = 1..nz - 1;
        let kz_aa = cond.cov.view((interior.start, interior.start), (nz - 2, nz - 2)).into_owned();
        Ok(Self {
            cfg: cfg.clone(),
            moments,
            row_mean: cond.mean.iter().copied().collect(),
            sqrt_axial: psd_sqrt(&kz_aa),
            sqrt_circ: psd_sqrt(&kt),
        })
    }

    pub fn config(&self) -> &GrfConfig {
        &self.cfg
    }

    pub fn moments(&self) -> GrfMoments {
        self.moments
    }

    /// Conditioned latent sample before histogram matching and censoring.
    pub fn sample_latent(&self, seed: u64) -> Array2<f64> {
        let nz = self.cfg.n_z;
        let nt = self.cfg.n_theta;
        let na = nz - 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(na, nt, |_, _| StandardNormal.sample(&mut rng));
        let sd = self.moments.variance.sqrt();
        let corr = &self.sqrt_axial * z * self.sqrt_circ.transpose();
        let mut out = Array2::from_elem((nz, nt), self.cfg.boundary_value);
        for i in 0..na {
            for j in 0..nt {
                out[[i + 1, j]] = self.row_mean[i + 1] + sd * corr[(i, j)];
            }
        }
        out
    }

    /// Full pipeline: conditioned sample, histogram matching of the interior
    /// nodes to Normal(mean, variance), then censoring to [0, 1].
    pub fn sample(&self, seed: u64, profile_id: u64) -> InsultField {
        let mut field = self.sample_latent(seed);
        let nz = self.cfg.n_z;
        let mut interior: Vec<f64> = field.slice(ndarray::s![1..nz - 1, ..]).iter().copied().collect();
        histogram_match(&mut interior, self.moments.mean, self.moments.variance);
        for (dst, src) in field.slice_mut(ndarray::s![1..nz - 1, ..]).iter_mut().zip(interior) {
            *dst = src;
        }
        field.mapv_inplace(censor);
        InsultField { theta_star: field, profile_id }
    }
}

/// Sample a profile using `cfg.seed`.
pub fn sample_field(cfg: &GrfConfig) -> Result<InsultField, GrfError> {
    Ok(GrfSampler::new(cfg)?.sample(cfg.seed, 0))
}

/// Replace each value by `Phi^-1(F(x))` where `F` is the empirical CDF with
/// mid-rank ties and the probability is clamped to `[1/2N, 1 - 1/2N]`.
pub fn histogram_match(values: &mut [f64], mean: f64, variance: f64) {
    let n = values.len();
    if n == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let nf = n as f64;
    let lo = 0.5 / nf;
    let hi = 1.0 - 0.5 / nf;
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their average
        let mid_rank = 0.5 * ((start + 1) + end) as f64;
        let p = (mid_rank / nf).clamp(lo, hi);
        let q = normal_quantile(p, mean, variance);
        for &k in &order[start..end] {
            out[k] = q;
        }
        start = end;
    }
    values.copy_from_slice(&out);
}

pub fn censor(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Elastin / mechanosensing insult fields derived from one profile.
#[derive(Debug, Clone, PartialEq)]
pub struct InsultPair {
    pub theta_ce: Array2<f64>,
    pub theta_delta: Array2<f64>,
    pub combo_index: usize,
    pub amplitude_scale: f64,
}

/// Range weights `(s_ce, s_delta)` for combo `k`: a linear trade-off from
/// pure elastin loss (k = 0) to pure mechanosensing loss (k = 4).
pub fn combo_weights(k: usize) -> Result<(f64, f64), GrfError> {
    if k >= COMBO_COUNT {
        return Err(GrfError::Domain(format!("combo index {k} not in 0..{COMBO_COUNT}")));
    }
    let t = k as f64 / (COMBO_COUNT - 1) as f64;
    Ok(((1.0 - t) * MAX_ELASTIN_INSULT, t * MAX_MECHANOSENSING_INSULT))
}

pub fn make_insult_pair(field: &InsultField, k: usize, amplitude_scale: f64) -> Result<InsultPair, GrfError> {
    let (s_ce, s_delta) = combo_weights(k)?;
    if !(amplitude_scale > 0.0) || !amplitude_scale.is_finite() {
        return Err(GrfError::Domain(format!("amplitude scale {amplitude_scale} must be > 0")));
    }
    let theta_ce = field
        .theta_star
        .mapv(|v| (s_ce * amplitude_scale * v).clamp(0.0, MAX_ELASTIN_INSULT));
    let theta_delta = field
        .theta_star
        .mapv(|v| (s_delta * amplitude_scale * v).clamp(0.0, MAX_MECHANOSENSING_INSULT));
    Ok(InsultPair { theta_ce, theta_delta, combo_index: k, amplitude_scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moments_at_half_fraction() {
        let m = grf_moments(0.5, 0.2).unwrap();
        assert_eq!(m.mean, 0.5);
        let expect = 1.0 / (2.0 * std::f64::consts::PI * 0.04);
        assert!((m.variance - expect).abs() / expect < 1e-15);
        assert!((m.variance - 3.978_873_577_297_383).abs() < 1e-12);
    }

    #[test]
    fn moments_frozen_high_precision() {
        // 40-digit evaluation of the moment formulas (mpmath erfinv)
        let cases = [
            (0.23, 0.2, -0.621_747_150_706_307_2, 2.305_053_973_265_647_3),
            (0.1, 0.5, 0.050_179_675_922_911_163, 0.123_198_658_044_341_28),
            (0.9, 1.0, 0.724_910_162_038_544_4, 0.030_799_664_511_085_308),
        ];
        for (phi, eps, mu, var) in cases {
            let m = grf_moments(phi, eps).unwrap();
            assert!((m.mean - mu).abs() <= 1e-10 * mu.abs(), "{phi} {eps}: {}", m.mean);
            assert!((m.variance - var).abs() <= 1e-10 * var, "{phi} {eps}: {}", m.variance);
        }
    }

    #[test]
    fn variance_vanishes_with_softness() {
        let v = grf_moments(0.5, 1e8).unwrap().variance;
        assert!(v < 1e-16);
    }

    #[test]
    fn moments_reject_bad_domain() {
        assert!(grf_moments(0.0, 0.2).is_err());
        assert!(grf_moments(1.0, 0.2).is_err());
        assert!(grf_moments(0.3, 0.0).is_err());
        assert!(grf_moments(0.3, -1.0).is_err());
    }

    #[test]
    fn covariance_pointwise() {
        let cfg = GrfConfig::default();
        let a = GridPoint { z: 3.0, theta: 1.0 };
        assert_eq!(covariance(a, a, &cfg, 2.5), 2.5);
        let d = circumferential_distance(0.0, std::f64::consts::PI, 0.808);
        assert!((d - 1.616).abs() < 1e-15);
        let b = GridPoint { z: 3.0, theta: 1.0 + std::f64::consts::TAU };
        assert!((covariance(a, b, &cfg, 2.5) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn covariance_against_scalar_formula() {
        let cfg = GrfConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand::Rng;
        for _ in 0..200 {
            let a = GridPoint { z: rng.gen_range(0.0..10.0), theta: rng.gen_range(0.0..6.3) };
            let b = GridPoint { z: rng.gen_range(0.0..10.0), theta: rng.gen_range(0.0..6.3) };
            let dth = 2.0 * 0.808 * ((a.theta - b.theta).abs() / 2.0).sin();
            let dz = (a.z - b.z).abs();
            let expect = 1.3 * (-0.5 * ((dth / 4.5).powi(2) + (dz / 4.5).powi(2))).exp();
            let got = covariance(a, b, &cfg, 1.3);
            assert!((got - expect).abs() < 1e-12);
            assert_eq!(got, covariance(b, a, &cfg, 1.3));
        }
    }

    fn toy_cfg() -> GrfConfig {
        GrfConfig { n_z: 6, n_theta: 4, vessel_length: 3.0, length_axial: 1.5, length_circ: 0.7, ..GrfConfig::default() }
    }

    #[test]
    fn conditioning_all_boundary() {
        let cfg = toy_cfg();
        let cov = covariance_matrix(&cfg, 1.0);
        let mean = DVector::from_element(24, 0.3);
        let all: Vec<usize> = (0..24).collect();
        let c = condition_on_boundary(&mean, &cov, &all, 0.1, 1e-10).unwrap();
        assert!(c.mean.iter().all(|&m| m == 0.1));
        assert!(c.cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conditioning_at_prior_mean_leaves_mean() {
        let cfg = toy_cfg();
        let cov = covariance_matrix(&cfg, 2.0);
        let mean = DVector::from_element(24, 0.4);
        let c = condition_on_boundary(&mean, &cov, &cfg.boundary_nodes(), 0.4, 0.0).unwrap();
        assert!(c.mean.iter().all(|&m| (m - 0.4).abs() < 1e-14));
    }

    #[test]
    fn conditioning_matches_block_inverse() {
        // brute force: explicit inverse of the boundary block, no factorization
        let cfg = toy_cfg();
        let var = 1.7;
        let cov = covariance_matrix(&cfg, var);
        let mean = DVector::from_element(24, -0.2);
        let b = cfg.boundary_nodes();
        let a: Vec<usize> = (0..24).filter(|i| !b.contains(i)).collect();
        let c = condition_on_boundary(&mean, &cov, &b, 0.0, 0.0).unwrap();

        let s_bb = DMatrix::from_fn(b.len(), b.len(), |r, k| cov[(b[r], b[k])]);
        let inv = s_bb.try_inverse().unwrap();
        let s_ab = DMatrix::from_fn(a.len(), b.len(), |r, k| cov[(a[r], b[k])]);
        let s_aa = DMatrix::from_fn(a.len(), a.len(), |r, k| cov[(a[r], a[k])]);
        let mu_a = DVector::from_element(a.len(), -0.2) + &s_ab * &inv * DVector::from_element(b.len(), 0.2);
        let cov_aa = &s_aa - &s_ab * &inv * s_ab.transpose();
        for (r, &ar) in a.iter().enumerate() {
            assert!((c.mean[ar] - mu_a[r]).abs() < 1e-9);
            for (k, &ak) in a.iter().enumerate() {
                assert!((c.cov[(ar, ak)] - cov_aa[(r, k)]).abs() < 1e-9);
            }
            for &bk in &b {
                assert_eq!(c.cov[(ar, bk)], 0.0);
                assert_eq!(c.cov[(bk, ar)], 0.0);
            }
        }
        for &bk in &b {
            assert_eq!(c.mean[bk], 0.0);
        }
    }

    #[test]
    fn separable_sampler_matches_dense_conditioning() {
        let cfg = toy_cfg();
        let s = GrfSampler::new(&cfg).unwrap();
        let var = s.moments().variance;
        let cov = covariance_matrix(&cfg, var);
        let mean = DVector::from_element(24, s.moments().mean);
        let dense = condition_on_boundary(&mean, &cov, &cfg.boundary_nodes(), 0.0, 1e-10 * var).unwrap();
        let na = cfg.n_z - 2;
        let sep = s.sqrt_axial.clone() * s.sqrt_axial.transpose();
        let circ = s.sqrt_circ.clone() * s.sqrt_circ.transpose();
        for r in 0..na * cfg.n_theta {
            let (ir, jr) = (r / cfg.n_theta, r % cfg.n_theta);
            assert!((dense.mean[r + cfg.n_theta] - s.row_mean[ir + 1]).abs() < 1e-8);
            for c in 0..na * cfg.n_theta {
                let (ic, jc) = (c / cfg.n_theta, c % cfg.n_theta);
                let kron = var * sep[(ir, ic)] * circ[(jr, jc)];
                let d = dense.cov[(r + cfg.n_theta, c + cfg.n_theta)];
                assert!((kron - d).abs() < 1e-8 * var, "{r},{c}: {kron} vs {d}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_pinned() {
        let cfg = GrfConfig { seed: 42, ..GrfConfig::default() };
        let a = sample_field(&cfg).unwrap();
        let b = sample_field(&cfg).unwrap();
        assert_eq!(a, b);
        let s = GrfSampler::new(&cfg).unwrap();
        let latent = s.sample_latent(42);
        for j in 0..cfg.n_theta {
            assert!((latent[[0, j]] - cfg.boundary_value).abs() < 1e-10);
            assert!((latent[[cfg.n_z - 1, j]] - cfg.boundary_value).abs() < 1e-10);
            assert!((a.theta_star[[0, j]] - cfg.boundary_value).abs() < 1e-10);
        }
        assert!(a.theta_star.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let c = sample_field(&GrfConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn histogram_matching_reproduces_target_quantiles() {
        let mut v: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64).collect();
        histogram_match(&mut v, 1.0, 4.0);
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        for (r, x) in sorted.iter().enumerate() {
            let p = ((r + 1) as f64 / 1000.0).clamp(0.0005, 0.9995);
            assert!((x - normal_quantile(p, 1.0, 4.0)).abs() < 1e-12);
        }
        let mut ties = vec![3.0, 3.0, 1.0, 5.0];
        histogram_match(&mut ties, 0.0, 1.0);
        assert_eq!(ties[0], ties[1]);
        assert!(ties[2] < ties[0] && ties[0] < ties[3]);
        // mid-rank of the tie is 2.5 of 4 -> p = 0.625
        assert!((ties[0] - normal_quantile(0.625, 0.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn insult_pair_endpoints() {
        let cfg = GrfConfig { seed: 3, ..GrfConfig::default() };
        let f = sample_field(&cfg).unwrap();
        let p0 = make_insult_pair(&f, 0, 1.0).unwrap();
        assert_eq!(p0.theta_ce, f.theta_star.mapv(|v| 0.48 * v));
        assert!(p0.theta_delta.iter().all(|&v| v == 0.0));
        let p4 = make_insult_pair(&f, 4, 1.0).unwrap();
        assert!(p4.theta_ce.iter().all(|&v| v == 0.0));
        assert_eq!(p4.theta_delta, f.theta_star.mapv(|v| 0.28 * v));
        let big = make_insult_pair(&f, 2, 50.0).unwrap();
        assert!(big.theta_ce.iter().all(|&v| v <= MAX_ELASTIN_INSULT));
        assert!(big.theta_delta.iter().all(|&v| v <= MAX_MECHANOSENSING_INSULT));
        assert!(make_insult_pair(&f, 5, 1.0).is_err());
        assert!(make_insult_pair(&f, 1, 0.0).is_err());

        let zero = InsultField { theta_star: Array2::zeros((41, 40)), profile_id: 0 };
        let z = make_insult_pair(&zero, 2, 1.0).unwrap();
        assert!(z.theta_ce.iter().chain(z.theta_delta.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn stream_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| stream_seed(17, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(stream_seed(1, 0), stream_seed(2, 0));
    }

    proptest! {
        #[test]
        fn censoring_is_idempotent(x in -10.0f64..10.0) {
            prop_assert_eq!(censor(censor(x)), censor(x));
        }

        #[test]
        fn covariance_is_periodic_in_theta(t1 in 0.0f64..6.3, t2 in 0.0f64..6.3, z in 0.0f64..10.0) {
            let cfg = GrfConfig::default();
            let a = GridPoint { z, theta: t1 };
            let b = GridPoint { z: 5.0, theta: t2 };
            let b2 = GridPoint { z: 5.0, theta: t2 + std::f64::consts::TAU };
            prop_assert!((covariance(a, b, &cfg, 1.0) - covariance(a, b2, &cfg, 1.0)).abs() < 1e-12);
        }
    }
}
