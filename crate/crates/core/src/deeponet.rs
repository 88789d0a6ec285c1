//! FNN-DeepONet mapping dilatation (and distensibility) maps to the two
//! insult fields, with hand-written reverse-mode gradients and Adam.
//!
//! The branch net takes the flattened input maps and emits `2p` coefficients;
//! the trunk net takes grid coordinates and emits `p` features. Each insult
//! channel is the dot product of its half of the branch output with the trunk
//! features plus a scalar bias.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::MapKind;
use crate::store::{Prediction, PredictionSet, SampleRecord};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TAAM";

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("loss became non-finite at update {update}")]
    Diverged { update: usize },
    #[error("sample {sample_id} lacks the {what} map")]
    MissingMap { sample_id: u64, what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Floating-point types the network runs in.
pub trait Real:
    Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn silu<T: Real>(z: T) -> T {
    z * sigmoid(z)
}

fn silu_grad<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::one() + z * (T::one() - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `(fan_in, fan_out)`
    pub w: Array2<T>,
    pub b: Array1<T>,
}

/// Dense network: SiLU on hidden layers, linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

struct MlpCache<T> {
    /// Input to each layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<T>>,
}

impl<T: Real> Mlp<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    w: Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.gen_range(-limit..limit))),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].w.nrows()];
        w.extend(self.layers.iter().map(|l| l.w.ncols()));
        w
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense { w: Array2::zeros(l.w.dim()), b: Array1::zeros(l.b.len()) })
                .collect(),
        }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.w);
            z += &l.b;
            a = if i < last { z.mapv(silu) } else { z };
        }
        a
    }

    fn forward_cached(&self, x: ArrayView2<T>) -> (Array2<T>, MlpCache<T>) {
        let mut cache = MlpCache { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::new() };
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.w);
            z += &l.b;
            cache.inputs.push(a);
            if i < last {
                a = z.mapv(silu);
                cache.pre.push(z);
            } else {
                a = z;
            }
        }
        (a, cache)
    }

    /// Accumulate parameter gradients given the gradient of the output.
    fn backward(&self, cache: &MlpCache<T>, d_out: Array2<T>, grads: &mut Mlp<T>) {
        let mut dz = d_out;
        for i in (0..self.layers.len()).rev() {
            let g = &mut grads.layers[i];
            g.w += &cache.inputs[i].t().dot(&dz);
            g.b += &dz.sum_axis(Axis(0));
            if i == 0 {
                break;
            }
            let mut da = dz.dot(&self.layers[i].w.t());
            ndarray::Zip::from(&mut da).and(&cache.pre[i - 1]).for_each(|d, &z| *d *= silu_grad(z));
            dz = da;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    /// Latent width `p`.
    pub latent: usize,
    /// Feed the trunk `(cos 2 pi theta, sin 2 pi theta, z)` instead of `(theta, z)`.
    pub periodic_coords: bool,
    /// Multiplier on the trunk coordinates.
    pub coord_scale: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { branch_hidden: vec![256, 128], trunk_hidden: vec![64, 64], latent: 64, periodic_coords: false, coord_scale: 1.0, seed: 1 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.branch_hidden.is_empty() || self.trunk_hidden.is_empty() {
            return Err(NetError::Config("branch and trunk need at least one hidden layer".into()));
        }
        if self.latent == 0 || self.branch_hidden.iter().chain(&self.trunk_hidden).any(|&w| w == 0) {
            return Err(NetError::Config("layer widths must be >= 1".into()));
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(NetError::Config(format!("coord_scale must be finite and > 0, got {}", self.coord_scale)));
        }
        Ok(())
    }

    /// Trunk inputs for a `rows x cols` grid.
    pub fn coordinates<T: Real>(&self, rows: usize, cols: usize) -> Array2<T> {
        coordinate_grid::<T>(rows, cols, self.periodic_coords) * T::of(self.coord_scale)
    }

    pub fn coord_dim(&self) -> usize {
        if self.periodic_coords {
            3
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepOnet<T> {
    pub branch: Mlp<T>,
    pub trunk: Mlp<T>,
    /// `[b_ce, b_delta]`
    pub bias: Array1<T>,
}

/// Cached forward pass for one batch.
pub struct Forward<T> {
    pub ce: Array2<T>,
    pub delta: Array2<T>,
    coef: Array2<T>,
    features: Array2<T>,
    branch_cache: MlpCache<T>,
    trunk_cache: MlpCache<T>,
}

impl<T: Real> DeepOnet<T> {
    pub fn new(input_width: usize, cfg: &NetConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut bw = vec![input_width];
        bw.extend(&cfg.branch_hidden);
        bw.push(2 * cfg.latent);
        let mut tw = vec![cfg.coord_dim()];
        tw.extend(&cfg.trunk_hidden);
        tw.push(cfg.latent);
        Ok(Self { branch: Mlp::init(&bw, &mut rng), trunk: Mlp::init(&tw, &mut rng), bias: Array1::zeros(2) })
    }

    pub fn latent(&self) -> usize {
        self.trunk.layers.last().unwrap().w.ncols()
    }

    pub fn input_width(&self) -> usize {
        self.branch.layers[0].w.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self { branch: self.branch.zeros_like(), trunk: self.trunk.zeros_like(), bias: Array1::zeros(2) }
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Every parameter array in a fixed order.
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for l in self.branch.layers.iter().chain(&self.trunk.layers) {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out.push(self.bias.as_slice().unwrap());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for l in self.branch.layers.iter_mut().chain(self.trunk.layers.iter_mut()) {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.bias.as_slice_mut().unwrap());
        out
    }

    fn check(&self, x: &ArrayView2<T>, coords: &ArrayView2<T>) -> Result<(), NetError> {
        if x.ncols() != self.input_width() {
            return Err(NetError::Shape(format!("input width {} for a branch taking {}", x.ncols(), self.input_width())));
        }
        let cd = self.trunk.layers[0].w.nrows();
        if coords.ncols() != cd {
            return Err(NetError::Shape(format!("coordinates of width {} for a trunk taking {cd}", coords.ncols())));
        }
        Ok(())
    }

    /// Predict both insults for a batch: `(B x N, B x N)`.
    pub fn forward(&self, x: ArrayView2<T>, coords: ArrayView2<T>) -> Result<Forward<T>, NetError> {
        self.check(&x, &coords)?;
        let p = self.latent();
        let (coef, branch_cache) = self.branch.forward_cached(x);
        let (features, trunk_cache) = self.trunk.forward_cached(coords);
        let ft = features.t();
        let mut ce = coef.slice(s![.., ..p]).dot(&ft);
        let mut delta = coef.slice(s![.., p..]).dot(&ft);
        ce += self.bias[0];
        delta += self.bias[1];
        Ok(Forward { ce, delta, coef, features, branch_cache, trunk_cache })
    }

    /// Mean squared error over batch, grid points and both channels.
    pub fn loss(&self, fwd: &Forward<T>, target_ce: ArrayView2<T>, target_delta: ArrayView2<T>) -> f64 {
        let sq = |a: &Array2<T>, b: ArrayView2<T>| -> f64 {
            a.iter().zip(b.iter()).map(|(&p, &t)| (p - t).f64().powi(2)).sum::<f64>()
        };
        (sq(&fwd.ce, target_ce) + sq(&fwd.delta, target_delta)) / (2 * fwd.ce.len()) as f64
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<T>,
        coords: ArrayView2<T>,
        target_ce: ArrayView2<T>,
        target_delta: ArrayView2<T>,
    ) -> Result<(f64, DeepOnet<T>), NetError> {
        let fwd = self.forward(x, coords)?;
        if fwd.ce.dim() != target_ce.dim() || fwd.delta.dim() != target_delta.dim() {
            return Err(NetError::Shape(format!("targets {:?} for predictions {:?}", target_ce.dim(), fwd.ce.dim())));
        }
        let loss = self.loss(&fwd, target_ce, target_delta);
        let p = self.latent();
        let scale = T::of(1.0 / fwd.ce.len() as f64);
        let r_ce = (&fwd.ce - &target_ce) * scale;
        let r_dl = (&fwd.delta - &target_delta) * scale;
        let mut g = self.zeros_like();
        g.bias[0] = r_ce.sum();
        g.bias[1] = r_dl.sum();
        let d_coef = concatenate![Axis(1), r_ce.dot(&fwd.features), r_dl.dot(&fwd.features)];
        let d_feat = r_ce.t().dot(&fwd.coef.slice(s![.., ..p])) + r_dl.t().dot(&fwd.coef.slice(s![.., p..]));
        self.branch.backward(&fwd.branch_cache, d_coef, &mut g.branch);
        self.trunk.backward(&fwd.trunk_cache, d_feat, &mut g.trunk);
        Ok((loss, g))
    }

    pub fn cast<U: Real>(&self) -> DeepOnet<U> {
        let mlp = |m: &Mlp<T>| Mlp {
            layers: m
                .layers
                .iter()
                .map(|l| Dense { w: l.w.mapv(|v| U::of(v.f64())), b: l.b.mapv(|v| U::of(v.f64())) })
                .collect(),
        };
        DeepOnet { branch: mlp(&self.branch), trunk: mlp(&self.trunk), bias: self.bias.mapv(|v| U::of(v.f64())) }
    }
}

/// Node coordinates on a `rows x cols` grid in row-major order, in `[0,1]^2`.
pub fn coordinate_grid<T: Real>(rows: usize, cols: usize, periodic: bool) -> Array2<T> {
    let d = if periodic { 3 } else { 2 };
    let mut c = Array2::zeros((rows * cols, d));
    for i in 0..rows {
        for j in 0..cols {
            let theta = j as f64 / (cols - 1).max(1) as f64;
            let z = i as f64 / (rows - 1).max(1) as f64;
            let r = i * cols + j;
            if periodic {
                let a = 2.0 * std::f64::consts::PI * theta;
                c[[r, 0]] = T::of(a.cos());
                c[[r, 1]] = T::of(a.sin());
                c[[r, 2]] = T::of(z);
            } else {
                c[[r, 0]] = T::of(theta);
                c[[r, 1]] = T::of(z);
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channels {
    /// Dilatation only.
    D,
    /// Dilatation and distensibility.
    DDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Heat,
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub channels: Channels,
    pub format: Format,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant { channels: Channels::D, format: Format::Gray },
        Variant { channels: Channels::DDist, format: Format::Gray },
        Variant { channels: Channels::D, format: Format::Heat },
        Variant { channels: Channels::DDist, format: Format::Heat },
    ];

    pub fn kinds(&self) -> &'static [MapKind] {
        match self.channels {
            Channels::D => &[MapKind::Dilatation],
            Channels::DDist => &[MapKind::Dilatation, MapKind::Distensibility],
        }
    }

    pub fn name(&self) -> String {
        let c = match self.channels {
            Channels::D => "d",
            Channels::DDist => "d-dist",
        };
        let f = match self.format {
            Format::Heat => "heat",
            Format::Gray => "gray",
        };
        format!("{c}-{f}")
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Per-channel affine input normalization `(x - mean) / scale`.
///
/// Heat maps use train-split mean and standard deviation; grayscale maps use
/// mean 0 and scale 255.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEncoding {
    pub variant: Variant,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

fn raw_channel(rec: &SampleRecord, kind: MapKind, format: Format) -> Result<Vec<f64>, NetError> {
    let missing = || NetError::MissingMap { sample_id: rec.sample_id, what: format!("{:?} {}", format, kind.name()) };
    Ok(match format {
        Format::Heat => rec.physical(kind).ok_or_else(missing)?.iter().map(|&v| v as f64).collect(),
        Format::Gray => rec.grayscale(kind).ok_or_else(missing)?.iter().map(|&v| v as f64).collect(),
    })
}

impl InputEncoding {
    pub fn fit(variant: Variant, train: &[SampleRecord]) -> Result<Self, NetError> {
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for &kind in variant.kinds() {
            match variant.format {
                Format::Gray => {
                    means.push(0.0);
                    scales.push(255.0);
                }
                Format::Heat => {
                    let mut n = 0usize;
                    let mut sum = 0.0;
                    let mut sq = 0.0;
                    for r in train {
                        for v in raw_channel(r, kind, Format::Heat)? {
                            n += 1;
                            sum += v;
                            sq += v * v;
                        }
                    }
                    let mean = sum / n.max(1) as f64;
                    let var = (sq / n.max(1) as f64 - mean * mean).max(0.0);
                    means.push(mean);
                    scales.push(var.sqrt().max(1e-12));
                }
            }
        }
        Ok(Self { variant, means, scales })
    }

    pub fn encode(&self, rec: &SampleRecord) -> Result<Vec<f64>, NetError> {
        let mut out = Vec::new();
        for (c, &kind) in self.variant.kinds().iter().enumerate() {
            out.extend(raw_channel(rec, kind, self.variant.format)?.into_iter().map(|v| (v - self.means[c]) / self.scales[c]));
        }
        Ok(out)
    }

    pub fn encode_batch<T: Real>(&self, recs: &[SampleRecord]) -> Result<Array2<T>, NetError> {
        let rows: Vec<Vec<f64>> = recs.iter().map(|r| self.encode(r)).collect::<Result<_, _>>()?;
        let width = rows.first().map_or(0, |r| r.len());
        let mut x = Array2::zeros((rows.len(), width));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != width {
                return Err(NetError::Shape(format!("sample {} encodes to {} values, expected {width}", recs[i].sample_id, r.len())));
            }
            for (j, &v) in r.iter().enumerate() {
                x[[i, j]] = T::of(v);
            }
        }
        Ok(x)
    }
}

/// Flattened targets `(ce, delta)`, each `(samples x grid)`.
pub fn targets<T: Real>(recs: &[SampleRecord]) -> Result<(Array2<T>, Array2<T>), NetError> {
    let grab = |kind: MapKind| -> Result<Array2<T>, NetError> {
        let maps: Vec<&Array2<f32>> = recs
            .iter()
            .map(|r| r.physical(kind).ok_or(NetError::MissingMap { sample_id: r.sample_id, what: kind.name().into() }))
            .collect::<Result<_, _>>()?;
        let n = maps.first().map_or(0, |m| m.len());
        let mut out = Array2::zeros((maps.len(), n));
        for (i, m) in maps.iter().enumerate() {
            for (j, &v) in m.iter().enumerate() {
                out[[i, j]] = T::of(v as f64);
            }
        }
        Ok(out)
    };
    Ok((grab(MapKind::InsultCe)?, grab(MapKind::InsultDelta)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of weight updates.
    pub updates: usize,
    /// Minibatch size; 0 or anything >= the train size means full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub log_every: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            updates: 20_000,
            batch_size: 32,
            seed: 1,
            log_every: 500,
            precision: Precision::F32,
        }
    }
}

pub struct Adam<T> {
    m: DeepOnet<T>,
    v: DeepOnet<T>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(model: &DeepOnet<T>) -> Self {
        Self { m: model.zeros_like(), v: model.zeros_like(), step: 0 }
    }

    pub fn update(&mut self, model: &mut DeepOnet<T>, grad: &DeepOnet<T>, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (T::of(cfg.learning_rate), T::of(cfg.epsilon));
        let (tb1, tb2) = (T::of(b1), T::of(b2));
        let (ib1, ib2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let (ic1, ic2) = (T::of(1.0 / c1), T::of(1.0 / c2));
        for (((p, g), m), v) in model.slices_mut().into_iter().zip(grad.slices()).zip(self.m.slices_mut()).zip(self.v.slices_mut()) {
            for i in 0..p.len() {
                m[i] = tb1 * m[i] + ib1 * g[i];
                v[i] = tb2 * v[i] + ib2 * g[i] * g[i];
                let mh = m[i] * ic1;
                let vh = v[i] * ic2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Training arrays for one input variant.
pub struct TrainingData<T> {
    pub inputs: Array2<T>,
    pub target_ce: Array2<T>,
    pub target_delta: Array2<T>,
    pub coords: Array2<T>,
}

impl<T: Real> TrainingData<T> {
    pub fn build(enc: &InputEncoding, recs: &[SampleRecord], rows: usize, cols: usize, net: &NetConfig) -> Result<Self, NetError> {
        let (target_ce, target_delta) = targets(recs)?;
        if target_ce.ncols() != rows * cols {
            return Err(NetError::Shape(format!("targets have {} nodes, grid has {}", target_ce.ncols(), rows * cols)));
        }
        Ok(Self { inputs: enc.encode_batch(recs)?, target_ce, target_delta, coords: net.coordinates(rows, cols) })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub update: usize,
    pub loss: f64,
}

/// Adam training; minibatches are drawn from seeded per-epoch shuffles and
/// sorted before each update so the gradient sum has a fixed order.
pub fn train<T: Real>(model: &mut DeepOnet<T>, data: &TrainingData<T>, cfg: &TrainConfig) -> Result<Vec<LossPoint>, NetError> {
    let n = data.len();
    if n == 0 || cfg.updates == 0 {
        return Ok(Vec::new());
    }
    let batch = if cfg.batch_size == 0 || cfg.batch_size >= n { n } else { cfg.batch_size };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut adam = Adam::new(model);
    let mut history = Vec::new();
    for update in 1..=cfg.updates {
        let mut idx: Vec<usize> = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        idx.sort_unstable();
        let (loss, grad) = if batch == n {
            model.loss_and_grad(data.inputs.view(), data.coords.view(), data.target_ce.view(), data.target_delta.view())?
        } else {
            let x = data.inputs.select(Axis(0), &idx);
            let yc = data.target_ce.select(Axis(0), &idx);
            let yd = data.target_delta.select(Axis(0), &idx);
            model.loss_and_grad(x.view(), data.coords.view(), yc.view(), yd.view())?
        };
        if !loss.is_finite() {
            return Err(NetError::Diverged { update });
        }
        adam.update(model, &grad, cfg);
        if update == 1 || update == cfg.updates || (cfg.log_every > 0 && update % cfg.log_every == 0) {
            log::info!("update {update}: loss {loss:.6e}");
            history.push(LossPoint { update, loss });
        }
    }
    Ok(history)
}

/// Predict insult maps for `recs` on a `rows x cols` grid.
pub fn predict<T: Real>(
    model: &DeepOnet<T>,
    enc: &InputEncoding,
    recs: &[SampleRecord],
    rows: usize,
    cols: usize,
    net: &NetConfig,
    model_id: &str,
) -> Result<PredictionSet, NetError> {
    let coords = net.coordinates::<T>(rows, cols);
    let mut predictions = Vec::with_capacity(recs.len());
    for chunk in recs.chunks(64) {
        let x = enc.encode_batch::<T>(chunk)?;
        let fwd = model.forward(x.view(), coords.view())?;
        for (i, r) in chunk.iter().enumerate() {
            let to_map = |a: &Array2<T>| Array2::from_shape_fn((rows, cols), |(u, v)| a[[i, u * cols + v]].f64() as f32);
            predictions.push(Prediction { sample_id: r.sample_id, theta_ce: to_map(&fwd.ce), theta_delta: to_map(&fwd.delta) });
        }
    }
    Ok(PredictionSet { model_id: model_id.to_string(), predictions })
}

/// A trained network with its input encoding, held in f64.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: DeepOnet<f64>,
    pub net: NetConfig,
    pub encoding: InputEncoding,
    pub history: Vec<LossPoint>,
    pub seconds: f64,
}

/// Fit one input variant on `train_set`, running the updates in the
/// configured precision.
pub fn fit_variant(
    train_set: &[SampleRecord],
    variant: Variant,
    net: &NetConfig,
    tc: &TrainConfig,
    grid: (usize, usize),
) -> Result<Trained, NetError> {
    let start = std::time::Instant::now();
    let encoding = InputEncoding::fit(variant, train_set)?;
    let width = variant.kinds().len() * grid.0 * grid.1;
    fn run<T: Real>(
        enc: &InputEncoding,
        recs: &[SampleRecord],
        width: usize,
        net: &NetConfig,
        tc: &TrainConfig,
        grid: (usize, usize),
    ) -> Result<(DeepOnet<f64>, Vec<LossPoint>), NetError> {
        let data = TrainingData::<T>::build(enc, recs, grid.0, grid.1, net)?;
        if data.inputs.ncols() != width {
            return Err(NetError::Shape(format!("encoded width {} for a {}x{} grid", data.inputs.ncols(), grid.0, grid.1)));
        }
        let mut model = DeepOnet::<f64>::new(width, net)?.cast::<T>();
        let history = train(&mut model, &data, tc)?;
        Ok((model.cast(), history))
    }
    let (model, history) = match tc.precision {
        Precision::F32 => run::<f32>(&encoding, train_set, width, net, tc, grid)?,
        Precision::F64 => run::<f64>(&encoding, train_set, width, net, tc, grid)?,
    };
    Ok(Trained { model, net: net.clone(), encoding, history, seconds: start.elapsed().as_secs_f64() })
}

impl Trained {
    pub fn predict(&self, recs: &[SampleRecord], grid: (usize, usize), model_id: &str) -> Result<PredictionSet, NetError> {
        predict(&self.model, &self.encoding, recs, grid.0, grid.1, &self.net, model_id)
    }
}

/// JSON description written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub net: NetConfig,
    pub branch_widths: Vec<usize>,
    pub trunk_widths: Vec<usize>,
    pub parameter_count: usize,
    pub encoding: InputEncoding,
    pub train: TrainConfig,
    pub grid: (usize, usize),
    pub dataset_hash: String,
    pub history: Vec<LossPoint>,
}

/// Parameter tensors as `TAAM`, version, count, then per tensor
/// `u32 rows, u32 cols, u32 crc32` and row-major little-endian f64 values.
pub fn encode_checkpoint<T: Real>(model: &DeepOnet<T>) -> Vec<u8> {
    let mut tensors: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for l in model.branch.layers.iter().chain(&model.trunk.layers) {
        tensors.push((l.w.nrows(), l.w.ncols(), l.w.iter().map(|v| v.f64()).collect()));
        tensors.push((1, l.b.len(), l.b.iter().map(|v| v.f64()).collect()));
    }
    tensors.push((1, 2, model.bias.iter().map(|v| v.f64()).collect()));
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&crate::store::FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (r, c, vals) in tensors {
        let payload: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

/// Load parameters into a model built from the same widths.
pub fn decode_checkpoint<T: Real>(bytes: &[u8], branch_widths: &[usize], trunk_widths: &[usize]) -> Result<DeepOnet<T>, NetError> {
    let bad = |m: String| NetError::Checkpoint(m);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], NetError> {
        if bytes.len() - pos < n {
            return Err(NetError::Checkpoint("truncated".into()));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != crate::store::FORMAT_VERSION {
        return Err(bad(format!("version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let r = u32_at(take(4)?) as usize;
        let c = u32_at(take(4)?) as usize;
        let crc = u32_at(take(4)?);
        let payload = take(r * c * 8)?;
        if crc32fast::hash(payload) != crc {
            return Err(bad(format!("checksum mismatch in a {r}x{c} tensor")));
        }
        let vals: Vec<T> = payload.chunks_exact(8).map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap()))).collect();
        tensors.push(Array2::from_shape_vec((r, c), vals).unwrap());
    }
    let want = 2 * (branch_widths.len() - 1 + trunk_widths.len() - 1) + 1;
    if tensors.len() != want {
        return Err(bad(format!("{} tensors, expected {want}", tensors.len())));
    }
    let mut it = tensors.into_iter();
    let mut mlp = |widths: &[usize]| -> Result<Mlp<T>, NetError> {
        let mut layers = Vec::new();
        for w in widths.windows(2) {
            let wm = it.next().unwrap();
            let b = it.next().unwrap();
            if wm.dim() != (w[0], w[1]) || b.dim() != (1, w[1]) {
                return Err(NetError::Checkpoint(format!("layer shape {:?} does not match widths {w:?}", wm.dim())));
            }
            layers.push(Dense { w: wm, b: b.row(0).to_owned() });
        }
        Ok(Mlp { layers })
    };
    let branch = mlp(branch_widths)?;
    let trunk = mlp(trunk_widths)?;
    let bias = it.next().unwrap();
    if bias.dim() != (1, 2) {
        return Err(bad("bias tensor must be 1x2".into()));
    }
    Ok(DeepOnet { branch, trunk, bias: bias.row(0).to_owned() })
}

pub fn save_checkpoint<T: Real>(dir: &Path, model: &DeepOnet<T>, desc: &ModelDescriptor) -> Result<(), NetError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{}.bin", desc.model_id)), encode_checkpoint(model))?;
    let text = serde_json::to_string_pretty(desc).expect("descriptor serializes");
    std::fs::write(dir.join(format!("{}.json", desc.model_id)), text + "\n")?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(dir: &Path, model_id: &str) -> Result<(DeepOnet<T>, ModelDescriptor), NetError> {
    let text = std::fs::read_to_string(dir.join(format!("{model_id}.json")))?;
    let desc: ModelDescriptor = serde_json::from_str(&text).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let bytes = std::fs::read(dir.join(format!("{model_id}.bin")))?;
    let model = decode_checkpoint(&bytes, &desc.branch_widths, &desc.trunk_widths)?;
    Ok((model, desc))
}
