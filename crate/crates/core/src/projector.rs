//! Two stacked affine layers from encoder space to LLM embedding space.
//!
//! Parameters are stored as `f32` (the on-disk precision); training keeps
//! `f64` master weights in [`Weights`] and rounds once at the end.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::TrainingPair;

pub const PROJ_MAGIC: &[u8; 4] = b"PROJ";
pub const PROJ_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 2048;
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ProjectorError {
    #[error("expected input of dim {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("inconsistent pair dims at pair {index}: ({got_in}, {got_out}) vs ({d_in}, {d_out})")]
    InconsistentPairs {
        index: usize,
        got_in: usize,
        got_out: usize,
        d_in: usize,
        d_out: usize,
    },
    #[error("no training pairs")]
    Empty,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (MSE {mse}); try a smaller learning rate")]
    Diverged { epoch: usize, mse: f64 },
    #[error("normal matrix is singular; supply more independent inputs or a ridge term")]
    Singular,
    #[error("bad projector header: {0}")]
    Header(String),
    #[error("unexpected EOF while reading {0}")]
    UnexpectedEof(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    /// tanh approximation.
    Gelu,
}

impl Activation {
    fn id(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Gelu => 1,
        }
    }

    fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Gelu),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Gelu => 0.5 * z * (1.0 + gelu_inner(z).tanh()),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Gelu => {
                let t = gelu_inner(z).tanh();
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * z * z)
            }
        }
    }
}

fn gelu_inner(z: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() * (z + 0.044715 * z * z * z)
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Activation::Identity),
            "gelu" => Ok(Activation::Gelu),
            _ => Err(format!("unknown activation `{s}` (expected identity or gelu)")),
        }
    }
}

/// `f64` parameters used during training and gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub activation: Activation,
}

impl Weights {
    /// Uniform(±1/sqrt(fan_in)) weights, zero biases.
    pub fn init(d_in: usize, h: usize, d_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let a = 1.0 / (cols as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-a..=a))
        };
        let w1 = uniform(h, d_in);
        let w2 = uniform(d_out, h);
        Self {
            w1,
            b1: DVector::zeros(h),
            w2,
            b2: DVector::zeros(d_out),
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
            activation: self.activation,
        }
    }

    /// Forward pass over column-stacked inputs; returns (pre-activation, output).
    fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut z1 = &self.w1 * x;
        for mut col in z1.column_iter_mut() {
            col += &self.b1;
        }
        let a = z1.map(|z| self.activation.apply(z));
        let mut y = &self.w2 * &a;
        for mut col in y.column_iter_mut() {
            col += &self.b2;
        }
        (z1, a, y)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(x).2
    }

    /// MSE over column-stacked samples and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Weights) {
        let n = x.ncols() as f64;
        let (z1, a, yhat) = self.forward(x);
        let diff = yhat - y;
        let loss = diff.norm_squared() / n;
        let g = diff * (2.0 / n);
        let w2 = &g * a.transpose();
        let b2 = g.column_sum();
        let ga = self.w2.transpose() * &g;
        let gz = ga.zip_map(&z1, |ga, z| ga * self.activation.derivative(z));
        let w1 = &gz * x.transpose();
        let b1 = gz.column_sum();
        (
            loss,
            Weights {
                w1,
                b1,
                w2,
                b2,
                activation: self.activation,
            },
        )
    }

    pub fn mse(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        (self.predict(x) - y).norm_squared() / x.ncols() as f64
    }

    /// All parameters in the order w1, b1, w2, b2 (matrices column-major).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(self.w1.iter());
        v.extend(self.b1.iter());
        v.extend(self.w2.iter());
        v.extend(self.b2.iter());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for p in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *p = it.next().expect("flat parameter vector too short");
        }
    }

    fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

/// Stored projector: `act(W1·x + b1)` then `W2·(·) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub activation: Activation,
    /// Row-major `hidden × d_in`.
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    /// Row-major `d_out × hidden`.
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f32> {
    m.transpose().iter().map(|&x| x as f32).collect()
}

fn from_row_major(rows: usize, cols: usize, v: &[f32]) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows, cols, v.iter().map(|&x| x as f64))
}

impl Projector {
    pub fn zeros(d_in: usize, hidden: usize, d_out: usize, activation: Activation) -> Self {
        Self {
            d_in,
            hidden,
            d_out,
            activation,
            w1: vec![0.0; hidden * d_in],
            b1: vec![0.0; hidden],
            w2: vec![0.0; d_out * hidden],
            b2: vec![0.0; d_out],
        }
    }

    pub fn from_weights(w: &Weights) -> Self {
        Self {
            d_in: w.w1.ncols(),
            hidden: w.w1.nrows(),
            d_out: w.w2.nrows(),
            activation: w.activation,
            w1: row_major(&w.w1),
            b1: w.b1.iter().map(|&x| x as f32).collect(),
            w2: row_major(&w.w2),
            b2: w.b2.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_weights(&self) -> Weights {
        Weights {
            w1: from_row_major(self.hidden, self.d_in, &self.w1),
            b1: DVector::from_iterator(self.hidden, self.b1.iter().map(|&x| x as f64)),
            w2: from_row_major(self.d_out, self.hidden, &self.w2),
            b2: DVector::from_iterator(self.d_out, self.b2.iter().map(|&x| x as f64)),
            activation: self.activation,
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, ProjectorError> {
        if x.len() != self.d_in {
            return Err(ProjectorError::DimMismatch {
                expected: self.d_in,
                got: x.len(),
            });
        }
        let hidden: Vec<f64> = self
            .w1
            .chunks_exact(self.d_in)
            .zip(&self.b1)
            .map(|(row, &b)| {
                let z = row.iter().zip(x).map(|(&w, &xi)| w as f64 * xi).sum::<f64>() + b as f64;
                self.activation.apply(z)
            })
            .collect();
        Ok(self
            .w2
            .chunks_exact(self.hidden)
            .zip(&self.b2)
            .map(|(row, &b)| row.iter().zip(&hidden).map(|(&w, &a)| w as f64 * a).sum::<f64>() + b as f64)
            .collect())
    }

    /// Collapse to one affine map; only meaningful for the identity activation.
    pub fn composed(&self) -> AffineMap {
        let w = self.to_weights();
        let b = &w.w2 * &w.b1 + &w.b2;
        AffineMap {
            w: &w.w2 * &w.w1,
            b,
        }
    }

    pub fn write_to(&self, mut out: impl Write) -> io::Result<()> {
        out.write_all(PROJ_MAGIC)?;
        for v in [PROJ_VERSION, self.d_in as u32, self.hidden as u32, self.d_out as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&[self.activation.id()])?;
        for block in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for x in block.iter() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ProjectorError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != PROJ_MAGIC {
            return Err(ProjectorError::Header(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != PROJ_VERSION {
            return Err(ProjectorError::Header(format!("unsupported version {version}")));
        }
        let d_in = read_u32(&mut r)? as usize;
        let hidden = read_u32(&mut r)? as usize;
        let d_out = read_u32(&mut r)? as usize;
        if d_in == 0 || hidden == 0 || d_out == 0 {
            return Err(ProjectorError::Header(format!("zero dim in {d_in}x{hidden}x{d_out}")));
        }
        let mut act = [0u8; 1];
        read_exact(&mut r, &mut act, "activation")?;
        let activation = Activation::from_id(act[0])
            .ok_or_else(|| ProjectorError::Header(format!("unknown activation id {}", act[0])))?;
        let mut block = |n: usize| -> Result<Vec<f32>, ProjectorError> {
            let mut bytes = vec![0u8; n * 4];
            read_exact(&mut r, &mut bytes, "parameters")?;
            Ok(bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
                .collect())
        };
        let p = Self {
            d_in,
            hidden,
            d_out,
            activation,
            w1: block(hidden * d_in)?,
            b1: block(hidden)?,
            w2: block(d_out * hidden)?,
            b2: block(d_out)?,
        };
        if [&p.w1, &p.b1, &p.w2, &p.b2].iter().any(|b| b.iter().any(|x| !x.is_finite())) {
            return Err(ProjectorError::Header("non-finite parameter".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProjectorError> {
        let io = |source| ProjectorError::Io { path: path.to_path_buf(), source };
        let f = File::create(path).map_err(io)?;
        self.write_to(BufWriter::new(f)).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ProjectorError> {
        let f = File::open(path).map_err(|source| ProjectorError::Io { path: path.to_path_buf(), source })?;
        Self::read_from(BufReader::new(f))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<(), ProjectorError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProjectorError::UnexpectedEof(what),
        _ => ProjectorError::Io { path: PathBuf::new(), source: e },
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, ProjectorError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "header")?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(format!("unknown optimizer `{s}` (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Samples per step; 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 0,
            optimizer: Optimizer::Sgd,
            hidden: DEFAULT_HIDDEN,
            activation: Activation::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProjectorError> {
        if self.epochs == 0 {
            return Err(ProjectorError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ProjectorError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(ProjectorError::InvalidConfig("hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-data MSE after each epoch.
    pub trace: Vec<f64>,
    /// MSE of the stored (f32) projector.
    pub final_mse: f64,
    pub wall_secs: f64,
    pub config: TrainConfig,
    pub n_pairs: usize,
}

/// Column-stacked inputs and targets; checks that dims agree.
pub fn pair_matrices(pairs: &[TrainingPair]) -> Result<(DMatrix<f64>, DMatrix<f64>), ProjectorError> {
    let first = pairs.first().ok_or(ProjectorError::Empty)?;
    let (d_in, d_out) = (first.h_laser.len(), first.h_llm.len());
    for (index, p) in pairs.iter().enumerate() {
        if p.h_laser.len() != d_in || p.h_llm.len() != d_out {
            return Err(ProjectorError::InconsistentPairs {
                index,
                got_in: p.h_laser.len(),
                got_out: p.h_llm.len(),
                d_in,
                d_out,
            });
        }
    }
    let x = DMatrix::from_iterator(d_in, pairs.len(), pairs.iter().flat_map(|p| p.h_laser.iter().copied()));
    let y = DMatrix::from_iterator(d_out, pairs.len(), pairs.iter().flat_map(|p| p.h_llm.iter().copied()));
    Ok((x, y))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Mini-batch gradient descent on the MSE. Same seed, same result.
pub fn train_mse(pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<(Projector, TrainReport), ProjectorError> {
    cfg.validate()?;
    let (x, y) = pair_matrices(pairs)?;
    let start = Stopwatch::start();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Weights::init(x.nrows(), cfg.hidden, y.nrows(), cfg.activation, &mut rng);
    let n = pairs.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut flat = w.flatten();
    let mut adam = Adam { m: vec![0.0; flat.len()], v: vec![0.0; flat.len()], t: 0 };
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (xb, yb) = if batch == n {
                (x.clone(), y.clone())
            } else {
                (x.select_columns(chunk), y.select_columns(chunk))
            };
            let (_, g) = w.loss_and_gradient(&xb, &yb);
            let g = g.flatten();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, gi) in flat.iter_mut().zip(&g) {
                        *p -= cfg.learning_rate * gi;
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                    adam.t += 1;
                    let c1 = 1.0 - f64::powi(b1, adam.t);
                    let c2 = 1.0 - f64::powi(b2, adam.t);
                    for i in 0..flat.len() {
                        adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * g[i];
                        adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * g[i] * g[i];
                        let mhat = adam.m[i] / c1;
                        let vhat = adam.v[i] / c2;
                        flat[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            w.set_flat(&flat);
        }
        let mse = w.mse(&x, &y);
        if !mse.is_finite() || !w.is_finite() {
            return Err(ProjectorError::Diverged { epoch, mse });
        }
        trace.push(mse);
    }

    let projector = Projector::from_weights(&w);
    let final_mse = projector.to_weights().mse(&x, &y);
    let report = TrainReport {
        trace,
        final_mse,
        wall_secs: start.secs(),
        config: cfg.clone(),
        n_pairs: n,
    };
    Ok((projector, report))
}

/// Single affine map `x ↦ W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.w * x;
        for mut col in y.column_iter_mut() {
            col += &self.b;
        }
        y
    }

    pub fn mse(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        (self.apply(x) - y).norm_squared() / x.ncols() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub map: AffineMap,
    pub mse: f64,
}

/// Closed-form least squares on centered data with ridge `lambda` on `W` only.
pub fn ols_fit(pairs: &[TrainingPair], lambda: f64) -> Result<OlsFit, ProjectorError> {
    let (x, y) = pair_matrices(pairs)?;
    ols_fit_matrices(&x, &y, lambda)
}

pub fn ols_fit_matrices(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<OlsFit, ProjectorError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ProjectorError::InvalidConfig("ridge must be non-negative".into()));
    }
    let xm = x.column_mean();
    let ym = y.column_mean();
    let mut xc = x.clone();
    for mut c in xc.column_iter_mut() {
        c -= &xm;
    }
    let mut yc = y.clone();
    for mut c in yc.column_iter_mut() {
        c -= &ym;
    }
    let mut a = &xc * xc.transpose();
    let scale = a.diagonal().max().max(f64::MIN_POSITIVE);
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let chol = a.clone().cholesky().ok_or(ProjectorError::Singular)?;
    let min_pivot = chol.l_dirty().diagonal().map(|d| d * d).min();
    if min_pivot <= scale * 1e-12 {
        return Err(ProjectorError::Singular);
    }
    // (Xc Xcᵀ + λI) Wᵀ = Xc Ycᵀ
    let wt = chol.solve(&(&xc * yc.transpose()));
    let w = wt.transpose();
    let b = &ym - &w * &xm;
    let map = AffineMap { w, b };
    let mse = map.mse(x, y);
    Ok(OlsFit { map, mse })
}


/// Wall clock that reads zero on targets without a monotonic clock.
struct Stopwatch(#[cfg(not(target_family = "wasm"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_family = "wasm"))]
            std::time::Instant::now(),
        )
    }

    fn secs(&self) -> f64 {
        #[cfg(not(target_family = "wasm"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_family = "wasm")]
        0.0
    }
}
