//! Seeded Monte Carlo engine for constant-gain LMS, plus least-squares
//! baselines.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, norm_sq, SymMatrix};
use crate::moments::DataMatrix;

/// Terminal errors below this are classified bounded.
pub const BOUNDED_THRESHOLD: f64 = 10.0;
/// Terminal errors above this are classified diverged.
pub const DIVERGED_THRESHOLD: f64 = 1e8;
/// A replication stops once `‖θ̃‖²` exceeds this.
pub const DIVERGENCE_GUARD: f64 = 1e12;

pub const DEFAULT_SIGMA_EPS: f64 = 0.1;
pub const DEFAULT_ITERATIONS: u64 = 10_000;
pub const DEFAULT_REPLICATIONS: usize = 1_000;
pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Bounded,
    Diverged,
    Indeterminate,
}

impl Classification {
    pub fn of(mse: f64) -> Self {
        if mse < BOUNDED_THRESHOLD {
            Classification::Bounded
        } else if mse > DIVERGED_THRESHOLD || mse.is_nan() {
            Classification::Diverged
        } else {
            Classification::Indeterminate
        }
    }
}

/// Law of the initial estimate `θ̂₀`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitLaw {
    Fixed(Vec<f64>),
    StandardNormal,
}

impl InitLaw {
    /// `E[θ̃₀ θ̃₀^T]` for `θ̃₀ = θ̂₀ - θ*`.
    pub fn error_second_moment(&self, theta_star: &[f64]) -> SymMatrix {
        match self {
            InitLaw::Fixed(v) => {
                let d: Vec<f64> = v.iter().zip(theta_star).map(|(x, t)| x - t).collect();
                SymMatrix::outer(&d)
            }
            InitLaw::StandardNormal => SymMatrix::identity(theta_star.len()).add(&SymMatrix::outer(theta_star)),
        }
    }
}

/// Draws `h = L g` with `L Lᵀ = Σ` and `g` standard normal.
///
/// Positive definite `Σ` uses its Cholesky factor; otherwise `L = V Λ^{1/2}`
/// from the eigendecomposition, which keeps null directions exactly null.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSampler {
    dim: usize,
    factor: Vec<f64>,
}

impl GaussianSampler {
    pub fn new(sigma: &SymMatrix) -> Result<Self> {
        let dim = sigma.dim();
        let eig = sigma.eigh();
        let scale = sigma.frobenius_norm().max(f64::MIN_POSITIVE);
        if eig.min() < -1e-9 * scale.max(1.0) {
            return Err(Error::InvalidCovariance { min_eigenvalue: eig.min() });
        }
        let mut factor = vec![0.0; dim * dim];
        match cholesky(sigma, 0.0) {
            Ok(l) if eig.min() > 1e-12 * scale => {
                for i in 0..dim {
                    for j in 0..=i {
                        factor[i * dim + j] = l.get(i, j);
                    }
                }
            }
            _ => {
                for (j, (&lam, v)) in eig.values.iter().zip(&eig.vectors).enumerate() {
                    let s = if lam > 1e-12 * scale { lam.sqrt() } else { 0.0 };
                    for i in 0..dim {
                        factor[i * dim + j] = v[i] * s;
                    }
                }
            }
        }
        Ok(Self { dim, factor })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fills `h` using `g` as scratch for the standard normals.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R, g: &mut [f64], h: &mut [f64]) {
        for x in g.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        for (i, hi) in h.iter_mut().enumerate() {
            *hi = dot(&self.factor[i * self.dim..(i + 1) * self.dim], g);
        }
    }
}

/// Where the regressors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSource {
    Gaussian(SymMatrix),
    /// Rows are replayed cyclically. With responses attached the recorded
    /// `z_k` are used and no synthetic noise is added.
    Replay(DataMatrix),
}

impl DesignSource {
    pub fn dim(&self) -> usize {
        match self {
            DesignSource::Gaussian(s) => s.dim(),
            DesignSource::Replay(d) => d.dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub design: DesignSource,
    pub theta_star: Vec<f64>,
    pub init: InitLaw,
    pub sigma_eps: f64,
    pub gain: f64,
    pub iterations: u64,
    pub replications: usize,
    pub master_seed: u64,
    /// Iteration counts at which the mean squared error is also recorded.
    pub checkpoints: Vec<u64>,
}

impl SimConfig {
    /// Standard protocol: `σ_ε = 0.1`, `θ* = 1`, standard-normal start,
    /// `10⁴` iterations, `10³` replications.
    pub fn standard(sigma: SymMatrix, gain: f64) -> Self {
        let m = sigma.dim();
        Self {
            design: DesignSource::Gaussian(sigma),
            theta_star: vec![1.0; m],
            init: InitLaw::StandardNormal,
            sigma_eps: DEFAULT_SIGMA_EPS,
            gain,
            iterations: DEFAULT_ITERATIONS,
            replications: DEFAULT_REPLICATIONS,
            master_seed: DEFAULT_SEED,
            checkpoints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.design.dim();
        if self.theta_star.len() != m {
            return Err(Error::DimMismatch { expected: m, got: self.theta_star.len() });
        }
        if let InitLaw::Fixed(v) = &self.init {
            if v.len() != m {
                return Err(Error::DimMismatch { expected: m, got: v.len() });
            }
        }
        if !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::Config(format!("noise level must be finite and nonnegative, got {}", self.sigma_eps)));
        }
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!("gain must be finite and nonnegative, got {}", self.gain)));
        }
        if self.iterations == 0 || self.replications == 0 {
            return Err(Error::Config("iterations and replications must be positive".into()));
        }
        if let DesignSource::Replay(d) = &self.design {
            if d.n_rows() == 0 {
                return Err(Error::EmptyData);
            }
        }
        Ok(())
    }
}

/// Seed of replication `r`; independent of the replication count and of
/// scheduling.
pub fn stream_seed(master_seed: u64, replication: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(master_seed ^ splitmix(replication as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    /// `None` when the error overflowed.
    pub terminal_error: Option<f64>,
    pub classification: Classification,
    /// The divergence guard stopped this replication early.
    pub short_circuited: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub iteration: u64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub terminal_mse: f64,
    pub classification: Classification,
    pub terminal_errors: Vec<f64>,
    /// `θ̃` at the last iteration run, per replication.
    pub terminal_states: Vec<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    pub seeds: Vec<u64>,
    pub short_circuited: Vec<bool>,
}

impl SimResult {
    pub fn records(&self) -> impl Iterator<Item = ReplicationRecord> + '_ {
        self.terminal_errors.iter().enumerate().map(|(r, &e)| ReplicationRecord {
            replication: r,
            seed: self.seeds[r],
            terminal_error: e.is_finite().then_some(e),
            classification: Classification::of(e),
            short_circuited: self.short_circuited[r],
        })
    }

    /// One JSON object per replication, in replication order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in self.records() {
            let line = serde_json::to_string(&rec).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Recursion {
    Estimate,
    Error,
}

struct Outcome {
    terminal: f64,
    state: Vec<f64>,
    checkpoints: Vec<f64>,
    short_circuited: bool,
}

enum Sampler<'a> {
    Gaussian(GaussianSampler),
    Replay(&'a DataMatrix),
}

fn run_replication(cfg: &SimConfig, sampler: &Sampler<'_>, seed: u64, mode: Recursion) -> Outcome {
    let m = cfg.theta_star.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta0: Vec<f64> = match &cfg.init {
        InitLaw::Fixed(v) => v.clone(),
        InitLaw::StandardNormal => (0..m).map(|_| StandardNormal.sample(&mut rng)).collect(),
    };
    let star = &cfg.theta_star;
    // `x` is θ̂ for the estimate recursion and θ̃ for the error recursion.
    let mut x: Vec<f64> = match mode {
        Recursion::Estimate => theta0,
        Recursion::Error => theta0.iter().zip(star).map(|(t, s)| t - s).collect(),
    };
    let err_sq = |x: &[f64]| match mode {
        Recursion::Estimate => x.iter().zip(star).map(|(t, s)| (t - s) * (t - s)).sum::<f64>(),
        Recursion::Error => norm_sq(x),
    };
    let mut g = vec![0.0; m];
    let mut h = vec![0.0; m];
    let mut marks = Vec::with_capacity(cfg.checkpoints.len());
    let mut next_mark = 0;
    let a = cfg.gain;
    let mut k = 0u64;
    let mut e2 = err_sq(&x);
    while next_mark < cfg.checkpoints.len() && cfg.checkpoints[next_mark] == 0 {
        marks.push(e2);
        next_mark += 1;
    }
    let mut short_circuited = false;
    while k < cfg.iterations {
        k += 1;
        let (eps, z) = match sampler {
            Sampler::Gaussian(s) => {
                s.sample(&mut rng, &mut g, &mut h);
                let n: f64 = StandardNormal.sample(&mut rng);
                let eps = cfg.sigma_eps * n;
                (eps, dot(&h, star) + eps)
            }
            Sampler::Replay(d) => {
                let idx = ((k - 1) % d.n_rows() as u64) as usize;
                h.copy_from_slice(d.row(idx));
                match d.responses() {
                    Some(zs) => (zs[idx] - dot(&h, star), zs[idx]),
                    None => {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        let eps = cfg.sigma_eps * n;
                        (eps, dot(&h, star) + eps)
                    }
                }
            }
        };
        let resid = match mode {
            Recursion::Estimate => dot(&h, &x) - z,
            Recursion::Error => dot(&h, &x) - eps,
        };
        let step = a * resid;
        for (xi, hi) in x.iter_mut().zip(&h) {
            *xi -= step * hi;
        }
        e2 = err_sq(&x);
        if !(e2 <= DIVERGENCE_GUARD) {
            short_circuited = true;
            if e2.is_nan() {
                e2 = f64::INFINITY;
            }
            break;
        }
        while next_mark < cfg.checkpoints.len() && cfg.checkpoints[next_mark] == k {
            marks.push(e2);
            next_mark += 1;
        }
    }
    // Checkpoints past a short-circuit carry the last value.
    marks.resize(cfg.checkpoints.len(), e2);
    if mode == Recursion::Estimate {
        for (xi, s) in x.iter_mut().zip(star) {
            *xi -= s;
        }
    }
    Outcome { terminal: e2, state: x, checkpoints: marks, short_circuited }
}

fn run(cfg: &SimConfig, mode: Recursion) -> Result<SimResult> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.checkpoints.sort_unstable();
    cfg.checkpoints.dedup();
    cfg.checkpoints.retain(|&c| c <= cfg.iterations);
    let sampler = match &cfg.design {
        DesignSource::Gaussian(s) => Sampler::Gaussian(GaussianSampler::new(s)?),
        DesignSource::Replay(d) => Sampler::Replay(d),
    };
    let seeds: Vec<u64> = (0..cfg.replications).map(|r| stream_seed(cfg.master_seed, r)).collect();
    let outcomes: Vec<Outcome> = seeds.par_iter().map(|&s| run_replication(&cfg, &sampler, s, mode)).collect();

    let n = outcomes.len() as f64;
    let terminal_mse = outcomes.iter().map(|o| o.terminal).sum::<f64>() / n;
    let snapshots = cfg
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, &it)| Snapshot { iteration: it, mse: outcomes.iter().map(|o| o.checkpoints[i]).sum::<f64>() / n })
        .collect();
    Ok(SimResult {
        terminal_mse,
        classification: Classification::of(terminal_mse),
        terminal_errors: outcomes.iter().map(|o| o.terminal).collect(),
        short_circuited: outcomes.iter().map(|o| o.short_circuited).collect(),
        terminal_states: outcomes.into_iter().map(|o| o.state).collect(),
        snapshots,
        seeds,
    })
}

/// Runs the LMS estimate recursion `θ̂_k = θ̂_{k-1} - a h_k (h_kᵀ θ̂_{k-1} - z_k)`.
pub fn run_lms(cfg: &SimConfig) -> Result<SimResult> {
    run(cfg, Recursion::Estimate)
}

/// Runs `θ̃_k = (I - a h_k h_kᵀ) θ̃_{k-1} + a h_k ε_k` on the same streams
/// as [`run_lms`].
pub fn run_error_recursion(cfg: &SimConfig) -> Result<SimResult> {
    run(cfg, Recursion::Error)
}

fn require_responses(data: &DataMatrix) -> Result<&[f64]> {
    data.responses()
        .ok_or_else(|| Error::InvalidProblem("least squares needs a response column".into()))
}

/// Least-squares fit through the normal equations.
pub fn batch_ls(data: &DataMatrix) -> Result<Vec<f64>> {
    let z = require_responses(data)?;
    let m = data.dim();
    if data.n_rows() < m {
        return Err(Error::RankDeficient);
    }
    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for (row, &zk) in data.iter_rows().zip(z) {
        for i in 0..m {
            rhs[i] += row[i] * zk;
            for j in 0..m {
                gram[i * m + j] += row[i] * row[j];
            }
        }
    }
    let gram = SymMatrix::new(m, gram)?;
    let eig = gram.eigh();
    if eig.min() <= 1e-12 * eig.max() {
        return Err(Error::RankDeficient);
    }
    let chol = cholesky(&gram, 0.0).map_err(|_| Error::RankDeficient)?;
    let mut theta = chol.solve(&rhs);
    // One step of iterative refinement.
    let r = normal_residual(data, &theta)?;
    let d = chol.solve(&r);
    for (t, di) in theta.iter_mut().zip(d) {
        *t += di;
    }
    Ok(theta)
}

/// `Hᵀ(z - Hθ)`.
pub fn normal_residual(data: &DataMatrix, theta: &[f64]) -> Result<Vec<f64>> {
    let z = require_responses(data)?;
    let mut out = vec![0.0; data.dim()];
    for (row, &zk) in data.iter_rows().zip(z) {
        let e = zk - dot(row, theta);
        for (o, h) in out.iter_mut().zip(row) {
            *o += h * e;
        }
    }
    Ok(out)
}

/// Recursive least-squares state.
#[derive(Debug, Clone, PartialEq)]
pub struct Rls {
    theta: Vec<f64>,
    p: SymMatrix,
}

impl Rls {
    pub fn new(theta0: Vec<f64>, p0_scale: f64) -> Self {
        let m = theta0.len();
        Self { theta: theta0, p: SymMatrix::scaled_identity(m, p0_scale) }
    }

    /// Gain `K = P h / (1 + hᵀ P h)`.
    pub fn gain(&self, h: &[f64]) -> Vec<f64> {
        let ph = self.p.mul_vec(h);
        let denom = 1.0 + dot(h, &ph);
        ph.into_iter().map(|x| x / denom).collect()
    }

    pub fn update(&mut self, h: &[f64], z: f64) {
        let ph = self.p.mul_vec(h);
        let denom = 1.0 + dot(h, &ph);
        let innov = z - dot(h, &self.theta);
        for (t, x) in self.theta.iter_mut().zip(&ph) {
            *t += x / denom * innov;
        }
        self.p = self.p.add_scaled(-1.0 / denom, &SymMatrix::outer(&ph));
    }

    pub fn estimate(&self) -> &[f64] {
        &self.theta
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.p
    }
}

/// One RLS pass over the rows starting from `θ̂₀` and `P₀ = p0_scale · I`.
pub fn recursive_ls(data: &DataMatrix, theta0: &[f64], p0_scale: f64) -> Result<Vec<f64>> {
    let z = require_responses(data)?;
    if theta0.len() != data.dim() {
        return Err(Error::DimMismatch { expected: data.dim(), got: theta0.len() });
    }
    if data.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let mut rls = Rls::new(theta0.to_vec(), p0_scale);
    for (row, &zk) in data.iter_rows().zip(z) {
        rls.update(row, zk);
    }
    let theta = rls.theta;
    if theta.iter().all(|t| t.is_finite()) {
        Ok(theta)
    } else {
        Err(Error::InvalidProblem("non-finite recursive least-squares estimate".into()))
    }
}
