//! Feasibility of the gain inequality
//!
//! ```text
//!     a F(P) - P Σ - Σ P  ⪯  -χ P,        P ≻ 0,  0 < χ < 2/a
//! ```
//!
//! for a fixed gain `a` and rate `χ`.
//!
//! The left-hand side plus `χ P` is the linear map
//! `G(P) = a F(P) - (P Σ + Σ P) + χ P`. Because the inequality is
//! homogeneous in `P`, certificates are normalized to `P ⪰ I`.
//!
//! The solver leans on the structure of the problem. Writing
//! `A(P) = E[(I - a h h^T) P (I - a h h^T)] = P - a(PΣ + ΣP) + a² F(P)`,
//! the inequality reads `A(P) ⪯ (1 - aχ) P`. `A` maps the PSD cone into
//! itself and is self-adjoint under the trace inner product, so with
//! `r = 1 - aχ > 0`:
//!
//! * if every eigenvalue of `A` is below `r`, `P = (I - A/r)^{-1}(I)` is a
//!   certificate with `G(P) = -(r/a) I` exactly;
//! * otherwise the top eigenvector `X ⪰ 0` of `A` is a dual witness: for
//!   every `P ⪰ I`, `λ_max(G(P)) ≥ tr(P G(X)) / tr(X)`.
//!
//! When neither route decides the problem (a degenerate spectrum, or the
//! relaxed acceptance threshold) the solver falls back to projected
//! subgradient descent on `t(P) = λ_max(G(P))` over
//! `{P ⪰ I, tr P ≤ cap}`.
//!
//! Every certificate is re-verified by [`check_certificate`], which
//! recomputes the residual directly from the moment model.

use log::debug;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{EigenDecomp, SymMatrix};
use crate::moments::MomentModel;

pub const DEFAULT_EPS_FEAS: f64 = 1e-8;
pub const DEFAULT_EPS_MARGIN: f64 = 1e-9;
pub const DEFAULT_RELAXED_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 50_000;
pub const DEFAULT_TRACE_CAP_PER_DIM: f64 = 1e6;
pub const DEFAULT_STAGNATION_WINDOW: usize = 2_000;

/// Acceptance rule for certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceMode {
    /// Require `λ_max(G(P)) ≤ -eps_margin`.
    Strict,
    /// Accept `λ_max(G(P)) ≤ relaxed_tol`. Needed when `Σ` is singular and
    /// the regressor annihilates a fixed direction; such certificates are
    /// flagged as tolerance-limited.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub eps_feas: f64,
    pub eps_margin: f64,
    pub relaxed_tol: f64,
    pub max_iter: usize,
    pub trace_cap_per_dim: f64,
    pub stagnation_window: usize,
    pub mode: ToleranceMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_feas: DEFAULT_EPS_FEAS,
            eps_margin: DEFAULT_EPS_MARGIN,
            relaxed_tol: DEFAULT_RELAXED_TOL,
            max_iter: DEFAULT_MAX_ITER,
            trace_cap_per_dim: DEFAULT_TRACE_CAP_PER_DIM,
            stagnation_window: DEFAULT_STAGNATION_WINDOW,
            mode: ToleranceMode::Strict,
        }
    }
}

impl SolverOptions {
    pub fn relaxed() -> Self {
        Self { mode: ToleranceMode::Relaxed, ..Self::default() }
    }

    pub fn with_mode(self, mode: ToleranceMode) -> Self {
        Self { mode, ..self }
    }

    /// Largest `λ_max(G(P))` a certificate may have.
    pub fn acceptance_threshold(&self) -> f64 {
        match self.mode {
            ToleranceMode::Strict => -self.eps_margin,
            ToleranceMode::Relaxed => self.relaxed_tol,
        }
    }

    /// Tolerance handed to [`check_certificate`].
    pub fn check_tolerance(&self) -> f64 {
        match self.mode {
            ToleranceMode::Strict => self.eps_feas,
            ToleranceMode::Relaxed => self.relaxed_tol.max(self.eps_feas),
        }
    }
}

/// One feasibility question: gain `a`, rate `χ`.
#[derive(Debug, Clone, Copy)]
pub struct LmiProblem<'a> {
    model: &'a MomentModel,
    gain: f64,
    rate: f64,
}

impl<'a> LmiProblem<'a> {
    pub fn new(model: &'a MomentModel, gain: f64, rate: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidProblem(format!("gain must be positive, got {gain}")));
        }
        if !(rate.is_finite() && rate > 0.0 && rate < 2.0 / gain) {
            return Err(Error::InvalidProblem(format!(
                "rate must lie in (0, 2/a) = (0, {}), got {rate}",
                2.0 / gain
            )));
        }
        if !model.supports_general_operator() {
            return Err(Error::UnsupportedOperator(
                "the matrix inequality needs F(P) for general P".into(),
            ));
        }
        Ok(Self { model, gain, rate })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `G(P) = a F(P) - (P Σ + Σ P) + χ P`.
    pub fn residual(&self, p: &SymMatrix) -> SymMatrix {
        let f = self.model.fourth_operator(p).expect("checked at construction");
        f.scale(self.gain)
            .sub(&p.anticommutator(self.model.second_moment()))
            .add_scaled(self.rate, p)
    }
}

/// A witness `(a, χ, P)` for the gain inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainCertificate {
    pub a: f64,
    pub chi: f64,
    pub p: SymMatrix,
    /// `-λ_max(G(P))`.
    pub slack: f64,
    /// `λ_min(P)`.
    pub p_min: f64,
    /// Valid only up to the relaxed tolerance (`slack < eps_margin`).
    pub tolerance_limited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateCheck {
    pub feasible: bool,
    /// `λ_max(a F(P) - PΣ - ΣP + χ P)`.
    pub lambda_max_q: f64,
    pub lambda_min_p: f64,
}

/// Recomputes `Q = a F(P) - PΣ - ΣP + χ P` from the model and accepts when
/// `λ_max(Q) ≤ eps_feas` and `λ_min(P) > 0`.
pub fn check_certificate(model: &MomentModel, cert: &GainCertificate, eps_feas: f64) -> Result<CertificateCheck> {
    let p = &cert.p;
    if p.dim() != model.dim() {
        return Err(Error::DimMismatch { expected: model.dim(), got: p.dim() });
    }
    let sigma = model.second_moment();
    let q = model
        .fourth_operator(p)?
        .scale(cert.a)
        .sub(&p.anticommutator(sigma))
        .add_scaled(cert.chi, p);
    let lambda_max_q = q.lambda_max();
    let lambda_min_p = p.lambda_min();
    Ok(CertificateCheck {
        feasible: lambda_max_q <= eps_feas && lambda_min_p > 0.0,
        lambda_max_q,
        lambda_min_p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleReason {
    /// A PSD dual witness bounds `λ_max(G(P))` away from the threshold.
    DualCertificate,
    /// Subgradient descent stopped improving above the threshold.
    Stagnation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfeasibilityReport {
    /// Smallest `λ_max(G(P))` reached over the candidates tried.
    pub min_lambda_max: f64,
    /// Dual lower bound on `min_{P ⪰ I} λ_max(G(P))`, when available.
    pub lower_bound: Option<f64>,
    pub reason: InfeasibleReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Feasibility {
    Feasible(GainCertificate),
    Infeasible(InfeasibilityReport),
}

impl Feasibility {
    pub fn certificate(&self) -> Option<&GainCertificate> {
        match self {
            Feasibility::Feasible(c) => Some(c),
            Feasibility::Infeasible(_) => None,
        }
    }

    pub fn into_certificate(self) -> Option<GainCertificate> {
        match self {
            Feasibility::Feasible(c) => Some(c),
            Feasibility::Infeasible(_) => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }
}

/// Orthonormal basis of the symmetric `m x m` matrices under the trace
/// inner product: `E_ii` and `(E_ij + E_ji)/√2`.
struct SymBasis {
    dim: usize,
    pairs: Vec<(usize, usize)>,
}

impl SymBasis {
    fn new(dim: usize) -> Self {
        let pairs = (0..dim).flat_map(|i| (i..dim).map(move |j| (i, j))).collect();
        Self { dim, pairs }
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn element(&self, k: usize) -> SymMatrix {
        let (i, j) = self.pairs[k];
        let m = self.dim;
        let mut data = vec![0.0; m * m];
        if i == j {
            data[i * m + i] = 1.0;
        } else {
            let w = std::f64::consts::FRAC_1_SQRT_2;
            data[i * m + j] = w;
            data[j * m + i] = w;
        }
        SymMatrix::new(m, data).expect("finite")
    }

    fn coords(&self, x: &SymMatrix) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|&(i, j)| if i == j { x.get(i, i) } else { std::f64::consts::SQRT_2 * x.get(i, j) })
            .collect()
    }

    fn matrix(&self, c: &[f64]) -> SymMatrix {
        let m = self.dim;
        let mut data = vec![0.0; m * m];
        for (&(i, j), &v) in self.pairs.iter().zip(c) {
            if i == j {
                data[i * m + i] = v;
            } else {
                let w = v * std::f64::consts::FRAC_1_SQRT_2;
                data[i * m + j] = w;
                data[j * m + i] = w;
            }
        }
        SymMatrix::new(m, data).expect("finite")
    }
}

/// Spectrum of the second-moment propagation map
/// `A(P) = P - a(PΣ + ΣP) + a² F(P)` in an orthonormal basis of the
/// symmetric matrices.
pub struct PropagationSpectrum {
    basis: SymBasis,
    eig: EigenDecomp,
}

impl PropagationSpectrum {
    pub fn new(model: &MomentModel, gain: f64) -> Result<Self> {
        if !model.supports_general_operator() {
            return Err(Error::UnsupportedOperator(
                "the propagation map needs F(P) for general P".into(),
            ));
        }
        let basis = SymBasis::new(model.dim());
        let n = basis.len();
        let sigma = model.second_moment();
        let mut cols = Vec::with_capacity(n);
        for k in 0..n {
            let e = basis.element(k);
            let image = e
                .add_scaled(-gain, &e.anticommutator(sigma))
                .add_scaled(gain * gain, &model.fourth_operator(&e)?);
            cols.push(basis.coords(&image));
        }
        let mut data = vec![0.0; n * n];
        for (l, col) in cols.iter().enumerate() {
            for (k, v) in col.iter().enumerate() {
                data[k * n + l] = *v;
            }
        }
        let op = SymMatrix::new(n, data)?;
        Ok(Self { basis, eig: op.eigh() })
    }

    /// Largest eigenvalue, which is also the spectral radius for a
    /// PSD-preserving map.
    pub fn top(&self) -> f64 {
        self.eig.max()
    }

    /// Solves `P - A(P)/r = I`.
    fn lyapunov_solution(&self, r: f64) -> SymMatrix {
        let rhs = self.basis.coords(&SymMatrix::identity(self.basis.dim));
        let n = self.basis.len();
        let mut c = vec![0.0; n];
        for (mu, u) in self.eig.values.iter().zip(&self.eig.vectors) {
            let w = r / (r - mu) * crate::linalg::dot(u, &rhs);
            for (ck, uk) in c.iter_mut().zip(u) {
                *ck += w * uk;
            }
        }
        self.basis.matrix(&c)
    }

    /// Top eigenvector as a unit-trace PSD matrix, if it is PSD.
    fn dual_witness(&self) -> Option<SymMatrix> {
        let top = self.eig.vectors.last()?;
        let mut x = self.basis.matrix(top);
        if x.trace() < 0.0 {
            x = x.scale(-1.0);
        }
        let e = x.eigh();
        if e.min() < -1e-12 * e.max().abs().max(1e-300) || x.trace() <= 0.0 {
            return None;
        }
        let x = e.map_spectrum(|l| l.max(0.0));
        Some(x.scale(1.0 / x.trace()))
    }
}

/// Projects onto `{P : λ_i(P) ≥ 1, tr P ≤ cap}`.
fn project(p: &SymMatrix, cap: f64) -> SymMatrix {
    let e = p.eigh();
    let clipped: f64 = e.values.iter().map(|l| l.max(1.0)).sum();
    if clipped <= cap {
        return e.map_spectrum(|l| l.max(1.0));
    }
    // Find τ with Σ max(1, λ_i - τ) = cap.
    let (mut lo, mut hi) = (0.0, e.max());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = e.values.iter().map(|l| (l - mid).max(1.0)).sum();
        if s > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    e.map_spectrum(|l| (l - hi).max(1.0))
}

fn certificate(problem: &LmiProblem<'_>, p: SymMatrix, t: f64, opts: &SolverOptions) -> GainCertificate {
    let p_min = p.lambda_min();
    GainCertificate {
        a: problem.gain,
        chi: problem.rate,
        p,
        slack: -t,
        p_min,
        tolerance_limited: -t < opts.eps_margin,
    }
}

/// Searches for `P ⪰ I` with `λ_max(G(P))` at or below the acceptance
/// threshold of `opts`.
pub fn solve_feasibility(problem: &LmiProblem<'_>, opts: &SolverOptions) -> Result<Feasibility> {
    let m = problem.model.dim();
    let cap = opts.trace_cap_per_dim * m as f64;
    let threshold = opts.acceptance_threshold();
    let t_of = |p: &SymMatrix| problem.residual(p).lambda_max();

    let spectrum = PropagationSpectrum::new(problem.model, problem.gain)?;
    let r = 1.0 - problem.gain * problem.rate;

    let mut start = SymMatrix::identity(m);
    let mut t_start = t_of(&start);

    if r > 0.0 && spectrum.top() < r {
        let p = spectrum.lyapunov_solution(r);
        let e = p.eigh();
        if e.min() > 0.0 {
            let p = p.scale(1.0 / e.min());
            let t = t_of(&p);
            if p.trace() / p.lambda_min() > cap {
                debug!("trace cap active: Lyapunov candidate has tr/λ_min = {:e}", p.trace() / p.lambda_min());
            } else if t <= threshold {
                return Ok(Feasibility::Feasible(certificate(problem, p, t, opts)));
            }
            let projected = project(&p, cap);
            let tp = t_of(&projected);
            if tp < t_start {
                start = projected;
                t_start = tp;
            }
        }
    }

    if t_start <= threshold {
        return Ok(Feasibility::Feasible(certificate(problem, start, t_start, opts)));
    }

    let lower_bound = spectrum.dual_witness().map(|x| {
        let gx = problem.residual(&x);
        gx.trace() + (cap - m as f64) * gx.lambda_min().min(0.0)
    });
    if let Some(lb) = lower_bound {
        if lb > threshold {
            return Ok(Feasibility::Infeasible(InfeasibilityReport {
                min_lambda_max: t_start,
                lower_bound: Some(lb),
                reason: InfeasibleReason::DualCertificate,
            }));
        }
    }

    // Projected subgradient with Polyak steps toward the threshold.
    let target = threshold - opts.eps_margin;
    let mut p = start.clone();
    let mut best = (t_start, start);
    let mut last_improvement = 0usize;
    for iter in 0..opts.max_iter {
        let g_mat = problem.residual(&p);
        let e = g_mat.eigh();
        let t = e.max();
        if t < best.0 - 1e-12 * best.0.abs().max(1.0) {
            best = (t, p.clone());
            last_improvement = iter;
        }
        if best.0 <= threshold {
            let (t, p) = best;
            debug!("subgradient certificate after {iter} iterations (t = {t:e})");
            return Ok(Feasibility::Feasible(certificate(problem, p, t, opts)));
        }
        if iter - last_improvement >= opts.stagnation_window {
            return Ok(Feasibility::Infeasible(InfeasibilityReport {
                min_lambda_max: best.0,
                lower_bound,
                reason: InfeasibleReason::Stagnation,
            }));
        }
        let v = e.vectors.last().expect("dim >= 1");
        // G is self-adjoint, so ∂λ_max(G(P)) ∋ G(v v^T).
        let g = problem.residual(&SymMatrix::outer(v));
        let gn2 = g.inner(&g);
        if gn2 == 0.0 {
            break;
        }
        let step = ((t - target) / gn2).min(10.0 * p.frobenius_norm() / gn2.sqrt());
        p = project(&p.add_scaled(-step, &g), cap);
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, best_slack: -best.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{gaussian_moment_model, GaussianSpec};

    fn example(s1: f64, s2: f64, rho: f64) -> MomentModel {
        gaussian_moment_model(&GaussianSpec::bivariate(s1, s2, rho).unwrap()).unwrap()
    }

    fn cert(a: f64, chi: f64, p: SymMatrix) -> GainCertificate {
        GainCertificate { a, chi, p, slack: 0.0, p_min: 1.0, tolerance_limited: false }
    }

    #[test]
    fn checker_feasible_identity() {
        let m = example(1.0, 1.0, 0.0);
        let c = check_certificate(&m, &cert(0.4, 0.3, SymMatrix::identity(2)), DEFAULT_EPS_FEAS).unwrap();
        assert!(c.feasible);
        assert!((c.lambda_max_q + 0.1).abs() < 1e-14);
    }

    #[test]
    fn checker_infeasible_identity() {
        let m = example(1.0, 1.0, 0.0);
        let c = check_certificate(&m, &cert(0.5, 0.1, SymMatrix::identity(2)), DEFAULT_EPS_FEAS).unwrap();
        assert!(!c.feasible);
        assert!((c.lambda_max_q - 0.1).abs() < 1e-14);
    }

    #[test]
    fn rate_outside_range_rejected() {
        let m = example(1.0, 1.0, 0.0);
        assert!(matches!(LmiProblem::new(&m, 0.5, 4.0), Err(Error::InvalidProblem(_))));
        assert!(matches!(LmiProblem::new(&m, 0.5, 0.0), Err(Error::InvalidProblem(_))));
        assert!(matches!(LmiProblem::new(&m, -0.1, 0.1), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn explicit_model_unsupported() {
        let m = crate::moments::explicit_moment_model(SymMatrix::identity(2), SymMatrix::identity(2)).unwrap();
        assert!(matches!(LmiProblem::new(&m, 0.1, 0.1), Err(Error::UnsupportedOperator(_))));
        let c = cert(0.1, 0.1, SymMatrix::from_rows(&[[1.0, 0.2], [0.2, 1.0]]).unwrap());
        assert!(matches!(check_certificate(&m, &c, 1e-8), Err(Error::UnsupportedOperator(_))));
    }

    #[test]
    fn example_1b_feasible_below_bound() {
        let m = example(1.0, 2.0, 0.0);
        let prob = LmiProblem::new(&m, 0.16, 0.001).unwrap();
        let res = solve_feasibility(&prob, &SolverOptions::default()).unwrap();
        let c = res.certificate().expect("feasible");
        assert!(check_certificate(&m, c, DEFAULT_EPS_FEAS).unwrap().feasible);
        assert!(c.p_min >= 1.0 - 1e-8);
        assert!(!c.tolerance_limited);
    }

    #[test]
    fn example_1b_infeasible_above_bound() {
        let m = example(1.0, 2.0, 0.0);
        for chi in [1e-6, 1e-3, 0.1, 1.0] {
            let prob = LmiProblem::new(&m, 0.17, chi).unwrap();
            let res = solve_feasibility(&prob, &SolverOptions::default()).unwrap();
            assert!(!res.is_feasible(), "chi = {chi}");
        }
    }

    #[test]
    fn example_1a_near_boundary() {
        let m = example(1.0, 1.0, 0.0);
        let prob = LmiProblem::new(&m, 0.4999, 0.0004 * 0.999).unwrap();
        let c = solve_feasibility(&prob, &SolverOptions::default()).unwrap().into_certificate().unwrap();
        assert!(check_certificate(&m, &c, DEFAULT_EPS_FEAS).unwrap().feasible);
        // Isotropic problem: the certificate is a multiple of I.
        let p = c.p.scale(1.0 / c.p.get(0, 0));
        assert!(p.max_abs_diff(&SymMatrix::identity(2)) < 1e-9);
    }

    #[test]
    fn singular_covariance_needs_relaxed_mode() {
        let m = example(1.0, 1.0, 1.0);
        let prob = LmiProblem::new(&m, 0.3332, 1e-6).unwrap();
        let strict = solve_feasibility(&prob, &SolverOptions::default()).unwrap();
        assert!(!strict.is_feasible());
        let relaxed = solve_feasibility(&prob, &SolverOptions::relaxed()).unwrap();
        let c = relaxed.certificate().expect("feasible within tolerance");
        assert!(c.tolerance_limited);
        assert!(check_certificate(&m, c, DEFAULT_RELAXED_TOL).unwrap().feasible);
        // Past the tolerance no P helps: G(P) has χ p_vv on the annihilated direction.
        let prob = LmiProblem::new(&m, 0.3332, 2e-5).unwrap();
        assert!(!solve_feasibility(&prob, &SolverOptions::relaxed()).unwrap().is_feasible());
    }

    #[test]
    fn projection_respects_constraints() {
        let p = SymMatrix::from_rows(&[[0.2, 0.5], [0.5, 30.0]]).unwrap();
        let q = project(&p, 10.0);
        let e = q.eigh();
        assert!(e.min() >= 1.0 - 1e-12);
        assert!(q.trace() <= 10.0 + 1e-9);
    }

    #[test]
    fn propagation_spectrum_isotropic() {
        // Σ = I (2-D Gaussian): A(I) = (1 - 2a + 4a²) I, traceless part (1 - 2a + 2a²).
        let m = example(1.0, 1.0, 0.0);
        let a = 0.3;
        let s = PropagationSpectrum::new(&m, a).unwrap();
        assert!((s.top() - (1.0 - 2.0 * a + 4.0 * a * a)).abs() < 1e-12);
    }
}
