//! Gain search drivers and mean-squared error bounds.
//!
//! `sup_gain` finds the largest constant gain each criterion admits;
//! `max_chi` finds the largest contraction rate at a fixed gain; the bound
//! functions turn a certificate `(a, χ, P)` into explicit error bounds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::lmi::{solve_feasibility, GainCertificate, LmiProblem, SolverOptions, ToleranceMode};
use crate::moments::MomentModel;

/// Eigenvalues within this fraction of the matrix norm count as zero.
const ZERO_SNAP_REL: f64 = 1e-12;
const MAX_BRACKET_DOUBLINGS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    /// General `P ≻ 0` matrix inequality.
    Theorem1,
    /// The inequality restricted to `P = I`.
    Corollary2,
    /// `a < 2 / λ_max(Σ)`.
    WidrowLambdaMax,
    /// `a < 2 / tr(Σ)`.
    WidrowTrace,
    /// `a < 2 λ_min(Σ) / λ_max(Σ)²`.
    ZhuCriterion,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 5] = [
        CriterionKind::Theorem1,
        CriterionKind::Corollary2,
        CriterionKind::WidrowLambdaMax,
        CriterionKind::WidrowTrace,
        CriterionKind::ZhuCriterion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::Theorem1 => "theorem1",
            CriterionKind::Corollary2 => "corollary2",
            CriterionKind::WidrowLambdaMax => "widrow_lambda_max",
            CriterionKind::WidrowTrace => "widrow_trace",
            CriterionKind::ZhuCriterion => "zhu_criterion",
        }
    }

    /// Whether the criterion comes with a certificate `(a, χ, P)`.
    pub fn is_certified(self) -> bool {
        matches!(self, CriterionKind::Theorem1 | CriterionKind::Corollary2)
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CriterionKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown criterion {s:?}")))
    }
}

/// How the certified searches treat tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Strict,
    Relaxed,
    /// Strict first; relaxed if no gain is strictly feasible.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOptions {
    pub tol_a: f64,
    pub tol_chi: f64,
    pub mode: SearchMode,
    pub solver: SolverOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { tol_a: 1e-8, tol_chi: 1e-9, mode: SearchMode::Auto, solver: SolverOptions::default() }
    }
}

impl SearchOptions {
    fn with_tolerance(&self, mode: ToleranceMode) -> Self {
        Self { solver: self.solver.with_mode(mode), ..*self }
    }

}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupGainResult {
    pub kind: CriterionKind,
    /// For certified kinds, the largest gain with a certificate.
    pub sup_a: f64,
    /// For certified kinds: a certificate at `sup_a`.
    pub certificate: Option<GainCertificate>,
    /// `sup_a + bisection_width` is known to be infeasible.
    pub bisection_width: f64,
    /// Zhu criterion with singular `Σ`.
    pub inapplicable: bool,
    /// The gain is feasible only within the relaxed tolerance.
    pub tolerance_limited: bool,
    pub diagnostic: Option<String>,
}

impl SupGainResult {
    fn closed_form(kind: CriterionKind, sup_a: f64) -> Self {
        Self {
            kind,
            sup_a,
            certificate: None,
            bisection_width: 0.0,
            inapplicable: false,
            tolerance_limited: false,
            diagnostic: None,
        }
    }
}

fn snap_zero(x: f64, scale: f64) -> f64 {
    if x.abs() <= ZERO_SNAP_REL * scale {
        0.0
    } else {
        x
    }
}

/// Extreme eigenvalues of `Σ` with round-off near zero snapped to zero.
pub fn covariance_extremes(sigma: &SymMatrix) -> (f64, f64) {
    let e = sigma.eigh();
    let scale = sigma.frobenius_norm();
    (snap_zero(e.min(), scale), e.max())
}

/// `λ_max(a M4 - 2Σ)`, snapped to zero when it is round-off.
fn corollary_lambda(model: &MomentModel, a: f64) -> f64 {
    let q = model.m4().scale(a).add_scaled(-2.0, model.second_moment());
    snap_zero(q.lambda_max(), q.frobenius_norm())
}

/// Largest gain admitted by `kind`.
pub fn sup_gain(model: &MomentModel, kind: CriterionKind, opts: &SearchOptions) -> Result<SupGainResult> {
    let sigma = model.second_moment();
    match kind {
        CriterionKind::WidrowLambdaMax => Ok(SupGainResult::closed_form(kind, 2.0 / sigma.lambda_max())),
        CriterionKind::WidrowTrace => Ok(SupGainResult::closed_form(kind, 2.0 / sigma.trace())),
        CriterionKind::ZhuCriterion => {
            let (lmin, lmax) = covariance_extremes(sigma);
            let mut r = SupGainResult::closed_form(kind, 2.0 * lmin / (lmax * lmax));
            if lmin == 0.0 {
                r.inapplicable = true;
                r.diagnostic = Some("criterion inapplicable: covariance is singular".into());
            }
            Ok(r)
        }
        CriterionKind::Theorem1 | CriterionKind::Corollary2 => match opts.mode {
            SearchMode::Strict => certified_sup(model, kind, &opts.with_tolerance(ToleranceMode::Strict)),
            SearchMode::Relaxed => certified_sup(model, kind, &opts.with_tolerance(ToleranceMode::Relaxed)),
            SearchMode::Auto => {
                let strict = certified_sup(model, kind, &opts.with_tolerance(ToleranceMode::Strict))?;
                if strict.certificate.is_some() {
                    return Ok(strict);
                }
                let mut relaxed = certified_sup(model, kind, &opts.with_tolerance(ToleranceMode::Relaxed))?;
                relaxed.diagnostic = strict.diagnostic;
                Ok(relaxed)
            }
        },
    }
}

/// Certificate for the `P = I` condition at gain `a`, or `None`.
///
/// The certificate uses half of the largest admissible rate so that it
/// carries a positive margin; under relaxed tolerance with no margin left
/// it uses half the relaxed tolerance as the rate.
fn corollary_certificate(model: &MomentModel, a: f64, solver: &SolverOptions) -> Option<GainCertificate> {
    let lambda = corollary_lambda(model, a);
    if lambda > solver.acceptance_threshold() {
        return None;
    }
    let chi = if -lambda > solver.eps_margin { -0.5 * lambda } else { 0.5 * solver.relaxed_tol };
    let chi = chi.min(1.0 / a);
    let slack = -(lambda + chi);
    Some(GainCertificate {
        a,
        chi,
        p: SymMatrix::identity(model.dim()),
        slack,
        p_min: 1.0,
        tolerance_limited: slack < solver.eps_margin,
    })
}

fn theorem_certificate(model: &MomentModel, a: f64, opts: &SearchOptions) -> Result<Option<GainCertificate>> {
    // Feasibility is monotone in χ, so the smallest probe rate decides
    // whether any χ > 0 works.
    let problem = LmiProblem::new(model, a, opts.tol_chi)?;
    Ok(solve_feasibility(&problem, &opts.solver)?.into_certificate())
}

fn probe(model: &MomentModel, kind: CriterionKind, a: f64, opts: &SearchOptions) -> Result<Option<GainCertificate>> {
    match kind {
        CriterionKind::Corollary2 => Ok(corollary_certificate(model, a, &opts.solver)),
        CriterionKind::Theorem1 => theorem_certificate(model, a, opts),
        _ => unreachable!("closed-form criteria are not searched"),
    }
}

fn certified_sup(model: &MomentModel, kind: CriterionKind, opts: &SearchOptions) -> Result<SupGainResult> {
    if kind == CriterionKind::Theorem1 && !model.supports_general_operator() {
        return Err(Error::UnsupportedOperator(
            "theorem1 needs the full fourth-moment operator; explicit matrices only give F(I)".into(),
        ));
    }
    let mut hi = 2.0 / model.second_moment().trace();
    let tiny = (opts.tol_a * 1e-3).min(hi * 1e-6);
    let mut best = match probe(model, kind, tiny, opts)? {
        Some(c) => c,
        None => {
            let mut r = SupGainResult::closed_form(kind, 0.0);
            r.diagnostic = Some(format!(
                "no gain is feasible under {:?} tolerance (checked down to a = {tiny:.1e}); the regressor annihilates a fixed direction",
                opts.solver.mode
            ));
            return Ok(r);
        }
    };
    let mut lo = tiny;
    let mut doublings = 0;
    while let Some(c) = probe(model, kind, hi, opts)? {
        lo = hi;
        best = c;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS {
            return Err(Error::NonConvergence { iterations: doublings, best_slack: best.slack });
        }
    }
    while hi - lo > opts.tol_a {
        let mid = 0.5 * (lo + hi);
        match probe(model, kind, mid, opts)? {
            Some(c) => {
                lo = mid;
                best = c;
            }
            None => hi = mid,
        }
    }
    Ok(SupGainResult {
        kind,
        sup_a: lo,
        tolerance_limited: best.tolerance_limited,
        certificate: Some(best),
        bisection_width: hi - lo,
        inapplicable: false,
        diagnostic: None,
    })
}

/// Largest rate `χ` at gain `a`, with the `P` that attains it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxChi {
    pub chi: f64,
    pub p: SymMatrix,
    pub tolerance_limited: bool,
}

/// Under [`SearchMode::Auto`] a gain with no strict certificate is retried
/// with relaxed tolerance.
pub fn max_chi(model: &MomentModel, kind: CriterionKind, a: f64, opts: &SearchOptions) -> Result<MaxChi> {
    match opts.mode {
        SearchMode::Strict => max_chi_with(model, kind, a, opts, ToleranceMode::Strict),
        SearchMode::Relaxed => max_chi_with(model, kind, a, opts, ToleranceMode::Relaxed),
        SearchMode::Auto => match max_chi_with(model, kind, a, opts, ToleranceMode::Strict) {
            Err(Error::GainTooLarge { .. }) => max_chi_with(model, kind, a, opts, ToleranceMode::Relaxed),
            other => other,
        },
    }
}

fn max_chi_with(
    model: &MomentModel,
    kind: CriterionKind,
    a: f64,
    opts: &SearchOptions,
    mode: ToleranceMode,
) -> Result<MaxChi> {
    match kind {
        CriterionKind::Corollary2 => {
            let lambda = corollary_lambda(model, a);
            let limit = match mode {
                ToleranceMode::Strict => 0.0,
                ToleranceMode::Relaxed => opts.solver.relaxed_tol,
            };
            if lambda > limit || (mode == ToleranceMode::Strict && lambda == 0.0) {
                return Err(Error::GainTooLarge { gain: a });
            }
            let chi = (-lambda).max(0.0);
            Ok(MaxChi {
                chi,
                p: SymMatrix::identity(model.dim()),
                tolerance_limited: chi <= opts.solver.eps_margin,
            })
        }
        CriterionKind::Theorem1 => {
            let solver = opts.solver.with_mode(mode);
            let solve = |chi: f64| -> Result<Option<GainCertificate>> {
                let problem = LmiProblem::new(model, a, chi)?;
                Ok(solve_feasibility(&problem, &solver)?.into_certificate())
            };
            let mut best = solve(opts.tol_chi)?.ok_or(Error::GainTooLarge { gain: a })?;
            let (mut lo, mut hi) = (opts.tol_chi, 1.0 / a);
            while hi - lo > opts.tol_chi {
                let mid = 0.5 * (lo + hi);
                match solve(mid)? {
                    Some(c) => {
                        lo = mid;
                        best = c;
                    }
                    None => hi = mid,
                }
            }
            Ok(MaxChi { chi: best.chi, tolerance_limited: best.tolerance_limited, p: best.p })
        }
        _ => Err(Error::InvalidProblem(format!("{kind} has no rate to maximize"))),
    }
}

/// Asymptotic mean-squared error bound for a certified `(a, χ, P)`.
///
/// * `theorem1`: `a σ² tr(P Σ) / (χ λ_min(P))`
/// * `corollary2`: the same with `P = I`, i.e. `a σ² tr(Σ) / χ`
/// * `zhu_criterion`: the small-gain bound `a σ² tr(Σ) / (2 λ_min(Σ))`
///
/// A zero denominator gives `f64::INFINITY`.
pub fn asymptotic_bound(
    kind: CriterionKind,
    a: f64,
    chi: f64,
    p: &SymMatrix,
    sigma: &SymMatrix,
    sigma_eps: f64,
) -> Result<f64> {
    let noise = a * sigma_eps * sigma_eps;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    match kind {
        CriterionKind::Theorem1 => Ok(ratio(noise * p.inner(sigma), chi * p.lambda_min())),
        CriterionKind::Corollary2 => Ok(ratio(noise * sigma.trace(), chi)),
        CriterionKind::ZhuCriterion => {
            let (lmin, _) = covariance_extremes(sigma);
            Ok(ratio(noise * sigma.trace(), 2.0 * lmin))
        }
        _ => Err(Error::InvalidProblem(format!("{kind} has no error bound"))),
    }
}

/// Finite-iteration bound
/// `Π_k = q^k V₀ / λ_min(P) + (1 - q^k) a σ² tr(PΣ) / (χ λ_min(P))`,
/// `q = 1 - aχ`.
pub fn finite_k_bound(
    a: f64,
    chi: f64,
    p: &SymMatrix,
    sigma: &SymMatrix,
    sigma_eps: f64,
    initial_v: f64,
    k: u64,
) -> Result<f64> {
    Ok(ErrorBound::new(CriterionKind::Theorem1, a, chi, p.clone(), sigma, sigma_eps, initial_v)?.pi_k(k))
}

/// The sequence `Π_k` for one certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBound {
    pub kind: CriterionKind,
    pub a: f64,
    pub chi: f64,
    pub p: SymMatrix,
    /// `E[V(θ̃₀)] = tr(P E[θ̃₀ θ̃₀^T])`.
    pub initial_v: f64,
    pub lambda_min_p: f64,
    pub trace_p_sigma: f64,
    pub sigma_eps: f64,
    pub pi_inf: f64,
}

impl ErrorBound {
    pub fn new(
        kind: CriterionKind,
        a: f64,
        chi: f64,
        p: SymMatrix,
        sigma: &SymMatrix,
        sigma_eps: f64,
        initial_v: f64,
    ) -> Result<Self> {
        let rate = a * chi;
        if !(rate > 0.0 && rate < 2.0) {
            return Err(Error::InvalidRate(rate));
        }
        let lambda_min_p = p.lambda_min();
        let trace_p_sigma = p.inner(sigma);
        let pi_inf = a * sigma_eps * sigma_eps * trace_p_sigma / (chi * lambda_min_p);
        Ok(Self { kind, a, chi, p, initial_v, lambda_min_p, trace_p_sigma, sigma_eps, pi_inf })
    }

    /// Builds the bound from a certificate; `error_second_moment` is
    /// `E[θ̃₀ θ̃₀^T]`.
    pub fn from_certificate(
        kind: CriterionKind,
        cert: &GainCertificate,
        sigma: &SymMatrix,
        sigma_eps: f64,
        error_second_moment: &SymMatrix,
    ) -> Result<Self> {
        let initial_v = cert.p.inner(error_second_moment);
        Self::new(kind, cert.a, cert.chi, cert.p.clone(), sigma, sigma_eps, initial_v)
    }

    pub fn contraction(&self) -> f64 {
        1.0 - self.a * self.chi
    }

    pub fn pi_k(&self, k: u64) -> f64 {
        let qk = match i32::try_from(k) {
            Ok(k) => self.contraction().powi(k),
            Err(_) => self.contraction().powf(k as f64),
        };
        qk * self.initial_v / self.lambda_min_p + (1.0 - qk) * self.pi_inf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::check_certificate;
    use crate::moments::{explicit_moment_model, gaussian_moment_model, GaussianSpec};
    use approx::assert_relative_eq;

    fn example(s1: f64, s2: f64, rho: f64) -> MomentModel {
        gaussian_moment_model(&GaussianSpec::bivariate(s1, s2, rho).unwrap()).unwrap()
    }

    #[test]
    fn criterion_names_round_trip() {
        for k in CriterionKind::ALL {
            assert_eq!(k.name().parse::<CriterionKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("nope".parse::<CriterionKind>().is_err());
    }

    #[test]
    fn identity_moments_corollary() {
        let m = explicit_moment_model(SymMatrix::identity(2), SymMatrix::identity(2)).unwrap();
        let r = sup_gain(&m, CriterionKind::Corollary2, &SearchOptions::default()).unwrap();
        assert!((r.sup_a - 2.0).abs() <= 2e-5);
        let c = r.certificate.unwrap();
        assert!(check_certificate(&m, &c, 1e-8).unwrap().feasible);
    }

    #[test]
    fn theorem_on_explicit_model_is_unsupported() {
        let m = explicit_moment_model(SymMatrix::identity(2), SymMatrix::identity(2)).unwrap();
        let err = sup_gain(&m, CriterionKind::Theorem1, &SearchOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedOperator(_)));
    }

    #[test]
    fn corollary_max_chi_closed_forms() {
        let opts = SearchOptions::default();
        let r = max_chi(&example(1.0, 1.0, 0.0), CriterionKind::Corollary2, 0.4999, &opts).unwrap();
        assert_relative_eq!(r.chi, 0.0004, max_relative = 1e-9);
        let r = max_chi(&example(1.0, 2.0, 0.0), CriterionKind::Corollary2, 0.1537, &opts).unwrap();
        assert_relative_eq!(r.chi, 8.0 - 52.0 * 0.1537, max_relative = 1e-9);
        let r = max_chi(&example(1.0, 1.0, 0.5), CriterionKind::Corollary2, 0.3999, &opts).unwrap();
        assert_relative_eq!(r.chi, 0.00075, max_relative = 1e-9);
    }

    #[test]
    fn corollary_max_chi_too_large() {
        let err = max_chi(&example(1.0, 1.0, 0.0), CriterionKind::Corollary2, 0.6, &SearchOptions::default());
        assert!(matches!(err, Err(Error::GainTooLarge { .. })));
    }

    #[test]
    fn asymptotic_bounds_example_1a() {
        let sigma = SymMatrix::identity(2);
        let i = SymMatrix::identity(2);
        let b = asymptotic_bound(CriterionKind::Corollary2, 0.4999, 0.0004, &i, &sigma, 0.1).unwrap();
        assert_relative_eq!(b, 24.995, max_relative = 1e-9);
        let b = asymptotic_bound(CriterionKind::ZhuCriterion, 0.4999, 0.0, &i, &sigma, 0.1).unwrap();
        assert_relative_eq!(b, 0.004999, max_relative = 1e-9);
    }

    #[test]
    fn asymptotic_bounds_singular_are_infinite() {
        let sigma = SymMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let i = SymMatrix::identity(2);
        assert_eq!(asymptotic_bound(CriterionKind::Corollary2, 0.3332, 0.0, &i, &sigma, 0.1).unwrap(), f64::INFINITY);
        assert_eq!(asymptotic_bound(CriterionKind::ZhuCriterion, 0.3332, 0.0, &i, &sigma, 0.1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn asymptotic_bound_scale_invariant() {
        let sigma = SymMatrix::from_rows(&[[1.0, 0.3], [0.3, 2.0]]).unwrap();
        let p = SymMatrix::from_rows(&[[1.5, 0.2], [0.2, 1.0]]).unwrap();
        let b1 = asymptotic_bound(CriterionKind::Theorem1, 0.1, 0.5, &p, &sigma, 0.1).unwrap();
        let b2 = asymptotic_bound(CriterionKind::Theorem1, 0.1, 0.5, &p.scale(7.3), &sigma, 0.1).unwrap();
        assert_relative_eq!(b1, b2, max_relative = 1e-12);
        // P = I reduces to the corollary form.
        let b3 = asymptotic_bound(CriterionKind::Theorem1, 0.1, 0.5, &SymMatrix::identity(2), &sigma, 0.1).unwrap();
        let b4 = asymptotic_bound(CriterionKind::Corollary2, 0.1, 0.5, &p, &sigma, 0.1).unwrap();
        assert_relative_eq!(b3, b4, max_relative = 1e-12);
    }

    #[test]
    fn finite_k_bound_values() {
        let i = SymMatrix::identity(2);
        assert_eq!(finite_k_bound(0.1, 1.0, &i, &i, 0.1, 3.0, 0).unwrap(), 3.0);
        let b1 = finite_k_bound(0.1, 1.0, &i, &i, 0.1, 3.0, 1).unwrap();
        assert_relative_eq!(b1, 2.7002, max_relative = 1e-12);
        let err = finite_k_bound(1.0, 2.5, &i, &i, 0.1, 3.0, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidRate(_)));
    }

    #[test]
    fn finite_k_bound_converges_geometrically() {
        let sigma = SymMatrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let p = SymMatrix::from_rows(&[[2.0, 0.1], [0.1, 1.0]]).unwrap();
        let b = ErrorBound::new(CriterionKind::Theorem1, 0.3, 0.2, p.clone(), &sigma, 0.1, 4.0).unwrap();
        let inf = asymptotic_bound(CriterionKind::Theorem1, 0.3, 0.2, &p, &sigma, 0.1).unwrap();
        assert_relative_eq!(b.pi_inf, inf, max_relative = 1e-12);
        assert_relative_eq!(b.pi_k(1_000_000), inf, max_relative = 1e-12);
        let d0 = b.pi_k(0) - inf;
        for k in [1u64, 5, 50, 200] {
            let dk = b.pi_k(k) - inf;
            assert_relative_eq!(dk.abs(), b.contraction().powi(k as i32) * d0.abs(), max_relative = 1e-9);
            assert!(b.pi_k(k) <= b.pi_k(k - 1));
        }
    }
    fn sups(m: &MomentModel) -> Vec<f64> {
        CriterionKind::ALL
            .into_iter()
            .map(|k| sup_gain(m, k, &SearchOptions::default()).unwrap().sup_a)
            .collect()
    }

    #[test]
    fn sup_gains_example_1a() {
        let got = sups(&example(1.0, 1.0, 0.0));
        for (g, want) in got.iter().zip([0.5, 0.5, 2.0, 1.0, 2.0]) {
            assert!((g - want).abs() < 1e-4, "{got:?}");
        }
    }

    #[test]
    fn sup_gains_example_1b() {
        let got = sups(&example(1.0, 2.0, 0.0));
        for (g, want) in got.iter().zip([0.1610, 0.1538, 0.5, 0.4, 0.125]) {
            assert!((g - want).abs() < 5e-4, "{got:?}");
        }
    }

    #[test]
    fn certificates_verify_below_sup() {
        let m = example(1.0, 1.0, 0.5);
        for kind in [CriterionKind::Theorem1, CriterionKind::Corollary2] {
            let r = sup_gain(&m, kind, &SearchOptions::default()).unwrap();
            let c = r.certificate.as_ref().unwrap();
            assert_eq!(c.a, r.sup_a);
            assert!(r.bisection_width <= 1e-8);
            assert!(check_certificate(&m, c, 1e-8).unwrap().feasible, "{kind}");
            assert!(!r.tolerance_limited);
        }
    }

    #[test]
    fn singular_covariance_modes() {
        let m = example(1.0, 1.0, 1.0);
        let strict = SearchOptions { mode: SearchMode::Strict, ..Default::default() };
        for kind in [CriterionKind::Theorem1, CriterionKind::Corollary2] {
            let r = sup_gain(&m, kind, &strict).unwrap();
            assert!(r.certificate.is_none());
            assert!(r.diagnostic.is_some());
            let r = sup_gain(&m, kind, &SearchOptions::default()).unwrap();
            assert!((r.sup_a - 1.0 / 3.0).abs() < 5e-3, "{kind} {}", r.sup_a);
            assert!(r.tolerance_limited);
        }
        let z = sup_gain(&m, CriterionKind::ZhuCriterion, &SearchOptions::default()).unwrap();
        assert_eq!(z.sup_a, 0.0);
        assert!(z.inapplicable);
    }

    #[test]
    fn theorem_max_chi_beats_corollary() {
        let m = example(1.0, 2.0, 0.0);
        let opts = SearchOptions::default();
        let t = max_chi(&m, CriterionKind::Theorem1, 0.1537, &opts).unwrap();
        let c = max_chi(&m, CriterionKind::Corollary2, 0.1537, &opts).unwrap();
        assert!(t.chi >= c.chi - 1e-8);
    }
}
