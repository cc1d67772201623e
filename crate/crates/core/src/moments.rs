//! Second moments `Σ = E[h h^T]` and the fourth-moment operator
//! `F(P) = E[h h^T P h h^T]` of the regressor.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{is_psd, SymMatrix};

/// Absolute slack (scaled by `max(1, ‖Σ‖_F)`) allowed on `λ_min(Σ)`.
const COVARIANCE_PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Gaussian,
    Explicit,
    Empirical,
}

#[derive(Debug, Clone)]
enum FourthMoment {
    /// Zero-mean Gaussian: `F(P) = 2 Σ P Σ + Σ tr(P Σ)`.
    Gaussian,
    /// Only `F(I)` is known.
    Explicit,
    /// Sample average over the rows.
    Empirical(DataMatrix),
}

/// Moment description of the regressor `h`.
#[derive(Debug, Clone)]
pub struct MomentModel {
    sigma: SymMatrix,
    m4: SymMatrix,
    fourth: FourthMoment,
}

impl MomentModel {
    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    /// `Σ = E[h h^T]`.
    pub fn second_moment(&self) -> &SymMatrix {
        &self.sigma
    }

    /// `E[h h^T h h^T] = F(I)`.
    pub fn m4(&self) -> &SymMatrix {
        &self.m4
    }

    pub fn provenance(&self) -> Provenance {
        match self.fourth {
            FourthMoment::Gaussian => Provenance::Gaussian,
            FourthMoment::Explicit => Provenance::Explicit,
            FourthMoment::Empirical(_) => Provenance::Empirical,
        }
    }

    /// Whether `F(P)` can be evaluated for arbitrary symmetric `P`.
    pub fn supports_general_operator(&self) -> bool {
        !matches!(self.fourth, FourthMoment::Explicit)
    }

    /// Evaluates `F(P) = E[h h^T P h h^T]`.
    pub fn fourth_operator(&self, p: &SymMatrix) -> Result<SymMatrix> {
        if p.dim() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), got: p.dim() });
        }
        match &self.fourth {
            FourthMoment::Gaussian => Ok(gaussian_fourth(&self.sigma, p)),
            FourthMoment::Explicit => match scalar_identity_factor(p) {
                Some(c) => Ok(self.m4.scale(c)),
                None => Err(Error::UnsupportedOperator(
                    "explicit moment matrices only determine F(P) for P proportional to I".into(),
                )),
            },
            FourthMoment::Empirical(data) => Ok(empirical_fourth(data, p)),
        }
    }
}

fn gaussian_fourth(sigma: &SymMatrix, p: &SymMatrix) -> SymMatrix {
    let tr = p.inner(sigma);
    sigma.sandwich(p).scale(2.0).add_scaled(tr, sigma)
}

fn scalar_identity_factor(p: &SymMatrix) -> Option<f64> {
    let c = p.get(0, 0);
    let n = p.dim();
    for i in 0..n {
        for j in 0..n {
            let expected = if i == j { c } else { 0.0 };
            if p.get(i, j) != expected {
                return None;
            }
        }
    }
    Some(c)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `(1/n) Σ_k w_k h_k h_k^T` over the rows of `data`, with weights from
/// `weight`. Only the upper triangle is accumulated.
fn weighted_outer_mean(data: &DataMatrix, weight: impl Fn(&[f64]) -> f64) -> SymMatrix {
    let m = data.dim();
    let mut acc = vec![CompensatedSum::default(); m * m];
    for h in data.iter_rows() {
        let w = weight(h);
        for i in 0..m {
            let whi = w * h[i];
            for j in i..m {
                acc[i * m + j].add(whi * h[j]);
            }
        }
    }
    let n = data.n_rows() as f64;
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let v = acc[i * m + j].value() / n;
            out[i * m + j] = v;
            out[j * m + i] = v;
        }
    }
    SymMatrix::new(m, out).expect("finite data gives finite moments")
}

fn empirical_fourth(data: &DataMatrix, p: &SymMatrix) -> SymMatrix {
    weighted_outer_mean(data, |h| p.quad_form(h))
}

/// Zero-mean Gaussian regressor law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianSpec {
    pub covariance: SymMatrix,
}

impl GaussianSpec {
    pub fn new(covariance: SymMatrix) -> Self {
        Self { covariance }
    }

    /// Two-dimensional law with standard deviations `sigma1`, `sigma2` and
    /// correlation `rho`.
    pub fn bivariate(sigma1: f64, sigma2: f64, rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidCovariance { min_eigenvalue: f64::NAN });
        }
        let c = rho * sigma1 * sigma2;
        let cov = SymMatrix::from_rows(&[[sigma1 * sigma1, c], [c, sigma2 * sigma2]])?;
        Ok(Self::new(cov))
    }
}

fn check_covariance(sigma: &SymMatrix) -> Result<()> {
    let tol = COVARIANCE_PSD_TOL * sigma.frobenius_norm().max(1.0);
    let check = is_psd(sigma, tol);
    if !check.psd {
        return Err(Error::InvalidCovariance { min_eigenvalue: check.min_eigenvalue });
    }
    Ok(())
}

pub fn gaussian_moment_model(spec: &GaussianSpec) -> Result<MomentModel> {
    let sigma = spec.covariance.clone();
    check_covariance(&sigma)?;
    let m4 = gaussian_fourth(&sigma, &SymMatrix::identity(sigma.dim()));
    Ok(MomentModel { sigma, m4, fourth: FourthMoment::Gaussian })
}

/// A model known only through `Σ` and `E[h h^T h h^T]`.
pub fn explicit_moment_model(sigma: SymMatrix, m4: SymMatrix) -> Result<MomentModel> {
    if sigma.dim() != m4.dim() {
        return Err(Error::DimMismatch { expected: sigma.dim(), got: m4.dim() });
    }
    check_covariance(&sigma)?;
    let tol = COVARIANCE_PSD_TOL * m4.frobenius_norm().max(1.0);
    let check = is_psd(&m4, tol);
    if !check.psd {
        return Err(Error::InvalidMatrix(format!(
            "fourth-moment matrix has eigenvalue {:e}",
            check.min_eigenvalue
        )));
    }
    Ok(MomentModel { sigma, m4, fourth: FourthMoment::Explicit })
}

/// Sample-average moments over the rows of `data`.
pub fn empirical_moment_model(data: &DataMatrix) -> Result<MomentModel> {
    if data.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let sigma = weighted_outer_mean(data, |_| 1.0);
    let m4 = weighted_outer_mean(data, |h| h.iter().map(|x| x * x).sum());
    Ok(MomentModel { sigma, m4, fourth: FourthMoment::Empirical(data.clone()) })
}

/// Design vectors `h_k` (one per row), optionally paired with responses `z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    dim: usize,
    rows: Vec<f64>,
    responses: Option<Vec<f64>>,
}

impl DataMatrix {
    pub fn new(dim: usize, rows: Vec<f64>, responses: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMatrix("design vectors need at least one entry".into()));
        }
        if rows.is_empty() {
            return Err(Error::EmptyData);
        }
        if rows.len() % dim != 0 {
            return Err(Error::DimMismatch { expected: dim, got: rows.len() % dim });
        }
        let n = rows.len() / dim;
        if let Some(z) = &responses {
            if z.len() != n {
                return Err(Error::DimMismatch { expected: n, got: z.len() });
            }
        }
        let all_finite = rows.iter().chain(responses.iter().flatten()).all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidMatrix("data contains non-finite values".into()));
        }
        Ok(Self { dim, rows, responses })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], responses: Option<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(Error::EmptyData)?;
        let mut flat = Vec::with_capacity(dim * rows.len());
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: r.len() });
            }
            flat.extend_from_slice(r);
        }
        Self::new(dim, flat, responses)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks(self.dim)
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }
}
