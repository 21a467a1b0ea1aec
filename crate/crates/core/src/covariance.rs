//! Observed covariance estimation and the matrix utilities around it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrf::LabelMatrix;

/// Eigenvalues above this (negative) floor are treated as PSD noise.
pub const PSD_TOLERANCE: f64 = -1e-10;

/// Padding added to the SDD shift so dominance is strict.
pub const SDD_PAD: f64 = 1e-9;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Symmetric m × m covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovRepr", into = "CovRepr")]
pub struct CovarianceMatrix(DMatrix<f64>);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CovRepr {
    m: usize,
    values: Vec<Vec<f64>>,
}

impl TryFrom<CovRepr> for CovarianceMatrix {
    type Error = Error;

    fn try_from(r: CovRepr) -> Result<Self> {
        let values = linalg::serde_matrix::from_rows(&r.values).map_err(Error::Parse)?;
        if values.nrows() != r.m {
            return Err(Error::ShapeMismatch(format!(
                "declared m = {} but {} rows given",
                r.m,
                values.nrows()
            )));
        }
        CovarianceMatrix::new(values)
    }
}

impl From<CovarianceMatrix> for CovRepr {
    fn from(c: CovarianceMatrix) -> Self {
        CovRepr {
            m: c.m(),
            values: linalg::serde_matrix::to_rows(&c.0),
        }
    }
}

impl CovarianceMatrix {
    /// Validates squareness, finiteness and symmetry (within 1e-12).
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "covariance must be square, got {} x {}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite covariance entry".into()));
        }
        if !linalg::is_symmetric(&values, SYMMETRY_TOLERANCE) {
            return Err(Error::ShapeMismatch("covariance is not symmetric".into()));
        }
        let mut values = values;
        linalg::symmetrize_in_place(&mut values);
        Ok(CovarianceMatrix(values))
    }

    pub fn identity(m: usize) -> Self {
        CovarianceMatrix(DMatrix::identity(m, m))
    }

    pub fn m(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues with PSD noise clipped to zero; errors below the tolerance.
    pub fn psd_eigenvalues(&self) -> Result<DVector<f64>> {
        let (vals, _) = linalg::sym_eigen(&self.0);
        let min = vals.min();
        if min < PSD_TOLERANCE {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(vals.map(|v| v.max(0.0)))
    }

    pub fn spectral_norm(&self) -> f64 {
        linalg::sym_spectral_norm(&self.0)
    }
}

/// Sample covariance (1/n) Λ Λᵀ − v vᵀ and the per-source mean vote v.
pub fn empirical_covariance(labels: &LabelMatrix) -> Result<(CovarianceMatrix, DVector<f64>)> {
    let (m, n) = (labels.m(), labels.n());
    if n < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            got: n,
        });
    }
    // Integer accumulation keeps the cross products exact.
    let mut sums = vec![0i64; m];
    let mut cross = vec![0i64; m * m];
    for col in labels.columns() {
        for i in 0..m {
            let a = col[i] as i64;
            sums[i] += a;
            for j in i..m {
                cross[i * m + j] += a * col[j] as i64;
            }
        }
    }
    let nf = n as f64;
    let mean = DVector::from_iterator(m, sums.iter().map(|&s| s as f64 / nf));
    let cov = DMatrix::from_fn(m, m, |i, j| {
        let (a, b) = (i.min(j), i.max(j));
        cross[a * m + b] as f64 / nf - mean[a] * mean[b]
    });
    Ok((CovarianceMatrix(cov), mean))
}

/// tr(A) / ‖A‖ for a PSD matrix.
pub fn effective_rank(a: &CovarianceMatrix) -> Result<f64> {
    let vals = a.psd_eigenvalues()?;
    let largest = vals.max();
    if largest <= 0.0 {
        return Err(Error::UndefinedEffectiveRank);
    }
    Ok(vals.sum() / largest)
}

/// Adds ν·I so the matrix becomes strictly diagonally dominant.
///
/// ν = max(0, max_i(Σ_{j≠i}|A_ij| − A_ii)) + [`SDD_PAD`]. Off-diagonal
/// entries are left untouched.
pub fn sdd_shift(a: &CovarianceMatrix) -> (CovarianceMatrix, f64) {
    let m = a.m();
    let v = a.values();
    let deficit = (0..m)
        .map(|i| {
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| v[(i, j)].abs()).sum();
            off - v[(i, i)]
        })
        .fold(0.0f64, f64::max);
    let nu = deficit + SDD_PAD;
    let mut shifted = v.clone();
    for i in 0..m {
        shifted[(i, i)] += nu;
    }
    (CovarianceMatrix(shifted), nu)
}

/// (A + ridge·I)⁻¹ via the symmetric eigendecomposition.
pub fn invert_psd(a: &CovarianceMatrix, ridge: f64) -> Result<CovarianceMatrix> {
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::InvalidParameter(format!("ridge must be >= 0, got {ridge}")));
    }
    let m = a.m();
    let shifted = a.values() + DMatrix::identity(m, m) * ridge;
    let (vals, _) = linalg::sym_eigen(&shifted);
    let min = vals.min();
    if min <= 1e-10 {
        return Err(Error::SingularMatrix {
            min_eigenvalue: min,
        });
    }
    Ok(CovarianceMatrix(linalg::spectral_map(&shifted, |x| 1.0 / x)))
}
