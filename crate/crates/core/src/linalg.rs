//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Q · diag(f(λ)) · Qᵀ for a symmetric matrix.
pub fn spectral_map(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let q = &eig.eigenvectors;
    let d = eig.eigenvalues.map(f);
    let mut out = q * DMatrix::from_diagonal(&d) * q.transpose();
    symmetrize_in_place(&mut out);
    out
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn symmetrize_in_place(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Inverse of a symmetric positive definite matrix; `None` if not PD.
pub fn sym_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = symmetrize(a).cholesky()?;
    let mut inv = chol.inverse();
    symmetrize_in_place(&mut inv);
    Some(inv)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.clone().singular_values().max()
}

/// Spectral norm of a symmetric matrix via its eigenvalues.
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.amax()
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol
}

/// Serde adapter: matrices as nested row arrays.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let n = rows.len();
        let c = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != c) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Serde adapter: vectors as flat arrays.
pub mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
