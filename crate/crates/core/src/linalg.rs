//! Small dense linear-algebra helpers shared by the model, estimator and
//! design code. Everything here works on `nalgebra` dynamic matrices; the
//! problem sizes are tiny (2×2 and 3×3 in the shipped model).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Canonical basis of the symmetric h×h matrices.
///
/// Parameter `k` maps to the upper-triangle entry `(i, j)` enumerated row by
/// row, and its basis matrix is `E_ij + E_ji` (or `E_ii` on the diagonal).
/// For h = 2 this gives θ = (Q11, Q12, Q22).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymBasis {
    dim: usize,
    entries: Vec<(usize, usize)>,
}

impl SymBasis {
    pub fn new(dim: usize) -> Self {
        let mut entries = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                entries.push((i, j));
            }
        }
        Self { dim, entries }
    }

    /// Side length h of the matrices.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of basis elements, h(h+1)/2.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, k: usize) -> (usize, usize) {
        self.entries[k]
    }

    /// Index pairs (p, q) such that `E_k = Σ e_p e_qᵀ`.
    fn terms(&self, k: usize) -> ([(usize, usize); 2], usize) {
        let (i, j) = self.entries[k];
        if i == j {
            ([(i, i), (i, i)], 1)
        } else {
            ([(i, j), (j, i)], 2)
        }
    }

    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        let (i, j) = self.entries[k];
        let mut e = DMatrix::zeros(self.dim, self.dim);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    }

    /// Symmetric matrix `Σ θ_k E_k`.
    pub fn assemble(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.dim, self.dim);
        for (k, &(i, j)) in self.entries.iter().enumerate() {
            q[(i, j)] = theta[k];
            q[(j, i)] = theta[k];
        }
        q
    }

    /// Inverse of [`assemble`](Self::assemble): reads the upper triangle.
    pub fn flatten(&self, q: &DMatrix<f64>) -> Vec<f64> {
        self.entries.iter().map(|&(i, j)| q[(i, j)]).collect()
    }

    /// tr(A E_k)
    pub fn trace_with(&self, a: &DMatrix<f64>, k: usize) -> f64 {
        let (t, n) = self.terms(k);
        t[..n].iter().map(|&(p, q)| a[(q, p)]).sum()
    }

    /// xᵀ E_k y
    pub fn bilinear(&self, x: &[f64], k: usize, y: &[f64]) -> f64 {
        let (t, n) = self.terms(k);
        t[..n].iter().map(|&(p, q)| x[p] * y[q]).sum()
    }

    /// tr(A E_k B E_l)
    pub fn sandwich_trace(&self, a: &DMatrix<f64>, k: usize, b: &DMatrix<f64>, l: usize) -> f64 {
        let (tk, nk) = self.terms(k);
        let (tl, nl) = self.terms(l);
        let mut acc = 0.0;
        for &(p, q) in &tk[..nk] {
            for &(r, s) in &tl[..nl] {
                acc += a[(s, p)] * b[(q, r)];
            }
        }
        acc
    }

    /// xᵀ E_k A E_l y
    pub fn sandwich_bilinear(&self, x: &[f64], k: usize, a: &DMatrix<f64>, l: usize, y: &[f64]) -> f64 {
        let (tk, nk) = self.terms(k);
        let (tl, nl) = self.terms(l);
        let mut acc = 0.0;
        for &(p, q) in &tk[..nk] {
            for &(r, s) in &tl[..nl] {
                acc += x[p] * a[(q, r)] * y[s];
            }
        }
        acc
    }
}

pub fn is_square(a: &DMatrix<f64>) -> bool {
    a.nrows() == a.ncols()
}

/// Symmetric up to an absolute-plus-relative tolerance.
pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if !is_square(a) {
        return false;
    }
    let scale = a.amax().max(1.0);
    (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol * scale))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::NAN)
}

pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    is_symmetric(a, 1e-12) && a.clone().cholesky().is_some()
}

/// Leading principal minors det(A[..k, ..k]) for k = 1..=dim.
pub fn leading_minors(a: &DMatrix<f64>) -> Vec<f64> {
    (1..=a.nrows())
        .map(|k| a.view((0, 0), (k, k)).clone_owned().determinant())
        .collect()
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn quad_form(x: &DVector<f64>, a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(a * y))
}

/// Serde adapter storing a matrix as a row-major array of arrays.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
            return Err(format!("row {bad} has {} entries, expected {ncols}", rows[bad].len()));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}
