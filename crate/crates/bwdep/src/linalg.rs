//! Spectral primitives for symmetric matrices: eigendecomposition, SPD matrix
//! powers, the squared Bures-Wasserstein distance, and majorization checks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Negative eigenvalues above this magnitude are treated as rank deficiency
/// and clamped to zero; anything more negative is an indefinite input.
pub(crate) const NEG_EIG_TOL: f64 = 1e-10;

/// Smallest eigenvalue allowed when taking negative matrix powers.
pub(crate) const INV_EIG_TOL: f64 = 1e-12;

/// A symmetric matrix whose storage guarantees `m[(i, j)] == m[(j, i)]`
/// bit-exactly: only the upper triangle is ever written, the lower triangle
/// is mirrored from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    /// Build from a function of (row, col); only `i <= j` is evaluated.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Input("matrix order must be at least 1".into()));
        }
        let mut data = DMatrix::zeros(order, order);
        for i in 0..order {
            for j in i..order {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        let m = SymMatrix { data };
        m.check_finite()?;
        Ok(m)
    }

    /// Accept a dense matrix that is symmetric up to roundoff and symmetrize
    /// it exactly. Grossly asymmetric inputs are rejected.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Input(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = 1.0 + m.amax();
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if worst > 1e-8 * scale {
            return Err(Error::Input(format!(
                "matrix is not symmetric: max |A - A^T| = {worst:.3e}"
            )));
        }
        Self::from_fn(m.nrows(), |i, j| {
            if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)])
            }
        })
    }

    pub fn identity(order: usize) -> Self {
        SymMatrix {
            data: DMatrix::identity(order, order),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::from_fn(diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn order(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.amax()
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Input("matrix has non-finite entries".into()))
        }
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order and a deterministic sign convention for eigenvectors:
/// the entry of largest magnitude in each column is positive.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    /// U f(Lambda) U^T, symmetrized exactly.
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let q = self.eigenvalues.len();
        let u = &self.eigenvectors;
        let vals: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut scaled = u.clone();
        for (j, &v) in vals.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        let m = &scaled * u.transpose();
        SymMatrix::from_fn(q, |i, j| {
            if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)])
            }
        })
        .expect("recomposition is finite")
    }
}

/// Full symmetric eigendecomposition.
pub fn sym_eigen(s: &SymMatrix) -> Result<Spectrum> {
    s.check_finite()?;
    let q = s.order();
    let eig = nalgebra::SymmetricEigen::try_new(s.data.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "symmetric eigensolver did not converge (order {q}, max |entry| {:.3e})",
                s.max_abs()
            ))
        })?;
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let mut eigenvalues = Vec::with_capacity(q);
    let mut eigenvectors = DMatrix::zeros(q, q);
    for (new, &old) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[old]);
        let col = eig.eigenvectors.column(old);
        // index of the entry with the largest magnitude, first occurrence wins
        let mut arg = 0;
        for i in 1..q {
            if col[i].abs() > col[arg].abs() {
                arg = i;
            }
        }
        let sign = if col[arg] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..q {
            eigenvectors[(i, new)] = sign * col[i];
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Clamp an eigenvalue list of a PSD matrix: negatives within `NEG_EIG_TOL`
/// and positives below roundoff level become exact zeros, anything more
/// negative is an error.
pub(crate) fn clamp_psd_eigenvalues(vals: &mut [f64], context: &str) -> Result<()> {
    let max = vals.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    let rel = max * 1e-13 * (vals.len() as f64).max(1.0);
    for v in vals.iter_mut() {
        if *v < -NEG_EIG_TOL {
            return Err(Error::Numerical(format!(
                "{context}: eigenvalue {v:.6e} below the PSD tolerance -{NEG_EIG_TOL:e}"
            )));
        }
        if *v <= rel {
            *v = 0.0;
        }
    }
    Ok(())
}

/// S^alpha for positive semi-definite S via the spectral route.
///
/// Eigenvalues in [-1e-10, 0] are clamped to zero before fractional powers;
/// more negative ones raise an error. Negative powers require the smallest
/// eigenvalue to exceed 1e-12.
pub fn spd_power(s: &SymMatrix, alpha: f64) -> Result<SymMatrix> {
    let spec = sym_eigen(s)?;
    let mut vals = spec.eigenvalues.clone();
    if alpha < 0.0 {
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= INV_EIG_TOL {
            return Err(Error::Singular(format!(
                "matrix power {alpha} requires eigenvalues > {INV_EIG_TOL:e}, smallest is {min:.6e}"
            )));
        }
    } else {
        clamp_psd_eigenvalues(&mut vals, "spd_power")?;
    }
    let powered = Spectrum {
        eigenvalues: vals,
        eigenvectors: spec.eigenvectors,
    };
    Ok(powered.recompose_with(|l| if l == 0.0 { 0.0 } else { l.powf(alpha) }))
}

/// Squared Bures-Wasserstein distance
/// tr(A) + tr(B) - 2 tr{(A^{1/2} B A^{1/2})^{1/2}} between PSD matrices.
pub fn bures_sq(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.order() != b.order() {
        return Err(Error::Input(format!(
            "dimension mismatch: {} vs {}",
            a.order(),
            b.order()
        )));
    }
    let a12 = spd_power(a, 0.5)?;
    let inner = a12.as_matrix() * b.as_matrix() * a12.as_matrix();
    let inner = SymMatrix::from_fn(a.order(), |i, j| {
        if i == j {
            inner[(i, i)]
        } else {
            0.5 * (inner[(i, j)] + inner[(j, i)])
        }
    })?;
    let mut vals = sym_eigen(&inner)?.eigenvalues;
    clamp_psd_eigenvalues(&mut vals, "bures_sq")?;
    let cross: f64 = vals.iter().map(|&l| l.sqrt()).sum();
    let d = a.trace() + b.trace() - 2.0 * cross;
    let scale = 1.0 + a.trace().abs() + b.trace().abs();
    if d < -1e-8 * scale {
        return Err(Error::Numerical(format!(
            "squared Bures distance came out negative ({d:.6e}); inputs are not PSD"
        )));
    }
    Ok(d.max(0.0))
}

/// Whether `y` majorizes `x`: all partial sums of the descending-sorted `y`
/// dominate those of `x` and the totals agree, with a 1e-9 relative
/// tolerance.
pub fn majorizes(x: &[f64], y: &[f64]) -> Result<bool> {
    if x.len() != y.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    ys.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let scale: f64 = 1.0 + xs.iter().map(|v| v.abs()).sum::<f64>().max(ys.iter().map(|v| v.abs()).sum());
    let tol = 1e-9 * scale;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for i in 0..xs.len() {
        sx += xs[i];
        sy += ys[i];
        if i + 1 < xs.len() && sx > sy + tol {
            return Ok(false);
        }
    }
    Ok((sx - sy).abs() <= tol)
}
