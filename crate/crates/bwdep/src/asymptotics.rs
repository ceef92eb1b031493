//! Asymptotic distribution of the plug-in dependence estimators: derivative
//! matrices of D1 and D2 and the resulting asymptotic variances.

use nalgebra::DMatrix;

use crate::coefficients::{d1_general, d2_general, INDEPENDENCE_TOL};
use crate::error::{Error, Result};
use crate::linalg::{spd_power, sym_eigen, Spectrum, SymMatrix};
use crate::structure::{block_diag_of_sym, build_rm_sym, canonical_sort_sym, GroupedCorrelation, Partition};

/// Within-block eigenvalue gaps below this threshold count as ties.
const TIE_GAP: f64 = 1e-10;

/// Per-block spectral machinery behind the derivative formulas: block
/// eigendecompositions and the diagonal scaling matrices built from padded
/// eigenvalue sums.
#[derive(Debug, Clone)]
pub struct SpectralPartition {
    /// Per-block eigendecompositions, canonical group order.
    pub spectra: Vec<Spectrum>,
    /// Diagonal entries of each Delta_i (length d_i).
    pub delta: Vec<Vec<f64>>,
    /// Diagonal entries of each Delta-tilde_i (length d_i).
    pub delta_tilde: Vec<Vec<f64>>,
    /// Diagonal entries of each D_i ratio matrix (length d_{i-1}), empty for
    /// the first block.
    pub d_ratio: Vec<Vec<f64>>,
    dims: Vec<usize>,
}

impl SpectralPartition {
    /// Eigenvalue segment `Lambda_{ii,j}` of block `i` (0-based `i`, `j`).
    pub fn lambda_segment(&self, i: usize, j: usize) -> &[f64] {
        let lo = if j == 0 { 0 } else { self.dims[j - 1] };
        let hi = self.dims[j];
        &self.spectra[i].eigenvalues[lo..hi]
    }
}

/// Build the per-block spectral machinery. Requires canonical group order
/// and, within each block, eigenvalues distinct enough that the diagonal
/// scalings are basis-independent: a tie is accepted only when the tied
/// positions receive identical scaling entries (which happens when every
/// block is tied at those positions simultaneously), and rejected otherwise.
pub fn spectral_partition(r: &GroupedCorrelation) -> Result<SpectralPartition> {
    if !r.partition().is_canonical() {
        return Err(Error::Input(format!(
            "group sizes must be non-decreasing, got ({})",
            r.partition().dims_string()
        )));
    }
    spectral_partition_sym(r.matrix(), r.partition())
}

pub(crate) fn spectral_partition_sym(
    m: &SymMatrix,
    p: &Partition,
) -> Result<SpectralPartition> {
    let k = p.k();
    let dims = p.dims().to_vec();
    let d_max = dims[k - 1];
    let mut spectra = Vec::with_capacity(k);
    // padded eigenvalues: lambda[i][j] = 0 for j >= d_i
    let mut lam = vec![vec![0.0f64; d_max]; k];
    for i in 0..k {
        let span = p.span(i);
        let block = SymMatrix::from_fn(span.len(), |a, b| m.get(span.start + a, span.start + b))?;
        let spec = sym_eigen(&block)?;
        for (j, &v) in spec.eigenvalues.iter().enumerate() {
            lam[i][j] = v;
        }
        spectra.push(spec);
    }
    // Delta / Delta-tilde recursions over segments [d_{i-1}, d_i)
    let mut delta: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut delta_tilde: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut d_ratio: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..k {
        let di = dims[i];
        let prev = if i == 0 { 0 } else { dims[i - 1] };
        let mut dv = vec![0.0; di];
        let mut tv = vec![0.0; di];
        let mut rv = vec![0.0; prev];
        for j in 0..prev {
            if lam[i - 1][j] <= 0.0 {
                return Err(Error::Singular(format!(
                    "block {} has a non-positive eigenvalue {:.6e}",
                    i - 1,
                    lam[i - 1][j]
                )));
            }
            rv[j] = lam[i][j] / lam[i - 1][j];
            dv[j] = delta[i - 1][j];
            tv[j] = delta_tilde[i - 1][j] * rv[j];
        }
        for j in prev..di {
            let sum: f64 = (i..k).map(|l| lam[l][j]).sum();
            let sum_sq: f64 = (i..k).map(|l| lam[l][j] * lam[l][j]).sum();
            if sum <= 0.0 || sum_sq <= 0.0 {
                return Err(Error::Singular(format!(
                    "padded eigenvalue sum vanished at position {j}"
                )));
            }
            dv[j] = sum.powf(-0.5);
            tv[j] = lam[i][j] / sum_sq.sqrt();
        }
        delta.push(dv);
        delta_tilde.push(tv);
        d_ratio.push(rv);
    }
    // tie policy: tied eigenvalues within a block are fine only when their
    // scaling entries agree, otherwise the construction is basis-dependent
    for i in 0..k {
        let vals = &spectra[i].eigenvalues;
        let scale = 1.0 + vals[0].abs();
        for a in 0..vals.len() {
            for b in (a + 1)..vals.len() {
                if (vals[a] - vals[b]).abs() <= TIE_GAP * scale {
                    let tol = 1e-8;
                    if (delta[i][a] - delta[i][b]).abs() > tol
                        || (delta_tilde[i][a] - delta_tilde[i][b]).abs() > tol
                    {
                        return Err(Error::TiedSpectrum(format!(
                            "block {i} has tied eigenvalues ({:.12} ~ {:.12}) whose derivative \
                             scalings differ; the asymptotic variance is not defined here",
                            vals[a], vals[b]
                        )));
                    }
                }
            }
        }
    }
    Ok(SpectralPartition {
        spectra,
        delta,
        delta_tilde,
        d_ratio,
        dims,
    })
}

/// The derivative matrices of D1 and D2 at `R` together with the shared
/// normalization constants.
#[derive(Debug, Clone)]
pub struct DerivativePair {
    pub j_matrix: SymMatrix,
    pub j0_matrix: SymMatrix,
    pub m1: SymMatrix,
    pub m2: SymMatrix,
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
}

fn block_diag_from(parts: &[DMatrix<f64>], p: &Partition) -> SymMatrix {
    SymMatrix::from_fn(p.total(), |i, j| {
        for (g, part) in parts.iter().enumerate() {
            let span = p.span(g);
            if span.contains(&i) {
                return if span.contains(&j) {
                    part[(i - span.start, j - span.start)]
                } else {
                    0.0
                };
            }
        }
        unreachable!()
    })
    .expect("finite entries")
}

/// J = R_0^{-1/2} (R_0^{1/2} R R_0^{1/2})^{1/2} R_0^{-1/2} and its inverse
/// J^{-1} = R_0^{1/2} (R_0^{1/2} R R_0^{1/2})^{-1/2} R_0^{1/2}, plus the
/// block-diagonal J_0.
pub(crate) fn j_matrices(
    m: &SymMatrix,
    p: &Partition,
) -> Result<(SymMatrix, SymMatrix, SymMatrix)> {
    let r0 = block_diag_of_sym(m, p);
    let r0_half = spd_power(&r0, 0.5)?;
    let r0_neg_half = spd_power(&r0, -0.5)?;
    let mid = SymMatrix::from_dense(&(r0_half.as_matrix() * m.as_matrix() * r0_half.as_matrix()))?;
    let mid_half = spd_power(&mid, 0.5)?;
    let mid_neg_half = spd_power(&mid, -0.5)?;
    let j = SymMatrix::from_dense(
        &(r0_neg_half.as_matrix() * mid_half.as_matrix() * r0_neg_half.as_matrix()),
    )?;
    let j_inv = SymMatrix::from_dense(
        &(r0_half.as_matrix() * mid_neg_half.as_matrix() * r0_half.as_matrix()),
    )?;
    let j0 = block_diag_of_sym(&j, p);
    Ok((j, j_inv, j0))
}

/// Assemble the Theorem-1 derivative matrices M1 and M2 at `R`, mapped back
/// to the original (uncanonicalized) variable order.
pub fn derivative_pair(r: &GroupedCorrelation) -> Result<DerivativePair> {
    if r.max_abs_between_groups() <= INDEPENDENCE_TOL {
        return Err(Error::Degenerate(
            "R equals its block diagonal: the limiting variance is zero at independence \
             and the derivative matrices are not defined"
                .into(),
        ));
    }
    let (mc, dims, _, var_perm) = canonical_sort_sym(r.matrix(), r.partition());
    let pc = Partition::new(dims)?;
    let q = pc.total();

    let spec_all = sym_eigen(&mc)?;
    let min_eig = *spec_all.eigenvalues.last().unwrap();
    if min_eig <= 1e-12 {
        return Err(Error::Singular(format!(
            "derivatives need a positive definite matrix (smallest eigenvalue {min_eig:.6e})"
        )));
    }

    let sp = spectral_partition_sym(&mc, &pc)?;
    let d1v = d1_general(&mc, &pc)?;
    let d2v = d2_general(&mc, &pc)?;

    let rm = build_rm_sym(&mc, &pc)?;
    let r0 = block_diag_of_sym(&mc, &pc);

    // C1 = sum_i tr(R_ii^{1/2}) - tr(R_m^{1/2})
    let mut block_root_traces = 0.0;
    for i in 0..pc.k() {
        for &l in &sp.spectra[i].eigenvalues {
            block_root_traces += l.max(0.0).sqrt();
        }
    }
    let rm_root_trace: f64 = {
        let mut vals = sym_eigen(&rm)?.eigenvalues;
        crate::linalg::clamp_psd_eigenvalues(&mut vals, "R_m spectrum")?;
        vals.iter().map(|v| v.sqrt()).sum()
    };
    let c1 = block_root_traces - rm_root_trace;

    // C2 = tr(R) - tr{(R_0^{1/2} R_m R_0^{1/2})^{1/2}}
    let r0_half = spd_power(&r0, 0.5)?;
    let conj = SymMatrix::from_dense(&(r0_half.as_matrix() * rm.as_matrix() * r0_half.as_matrix()))?;
    let conj_root_trace: f64 = {
        let mut vals = sym_eigen(&conj)?.eigenvalues;
        crate::linalg::clamp_psd_eigenvalues(&mut vals, "conjugated R_m spectrum")?;
        vals.iter().map(|v| v.sqrt()).sum()
    };
    let c2 = mc.trace() - conj_root_trace;

    if c1 <= 1e-12 || c2 <= 1e-12 {
        return Err(Error::Degenerate(format!(
            "normalization constants are not positive (C1 = {c1:.3e}, C2 = {c2:.3e})"
        )));
    }

    // Upsilon_1 / Upsilon_2: block-diagonal U_ii Delta_i U_ii^T
    let ups_blocks =
        |scalings: &[Vec<f64>]| -> Vec<DMatrix<f64>> {
            (0..pc.k())
                .map(|i| {
                    let u = &sp.spectra[i].eigenvectors;
                    let mut scaled = u.clone();
                    for (j, &v) in scalings[i].iter().enumerate() {
                        scaled.column_mut(j).scale_mut(v);
                    }
                    &scaled * u.transpose()
                })
                .collect()
        };
    let ups1 = block_diag_from(&ups_blocks(&sp.delta), &pc);
    let ups2 = block_diag_from(&ups_blocks(&sp.delta_tilde), &pc);

    let r_neg_half = spd_power(&mc, -0.5)?;
    let r0_neg_half = spd_power(&r0, -0.5)?;
    let (j, j_inv, j0) = j_matrices(&mc, &pc)?;

    let m1 = SymMatrix::from_fn(q, |a, b| {
        (-r_neg_half.get(a, b) + (1.0 - d1v) * r0_neg_half.get(a, b) + d1v * ups1.get(a, b))
            / (2.0 * c1)
    })?;
    let identity = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let m2 = SymMatrix::from_fn(q, |a, b| {
        (-0.5 * (j0.get(a, b) + j_inv.get(a, b)) + (1.0 - d2v) * identity(a, b)
            + d2v * ups2.get(a, b))
            / c2
    })?;

    // map back to the original variable order
    let unpermute = |m: &SymMatrix| -> SymMatrix {
        let mut inv = vec![0usize; q];
        for (new, &old) in var_perm.iter().enumerate() {
            inv[old] = new;
        }
        SymMatrix::from_fn(q, |a, b| m.get(inv[a], inv[b])).expect("finite entries")
    };

    Ok(DerivativePair {
        j_matrix: unpermute(&j),
        j0_matrix: unpermute(&j0),
        m1: unpermute(&m1),
        m2: unpermute(&m2),
        c1,
        c2,
        d1: d1v,
        d2: d2v,
    })
}

/// zeta_r^2 = 2 tr[{R (M_r - D_{M_r R})}^2] for a precomputed pair.
pub fn variance_from_pair(r: &GroupedCorrelation, pair: &DerivativePair, which: u8) -> f64 {
    let m = match which {
        1 => &pair.m1,
        _ => &pair.m2,
    };
    let q = r.order();
    let mr = m.as_matrix() * r.matrix().as_matrix();
    // A = R (M - D_{MR}) = R*M - R*diag(MR); tr(A^2) = sum_ab A_ab A_ba
    let mut a = r.matrix().as_matrix() * m.as_matrix();
    for i in 0..q {
        for j in 0..q {
            a[(i, j)] -= r.matrix().get(i, j) * mr[(j, j)];
        }
    }
    let mut tr = 0.0;
    for i in 0..q {
        for j in 0..q {
            tr += a[(i, j)] * a[(j, i)];
        }
    }
    (2.0 * tr).max(0.0)
}

/// Asymptotic variance zeta_r^2 of sqrt(n) (D_r(R_hat) - D_r(R)).
pub fn asymptotic_variance(r: &GroupedCorrelation, which: u8) -> Result<f64> {
    if !(which == 1 || which == 2) {
        return Err(Error::Input("coefficient index must be 1 or 2".into()));
    }
    let pair = derivative_pair(r)?;
    Ok(variance_from_pair(r, &pair, which))
}

/// Asymptotic standard deviation zeta_r.
pub fn asymptotic_sd(r: &GroupedCorrelation, which: u8) -> Result<f64> {
    Ok(asymptotic_variance(r, which)?.sqrt())
}
