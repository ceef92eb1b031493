//! Shared helpers for unit tests.

use nalgebra::DMatrix;
use rand::Rng;

use crate::linalg::SymMatrix;
use crate::structure::{GroupedCorrelation, Partition};

/// Random well-conditioned SPD matrix (Gram of a tall Gaussian-ish matrix).
pub fn random_spd(rng: &mut impl Rng, q: usize) -> SymMatrix {
    let g = DMatrix::from_fn(2 * q, q, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let s = g.transpose() * &g / (2 * q) as f64;
    SymMatrix::from_dense(&(s + DMatrix::identity(q, q) * 0.05)).unwrap()
}

/// Random correlation matrix with unit diagonal.
pub fn random_correlation(rng: &mut impl Rng, q: usize) -> SymMatrix {
    let s = random_spd(rng, q);
    SymMatrix::from_fn(q, |i, j| {
        if i == j {
            1.0
        } else {
            s.get(i, j) / (s.get(i, i) * s.get(j, j)).sqrt()
        }
    })
    .unwrap()
}

/// Random grouped correlation with the given dims.
pub fn random_grouped(rng: &mut impl Rng, dims: &[usize]) -> GroupedCorrelation {
    let p = Partition::new(dims.to_vec()).unwrap();
    let m = random_correlation(rng, p.total());
    GroupedCorrelation::new(m, p).unwrap()
}

/// Random grouped correlation whose within-block eigenvalue gaps and overall
/// smallest eigenvalue stay above the given floors. Used where derivative
/// formulas require well-separated block spectra.
pub fn random_grouped_with_gaps(
    rng: &mut impl Rng,
    dims: &[usize],
    min_gap: f64,
    min_eig: f64,
) -> GroupedCorrelation {
    let p = Partition::new(dims.to_vec()).unwrap();
    loop {
        let g = random_grouped(rng, dims);
        let mut ok = crate::linalg::sym_eigen(g.matrix())
            .unwrap()
            .eigenvalues
            .last()
            .copied()
            .unwrap()
            > min_eig;
        for i in 0..p.k() {
            if !ok {
                break;
            }
            let b = g.block(i, i);
            let vals = crate::linalg::sym_eigen(&SymMatrix::from_dense(&b).unwrap())
                .unwrap()
                .eigenvalues;
            for w in vals.windows(2) {
                if w[0] - w[1] < min_gap {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return g;
        }
    }
}

/// The two-group exchangeable 4x4 correlation matrix used across the tests:
/// within-pair correlation `r1`, between-pair correlation `r2`.
pub fn pair_exchangeable(r1: f64, r2: f64) -> GroupedCorrelation {
    let vals = [
        [1.0, r1, r2, r2],
        [r1, 1.0, r2, r2],
        [r2, r2, 1.0, r1],
        [r2, r2, r1, 1.0],
    ];
    GroupedCorrelation::new(
        SymMatrix::from_fn(4, |i, j| vals[i][j]).unwrap(),
        Partition::new(vec![2, 2]).unwrap(),
    )
    .unwrap()
}
