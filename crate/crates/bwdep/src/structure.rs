//! Group-partition bookkeeping: block extraction, the block-diagonal
//! independence matrix, canonical dimension sorting, and the
//! maximal-dependence matrix.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{clamp_psd_eigenvalues, sym_eigen, SymMatrix};

/// A partition of `q` variables into `k >= 2` contiguous groups of sizes
/// `d_1, ..., d_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl Partition {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Input(format!(
                "a partition needs at least 2 groups, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Input("group sizes must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in &dims {
            acc += d;
            offsets.push(acc);
        }
        Ok(Partition { dims, offsets })
    }

    /// Parse a comma-separated dims string such as `"2,2"` or `"3,3,2"`.
    pub fn parse(s: &str) -> Result<Self> {
        let dims = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Input(format!("invalid group size '{t}' in dims '{s}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Partition::new(dims)
    }

    /// Singleton partition of `q` variables (every group has size one).
    pub fn singletons(q: usize) -> Result<Self> {
        Partition::new(vec![1; q])
    }

    pub fn k(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Variable index range of group `i`.
    pub fn span(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Whether the group sizes are non-decreasing.
    pub fn is_canonical(&self) -> bool {
        self.dims.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn dims_string(&self) -> String {
        self.dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// A correlation matrix together with its group partition: unit diagonal,
/// positive semi-definite, off-diagonal entries in [-1, 1].
#[derive(Debug, Clone)]
pub struct GroupedCorrelation {
    matrix: SymMatrix,
    partition: Partition,
}

impl GroupedCorrelation {
    pub fn new(matrix: SymMatrix, partition: Partition) -> Result<Self> {
        if matrix.order() != partition.total() {
            return Err(Error::Input(format!(
                "matrix order {} does not match partition total {}",
                matrix.order(),
                partition.total()
            )));
        }
        let q = matrix.order();
        for i in 0..q {
            if (matrix.get(i, i) - 1.0).abs() > 1e-12 {
                return Err(Error::Input(format!(
                    "diagonal entry ({i},{i}) = {} is not 1",
                    matrix.get(i, i)
                )));
            }
            for j in (i + 1)..q {
                if matrix.get(i, j).abs() > 1.0 + 1e-12 {
                    return Err(Error::Input(format!(
                        "off-diagonal entry ({i},{j}) = {} is outside [-1, 1]",
                        matrix.get(i, j)
                    )));
                }
            }
        }
        let spec = sym_eigen(&matrix)?;
        let max = spec.eigenvalues[0].abs().max(1.0);
        let min = *spec.eigenvalues.last().unwrap();
        if min < -1e-10 * max {
            return Err(Error::Input(format!(
                "matrix is not positive semi-definite: smallest eigenvalue {min:.6e}"
            )));
        }
        Ok(GroupedCorrelation { matrix, partition })
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn order(&self) -> usize {
        self.matrix.order()
    }

    /// The (i, j) block as a dense matrix.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (ri, rj) = (self.partition.span(i), self.partition.span(j));
        DMatrix::from_fn(ri.len(), rj.len(), |a, b| {
            self.matrix.get(ri.start + a, rj.start + b)
        })
    }

    /// Largest absolute entry over all off-diagonal blocks.
    pub fn max_abs_between_groups(&self) -> f64 {
        let p = &self.partition;
        let mut worst = 0.0f64;
        for i in 0..p.k() {
            for j in (i + 1)..p.k() {
                for a in p.span(i) {
                    for b in p.span(j) {
                        worst = worst.max(self.matrix.get(a, b).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(*sym_eigen(&self.matrix)?.eigenvalues.last().unwrap())
    }
}

/// A grouped correlation reordered so group sizes are non-decreasing,
/// together with the permutations that map back to the original order.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub grouped: GroupedCorrelation,
    /// `group_permutation[new] = old` group index.
    pub group_permutation: Vec<usize>,
    /// `variable_permutation[new] = old` variable index.
    pub variable_permutation: Vec<usize>,
}

/// R_0: diagonal blocks copied, off-diagonal blocks zero.
pub fn block_diag_of(r: &GroupedCorrelation) -> SymMatrix {
    block_diag_of_sym(&r.matrix, &r.partition)
}

pub(crate) fn block_diag_of_sym(m: &SymMatrix, p: &Partition) -> SymMatrix {
    let q = m.order();
    let mut group_of = vec![0usize; q];
    for g in 0..p.k() {
        for v in p.span(g) {
            group_of[v] = g;
        }
    }
    SymMatrix::from_fn(q, |i, j| {
        if group_of[i] == group_of[j] {
            m.get(i, j)
        } else {
            0.0
        }
    })
    .expect("finite entries")
}

/// Reorder groups so their sizes are non-decreasing (stable in the original
/// group index) and record the permutations.
pub fn canonical_sort(r: &GroupedCorrelation) -> CanonicalForm {
    let (matrix, dims, group_permutation, variable_permutation) =
        canonical_sort_sym(&r.matrix, &r.partition);
    let grouped = GroupedCorrelation {
        matrix,
        partition: Partition::new(dims).expect("same dims"),
    };
    CanonicalForm {
        grouped,
        group_permutation,
        variable_permutation,
    }
}

pub(crate) fn canonical_sort_sym(
    m: &SymMatrix,
    p: &Partition,
) -> (SymMatrix, Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..p.k()).collect();
    order.sort_by_key(|&g| (p.dims()[g], g));
    let mut var_perm = Vec::with_capacity(p.total());
    for &g in &order {
        var_perm.extend(p.span(g));
    }
    let sorted = SymMatrix::from_fn(p.total(), |i, j| m.get(var_perm[i], var_perm[j]))
        .expect("finite entries");
    let dims = order.iter().map(|&g| p.dims()[g]).collect();
    (sorted, dims, order, var_perm)
}

/// The maximal-dependence member of the coupling set with the given diagonal
/// blocks. Requires canonical order `d_1 <= ... <= d_k`; the off-diagonal
/// blocks pair the leading eigendirections of each pair of blocks.
pub fn build_rm(r: &GroupedCorrelation) -> Result<SymMatrix> {
    build_rm_sym(&r.matrix, &r.partition)
}

pub(crate) fn build_rm_sym(m: &SymMatrix, p: &Partition) -> Result<SymMatrix> {
    if !p.is_canonical() {
        return Err(Error::Input(format!(
            "group sizes must be non-decreasing, got ({})",
            p.dims_string()
        )));
    }
    let q = p.total();
    let k = p.k();
    let mut factors: Vec<DMatrix<f64>> = Vec::with_capacity(k); // U_ii Lambda_ii^{1/2}
    for i in 0..k {
        let span = p.span(i);
        let block =
            SymMatrix::from_fn(span.len(), |a, b| m.get(span.start + a, span.start + b))?;
        let spec = sym_eigen(&block)?;
        let mut vals = spec.eigenvalues.clone();
        clamp_psd_eigenvalues(&mut vals, "build_rm block")?;
        let mut f = spec.eigenvectors.clone();
        for (j, &l) in vals.iter().enumerate() {
            f.column_mut(j).scale_mut(l.sqrt());
        }
        factors.push(f);
    }
    let mut out = DMatrix::zeros(q, q);
    for i in 0..k {
        let si = p.span(i);
        for a in si.clone() {
            for b in si.clone() {
                out[(a, b)] = m.get(a, b);
            }
        }
        for j in (i + 1)..k {
            let sj = p.span(j);
            let (di, dj) = (si.len(), sj.len());
            // Psi_ij = U_ii L_i^{1/2} Pi_ij L_j^{1/2} U_jj^T with Pi_ij = (I 0):
            // the product keeps the first d_i columns of each factor.
            let fi = &factors[i];
            let fj = &factors[j];
            let mut psi = DMatrix::zeros(di, dj);
            for a in 0..di {
                for b in 0..dj {
                    let mut acc = 0.0;
                    for t in 0..di {
                        acc += fi[(a, t)] * fj[(b, t)];
                    }
                    psi[(a, b)] = acc;
                }
            }
            for a in 0..di {
                for b in 0..dj {
                    out[(si.start + a, sj.start + b)] = psi[(a, b)];
                    out[(sj.start + b, si.start + a)] = psi[(a, b)];
                }
            }
        }
    }
    SymMatrix::from_dense(&out)
}

/// Draw a random member of the coupling set with the given diagonal blocks:
/// A = D C D^T where D stacks block factors and C is a random PSD matrix
/// whose diagonal blocks are identities (blockwise-orthonormalized Gaussian
/// Gram matrix).
pub fn random_coupling(
    p: &Partition,
    diag_blocks: &[DMatrix<f64>],
    rng: &mut impl Rng,
) -> Result<SymMatrix> {
    if diag_blocks.len() != p.k() {
        return Err(Error::Input("one diagonal block per group is required".into()));
    }
    let q = p.total();
    let m = q + 4;
    // blockwise-orthonormal frame
    let mut frame = DMatrix::zeros(m, q);
    for i in 0..p.k() {
        let span = p.span(i);
        let g = DMatrix::from_fn(m, span.len(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let qr = g.qr();
        let qmat = qr.q();
        for (c, v) in span.clone().enumerate() {
            for r in 0..m {
                frame[(r, v)] = qmat[(r, c)];
            }
        }
    }
    let c = frame.transpose() * &frame;
    // scale by block factors
    let mut a = DMatrix::zeros(q, q);
    let mut factors = Vec::with_capacity(p.k());
    for (i, b) in diag_blocks.iter().enumerate() {
        let span = p.span(i);
        if b.nrows() != span.len() || b.ncols() != span.len() {
            return Err(Error::Input(format!(
                "diagonal block {i} has wrong shape {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        let sym = SymMatrix::from_dense(b)?;
        let spec = sym_eigen(&sym)?;
        let mut vals = spec.eigenvalues.clone();
        clamp_psd_eigenvalues(&mut vals, "random_coupling block")?;
        let mut f = spec.eigenvectors.clone();
        for (j, &l) in vals.iter().enumerate() {
            f.column_mut(j).scale_mut(l.sqrt());
        }
        factors.push(f);
    }
    for i in 0..p.k() {
        let si = p.span(i);
        for j in 0..p.k() {
            let sj = p.span(j);
            if i == j {
                // exact prescribed diagonal block
                for (a1, v1) in si.clone().enumerate() {
                    for (b1, v2) in sj.clone().enumerate() {
                        a[(v1, v2)] = diag_blocks[i][(a1, b1)];
                    }
                }
            } else {
                let mut cij = DMatrix::zeros(si.len(), sj.len());
                for (a1, v1) in si.clone().enumerate() {
                    for (b1, v2) in sj.clone().enumerate() {
                        cij[(a1, b1)] = c[(v1, v2)];
                    }
                }
                let block = &factors[i] * cij * factors[j].transpose();
                for (a1, v1) in si.clone().enumerate() {
                    for (b1, v2) in sj.clone().enumerate() {
                        a[(v1, v2)] = block[(a1, b1)];
                    }
                }
            }
        }
    }
    SymMatrix::from_dense(&a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{bures_sq, majorizes};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn example3_matrix(r1: f64, r2: f64) -> GroupedCorrelation {
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

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![3]).is_err());
        assert!(Partition::new(vec![2, 0]).is_err());
        let p = Partition::parse("2,2").unwrap();
        assert_eq!(p.total(), 4);
        assert_eq!(p.span(1), 2..4);
    }

    #[test]
    fn block_diag_basics() {
        let r = GroupedCorrelation::new(
            SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 0.7 }).unwrap(),
            Partition::new(vec![1, 1]).unwrap(),
        )
        .unwrap();
        let r0 = block_diag_of(&r);
        assert!((r0.as_matrix() - nalgebra::DMatrix::identity(2, 2)).amax() <= 1e-15);

        let r = example3_matrix(0.4, 0.2);
        let r0 = block_diag_of(&r);
        assert_abs_diff_eq!(r0.get(0, 1), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r0.get(2, 3), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(r0.get(0, 2), 0.0, epsilon = 1e-15);

        // idempotence
        let r0g = GroupedCorrelation::new(r0.clone(), r.partition().clone()).unwrap();
        let r00 = block_diag_of(&r0g);
        assert_eq!(r0.as_matrix(), r00.as_matrix());
    }

    #[test]
    fn canonical_sort_orders_groups() {
        // dims (4,5,3,1,2) -> (1,2,3,4,5) with group permutation (4,5,3,1,2)
        let dims = vec![4, 5, 3, 1, 2];
        let q = 15;
        let m = SymMatrix::from_fn(q, |i, j| if i == j { 1.0 } else { 0.0 }).unwrap();
        let r = GroupedCorrelation::new(m, Partition::new(dims).unwrap()).unwrap();
        let c = canonical_sort(&r);
        assert_eq!(c.grouped.partition().dims(), &[1, 2, 3, 4, 5]);
        assert_eq!(c.group_permutation, vec![3, 4, 2, 0, 1]);
        // applying the variable permutation recovers the sorted matrix exactly
        for i in 0..q {
            for j in 0..q {
                assert_eq!(
                    c.grouped.matrix().get(i, j),
                    r.matrix()
                        .get(c.variable_permutation[i], c.variable_permutation[j])
                );
            }
        }
    }

    #[test]
    fn canonical_sort_identity_when_sorted() {
        let r = example3_matrix(0.2, 0.1);
        let c = canonical_sort(&r);
        assert_eq!(c.group_permutation, vec![0, 1]);
        assert_eq!(c.variable_permutation, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rm_all_singleton_units_is_all_ones() {
        let q = 4;
        let r = GroupedCorrelation::new(
            SymMatrix::identity(q),
            Partition::new(vec![1; q]).unwrap(),
        )
        .unwrap();
        let rm = build_rm(&r).unwrap();
        for i in 0..q {
            for j in 0..q {
                assert_abs_diff_eq!(rm.get(i, j), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rm_identity_blocks_pair_coordinates() {
        // k=2, d=(2,2), rho_i = rho_j = 0 -> Psi = I_2
        let r = example3_matrix(0.0, 0.0);
        let rm = build_rm(&r).unwrap();
        assert_abs_diff_eq!(rm.get(0, 2), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rm.get(1, 3), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rm.get(0, 3), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rm_eigenvalues_are_padded_sums() {
        // k=2, d=(2,2), rho_1 = rho_2 = 0.5 -> eigenvalues (3, 1, 0, 0)
        let r = example3_matrix(0.5, 0.0);
        let rm = build_rm(&r).unwrap();
        let vals = sym_eigen(&rm).unwrap().eigenvalues;
        let expect = [3.0, 1.0, 0.0, 0.0];
        for (v, e) in vals.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(*v, *e, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(rm.trace(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn rm_requires_canonical_order() {
        let m = SymMatrix::identity(3);
        let p = Partition::new(vec![2, 1]).unwrap();
        assert!(matches!(build_rm_sym(&m, &p), Err(Error::Input(_))));
    }

    #[test]
    fn rm_eigenvalue_oracle_random_blocks() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..5 {
            let dims = vec![2, 3];
            let p = Partition::new(dims.clone()).unwrap();
            let blocks: Vec<DMatrix<f64>> = dims
                .iter()
                .map(|&d| {
                    let s = crate::testutil::random_spd(&mut rng, d);
                    // normalize to unit diagonal so the grouped invariants hold
                    let mut out = s.as_matrix().clone();
                    for i in 0..d {
                        for j in 0..d {
                            out[(i, j)] /= (s.get(i, i) * s.get(j, j)).sqrt();
                        }
                    }
                    for i in 0..d {
                        out[(i, i)] = 1.0;
                    }
                    out
                })
                .collect();
            let mut m = DMatrix::zeros(5, 5);
            for (i, b) in blocks.iter().enumerate() {
                let span = p.span(i);
                for (a, v1) in span.clone().enumerate() {
                    for (c, v2) in span.clone().enumerate() {
                        m[(v1, v2)] = b[(a, c)];
                    }
                }
            }
            let rm = build_rm_sym(&SymMatrix::from_dense(&m).unwrap(), &p).unwrap();
            let got = sym_eigen(&rm).unwrap().eigenvalues;
            // padded eigenvalue sums
            let mut lam = vec![vec![0.0; 5]; 2];
            for (i, b) in blocks.iter().enumerate() {
                let vals = sym_eigen(&SymMatrix::from_dense(b).unwrap()).unwrap().eigenvalues;
                for (j, v) in vals.iter().enumerate() {
                    lam[i][j] = *v;
                }
            }
            let mut expect: Vec<f64> = (0..5).map(|j| lam[0][j] + lam[1][j]).collect();
            expect.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (g, e) in got.iter().zip(expect.iter()) {
                assert_abs_diff_eq!(*g, *e, epsilon = 1e-8);
            }
            // at most d_k nonzero eigenvalues
            assert!(got.iter().filter(|v| v.abs() > 1e-8).count() <= 3);
        }
    }

    #[test]
    fn couplings_are_majorized_and_distance_dominated() {
        let mut rng = StdRng::seed_from_u64(17);
        let r = example3_matrix(0.5, 0.0);
        let p = r.partition().clone();
        let blocks = vec![r.block(0, 0), r.block(1, 1)];
        let rm = build_rm(&r).unwrap();
        let rm_vals = sym_eigen(&rm).unwrap().eigenvalues;
        let r0 = block_diag_of(&r);
        let iq = SymMatrix::identity(4);
        let d_i = bures_sq(&rm, &iq).unwrap();
        let d_0 = bures_sq(&rm, &r0).unwrap();
        for _ in 0..50 {
            let a = random_coupling(&p, &blocks, &mut rng).unwrap();
            // prescribed diagonal blocks
            assert_abs_diff_eq!(a.get(0, 1), 0.5, epsilon = 1e-10);
            assert_abs_diff_eq!(a.get(2, 3), 0.5, epsilon = 1e-10);
            let vals = sym_eigen(&a).unwrap().eigenvalues;
            assert!(*vals.last().unwrap() > -1e-10);
            assert!(majorizes(&vals, &rm_vals).unwrap());
            assert!(bures_sq(&a, &iq).unwrap() <= d_i + 1e-9);
            assert!(bures_sq(&a, &r0).unwrap() <= d_0 + 1e-9);
        }
    }
}
