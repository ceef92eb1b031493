//! Semi-parametric estimation of the Gaussian copula correlation matrix via
//! normal scores rank correlations.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::structure::{GroupedCorrelation, Partition};

/// Inverse standard normal CDF.
///
/// Rational approximation (Wichura's PPND16) followed by one Newton polish
/// step against an erfc-based CDF; absolute error stays below 1e-13 over
/// [1e-300, 1 - 1e-16]. Antisymmetry around 1/2 is structural: the upper
/// half evaluates through the reflection `-quantile(1 - p)`, which is exact
/// because `1 - p` is exactly representable for p >= 1/2.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Input(format!(
            "quantile argument {p} must lie strictly inside (0, 1)"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        Ok(-lower_half_quantile(1.0 - p))
    } else {
        Ok(lower_half_quantile(p))
    }
}

/// PPND16 on the lower half (0, 0.5), negative output.
fn lower_half_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 0.5);
    const A: [f64; 8] = [
        3.3871328727963666080e0,
        1.3314166789178437745e2,
        1.9715909503065514427e3,
        1.3731693765509461125e4,
        4.5921953931549871457e4,
        6.7265770927008700853e4,
        3.3430575583588128105e4,
        2.5090809287301226727e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.2313330701600911252e1,
        6.8718700749205790830e2,
        5.3941960214247511077e3,
        2.1213794301586595867e4,
        3.9307895800092710610e4,
        2.8729085735721942674e4,
        5.2264952788528545610e3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734e0,
        4.63033784615654529590e0,
        5.76949722146069140550e0,
        3.64784832476320460504e0,
        1.27045825245236838258e0,
        2.41780725177450611770e-1,
        2.27238449892691845833e-2,
        7.74545014278341407640e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187e0,
        1.67638483018380384940e0,
        6.89767334985100004550e-1,
        1.48103976427480074590e-1,
        1.51986665636164571966e-2,
        5.47593808499534494600e-4,
        1.05075007164441684324e-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720e0,
        5.46378491116411436990e0,
        1.78482653991729133580e0,
        2.96560571828504891230e-1,
        2.65321895265761230930e-2,
        1.24266094738807843860e-3,
        2.71155556874348757815e-5,
        2.01033439929228813265e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.99832206555887937690e-1,
        1.36929880922735805310e-1,
        1.48753612908506148525e-2,
        7.86869131145613259100e-4,
        1.84631831751005468180e-5,
        1.42151175831644588870e-7,
        2.04426310338993978564e-15,
    ];
    let q = p - 0.5;
    let mut x = if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        q * poly(&A, r) / poly(&B, r)
    } else {
        let r = (-p.ln()).sqrt();
        if r <= 5.0 {
            let r = r - 1.6;
            -poly(&C, r) / poly(&D, r)
        } else {
            let r = r - 5.0;
            -poly(&E, r) / poly(&F, r)
        }
    };
    // One Newton step against the erfc-based CDF; skipped only where the
    // density underflows.
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 1e-290 {
        let cdf = 0.5 * erfc_precise(-x * std::f64::consts::FRAC_1_SQRT_2);
        x -= (cdf - p) / pdf;
    }
    x
}

fn poly(coefs: &[f64], x: f64) -> f64 {
    let mut acc = coefs[coefs.len() - 1];
    for c in coefs.iter().rev().skip(1) {
        acc = acc * x + c;
    }
    acc
}

/// Complementary error function, rational Chebyshev approximation with
/// ~1e-16 relative accuracy over the whole positive tail (the classic
/// three-regime scheme behind SPECFUN's erf).
fn erfc_precise(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const SQRPI: f64 = 5.6418958354775628695e-1;

    let y = x.abs();
    let result = if y <= 0.46875 {
        // erfc = 1 - erf in the center
        let ysq = if y > 1e-300 { y * y } else { 0.0 };
        let mut num = A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + A[i]) * ysq;
            den = (den + B[i]) * ysq;
        }
        return 1.0 - x * (num + A[3]) / (den + B[3]);
    } else if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        let ysq = (y * 16.0).floor() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else if y < 26.6 {
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let mut r = ysq * (num + P[4]) / (den + Q[4]);
        r = (SQRPI - r) / y;
        let ysq = (y * 16.0).floor() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Standard normal CDF via erfc.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc_precise(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// An n x q data matrix with finite entries.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    pub column_names: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, column_names: Option<Vec<String>>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::Input(format!(
                "need at least 2 observations, got {}",
                values.nrows()
            )));
        }
        if let Some(names) = &column_names {
            if names.len() != values.ncols() {
                return Err(Error::Input(format!(
                    "{} column names for {} columns",
                    names.len(),
                    values.ncols()
                )));
            }
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(Error::Input(format!(
                        "non-finite value at row {}, column {}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(DataMatrix {
            values,
            column_names,
        })
    }

    /// Read a CSV: optional header row, one row per observation, '.' decimal
    /// separator, no missing values.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut names: Option<Vec<String>> = None;
        for (idx, record) in reader.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, usize> = record
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    if f.is_empty() {
                        Err(j)
                    } else {
                        f.parse::<f64>().map_err(|_| j)
                    }
                })
                .collect();
            match parsed {
                Ok(vals) => rows.push(vals),
                Err(j) => {
                    if idx == 0 && record.iter().all(|f| f.parse::<f64>().is_err()) {
                        names = Some(record.iter().map(|s| s.to_string()).collect());
                    } else {
                        return Err(Error::Input(format!(
                            "missing or non-numeric value at row {}, column {} of {}",
                            idx + 1,
                            j + 1,
                            path.display()
                        )));
                    }
                }
            }
        }
        if rows.is_empty() {
            return Err(Error::Input(format!("no data rows in {}", path.display())));
        }
        let q = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != q) {
            return Err(Error::Input(format!(
                "row {} has {} fields, expected {q}",
                bad + 1,
                rows[bad].len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]);
        DataMatrix::new(values, names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// New matrix keeping the given columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<DataMatrix> {
        let values = DMatrix::from_fn(self.n(), cols.len(), |i, j| self.values[(i, cols[j])]);
        let names = self
            .column_names
            .as_ref()
            .map(|n| cols.iter().map(|&c| n[c].clone()).collect());
        DataMatrix::new(values, names)
    }
}

/// Normal scores of the columns of `x` plus the shared scale
/// `s2 = (1/n) sum_l {Phi^{-1}(l/(n+1))}^2`. Ties get midranks; the flag
/// reports whether any occurred.
pub(crate) struct ColumnScores {
    pub scores: DMatrix<f64>,
    pub s2: f64,
    pub had_ties: bool,
}

pub(crate) fn column_scores(x: &DataMatrix) -> Result<ColumnScores> {
    let (n, q) = (x.n(), x.q());
    if n < 3 {
        return Err(Error::Input(format!("need n >= 3 observations, got {n}")));
    }
    let mut scores = DMatrix::zeros(n, q);
    let mut had_ties = false;
    for j in 0..q {
        let col: Vec<f64> = (0..n).map(|i| x.values()[(i, j)]).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).expect("finite").then(a.cmp(&b)));
        if col[order[0]] == col[order[n - 1]] {
            return Err(Error::Input(format!(
                "column {} is constant; ranks are degenerate",
                j + 1
            )));
        }
        // midranks over runs of equal values
        let mut rank = vec![0.0f64; n];
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && col[order[end]] == col[order[start]] {
                end += 1;
            }
            if end - start > 1 {
                had_ties = true;
            }
            let mid = (start + 1 + end) as f64 / 2.0; // average of ranks start+1..=end
            for &idx in &order[start..end] {
                rank[idx] = mid;
            }
            start = end;
        }
        for i in 0..n {
            scores[(i, j)] = normal_quantile(rank[i] / (n as f64 + 1.0))?;
        }
    }
    let mut s2 = 0.0;
    for l in 1..=n {
        let z = normal_quantile(l as f64 / (n as f64 + 1.0))?;
        s2 += z * z;
    }
    s2 /= n as f64;
    Ok(ColumnScores {
        scores,
        s2,
        had_ties,
    })
}

/// The normal-scores estimate: correlation matrix (shared-denominator rank
/// correlations, unit diagonal), unnormalized covariance of the scores, and
/// the scores themselves.
#[derive(Debug, Clone)]
pub struct ScoresEstimate {
    pub correlation: GroupedCorrelation,
    pub covariance: SymMatrix,
    pub scores: DMatrix<f64>,
    pub had_ties: bool,
}

pub fn normal_scores_matrix(x: &DataMatrix, partition: &Partition) -> Result<ScoresEstimate> {
    if partition.total() != x.q() {
        return Err(Error::Input(format!(
            "partition total {} does not match {} columns",
            partition.total(),
            x.q()
        )));
    }
    let cs = column_scores(x)?;
    let n = x.n() as f64;
    let gram = cs.scores.transpose() * &cs.scores;
    let covariance = SymMatrix::from_fn(x.q(), |i, j| {
        if i <= j {
            gram[(i, j)] / n
        } else {
            gram[(j, i)] / n
        }
    })?;
    let correlation = SymMatrix::from_fn(x.q(), |i, j| {
        if i == j {
            1.0
        } else {
            covariance.get(i, j) / cs.s2
        }
    })?;
    Ok(ScoresEstimate {
        correlation: GroupedCorrelation::new(correlation, partition.clone())?,
        covariance,
        scores: cs.scores,
        had_ties: cs.had_ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// (p, reference) pairs computed with 400-digit arithmetic.
    const QUANTILE_ORACLE: &[(f64, f64)] = &[
        (1e-300, -37.04709629936119923655),
        (1e-100, -21.27345356096532429418),
        (1e-16, -8.222082216130435615182),
        (1e-10, -6.3613409024040561991),
        (1e-06, -4.753424308822898957339),
        (0.001, -3.090232306167813535358),
        (0.01, -2.326347874040841093075),
        (0.025, -1.95996398454005421178),
        (0.1, -1.281551565544600435335),
        (0.25, -0.6744897501960817432022),
        (0.3, -0.5244005127080408159695),
        (0.5, 0.0),
        (0.6744897501960817, 0.4523449484859132062333),
        (0.7, 0.5244005127080406563136),
        (0.9, 1.281551565544600593487),
        (0.975, 1.959963984540053855604),
        (0.999, 3.090232306167813277758),
        (0.999999, 4.753424308817087765688),
        (0.9999999999, 6.361340889697421864155),
        (0.9999999999999999, 8.209536151601386855631),
    ];

    #[test]
    fn quantile_matches_high_precision_oracle() {
        for &(p, x) in QUANTILE_ORACLE {
            let got = normal_quantile(p).unwrap();
            assert!(
                (got - x).abs() <= 1e-13,
                "p = {p:e}: got {got:.17}, want {x:.17}"
            );
        }
    }

    #[test]
    fn quantile_symmetry_and_range() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(normal_quantile(0.975).unwrap(), 1.959964, epsilon = 5e-7);
        assert_eq!(
            normal_quantile(0.25).unwrap(),
            -normal_quantile(0.75).unwrap()
        );
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_monotone() {
        let mut last = f64::NEG_INFINITY;
        for k in 1..200 {
            let p = k as f64 / 200.0;
            let v = normal_quantile(p).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn three_point_scores() {
        let x = DataMatrix::new(
            DMatrix::from_row_slice(3, 1, &[2.5, -1.0, 7.0]),
            None,
        )
        .unwrap();
        let cs = column_scores(&x).unwrap();
        let z34 = normal_quantile(0.75).unwrap();
        assert_abs_diff_eq!(cs.scores[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cs.scores[(1, 0)], -z34, epsilon = 1e-15);
        assert_abs_diff_eq!(cs.scores[(2, 0)], z34, epsilon = 1e-15);
        assert_abs_diff_eq!(z34, 0.6744897501960817, epsilon = 1e-12);
    }

    fn random_data(rng: &mut impl Rng, n: usize, q: usize) -> DataMatrix {
        DataMatrix::new(
            DMatrix::from_fn(n, q, |_, _| rng.random::<f64>() * 2.0 - 1.0),
            None,
        )
        .unwrap()
    }

    #[test]
    fn rank_invariance_bit_for_bit() {
        let mut rng = StdRng::seed_from_u64(53);
        let p = Partition::new(vec![2, 2]).unwrap();
        for _ in 0..10 {
            let x = random_data(&mut rng, 40, 4);
            let base = normal_scores_matrix(&x, &p).unwrap();
            for transform in [
                (|v: f64| v.exp()) as fn(f64) -> f64,
                |v| v * v * v,
                |v| 3.5 * v + 11.25,
            ] {
                let y = DataMatrix::new(x.values().map(transform), None).unwrap();
                let t = normal_scores_matrix(&y, &p).unwrap();
                assert_eq!(
                    base.correlation.matrix().as_matrix(),
                    t.correlation.matrix().as_matrix()
                );
            }
        }
    }

    #[test]
    fn unit_diagonal_and_zero_score_sums() {
        let mut rng = StdRng::seed_from_u64(59);
        let p = Partition::new(vec![1, 2]).unwrap();
        let x = random_data(&mut rng, 25, 3);
        let est = normal_scores_matrix(&x, &p).unwrap();
        for i in 0..3 {
            assert_eq!(est.correlation.matrix().get(i, i), 1.0);
        }
        for j in 0..3 {
            let s: f64 = (0..25).map(|i| est.scores[(i, j)]).sum();
            assert!(s.abs() <= 1e-12);
        }
        assert!(!est.had_ties);
    }

    #[test]
    fn ties_get_midranks() {
        let x = DataMatrix::new(
            DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 2.0, 3.0]),
            None,
        )
        .unwrap();
        let cs = column_scores(&x).unwrap();
        assert!(cs.had_ties);
        assert_eq!(cs.scores[(0, 0)], cs.scores[(1, 0)]);
        assert_abs_diff_eq!(
            cs.scores[(0, 0)],
            normal_quantile(1.5 / 5.0).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn constant_column_is_rejected() {
        let x = DataMatrix::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 3.0, 1.0, 4.0]),
            None,
        )
        .unwrap();
        let p = Partition::new(vec![1, 1]).unwrap();
        assert!(matches!(
            normal_scores_matrix(&x, &p),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn estimate_is_psd_even_when_rank_deficient() {
        let mut rng = StdRng::seed_from_u64(61);
        let x = random_data(&mut rng, 5, 8); // n < q
        let p = Partition::new(vec![4, 4]).unwrap();
        let est = normal_scores_matrix(&x, &p).unwrap();
        let min = est.correlation.min_eigenvalue().unwrap();
        assert!(min >= -1e-10);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::write(&good, "a,b\n1.5,2\n3,4\n0.5,1\n").unwrap();
        let x = DataMatrix::from_csv(&good).unwrap();
        assert_eq!(x.n(), 3);
        assert_eq!(x.q(), 2);
        assert_eq!(x.column_names.as_ref().unwrap()[1], "b");

        let headerless = dir.path().join("plain.csv");
        std::fs::write(&headerless, "1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(DataMatrix::from_csv(&headerless).unwrap().n(), 3);

        let missing = dir.path().join("missing.csv");
        std::fs::write(&missing, "1,2\n3,\n5,6\n").unwrap();
        match DataMatrix::from_csv(&missing) {
            Err(Error::Input(msg)) => {
                assert!(msg.contains("row 2"), "{msg}");
                assert!(msg.contains("column 2"), "{msg}");
            }
            other => panic!("expected input error, got {other:?}"),
        }
    }
}
