//! The Gaussian-copula dependence coefficients D1 and D2 together with the
//! mutual-information and Hellinger comparators.
//!
//! D1 references the identity (independence copula), D2 the block-diagonal
//! matrix of the marginals; both are normalized by the maximal-dependence
//! member of the coupling set so values live in [0, 1].

use serde::Serialize;

use crate::asymptotics;
use crate::error::{Error, Result};
use crate::estimation::normal_quantile;
use crate::linalg::{bures_sq, sym_eigen, SymMatrix};
use crate::structure::{
    block_diag_of_sym, build_rm_sym, canonical_sort_sym, GroupedCorrelation, Partition,
};

/// Off-diagonal blocks below this magnitude count as exact independence.
pub(crate) const INDEPENDENCE_TOL: f64 = 1e-12;

/// Floating-point excursions beyond [0, 1] up to this slack are clamped;
/// anything larger is reported as a numerical error.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct DependenceReport {
    pub d1: f64,
    pub d2: f64,
    pub mutual_information: f64,
    pub hellinger: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotic_sd_d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotic_sd_d2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_d1: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_d2: Option<(f64, f64)>,
}

fn clamp_unit(v: f64, what: &str) -> Result<f64> {
    if v < -RANGE_SLACK || v > 1.0 + RANGE_SLACK {
        return Err(Error::Numerical(format!(
            "{what} = {v} falls outside [0, 1] by more than {RANGE_SLACK:e}"
        )));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// D1 for a general symmetric PSD matrix with the given partition. The
/// matrix need not have a unit diagonal; directional-derivative checks
/// evaluate this map on perturbed inputs.
pub fn d1_general(m: &SymMatrix, p: &Partition) -> Result<f64> {
    if m.order() != p.total() {
        return Err(Error::Input(format!(
            "matrix order {} does not match partition total {}",
            m.order(),
            p.total()
        )));
    }
    let (mc, dims, _, _) = canonical_sort_sym(m, p);
    let pc = Partition::new(dims)?;
    let q = pc.total();
    let iq = SymMatrix::identity(q);
    let rm = build_rm_sym(&mc, &pc)?;
    let mut marginal = 0.0;
    for i in 0..pc.k() {
        let span = pc.span(i);
        let block = SymMatrix::from_fn(span.len(), |a, b| mc.get(span.start + a, span.start + b))?;
        marginal += bures_sq(&block, &SymMatrix::identity(span.len()))?;
    }
    let num = bures_sq(&mc, &iq)? - marginal;
    let den = bures_sq(&rm, &iq)? - marginal;
    if den <= 1e-12 {
        return Err(Error::Degenerate(format!(
            "D1 normalization is degenerate (denominator {den:.3e})"
        )));
    }
    clamp_unit(num / den, "D1")
}

/// D2 for a general symmetric PSD matrix with the given partition, using the
/// general Bures formula on both numerator and denominator.
pub fn d2_general(m: &SymMatrix, p: &Partition) -> Result<f64> {
    if m.order() != p.total() {
        return Err(Error::Input(format!(
            "matrix order {} does not match partition total {}",
            m.order(),
            p.total()
        )));
    }
    let (mc, dims, _, _) = canonical_sort_sym(m, p);
    let pc = Partition::new(dims)?;
    let r0 = block_diag_of_sym(&mc, &pc);
    let rm = build_rm_sym(&mc, &pc)?;
    let num = bures_sq(&mc, &r0)?;
    let den = bures_sq(&rm, &r0)?;
    if den <= 1e-12 {
        return Err(Error::Degenerate(format!(
            "D2 normalization is degenerate (denominator {den:.3e})"
        )));
    }
    clamp_unit(num / den, "D2")
}

/// D1 of a grouped correlation matrix.
pub fn d1(r: &GroupedCorrelation) -> Result<f64> {
    d1_general(r.matrix(), r.partition())
}

/// D2 of a grouped correlation matrix.
pub fn d2(r: &GroupedCorrelation) -> Result<f64> {
    d2_general(r.matrix(), r.partition())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiKind {
    MutualInformation,
    Hellinger,
}

fn log_det_psd(m: &SymMatrix, what: &str) -> Result<f64> {
    let vals = sym_eigen(m)?.eigenvalues;
    let max = vals[0].abs().max(1.0);
    let min = *vals.last().unwrap();
    if min <= 1e-12 * max {
        return Err(Error::Singular(format!(
            "{what} is singular (smallest eigenvalue {min:.6e})"
        )));
    }
    Ok(vals.iter().map(|v| v.ln()).sum())
}

/// Normalized mutual information or Hellinger dependence of a positive
/// definite grouped correlation matrix.
pub fn phi_dependence(r: &GroupedCorrelation, kind: PhiKind) -> Result<f64> {
    let p = r.partition();
    let q = p.total();
    let ld_r = log_det_psd(r.matrix(), "correlation matrix")?;
    let mut ld_blocks = 0.0;
    for i in 0..p.k() {
        let span = p.span(i);
        let block = SymMatrix::from_fn(span.len(), |a, b| {
            r.matrix().get(span.start + a, span.start + b)
        })?;
        ld_blocks += log_det_psd(&block, "diagonal block")?;
    }
    let v = match kind {
        PhiKind::MutualInformation => {
            let ratio = (ld_r - ld_blocks).exp();
            (1.0 - ratio).max(0.0).sqrt()
        }
        PhiKind::Hellinger => {
            // 1 - 2^{q/2} |R|^{1/4} prod|R_ii|^{1/4} / |R_0 + R|^{1/2}
            let r0 = block_diag_of_sym(r.matrix(), p);
            let sum = SymMatrix::from_fn(q, |i, j| r0.get(i, j) + r.matrix().get(i, j))?;
            let ld_sum = log_det_psd(&sum, "R_0 + R")?;
            1.0 - ((q as f64) / 2.0 * std::f64::consts::LN_2 + 0.25 * ld_r + 0.25 * ld_blocks
                - 0.5 * ld_sum)
                .exp()
        }
    };
    clamp_unit(
        v,
        match kind {
            PhiKind::MutualInformation => "mutual information",
            PhiKind::Hellinger => "Hellinger dependence",
        },
    )
}

/// Bundle all four coefficients, optionally with plug-in asymptotic standard
/// deviations and normal-approximation confidence intervals.
///
/// At exact independence the asymptotic standard deviations are zero and the
/// derivative machinery is skipped entirely; without `with_asymptotics` it is
/// never touched.
pub fn dependence_report(
    r: &GroupedCorrelation,
    with_asymptotics: bool,
    n: Option<usize>,
    ci_level: Option<f64>,
) -> Result<DependenceReport> {
    let d1v = d1(r)?;
    let d2v = d2(r)?;
    let mi = phi_dependence(r, PhiKind::MutualInformation)?;
    let hel = phi_dependence(r, PhiKind::Hellinger)?;
    let mut report = DependenceReport {
        d1: d1v,
        d2: d2v,
        mutual_information: mi,
        hellinger: hel,
        asymptotic_sd_d1: None,
        asymptotic_sd_d2: None,
        n,
        ci_level: None,
        ci_d1: None,
        ci_d2: None,
    };
    if !with_asymptotics {
        return Ok(report);
    }
    let (sd1, sd2) = if r.max_abs_between_groups() <= INDEPENDENCE_TOL {
        (0.0, 0.0)
    } else {
        let pair = asymptotics::derivative_pair(r)?;
        (
            asymptotics::variance_from_pair(r, &pair, 1).sqrt(),
            asymptotics::variance_from_pair(r, &pair, 2).sqrt(),
        )
    };
    report.asymptotic_sd_d1 = Some(sd1);
    report.asymptotic_sd_d2 = Some(sd2);
    if let Some(n) = n {
        let level = ci_level.unwrap_or(0.95);
        if !(0.0 < level && level < 1.0) {
            return Err(Error::Input(format!(
                "confidence level {level} must be in (0, 1)"
            )));
        }
        let z = normal_quantile(0.5 + level / 2.0)?;
        let half1 = z * sd1 / (n as f64).sqrt();
        let half2 = z * sd2 / (n as f64).sqrt();
        report.ci_level = Some(level);
        report.ci_d1 = Some((d1v - half1, d1v + half1));
        report.ci_d2 = Some((d2v - half2, d2v + half2));
    }
    Ok(report)
}

/// Closed form for D1 of the two-group exchangeable model: within-pair
/// correlation `r1`, between-pair correlation `r2`.
pub fn pair_exchangeable_d1(r1: f64, r2: f64) -> f64 {
    (2.0 * (1.0 + r1).sqrt() - (r1 - 2.0 * r2 + 1.0).sqrt() - (r1 + 2.0 * r2 + 1.0).sqrt())
        / ((2.0 - 2.0f64.sqrt()) * ((1.0 + r1).sqrt() + (1.0 - r1).sqrt()))
}

/// Closed form for D2 of the two-group exchangeable model.
pub fn pair_exchangeable_d2(r1: f64, r2: f64) -> f64 {
    let num = 4.0
        - 2.0 * (1.0 - r1).abs()
        - (r1 * r1 + 2.0 * r1 - 2.0 * r1 * r2 - 2.0 * r2 + 1.0).sqrt()
        - (r1 * r1 + 2.0 * r1 + 2.0 * r1 * r2 + 2.0 * r2 + 1.0).sqrt();
    let den = 4.0 - 2.0f64.sqrt() * ((1.0 - r1).abs() + r1 + 1.0);
    num / den
}

/// Closed form for D2 of the trivariate model with a single correlated pair.
pub fn trivariate_single_rho_d2(rho: f64) -> f64 {
    (2.0 - (1.0 - rho).sqrt() - (1.0 + rho).sqrt()) / (3.0 - 3.0f64.sqrt())
}
