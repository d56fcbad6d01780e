//! Mutual-information oracles and the harness that checks the TupleInfoNCE
//! lower bound against them.

mod verify;

pub use verify::{
    bound_report_csv, gaussian_pairs, verdict_text, verify_tnce_bound, BoundVerification, MiReport, PairSource,
    VerifyConfig,
};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::synthdata::{DiscreteJoint, MAX_JOINT_CELLS};

/// Tiny negative MI values from rounding are clipped to zero up to this size.
pub const MI_CLIP: f64 = 1e-12;

/// MI in nats between the two coordinates of a unit-variance bivariate
/// Gaussian with correlation `rho`.
pub fn gaussian_mi(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("correlation {rho} must satisfy |rho| < 1")));
    }
    Ok(-0.5 * (1.0 - rho * rho).ln())
}

/// MI between coordinate groups of a jointly Gaussian vector with covariance
/// `cov`: `½ ln(det S_a det S_b / det S_ab)`.
pub fn gaussian_covariance_mi(cov: &Matrix, group_a: &[usize], group_b: &[usize]) -> Result<f64> {
    if cov.rows() != cov.cols() {
        return Err(Error::shape(
            "covariance",
            "square",
            format!("{} x {}", cov.rows(), cov.cols()),
        ));
    }
    check_groups(cov.rows(), group_a, group_b)?;
    let both: Vec<usize> = group_a.iter().chain(group_b).copied().collect();
    let ld = |g: &[usize]| log_det_spd(&sub_matrix(cov, g));
    let mi = 0.5 * (ld(group_a)? + ld(group_b)? - ld(&both)?);
    Ok(clip(mi))
}

fn sub_matrix(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), idx.len());
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            out.set(r, c, m.get(i, j));
        }
    }
    out
}

/// `ln det` of a symmetric positive-definite matrix via Cholesky.
fn log_det_spd(m: &Matrix) -> Result<f64> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    let mut acc = 0.0;
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 1e-300) {
            return Err(Error::Domain("covariance is not positive definite".into()));
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        acc += d.ln();
        for i in j + 1..n {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(acc)
}

fn check_groups(num_vars: usize, group_a: &[usize], group_b: &[usize]) -> Result<()> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Config("MI groups must be non-empty".into()));
    }
    let mut seen = vec![false; num_vars];
    for &v in group_a.iter().chain(group_b) {
        if v >= num_vars {
            return Err(Error::Config(format!("variable {v} out of range (have {num_vars})")));
        }
        if std::mem::replace(&mut seen[v], true) {
            return Err(Error::Config(format!(
                "variable {v} repeated or shared between groups"
            )));
        }
    }
    Ok(())
}

fn clip(mi: f64) -> f64 {
    if (-MI_CLIP..0.0).contains(&mi) {
        0.0
    } else {
        mi
    }
}

/// Exact `I(A; B)` in nats by enumerating the joint table, where `A` and `B`
/// are disjoint sets of variable indices.
pub fn exact_discrete_mi(joint: &DiscreteJoint, group_a: &[usize], group_b: &[usize]) -> Result<f64> {
    check_groups(joint.num_vars(), group_a, group_b)?;
    if joint.num_cells() > MAX_JOINT_CELLS {
        return Err(Error::Budget(format!(
            "{} cells exceed the enumeration cap {MAX_JOINT_CELLS}",
            joint.num_cells()
        )));
    }
    let both: Vec<usize> = group_a.iter().chain(group_b).copied().collect();
    let table = joint.marginal(&both)?;
    let nb: usize = group_b.iter().map(|&v| joint.alphabet_sizes()[v]).product();
    let na = table.num_cells() / nb;
    let mut pa = vec![0.0; na];
    let mut pb = vec![0.0; nb];
    for (cell, &p) in table.probs().iter().enumerate() {
        pa[cell / nb] += p;
        pb[cell % nb] += p;
    }
    let mut mi = 0.0;
    for (cell, &p) in table.probs().iter().enumerate() {
        if p > 0.0 {
            mi += p * (p / (pa[cell / nb] * pb[cell % nb])).ln();
        }
    }
    let mi = clip(mi);
    if mi < 0.0 {
        return Err(Error::Numeric(format!("mutual information {mi} < 0")));
    }
    Ok(mi)
}

/// Shannon entropy in nats of a variable group.
pub fn discrete_entropy(joint: &DiscreteJoint, group: &[usize]) -> Result<f64> {
    let table = joint.marginal(group)?;
    Ok(-table
        .probs()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// `ln N - loss`; negative for critics worse than chance.
pub fn nce_bound_estimate(loss: f64, n_softmax: usize) -> f64 {
    debug_assert!(n_softmax >= 2);
    (n_softmax as f64).ln() - loss
}
