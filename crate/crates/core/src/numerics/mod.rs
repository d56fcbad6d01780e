//! Dense linear algebra, hand-written MLP passes, optimizers, gradient checking
//! and seeded randomness. Everything is `f64`.

mod gradcheck;
mod matrix;
mod mlp;
mod optim;
mod rng;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use matrix::{axpy, dot, l2_norm, Matrix};
pub use mlp::{Activation, ForwardCache, Mlp, MlpGrads, Parameters};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, Schedule};
pub use rng::{splitmix64, SeededRng};

use crate::error::{Error, Result};

/// `ln Σ exp(x)` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of `softmax(logits)` against `target`, with its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::shape("softmax target index", format!("< {}", logits.len()), target));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("logit {bad}")));
    }
    let lse = log_sum_exp(logits);
    let loss = (lse - logits[target]).max(0.0);
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.0, 0.0, 0.0], 0).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
        assert!(grad.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn saturated_logits() {
        let (loss, _) = softmax_cross_entropy(&[30.0, -30.0], 0).unwrap();
        assert!(loss < 1e-25);
    }

    #[test]
    fn one_two_three() {
        let (loss, _) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((loss - direct).abs() < 1e-14);
        assert!((loss - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0, f64::NAN], 0),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            softmax_cross_entropy(&[f64::INFINITY], 0),
            Err(Error::Numeric(_))
        ));
        assert!(softmax_cross_entropy(&[0.0], 1).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, 999.0], 1).unwrap();
        assert!((loss - (1.0 + (-1f64).exp().ln_1p())).abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }
}
