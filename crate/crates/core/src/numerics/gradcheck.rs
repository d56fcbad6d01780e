use super::rng::SeededRng;
use crate::error::{Error, Result};
use rand::seq::index::sample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    /// Coordinates checked; all of them when the parameter count is smaller.
    pub max_coords: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error at this scale.
    pub denominator_floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            max_coords: 256,
            denominator_floor: 1e-6,
            seed: 0,
        }
    }
}

impl GradcheckConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub coords_checked: usize,
    pub pass: bool,
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// finite differences on a seeded subset of coordinates.
pub fn gradcheck<F>(mut loss_fn: F, params: &[f64], config: &GradcheckConfig) -> Result<GradcheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (loss, analytic) = loss_fn(params)?;
    let (again, _) = loss_fn(params)?;
    if loss.to_bits() != again.to_bits() {
        return Err(Error::Determinism {
            first: loss,
            second: again,
        });
    }
    if analytic.len() != params.len() {
        return Err(Error::shape("analytic gradient", params.len(), analytic.len()));
    }
    let coords: Vec<usize> = if params.len() <= config.max_coords {
        (0..params.len()).collect()
    } else {
        let mut rng = SeededRng::new(config.seed);
        let mut idx = sample(&mut rng, params.len(), config.max_coords).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut probe = params.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst_coord = coords.first().copied().unwrap_or(0);
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + config.step;
        let (plus, _) = loss_fn(&probe)?;
        probe[i] = orig - config.step;
        let (minus, _) = loss_fn(&probe)?;
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * config.step);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            return Err(Error::Numeric(format!(
                "coordinate {i}: analytic {a}, numeric {numeric}"
            )));
        }
        let denom = a.abs().max(numeric.abs()).max(config.denominator_floor);
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = i;
        }
    }
    Ok(GradcheckReport {
        max_rel_err,
        worst_coord,
        coords_checked: coords.len(),
        pass: max_rel_err < config.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn quadratic(p: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((0.5 * p.iter().map(|x| x * x).sum::<f64>(), p.to_vec()))
    }

    #[test]
    fn quadratic_passes_tightly() {
        let p = [0.3, -1.2, 2.5, 0.01];
        let r = gradcheck(quadratic, &p, &GradcheckConfig::with_tolerance(1e-8)).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.max_rel_err < 1e-8);
    }

    #[test]
    fn doubled_gradient_fails() {
        let p = [0.3, -1.2, 2.5];
        let bad = |p: &[f64]| {
            let (l, g) = quadratic(p)?;
            Ok((l, g.iter().map(|x| 2.0 * x).collect()))
        };
        let r = gradcheck(bad, &p, &GradcheckConfig::default()).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn nondeterminism_detected() {
        let calls = Cell::new(0u32);
        let noisy = |p: &[f64]| {
            calls.set(calls.get() + 1);
            let (l, g) = quadratic(p)?;
            Ok((l + calls.get() as f64 * 1e-3, g))
        };
        assert!(matches!(
            gradcheck(noisy, &[1.0], &GradcheckConfig::default()),
            Err(Error::Determinism { .. })
        ));
    }

    #[test]
    fn subsamples_large_parameter_vectors() {
        let p: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let cfg = GradcheckConfig {
            max_coords: 50,
            ..GradcheckConfig::default()
        };
        let r = gradcheck(quadratic, &p, &cfg).unwrap();
        assert_eq!(r.coords_checked, 50);
        assert!(r.pass);
    }
}
