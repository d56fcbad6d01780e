use crate::contrast::NegativeProposal;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use rand_distr::{Distribution, Exp1};

/// Divides a non-negative vector `(a0, a1, …, aK)` by its sum.
pub fn simplex_normalize(raw: &[f64]) -> Result<NegativeProposal> {
    if let Some(v) = raw.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!("component {v} is not a non-negative real")));
    }
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::Domain("cannot normalise an all-zero vector".into()));
    }
    NegativeProposal::new(raw.iter().map(|v| v / sum).collect())
}

/// Proposal with no regular negatives and disturbed weights in the given
/// ratio, so `[1, 2, 3]` becomes `(0, 1/6, 2/6, 3/6)`.
pub fn proposal_from_ratio(disturbed: &[f64]) -> Result<NegativeProposal> {
    let raw: Vec<f64> = std::iter::once(0.0).chain(disturbed.iter().copied()).collect();
    simplex_normalize(&raw)
}

/// Every point of the simplex in `components` dimensions whose coordinates
/// are multiples of `1 / resolution`, in lexicographic order of the counts.
pub fn simplex_grid(components: usize, resolution: usize) -> Result<Vec<NegativeProposal>> {
    if components < 2 || resolution == 0 {
        return Err(Error::Config(format!(
            "simplex grid needs >= 2 components and resolution >= 1, got {components} and {resolution}"
        )));
    }
    let mut out = Vec::new();
    let mut counts = vec![0usize; components];
    fill(&mut counts, 0, resolution, &mut |c| {
        out.push(c.iter().map(|&n| n as f64 / resolution as f64).collect::<Vec<_>>())
    });
    out.into_iter().map(NegativeProposal::new).collect()
}

fn fill(counts: &mut [usize], pos: usize, left: usize, emit: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = left;
        emit(counts);
        return;
    }
    for n in (0..=left).rev() {
        counts[pos] = n;
        fill(counts, pos + 1, left - n, emit);
    }
}

/// `count` draws from the flat Dirichlet(1, …, 1).
pub fn dirichlet_candidates(components: usize, count: usize, rng: &mut SeededRng) -> Result<Vec<NegativeProposal>> {
    if components < 2 {
        return Err(Error::Config(format!("need >= 2 components, got {components}")));
    }
    (0..count)
        .map(|_| {
            let raw: Vec<f64> = (0..components).map(|_| Exp1.sample(rng)).collect();
            simplex_normalize(&raw)
        })
        .collect()
}

/// Small-integer ratio such as `1:2:3` when one exists with a common
/// denominator up to 12; otherwise the values relative to the smallest
/// positive one, to two decimals.
pub fn integer_ratio(values: &[f64]) -> String {
    let min = values.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return vec!["0"; values.len()].join(":");
    }
    for t in 1..=12u32 {
        let scale = f64::from(t) / min;
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        if scaled.iter().all(|s| (s - s.round()).abs() < 1e-6 * s.max(1.0)) {
            return scaled.iter().map(|s| format!("{}", s.round() as u64)).collect::<Vec<_>>().join(":");
        }
    }
    values.iter().map(|v| format!("{:.2}", v / min)).collect::<Vec<_>>().join(":")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalises_examples() {
        assert_eq!(simplex_normalize(&[2.0, 1.0, 1.0]).unwrap().alpha(), &[0.5, 0.25, 0.25]);
        let p = simplex_normalize(&[0.25, 0.25, 0.5]).unwrap();
        assert_eq!(p.alpha(), &[0.25, 0.25, 0.5]);
        let r = proposal_from_ratio(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in r.alpha().iter().zip([0.0, 1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_zero_and_negative() {
        assert!(matches!(simplex_normalize(&[0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(simplex_normalize(&[1.0, -0.5]), Err(Error::Domain(_))));
        assert!(matches!(simplex_normalize(&[f64::NAN, 1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn grid_counts_compositions() {
        // C(r + c - 1, c - 1)
        assert_eq!(simplex_grid(4, 3).unwrap().len(), 20);
        assert_eq!(simplex_grid(3, 4).unwrap().len(), 15);
        let g = simplex_grid(2, 2).unwrap();
        let alphas: Vec<&[f64]> = g.iter().map(|p| p.alpha()).collect();
        assert_eq!(alphas, vec![&[1.0, 0.0][..], &[0.5, 0.5], &[0.0, 1.0]]);
        assert!(simplex_grid(1, 3).is_err());
    }

    #[test]
    fn dirichlet_draws_are_seeded() {
        let a = dirichlet_candidates(4, 5, &mut SeededRng::new(3)).unwrap();
        let b = dirichlet_candidates(4, 5, &mut SeededRng::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.alpha().iter().all(|v| *v > 0.0)));
    }

    #[test]
    fn ratios() {
        assert_eq!(integer_ratio(&[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]), "1:2:3");
        assert_eq!(integer_ratio(&[0.0, 0.5, 0.5]), "0:1:1");
        assert_eq!(integer_ratio(&[0.4, 0.6]), "2:3");
        assert_eq!(integer_ratio(&[0.0, 0.0]), "0:0");
        assert_eq!(integer_ratio(&[0.3, 0.7 * std::f64::consts::PI]), "1.00:7.33");
    }
}
