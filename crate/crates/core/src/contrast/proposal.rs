use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::synthdata::{MultiModalDataset, Tuple};

/// Simplex tolerance on the proposal weights.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Mixture weights `(a0, a1, …, aK)` of the negative proposal
/// `q(t) = a0 p(t) + Σ_k a_k p(rest of t without k) p(view k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeProposal {
    alpha: Vec<f64>,
}

impl NegativeProposal {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::Proposal(format!(
                "need (a0, a1, …, aK) with K >= 1, got {} weights",
                alpha.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Proposal(format!("weight {a} is not a non-negative real")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Proposal(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { alpha })
    }

    /// Plain InfoNCE negatives: all mass on regular tuples.
    pub fn regular_only(num_modalities: usize) -> Self {
        let mut alpha = vec![0.0; num_modalities + 1];
        alpha[0] = 1.0;
        Self { alpha }
    }

    pub fn uniform(num_modalities: usize) -> Self {
        let w = 1.0 / (num_modalities + 1) as f64;
        Self {
            alpha: vec![w; num_modalities + 1],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn num_modalities(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn regular_weight(&self) -> f64 {
        self.alpha[0]
    }

    /// Weight of negatives disturbed in modality `k` (0-based).
    pub fn disturbed_weight(&self, k: usize) -> f64 {
        self.alpha[k + 1]
    }

    fn draw_category(&self, rng: &mut SeededRng) -> NegativeCategory {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, a) in self.alpha.iter().enumerate() {
            acc += a;
            if u < acc && *a > 0.0 {
                return category_from_index(i);
            }
        }
        // u landed in the rounding gap above the cumulative sum
        let last = self.alpha.iter().rposition(|a| *a > 0.0).unwrap_or(0);
        category_from_index(last)
    }
}

fn category_from_index(i: usize) -> NegativeCategory {
    if i == 0 {
        NegativeCategory::Regular
    } else {
        NegativeCategory::Disturbed(i - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NegativeCategory {
    Regular,
    /// Modality `k` (0-based) swapped for that of an independent pool tuple.
    Disturbed(usize),
    /// Every modality from an independent pool tuple.
    Naive,
}

/// Which pool tuple supplied each modality of a negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeDraw {
    pub category: NegativeCategory,
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Negative {
    pub tuple: Tuple,
    pub category: NegativeCategory,
    pub sources: Vec<usize>,
}

/// Anything negatives can be assembled from.
pub trait TuplePool {
    fn pool_len(&self) -> usize;
    fn pool_modalities(&self) -> usize;
    fn pool_view(&self, modality: usize, index: usize) -> &[f64];

    fn assemble(&self, sources: &[usize]) -> Tuple {
        Tuple::new(
            sources
                .iter()
                .enumerate()
                .map(|(k, &i)| self.pool_view(k, i).to_vec())
                .collect(),
        )
    }
}

impl TuplePool for MultiModalDataset {
    fn pool_len(&self) -> usize {
        self.len()
    }
    fn pool_modalities(&self) -> usize {
        self.num_modalities()
    }
    fn pool_view(&self, modality: usize, index: usize) -> &[f64] {
        self.view(modality, index)
    }
}

impl TuplePool for [Tuple] {
    fn pool_len(&self) -> usize {
        self.len()
    }
    fn pool_modalities(&self) -> usize {
        self.first().map_or(0, Tuple::num_modalities)
    }
    fn pool_view(&self, modality: usize, index: usize) -> &[f64] {
        &self[index].views[modality]
    }
}

pub(crate) fn check_pool<P: TuplePool + ?Sized>(pool: &P, proposal: Option<&NegativeProposal>) -> Result<()> {
    if pool.pool_len() < 2 {
        return Err(Error::Pool(format!(
            "need at least 2 pool tuples, got {}",
            pool.pool_len()
        )));
    }
    if let Some(p) = proposal {
        if p.num_modalities() != pool.pool_modalities() {
            return Err(Error::Proposal(format!(
                "proposal has {} modality weights, pool tuples have {} modalities",
                p.num_modalities(),
                pool.pool_modalities()
            )));
        }
    }
    Ok(())
}

/// Index-level draw from the mixture proposal over a pool of `pool_len` tuples.
pub(crate) fn draw_proposal(
    proposal: &NegativeProposal,
    pool_len: usize,
    rng: &mut SeededRng,
) -> NegativeDraw {
    let k = proposal.num_modalities();
    let category = proposal.draw_category(rng);
    let base = rng.below(pool_len);
    let mut sources = vec![base; k];
    if let NegativeCategory::Disturbed(m) = category {
        sources[m] = rng.below(pool_len);
    }
    NegativeDraw { category, sources }
}

/// Index-level naive draw: one independent pool tuple per modality.
pub(crate) fn draw_naive(num_modalities: usize, pool_len: usize, rng: &mut SeededRng) -> NegativeDraw {
    NegativeDraw {
        category: NegativeCategory::Naive,
        sources: (0..num_modalities).map(|_| rng.below(pool_len)).collect(),
    }
}

/// Draws `m` negatives from the mixture proposal. Category counts are
/// multinomial in `alpha`; a disturbed(k) negative is a pool tuple whose view
/// `k` comes from an independently drawn pool tuple.
pub fn sample_negatives<P: TuplePool + ?Sized>(
    pool: &P,
    proposal: &NegativeProposal,
    m: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Negative>> {
    check_pool(pool, Some(proposal))?;
    if m == 0 {
        return Err(Error::Config("need at least one negative".into()));
    }
    Ok((0..m)
        .map(|_| {
            let d = draw_proposal(proposal, pool.pool_len(), rng);
            Negative {
                tuple: pool.assemble(&d.sources),
                category: d.category,
                sources: d.sources,
            }
        })
        .collect())
}

/// Negatives with every modality taken from an independently drawn pool
/// tuple (the full product of the marginals).
pub fn naive_disturb_negatives<P: TuplePool + ?Sized>(
    pool: &P,
    m: usize,
    rng: &mut SeededRng,
) -> Result<Vec<Negative>> {
    check_pool(pool, None)?;
    let k = pool.pool_modalities();
    Ok((0..m)
        .map(|_| {
            let d = draw_naive(k, pool.pool_len(), rng);
            Negative {
                tuple: pool.assemble(&d.sources),
                category: d.category,
                sources: d.sources,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::synthdata::{ModalitySpec, Provenance};

    fn pool(n: usize, k: usize) -> MultiModalDataset {
        let specs = (0..k).map(|i| ModalitySpec::gaussian(format!("m{i}"), 2, 1.0)).collect();
        // view k of sample i is (100 k + i, -(100 k + i)) so sources are recoverable
        let views = (0..k)
            .map(|m| {
                let data = (0..n)
                    .flat_map(|i| {
                        let v = (100 * m + i) as f64;
                        [v, -v]
                    })
                    .collect();
                Matrix::from_vec(n, 2, data).unwrap()
            })
            .collect();
        MultiModalDataset::new(specs, views, None, Provenance::default()).unwrap()
    }

    #[test]
    fn off_simplex_rejected() {
        assert!(matches!(
            NegativeProposal::new(vec![0.5, 0.6]),
            Err(Error::Proposal(_))
        ));
        assert!(NegativeProposal::new(vec![1.2, -0.2]).is_err());
        assert!(NegativeProposal::new(vec![0.5, 0.5 + 1e-10]).is_ok());
    }

    #[test]
    fn degenerate_regular_mixture() {
        let mut rng = SeededRng::new(1);
        let negs = sample_negatives(&pool(5, 2), &NegativeProposal::regular_only(2), 8, &mut rng).unwrap();
        assert_eq!(negs.len(), 8);
        for n in &negs {
            assert_eq!(n.category, NegativeCategory::Regular);
            assert!(n.sources.iter().all(|&s| s == n.sources[0]));
        }
    }

    #[test]
    fn all_mass_on_last_modality() {
        let mut rng = SeededRng::new(2);
        let p = pool(6, 3);
        let prop = NegativeProposal::new(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let negs = sample_negatives(&p, &prop, 8, &mut rng).unwrap();
        for n in &negs {
            assert_eq!(n.category, NegativeCategory::Disturbed(2));
            let base = p.tuple(n.sources[0]);
            assert_eq!(n.tuple.views[0], base.views[0]);
            assert_eq!(n.tuple.views[1], base.views[1]);
            assert_eq!(n.tuple.views[2], p.view(2, n.sources[2]));
        }
    }

    #[test]
    fn category_frequencies_follow_alpha() {
        let mut rng = SeededRng::new(3);
        let prop = NegativeProposal::new(vec![0.5, 0.25, 0.25]).unwrap();
        let negs = sample_negatives(&pool(10, 2), &prop, 100_000, &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for n in negs {
            match n.category {
                NegativeCategory::Regular => counts[0] += 1,
                NegativeCategory::Disturbed(k) => counts[k + 1] += 1,
                NegativeCategory::Naive => unreachable!(),
            }
        }
        for (c, a) in counts.iter().zip(prop.alpha()) {
            assert!((*c as f64 / 1e5 - a).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn pool_checks() {
        let mut rng = SeededRng::new(4);
        assert!(matches!(
            sample_negatives(&pool(1, 2), &NegativeProposal::uniform(2), 3, &mut rng),
            Err(Error::Pool(_))
        ));
        assert!(matches!(
            sample_negatives(&pool(4, 2), &NegativeProposal::uniform(3), 3, &mut rng),
            Err(Error::Proposal(_))
        ));
    }

    #[test]
    fn naive_negatives_from_two_tuples() {
        // K = 2, pool {a, b}: the four assemblies (a1,a2), (a1,b2), (b1,a2), (b1,b2)
        let p = pool(2, 2);
        let mut rng = SeededRng::new(5);
        let negs = naive_disturb_negatives(&p, 400, &mut rng).unwrap();
        let mut seen = std::collections::HashSet::new();
        for n in &negs {
            assert_eq!(n.tuple.views[0], p.view(0, n.sources[0]));
            assert_eq!(n.tuple.views[1], p.view(1, n.sources[1]));
            seen.insert(n.sources.clone());
        }
        assert_eq!(seen.len(), 4);
        assert!(naive_disturb_negatives(&p, 0, &mut rng).unwrap().is_empty());
        assert!(matches!(
            naive_disturb_negatives(&pool(1, 2), 1, &mut rng),
            Err(Error::Pool(_))
        ));
    }
}
