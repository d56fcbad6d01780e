use super::proposal::{check_pool, draw_naive, draw_proposal, Negative, NegativeProposal, TuplePool};
use crate::augment::{apply_policy, AugmentationPolicy};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::synthdata::{MissingSet, MultiModalDataset, Tuple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeStrategy {
    /// Negatives from the mixture proposal.
    TupleDisturb,
    /// Every modality from an independent tuple.
    Naive,
}

impl NegativeStrategy {
    pub fn name(self) -> &'static str {
        match self {
            NegativeStrategy::TupleDisturb => "tuple_disturb",
            NegativeStrategy::Naive => "naive",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tuple_disturb" => Some(NegativeStrategy::TupleDisturb),
            "naive" => Some(NegativeStrategy::Naive),
            _ => None,
        }
    }
}

/// Training data. Positives are augmented copies of the anchor's own sample,
/// or of the aligned sample in `positives` when the data comes in pairs.
/// Negatives are always drawn from the positive side.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveData {
    anchors: MultiModalDataset,
    positives: Option<MultiModalDataset>,
}

impl ContrastiveData {
    pub fn single(ds: MultiModalDataset) -> Self {
        Self {
            anchors: ds,
            positives: None,
        }
    }

    pub fn paired(anchors: MultiModalDataset, positives: MultiModalDataset) -> Result<Self> {
        if anchors.len() != positives.len() {
            return Err(Error::shape("paired sample count", anchors.len(), positives.len()));
        }
        let da: Vec<usize> = anchors.specs().iter().map(|s| s.dim).collect();
        let dp: Vec<usize> = positives.specs().iter().map(|s| s.dim).collect();
        if da != dp {
            return Err(Error::shape("paired view dims", format!("{da:?}"), format!("{dp:?}")));
        }
        Ok(Self {
            anchors,
            positives: Some(positives),
        })
    }

    pub fn anchors(&self) -> &MultiModalDataset {
        &self.anchors
    }

    pub fn positive_source(&self) -> &MultiModalDataset {
        self.positives.as_ref().unwrap_or(&self.anchors)
    }

    pub fn is_paired(&self) -> bool {
        self.positives.is_some()
    }

    pub fn num_modalities(&self) -> usize {
        self.anchors.num_modalities()
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchConfig {
    pub anchors: usize,
    /// Softmax cardinality N: one positive plus `n_softmax - 1` negatives per anchor.
    pub n_softmax: usize,
    /// Augmented samples the negatives of one batch are assembled from.
    pub pool_size: usize,
    pub strategy: NegativeStrategy,
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anchors == 0 {
            return Err(Error::Config("anchors per batch must be >= 1".into()));
        }
        if self.n_softmax < 2 {
            return Err(Error::Config(format!(
                "softmax cardinality must be >= 2, got {}",
                self.n_softmax
            )));
        }
        if self.pool_size < 2 {
            return Err(Error::Pool(format!(
                "need at least 2 pool tuples, got {}",
                self.pool_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Vec<Tuple>,
    pub positives: Vec<Tuple>,
    pub negatives: Vec<Vec<Negative>>,
    /// Missing modalities of the positives and of every negative.
    pub dropout_mask: MissingSet,
    pub anchor_masks: Vec<MissingSet>,
    /// Dataset index each anchor (and its positive) came from.
    pub anchor_sources: Vec<usize>,
}

impl ContrastiveBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.anchors.first().map_or(0, Tuple::num_modalities)
    }

    /// Softmax cardinality of anchor `i`.
    pub fn n_softmax(&self, i: usize) -> usize {
        1 + self.negatives[i].len()
    }

    /// Every tuple with its mask, in the order anchors, positives, then the
    /// negatives of anchor 0, anchor 1, ….
    pub fn items(&self) -> Vec<(&Tuple, MissingSet)> {
        let mut items = Vec::with_capacity(2 * self.len() + self.negatives.iter().map(Vec::len).sum::<usize>());
        items.extend(self.anchors.iter().zip(&self.anchor_masks).map(|(t, m)| (t, *m)));
        items.extend(self.positives.iter().map(|t| (t, self.dropout_mask)));
        for negs in &self.negatives {
            items.extend(negs.iter().map(|n| (&n.tuple, self.dropout_mask)));
        }
        items
    }
}

/// Samples anchors, augments their positives with `policy`, and gives each
/// anchor `n_softmax - 1` fresh negatives assembled from a pool of augmented
/// samples. Masks are left empty; see [`apply_dropout`].
pub fn build_batch(
    data: &ContrastiveData,
    proposal: &NegativeProposal,
    policy: &AugmentationPolicy,
    cfg: &BatchConfig,
    rng: &mut SeededRng,
) -> Result<ContrastiveBatch> {
    cfg.validate()?;
    let source = data.positive_source();
    let specs = source.specs();
    let k = data.num_modalities();
    if policy.num_modalities() != k {
        return Err(Error::Policy(format!(
            "policy covers {} modalities, data has {k}",
            policy.num_modalities()
        )));
    }
    let anchor_sources = draw_indices(data.len(), cfg.anchors, rng);
    let anchors: Vec<Tuple> = anchor_sources.iter().map(|&i| data.anchors().tuple(i)).collect();
    let positives = anchor_sources
        .iter()
        .map(|&i| apply_policy(policy, specs, &source.tuple(i), MissingSet::NONE, rng))
        .collect::<Result<Vec<_>>>()?;
    let pool = draw_indices(source.len(), cfg.pool_size, rng)
        .into_iter()
        .map(|i| apply_policy(policy, specs, &source.tuple(i), MissingSet::NONE, rng))
        .collect::<Result<Vec<_>>>()?;
    let pool: &[Tuple] = &pool;
    let negatives = match cfg.strategy {
        NegativeStrategy::TupleDisturb => {
            check_pool(pool, Some(proposal))?;
            (0..cfg.anchors)
                .map(|_| {
                    (1..cfg.n_softmax)
                        .map(|_| {
                            let d = draw_proposal(proposal, pool.len(), rng);
                            Negative {
                                tuple: pool.assemble(&d.sources),
                                category: d.category,
                                sources: d.sources,
                            }
                        })
                        .collect()
                })
                .collect()
        }
        NegativeStrategy::Naive => {
            check_pool(pool, None)?;
            (0..cfg.anchors)
                .map(|_| {
                    (1..cfg.n_softmax)
                        .map(|_| {
                            let d = draw_naive(k, pool.len(), rng);
                            Negative {
                                tuple: pool.assemble(&d.sources),
                                category: d.category,
                                sources: d.sources,
                            }
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(ContrastiveBatch {
        anchors,
        positives,
        negatives,
        dropout_mask: MissingSet::NONE,
        anchor_masks: vec![MissingSet::NONE; cfg.anchors],
        anchor_sources,
    })
}

/// Distinct indices when `count <= n`, otherwise uniform with replacement.
fn draw_indices(n: usize, count: usize, rng: &mut SeededRng) -> Vec<usize> {
    if count <= n {
        rand::seq::index::sample(rng, n, count).into_vec()
    } else {
        (0..count).map(|_| rng.below(n)).collect()
    }
}

/// With probability `p` drops a uniformly chosen non-empty proper subset of
/// modalities from the positives and all negatives, and gives every anchor its
/// own uniformly chosen proper subset (possibly empty). Otherwise clears all masks.
pub fn apply_dropout(batch: &mut ContrastiveBatch, p: f64, rng: &mut SeededRng) -> Result<()> {
    let k = batch.num_modalities();
    let (batch_mask, anchor_masks) = draw_dropout(k, batch.len(), p, rng)?;
    batch.dropout_mask = batch_mask;
    batch.anchor_masks = anchor_masks;
    Ok(())
}

pub(crate) fn draw_dropout(
    k: usize,
    anchors: usize,
    p: f64,
    rng: &mut SeededRng,
) -> Result<(MissingSet, Vec<MissingSet>)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1]")));
    }
    if p > 0.0 && k < 2 {
        return Err(Error::Config(
            "modality dropout needs at least 2 modalities".into(),
        ));
    }
    if p == 0.0 || rng.uniform() >= p {
        return Ok((MissingSet::NONE, vec![MissingSet::NONE; anchors]));
    }
    let full = 1usize << k;
    // non-empty proper subsets are 1..full-1; proper subsets are 0..full-1
    let batch_mask = MissingSet::from_bits((1 + rng.below(full - 2)) as u32);
    let anchor_masks = (0..anchors)
        .map(|_| MissingSet::from_bits(rng.below(full - 1) as u32))
        .collect();
    Ok((batch_mask, anchor_masks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::NegativeCategory;
    use crate::synthdata::{gen_latent_factor, LatentFactorConfig, ModalitySpec};

    fn data(k: usize) -> ContrastiveData {
        let specs = (0..k).map(|i| ModalitySpec::gaussian(format!("m{i}"), 3, 1.0)).collect();
        ContrastiveData::single(gen_latent_factor(&LatentFactorConfig::new(specs, 2, 2), 50, 3).unwrap())
    }

    fn cfg(strategy: NegativeStrategy) -> BatchConfig {
        BatchConfig {
            anchors: 6,
            n_softmax: 5,
            pool_size: 10,
            strategy,
        }
    }

    #[test]
    fn identity_positive_equals_anchor() {
        let d = data(2);
        let mut rng = SeededRng::new(1);
        let b = build_batch(&d, &NegativeProposal::uniform(2), &AugmentationPolicy::identity(2), &cfg(NegativeStrategy::TupleDisturb), &mut rng).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(b.anchors, b.positives);
        for (a, &i) in b.anchors.iter().zip(&b.anchor_sources) {
            assert_eq!(*a, d.anchors().tuple(i));
        }
        assert!(b.negatives.iter().all(|n| n.len() == 4));
        assert_eq!(b.items().len(), 6 + 6 + 24);
    }

    #[test]
    fn disturbed_negatives_differ_in_one_modality() {
        let d = data(3);
        let mut rng = SeededRng::new(2);
        let prop = NegativeProposal::new(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = build_batch(&d, &prop, &AugmentationPolicy::identity(3), &cfg(NegativeStrategy::TupleDisturb), &mut rng).unwrap();
        for n in b.negatives.iter().flatten() {
            assert_eq!(n.category, NegativeCategory::Disturbed(1));
            assert_eq!(n.sources[0], n.sources[2]);
        }
    }

    #[test]
    fn naive_negatives_are_tagged() {
        let d = data(2);
        let mut rng = SeededRng::new(3);
        let b = build_batch(&d, &NegativeProposal::uniform(2), &AugmentationPolicy::identity(2), &cfg(NegativeStrategy::Naive), &mut rng).unwrap();
        assert!(b.negatives.iter().flatten().all(|n| n.category == NegativeCategory::Naive));
    }

    #[test]
    fn dropout_extremes() {
        let d = data(3);
        let mut rng = SeededRng::new(4);
        let mut b = build_batch(&d, &NegativeProposal::uniform(3), &AugmentationPolicy::identity(3), &cfg(NegativeStrategy::TupleDisturb), &mut rng).unwrap();
        apply_dropout(&mut b, 0.0, &mut rng).unwrap();
        assert!(b.dropout_mask.is_empty() && b.anchor_masks.iter().all(|m| m.is_empty()));
        for _ in 0..200 {
            apply_dropout(&mut b, 1.0, &mut rng).unwrap();
            assert!(!b.dropout_mask.is_empty() && !b.dropout_mask.covers_all(3));
            assert!(b.anchor_masks.iter().all(|m| !m.covers_all(3)));
        }
    }

    #[test]
    fn dropout_rejects_bad_settings() {
        let mut rng = SeededRng::new(5);
        assert!(matches!(draw_dropout(1, 3, 0.5, &mut rng), Err(Error::Config(_))));
        assert!(draw_dropout(1, 3, 0.0, &mut rng).is_ok());
        assert!(matches!(draw_dropout(3, 3, 1.5, &mut rng), Err(Error::Config(_))));
        assert!(matches!(draw_dropout(3, 3, f64::NAN, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_rate_concentrates() {
        let mut rng = SeededRng::new(6);
        let masked = (0..10_000)
            .filter(|_| !draw_dropout(3, 2, 0.6, &mut rng).unwrap().0.is_empty())
            .count();
        assert!((masked as f64 / 1e4 - 0.6).abs() < 0.02, "{masked}");
    }
}
