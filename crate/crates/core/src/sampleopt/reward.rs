use crate::contrast::{CriticConfig, FusionEncoder};
use crate::error::{Error, Result};
use crate::eval::embed_dataset;
use crate::numerics::{Matrix, SeededRng};
use crate::synthdata::{MissingSet, MultiModalDataset};
use rand::seq::index::sample;

/// Anything that maps every sample of a dataset to an embedding under a
/// missing-modality mask.
pub trait TupleEmbedder {
    fn num_modalities(&self) -> usize;
    fn embed(&self, ds: &MultiModalDataset, missing: MissingSet) -> Result<Matrix>;
}

impl TupleEmbedder for FusionEncoder {
    fn num_modalities(&self) -> usize {
        FusionEncoder::num_modalities(self)
    }

    fn embed(&self, ds: &MultiModalDataset, missing: MissingSet) -> Result<Matrix> {
        embed_dataset(self, ds, missing)
    }
}

/// Crossmodal retrieval task: a query sees only modality `k`, the candidate
/// keys see everything except `k`.
#[derive(Debug, Clone)]
pub struct RewardConfig {
    pub data: MultiModalDataset,
    /// Queries per modality.
    pub queries: usize,
    /// Distractor keys ranked against the true key.
    pub distractors: usize,
    pub critic: CriticConfig,
}

impl RewardConfig {
    pub fn new(data: MultiModalDataset) -> Self {
        let queries = data.len();
        Self {
            data,
            queries,
            distractors: 9,
            critic: CriticConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.critic.validate()?;
        if self.data.num_modalities() < 2 {
            return Err(Error::Config(
                "crossmodal retrieval needs at least 2 modalities".into(),
            ));
        }
        if self.distractors == 0 || self.queries == 0 {
            return Err(Error::Config("need at least one query and one distractor".into()));
        }
        if self.distractors >= self.data.len() {
            return Err(Error::Config(format!(
                "{} distractors need more than {} evaluation samples",
                self.distractors,
                self.data.len()
            )));
        }
        Ok(())
    }
}

/// Fraction of queries, over all modalities, whose true key outscores every
/// distractor. Ties count as misses.
pub fn crossmodal_reward<E: TupleEmbedder + ?Sized>(
    encoder: &E,
    cfg: &RewardConfig,
    rng: &mut SeededRng,
) -> Result<f64> {
    cfg.validate()?;
    let k_all = cfg.data.num_modalities();
    if encoder.num_modalities() != k_all {
        return Err(Error::shape("encoder modalities", k_all, encoder.num_modalities()));
    }
    let n = cfg.data.len();
    let mut correct = 0usize;
    for k in 0..k_all {
        let query_mask = MissingSet::only(k, k_all);
        let key_mask = query_mask.complement(k_all);
        let queries = encoder.embed(&cfg.data, query_mask)?;
        let keys = encoder.embed(&cfg.data, key_mask)?;
        for _ in 0..cfg.queries {
            let i = rng.below(n);
            let q = queries.row(i);
            let truth = cfg.critic.score(q, keys.row(i));
            let beaten = sample(rng, n - 1, cfg.distractors)
                .iter()
                .map(|j| if j >= i { j + 1 } else { j })
                .any(|j| cfg.critic.score(q, keys.row(j)) >= truth);
            if !beaten {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (k_all * cfg.queries) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrast::EncoderArch;
    use crate::synthdata::{ModalitySpec, Provenance};

    fn id_dataset(n: usize, k: usize) -> MultiModalDataset {
        let specs = (0..k).map(|m| ModalitySpec::gaussian(format!("m{m}"), 1, 1.0)).collect();
        let views = (0..k)
            .map(|_| Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap())
            .collect();
        MultiModalDataset::new(specs, views, None, Provenance::default()).unwrap()
    }

    /// Reads the sample id from the first present modality.
    struct IdEmbedder(usize);

    impl TupleEmbedder for IdEmbedder {
        fn num_modalities(&self) -> usize {
            self.0
        }

        fn embed(&self, ds: &MultiModalDataset, missing: MissingSet) -> Result<Matrix> {
            let k = (0..self.0).find(|&k| !missing.contains(k)).unwrap();
            let rows: Vec<Vec<f64>> = (0..ds.len())
                .map(|i| {
                    let a = ds.view(k, i)[0];
                    vec![a.cos(), a.sin()]
                })
                .collect();
            Matrix::from_rows(&rows, 2)
        }
    }

    #[test]
    fn oracle_embedder_is_perfect() {
        let ds = id_dataset(50, 3);
        let cfg = RewardConfig::new(ds);
        let r = crossmodal_reward(&IdEmbedder(3), &cfg, &mut SeededRng::new(0)).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn untrained_encoder_is_near_chance() {
        let specs = vec![ModalitySpec::gaussian("a", 4, 1.0), ModalitySpec::gaussian("b", 4, 1.0)];
        // disjoint latent supports: the modalities are independent
        let mut cfg_data = crate::synthdata::LatentFactorConfig::new(specs, 4, 0);
        cfg_data.observed = vec![vec![0, 1], vec![2, 3]];
        let ds = crate::synthdata::gen_latent_factor(&cfg_data, 1000, 1).unwrap();
        let enc = FusionEncoder::new(&EncoderArch::default(), &[4, 4], &mut SeededRng::new(2)).unwrap();
        let cfg = RewardConfig {
            queries: 500,
            ..RewardConfig::new(ds)
        };
        let r = crossmodal_reward(&enc, &cfg, &mut SeededRng::new(3)).unwrap();
        assert!((r - 0.1).abs() < 0.05, "{r}");
    }

    #[test]
    fn single_modality_is_rejected() {
        let cfg = RewardConfig::new(id_dataset(10, 1));
        assert!(matches!(
            crossmodal_reward(&IdEmbedder(1), &cfg, &mut SeededRng::new(0)),
            Err(Error::Config(_))
        ));
        let mut cfg = RewardConfig::new(id_dataset(10, 2));
        cfg.distractors = 10;
        assert!(crossmodal_reward(&IdEmbedder(2), &cfg, &mut SeededRng::new(0)).is_err());
    }
}
