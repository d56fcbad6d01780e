use super::probe::{embed_dataset, linear_probe, ProbeSplit};
use crate::contrast::{train_contrastive, ContrastiveData, NegativeProposal, NegativeStrategy, TrainConfig};
use crate::error::{Error, Result};
use crate::synthdata::{gen_latent_factor, gen_latent_views, LatentFactorConfig, MissingSet, MultiModalDataset};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Shared setup of the probe experiments: how data is generated, the base
/// training recipe, and how representations are scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: LatentFactorConfig,
    pub samples: usize,
    /// Positives come from a second view with independent noise rather than
    /// from augmenting the anchor itself.
    pub paired: bool,
    /// Run `s` generates its data with seed `data_seed + s`.
    pub data_seed: u64,
    pub train: TrainConfig,
    pub probe_epochs: usize,
    pub test_fraction: f64,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.data.num_classes < 2 {
            return Err(Error::Config("probe experiments need labelled data (num_classes >= 2)".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        Ok(())
    }

    /// Training data and the labelled dataset probes are fitted on.
    pub fn dataset(&self, seed: u64) -> Result<(ContrastiveData, MultiModalDataset)> {
        let data_seed = self.data_seed.wrapping_add(seed);
        if self.paired {
            let (a, b) = gen_latent_views(&self.data, self.samples, data_seed)?;
            Ok((ContrastiveData::paired(a.clone(), b)?, a))
        } else {
            let a = gen_latent_factor(&self.data, self.samples, data_seed)?;
            Ok((ContrastiveData::single(a.clone()), a))
        }
    }
}

/// One trained-and-probed cell of an experiment table.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub accuracy: f64,
    /// Mean `ln N - loss` over the last tenth of training.
    pub final_bound: f64,
    pub encoder_checksum: u64,
}

/// Trains `train` on `data` and probes the full-modality embedding of
/// `probe_ds` on a held-out split seeded by `seed`.
pub fn train_and_probe(
    data: &ContrastiveData,
    probe_ds: &MultiModalDataset,
    train: &TrainConfig,
    probe_epochs: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<ProbeRun> {
    let labels = probe_ds
        .labels()
        .ok_or_else(|| Error::DegenerateLabels("probe dataset has no labels".into()))?;
    let out = train_contrastive(data, train)?;
    let emb = embed_dataset(&out.encoder, probe_ds, MissingSet::NONE)?;
    let split = ProbeSplit::holdout(labels.len(), test_fraction, seed)?;
    let accuracy = linear_probe(&emb, labels, &split, probe_epochs)?.accuracy;
    let tail = (out.curve.len() / 10).max(1).min(out.curve.len());
    let final_bound = if tail == 0 {
        0.0
    } else {
        out.curve[out.curve.len() - tail..].iter().map(|p| p.bound).sum::<f64>() / tail as f64
    };
    Ok(ProbeRun {
        accuracy,
        final_bound,
        encoder_checksum: crate::numerics::Parameters::checksum(&out.encoder),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn subset_label(subset: &[usize]) -> String {
    subset.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub subset: Vec<usize>,
    pub seed: u64,
    pub run: ProbeRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn mean_accuracy(&self, subset: &[usize]) -> f64 {
        mean(self.rows.iter().filter(|r| r.subset == subset).map(|r| r.run.accuracy))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("subset,num_modalities,seed,accuracy,final_bound,encoder_checksum\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:016x}",
                subset_label(&r.subset),
                r.subset.len(),
                r.seed,
                r.run.accuracy,
                r.run.final_bound,
                r.run.encoder_checksum
            );
        }
        s
    }
}

/// Trains one encoder per (modality subset, seed) with the same recipe and
/// probes each on its subset's views.
pub fn modality_scaling_experiment(cfg: &ExperimentConfig, subsets: &[Vec<usize>]) -> Result<ScalingTable> {
    cfg.validate()?;
    let k = cfg.data.specs.len();
    for (i, s) in subsets.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::Config("modality subsets must be non-empty".into()));
        }
        if let Some(&bad) = s.iter().find(|&&m| m >= k) {
            return Err(Error::Config(format!("modality {bad} out of range for {k} modalities")));
        }
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != s.len() {
            return Err(Error::Config(format!("subset {s:?} repeats a modality")));
        }
        if subsets[..i].iter().any(|t| {
            let mut t = t.clone();
            t.sort_unstable();
            t == sorted
        }) {
            return Err(Error::Config(format!("duplicate modality subset {s:?}")));
        }
    }
    let cells: Vec<(usize, u64)> = (0..subsets.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs = cells
        .par_iter()
        .map(|&(i, seed)| {
            let subset = &subsets[i];
            let (data, probe_ds) = cfg.dataset(seed)?;
            let data = if data.is_paired() {
                ContrastiveData::paired(
                    data.anchors().select_modalities(subset)?,
                    data.positive_source().select_modalities(subset)?,
                )?
            } else {
                ContrastiveData::single(data.anchors().select_modalities(subset)?)
            };
            let probe_ds = probe_ds.select_modalities(subset)?;
            let mut train = cfg.train.clone();
            train.seed = seed;
            train.proposal = restrict_proposal(&cfg.train.proposal, subset)?;
            train.policy.entries = subset.iter().map(|&m| cfg.train.policy.entries[m]).collect();
            if subset.len() < 2 {
                train.dropout = 0.0;
            }
            train_and_probe(&data, &probe_ds, &train, cfg.probe_epochs, cfg.test_fraction, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalingTable {
        rows: cells
            .into_iter()
            .zip(runs)
            .map(|((i, seed), run)| ScalingRow {
                subset: subsets[i].clone(),
                seed,
                run,
            })
            .collect(),
    })
}

/// Keeps the regular weight and the disturbed weights of `subset`,
/// renormalised; a proposal with no mass left becomes uniform.
fn restrict_proposal(p: &NegativeProposal, subset: &[usize]) -> Result<NegativeProposal> {
    let raw: Vec<f64> = std::iter::once(p.regular_weight())
        .chain(subset.iter().map(|&m| p.disturbed_weight(m)))
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 {
        NegativeProposal::new(raw.iter().map(|v| v / sum).collect())
    } else {
        Ok(NegativeProposal::uniform(subset.len()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub strategy: NegativeStrategy,
    pub batch_size: usize,
    pub seed: u64,
    pub run: ProbeRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyTable {
    pub rows: Vec<EfficiencyRow>,
}

impl EfficiencyTable {
    pub fn get(&self, strategy: NegativeStrategy, batch_size: usize, seed: u64) -> Option<&ProbeRun> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.batch_size == batch_size && r.seed == seed)
            .map(|r| &r.run)
    }

    pub fn mean_accuracy(&self, strategy: NegativeStrategy, batch_size: usize) -> f64 {
        mean(
            self.rows
                .iter()
                .filter(|r| r.strategy == strategy && r.batch_size == batch_size)
                .map(|r| r.run.accuracy),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,batch_size,seed,accuracy,final_bound,encoder_checksum\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:016x}",
                r.strategy.name(),
                r.batch_size,
                r.seed,
                r.run.accuracy,
                r.run.final_bound,
                r.run.encoder_checksum
            );
        }
        s
    }
}

/// Accuracy against softmax cardinality for each negative strategy.
pub fn sampling_efficiency_experiment(
    cfg: &ExperimentConfig,
    batch_sizes: &[usize],
    strategies: &[NegativeStrategy],
) -> Result<EfficiencyTable> {
    cfg.validate()?;
    if batch_sizes.len() < 2 {
        return Err(Error::Config("need at least two batch sizes".into()));
    }
    if strategies.is_empty() {
        return Err(Error::Config("need at least one strategy".into()));
    }
    let cells: Vec<(NegativeStrategy, usize, u64)> = strategies
        .iter()
        .flat_map(|&st| {
            batch_sizes
                .iter()
                .flat_map(move |&b| cfg.seeds.iter().map(move |&s| (st, b, s)))
        })
        .collect();
    let runs = cells
        .par_iter()
        .map(|&(strategy, batch_size, seed)| {
            let (data, probe_ds) = cfg.dataset(seed)?;
            let mut train = cfg.train.clone();
            train.strategy = strategy;
            train.batch_size = batch_size;
            train.seed = seed;
            train_and_probe(&data, &probe_ds, &train, cfg.probe_epochs, cfg.test_fraction, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EfficiencyTable {
        rows: cells
            .into_iter()
            .zip(runs)
            .map(|((strategy, batch_size, seed), run)| EfficiencyRow {
                strategy,
                batch_size,
                seed,
                run,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutRow {
    pub dropout: f64,
    pub seed: u64,
    pub run: ProbeRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutTable {
    pub rows: Vec<DropoutRow>,
}

impl DropoutTable {
    pub fn mean_accuracy(&self, dropout: f64) -> f64 {
        mean(self.rows.iter().filter(|r| r.dropout == dropout).map(|r| r.run.accuracy))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dropout,seed,accuracy,final_bound,encoder_checksum\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:016x}",
                r.dropout, r.seed, r.run.accuracy, r.run.final_bound, r.run.encoder_checksum
            );
        }
        s
    }
}

/// Full-modality probe accuracy of encoders trained with each dropout probability.
pub fn dropout_robustness_experiment(cfg: &ExperimentConfig, probabilities: &[f64]) -> Result<DropoutTable> {
    cfg.validate()?;
    if probabilities.is_empty() {
        return Err(Error::Config("need at least one dropout probability".into()));
    }
    let cells: Vec<(f64, u64)> = probabilities
        .iter()
        .flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let runs = cells
        .par_iter()
        .map(|&(p, seed)| {
            let (data, probe_ds) = cfg.dataset(seed)?;
            let mut train = cfg.train.clone();
            train.dropout = p;
            train.seed = seed;
            train_and_probe(&data, &probe_ds, &train, cfg.probe_epochs, cfg.test_fraction, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DropoutTable {
        rows: cells
            .into_iter()
            .zip(runs)
            .map(|((dropout, seed), run)| DropoutRow { dropout, seed, run })
            .collect(),
    })
}
