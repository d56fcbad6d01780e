use super::reward::{crossmodal_reward, RewardConfig};
use super::simplex::integer_ratio;
use crate::augment::AugmentationPolicy;
use crate::contrast::{train_contrastive, ContrastiveData, FusionEncoder, NegativeProposal, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{embed_dataset, linear_probe, ProbeSplit};
use crate::manifest::Manifest;
use crate::numerics::SeededRng;
use crate::synthdata::MissingSet;
use rayon::prelude::*;
use std::collections::HashMap;
use std::fmt::Write as _;

/// Outcome of training and scoring one `(α, β)` candidate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Crossmodal retrieval accuracy, or `-inf` when the candidate failed.
    pub reward: f64,
    pub probe_accuracy: Option<f64>,
    pub failure: Option<String>,
    pub manifest: Manifest,
}

impl Evaluation {
    pub fn failed(reason: String, manifest: Manifest) -> Self {
        Self {
            reward: f64::NEG_INFINITY,
            probe_accuracy: None,
            failure: Some(reason),
            manifest,
        }
    }
}

pub trait CandidateEvaluator: Sync {
    fn evaluate(&self, alpha: &NegativeProposal, beta: &AugmentationPolicy, seed: u64) -> Result<Evaluation>;
}

/// Trains an encoder per candidate and scores it with [`crossmodal_reward`].
#[derive(Debug, Clone)]
pub struct TrainingEvaluator {
    pub data: ContrastiveData,
    pub inner: TrainConfig,
    pub reward: RewardConfig,
    /// Linear-probe epochs on the labelled reward data; 0 skips the probe.
    pub probe_epochs: usize,
}

impl CandidateEvaluator for TrainingEvaluator {
    fn evaluate(&self, alpha: &NegativeProposal, beta: &AugmentationPolicy, seed: u64) -> Result<Evaluation> {
        evaluate_candidate(alpha, beta, &self.inner, &self.data, &self.reward, self.probe_epochs, seed)
    }
}

pub fn evaluate_candidate(
    alpha: &NegativeProposal,
    beta: &AugmentationPolicy,
    inner: &TrainConfig,
    data: &ContrastiveData,
    reward: &RewardConfig,
    probe_epochs: usize,
    seed: u64,
) -> Result<Evaluation> {
    retrain_candidate(alpha, beta, inner, data, reward, probe_epochs, seed).map(|(e, _)| e)
}

/// Like [`evaluate_candidate`] but also hands back the trained encoder.
/// Divergence marks the candidate failed instead of erroring.
pub fn retrain_candidate(
    alpha: &NegativeProposal,
    beta: &AugmentationPolicy,
    train: &TrainConfig,
    data: &ContrastiveData,
    reward: &RewardConfig,
    probe_epochs: usize,
    seed: u64,
) -> Result<(Evaluation, Option<FusionEncoder>)> {
    let mut cfg = train.clone();
    cfg.proposal = alpha.clone();
    cfg.policy = beta.clone();
    cfg.seed = seed;
    let outcome = match train_contrastive(data, &cfg) {
        Ok(o) => o,
        Err(Error::Training { step, reason }) => {
            let why = format!("training diverged at step {step}: {reason}");
            return Ok((Evaluation::failed(why, cfg.manifest()), None));
        }
        Err(e) => return Err(e),
    };
    let mut manifest = outcome.manifest;
    manifest.set_count("reward.queries", reward.queries);
    manifest.set_count("reward.distractors", reward.distractors);
    manifest.set("reward.data_seed", reward.data.provenance().seed as i64);
    let score = match crossmodal_reward(&outcome.encoder, reward, &mut SeededRng::new(seed).derive(11)) {
        Ok(r) => r,
        Err(Error::Numeric(reason)) => {
            return Ok((Evaluation::failed(format!("degenerate embedding: {reason}"), manifest), None));
        }
        Err(e) => return Err(e),
    };
    manifest.set("reward.value", score);
    let probe_accuracy = match reward.data.labels() {
        Some(labels) if probe_epochs > 0 => {
            let emb = embed_dataset(&outcome.encoder, &reward.data, MissingSet::NONE)?;
            let split = ProbeSplit::holdout(labels.len(), 0.3, seed)?;
            let acc = linear_probe(&emb, labels, &split, probe_epochs)?.accuracy;
            manifest.set("probe.accuracy", acc);
            Some(acc)
        }
        _ => None,
    };
    Ok((
        Evaluation {
            reward: score,
            probe_accuracy,
            failure: None,
            manifest,
        },
        Some(outcome.encoder),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    pub alpha_candidates: Vec<NegativeProposal>,
    /// The first entry is the starting policy, normally the identity.
    pub beta_candidates: Vec<AugmentationPolicy>,
    /// Maximum number of candidate evaluations.
    pub budget: usize,
    pub rounds: usize,
    /// Every evaluation trains with this seed, so candidates share their
    /// initialisation and batch stream.
    pub seed: u64,
}

impl SearchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_candidates.is_empty() || self.beta_candidates.is_empty() {
            return Err(Error::Config("search needs at least one alpha and one beta candidate".into()));
        }
        if self.budget == 0 || self.rounds == 0 {
            return Err(Error::Config("search budget and rounds must be >= 1".into()));
        }
        let k = self.alpha_candidates[0].num_modalities();
        if self.alpha_candidates.iter().any(|a| a.num_modalities() != k)
            || self.beta_candidates.iter().any(|b| b.num_modalities() != k)
        {
            return Err(Error::Config(format!("every candidate must cover {k} modalities")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchPhase {
    Alpha,
    Beta,
}

impl SearchPhase {
    pub fn name(self) -> &'static str {
        match self {
            SearchPhase::Alpha => "alpha",
            SearchPhase::Beta => "beta",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub index: usize,
    pub round: usize,
    pub phase: SearchPhase,
    pub alpha_index: usize,
    pub beta_index: usize,
    pub alpha: NegativeProposal,
    pub beta: AugmentationPolicy,
    pub reward: f64,
    pub probe_accuracy: Option<f64>,
    pub seed: u64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub alpha_index: usize,
    pub beta_index: usize,
    pub best_reward: f64,
    /// Evaluations performed so far.
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_alpha: NegativeProposal,
    pub best_beta: AugmentationPolicy,
    pub best_reward: f64,
    /// Row of `records` holding the best candidate.
    pub best_record: usize,
    pub records: Vec<EvalRecord>,
    pub history: Vec<RoundSummary>,
    /// The budget ran out before the search finished.
    pub truncated: bool,
}

/// Alternating coordinate search: sweep α with β fixed, then β with the best
/// α fixed; repeat for `rounds` or until a round brings no improvement.
/// Pairs already evaluated are reused, and sweeps run in parallel.
pub fn optimize_samples<E: CandidateEvaluator + ?Sized>(spec: &SearchSpec, evaluator: &E) -> Result<SearchResult> {
    spec.validate()?;
    let mut records: Vec<EvalRecord> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let (mut a, mut b) = (0usize, 0usize);
    let mut history = Vec::new();
    let mut truncated = false;
    let mut previous_best = f64::NEG_INFINITY;
    for round in 0..spec.rounds {
        for phase in [SearchPhase::Alpha, SearchPhase::Beta] {
            let pairs: Vec<(usize, usize)> = match phase {
                SearchPhase::Alpha => (0..spec.alpha_candidates.len()).map(|i| (i, b)).collect(),
                SearchPhase::Beta => (0..spec.beta_candidates.len()).map(|j| (a, j)).collect(),
            };
            let fresh: Vec<(usize, usize)> = pairs.iter().copied().filter(|p| !seen.contains_key(p)).collect();
            let room = spec.budget - records.len();
            if fresh.len() > room {
                truncated = true;
            }
            let todo = &fresh[..fresh.len().min(room)];
            let evals = todo
                .par_iter()
                .map(|&(i, j)| evaluator.evaluate(&spec.alpha_candidates[i], &spec.beta_candidates[j], spec.seed))
                .collect::<Result<Vec<_>>>()?;
            for (&(i, j), e) in todo.iter().zip(evals) {
                seen.insert((i, j), records.len());
                records.push(EvalRecord {
                    index: records.len(),
                    round,
                    phase,
                    alpha_index: i,
                    beta_index: j,
                    alpha: spec.alpha_candidates[i].clone(),
                    beta: spec.beta_candidates[j].clone(),
                    reward: e.reward,
                    probe_accuracy: e.probe_accuracy,
                    seed: spec.seed,
                    failure: e.failure,
                });
            }
            let mut choice: Option<(usize, usize, f64)> = None;
            for &p in &pairs {
                if let Some(&r) = seen.get(&p) {
                    let reward = records[r].reward;
                    if choice.is_none_or(|c| reward > c.2) {
                        choice = Some((p.0, p.1, reward));
                    }
                }
            }
            if let Some((i, j, _)) = choice {
                a = i;
                b = j;
            }
            if truncated {
                break;
            }
        }
        let best = best_index(&records).map_or(f64::NEG_INFINITY, |i| records[i].reward);
        history.push(RoundSummary {
            round,
            alpha_index: a,
            beta_index: b,
            best_reward: best,
            evaluations: records.len(),
        });
        if truncated || !(best > previous_best) {
            break;
        }
        previous_best = best;
    }
    let best_record = best_index(&records).ok_or_else(|| Error::Budget("no candidate was evaluated".into()))?;
    let best = &records[best_record];
    Ok(SearchResult {
        best_alpha: best.alpha.clone(),
        best_beta: best.beta.clone(),
        best_reward: best.reward,
        best_record,
        records,
        history,
        truncated,
    })
}

/// First record with the highest reward.
fn best_index(records: &[EvalRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if best.is_none_or(|b| r.reward > records[b].reward) {
            best = Some(i);
        }
    }
    best
}

fn join_reals(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

pub fn search_table_csv(result: &SearchResult) -> String {
    let mut s = String::from("index,round,phase,alpha_index,beta_index,alpha,beta,reward,probe_accuracy,seed,status\n");
    for r in &result.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.round,
            r.phase.name(),
            r.alpha_index,
            r.beta_index,
            join_reals(r.alpha.alpha()),
            r.beta.describe(),
            r.reward,
            r.probe_accuracy.map_or(String::new(), |p| format!("{p}")),
            r.seed,
            if r.failure.is_some() { "failed" } else { "ok" },
        );
    }
    s
}

/// `key = value` summary naming the best candidate; the disturbed weights
/// are also given as an integer ratio such as `1:2:3`.
pub fn search_summary(result: &SearchResult) -> String {
    let alpha = result.best_alpha.alpha();
    let mut s = String::new();
    let _ = writeln!(s, "best_alpha = [{}]", alpha.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(", "));
    let _ = writeln!(s, "best_alpha_regular = {}", alpha[0]);
    let _ = writeln!(s, "best_alpha_ratio = \"{}\"", integer_ratio(&alpha[1..]));
    let _ = writeln!(s, "best_beta = \"{}\"", result.best_beta.describe());
    let _ = writeln!(s, "best_reward = {}", result.best_reward);
    let _ = writeln!(s, "evaluations = {}", result.records.len());
    let _ = writeln!(s, "rounds = {}", result.history.len());
    let _ = writeln!(s, "truncated = {}", result.truncated);
    s
}
