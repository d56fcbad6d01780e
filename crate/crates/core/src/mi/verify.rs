use super::{exact_discrete_mi, gaussian_mi, nce_bound_estimate};
use crate::augment::AugmentationPolicy;
use crate::contrast::{
    build_batch, evaluate_batch, sample_negatives, train_on_fixed_batch, BatchConfig, ContrastiveBatch,
    ContrastiveData, CriticConfig, EncoderArch, FusionEncoder, NegativeProposal, NegativeStrategy, Plateau,
};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, OptimizerConfig, SeededRng};
use crate::synthdata::{gen_discrete_tuples, DiscreteJoint, MissingSet, ModalitySpec, MultiModalDataset, Provenance};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Where (anchor, positive) pairs come from. Both settings have exact oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSource {
    /// Joint over `2K` variables: the anchor's `K` views, then the positive's.
    Discrete(DiscreteJoint),
    /// One-dimensional unit-variance Gaussian pairs with correlation `rho`.
    Gaussian { rho: f64 },
}

impl PairSource {
    pub fn num_modalities(&self) -> usize {
        match self {
            PairSource::Discrete(j) => j.num_vars() / 2,
            PairSource::Gaussian { .. } => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PairSource::Discrete(j) => {
                if j.num_vars() % 2 != 0 {
                    return Err(Error::Config(format!(
                        "pair joint needs an even number of variables, got {}",
                        j.num_vars()
                    )));
                }
                let k = j.num_vars() / 2;
                if j.alphabet_sizes()[..k] != j.alphabet_sizes()[k..] {
                    return Err(Error::Config("anchor and positive alphabets differ".into()));
                }
                Ok(())
            }
            PairSource::Gaussian { rho } => gaussian_mi(*rho).map(|_| ()),
        }
    }

    /// `n` aligned (anchor, positive) samples.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(MultiModalDataset, MultiModalDataset)> {
        match self {
            PairSource::Discrete(j) => {
                let k = self.num_modalities();
                let ds = gen_discrete_tuples(j, n, seed)?;
                let a: Vec<usize> = (0..k).collect();
                let p: Vec<usize> = (k..2 * k).collect();
                Ok((ds.select_modalities(&a)?, ds.select_modalities(&p)?))
            }
            PairSource::Gaussian { rho } => gaussian_pairs(*rho, n, seed),
        }
    }

    /// `I(t1; t2)` and the per-modality terms `I(v2^k; v2^-k)` of the positive marginal.
    pub fn oracle_terms(&self) -> Result<(f64, Vec<f64>)> {
        match self {
            PairSource::Discrete(j) => {
                let k = self.num_modalities();
                let a: Vec<usize> = (0..k).collect();
                let p: Vec<usize> = (k..2 * k).collect();
                let pair = exact_discrete_mi(j, &a, &p)?;
                let disturbed = (0..k)
                    .map(|m| {
                        let rest: Vec<usize> = p.iter().copied().filter(|&v| v != k + m).collect();
                        if rest.is_empty() {
                            Ok(0.0)
                        } else {
                            exact_discrete_mi(j, &[k + m], &rest)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((pair, disturbed))
            }
            PairSource::Gaussian { rho } => Ok((gaussian_mi(*rho)?, vec![0.0])),
        }
    }
}

/// `n` pairs `(x, y)` with `x ~ N(0, 1)` and `y = rho x + sqrt(1 - rho²) e`.
pub fn gaussian_pairs(rho: f64, n: usize, seed: u64) -> Result<(MultiModalDataset, MultiModalDataset)> {
    gaussian_mi(rho)?;
    let mut rng = SeededRng::new(seed).derive(6);
    let s = (1.0 - rho * rho).sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.normal();
        xs.push(x);
        ys.push(rho * x + s * rng.normal());
    }
    let prov = Provenance {
        generator: "gaussian_pairs".into(),
        seed,
        params: vec![("rho".into(), format!("{rho:?}"))],
    };
    let mk = |name: &str, v: Vec<f64>| {
        MultiModalDataset::new(
            vec![ModalitySpec::gaussian(name, 1, 1.0)],
            vec![Matrix::from_vec(n, 1, v)?],
            None,
            prov.clone(),
        )
    };
    Ok((mk("x", xs)?, mk("y", ys)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub source: PairSource,
    pub proposal: NegativeProposal,
    pub n_softmax: usize,
    /// Pairs drawn for training; the fixed batch draws negatives from all of them.
    pub train_samples: usize,
    pub train_anchors: usize,
    pub eval_anchors: usize,
    /// Fresh positive-side samples the evaluation negatives are drawn from.
    pub eval_pool: usize,
    pub arch: EncoderArch,
    pub critic: CriticConfig,
    pub optimizer: OptimizerConfig,
    pub max_steps: usize,
    pub plateau: Plateau,
    pub trials: usize,
    /// Statistical slack on the inequality, in nats.
    pub epsilon: f64,
    pub seed: u64,
    /// Subtracted from the evaluated loss before forming the estimate. Only
    /// for checking that the harness can fail.
    pub loss_bias: f64,
}

impl VerifyConfig {
    pub fn new(source: PairSource, proposal: NegativeProposal) -> Self {
        Self {
            source,
            proposal,
            n_softmax: 16,
            train_samples: 2048,
            train_anchors: 256,
            eval_anchors: 10_000,
            eval_pool: 10_000,
            arch: EncoderArch {
                modality_hidden: 16,
                modality_out: 8,
                fusion_hidden: 16,
                embedding_dim: 8,
                activation: Activation::Relu,
            },
            critic: CriticConfig::default(),
            optimizer: OptimizerConfig::adam(1e-2),
            max_steps: 3000,
            plateau: Plateau::default(),
            trials: 1,
            epsilon: 0.05,
            seed: 0,
            loss_bias: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if self.proposal.num_modalities() != self.source.num_modalities() {
            return Err(Error::Proposal(format!(
                "proposal has {} modality weights, pairs have {} modalities",
                self.proposal.num_modalities(),
                self.source.num_modalities()
            )));
        }
        if self.n_softmax < 2 {
            return Err(Error::Config(format!("n_softmax must be >= 2, got {}", self.n_softmax)));
        }
        if self.trials == 0 || self.eval_anchors == 0 || self.train_anchors == 0 {
            return Err(Error::Config("trials, eval_anchors and train_anchors must be >= 1".into()));
        }
        if self.train_samples < 2 || self.eval_pool < 2 {
            return Err(Error::Pool("need at least 2 training and evaluation pool samples".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        self.critic.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiReport {
    pub trial: usize,
    pub n_softmax: usize,
    pub alpha: Vec<f64>,
    /// `I(t1; t2)`.
    pub pair_mi: f64,
    /// `I(v2^k; v2^-k)` per modality.
    pub disturbed_mi: Vec<f64>,
    /// `I(t1; t2) + Σ_k alpha_k I(v2^k; v2^-k)`.
    pub rhs_exact: f64,
    /// `ln N - L` on fresh evaluation data.
    pub bound_estimate: f64,
    /// `rhs_exact - bound_estimate`.
    pub margin: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub steps: usize,
    pub converged: bool,
    pub holds: bool,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundVerification {
    pub reports: Vec<MiReport>,
    pub epsilon: f64,
    pub converged: usize,
    pub flagged: usize,
    pub warnings: Vec<String>,
    /// Every converged trial satisfies the inequality, and at least one converged.
    pub holds: bool,
}

/// Trains a critic per trial on a fixed batch until the loss plateaus, then
/// compares `ln N - L` on fresh data with the oracle right-hand side.
/// Trials whose loss never plateaus are flagged and excluded from the verdict.
pub fn verify_tnce_bound(cfg: &VerifyConfig) -> Result<BoundVerification> {
    cfg.validate()?;
    let (pair_mi, disturbed_mi) = cfg.source.oracle_terms()?;
    let rhs = pair_mi
        + disturbed_mi
            .iter()
            .enumerate()
            .map(|(k, mi)| cfg.proposal.disturbed_weight(k) * mi)
            .sum::<f64>();
    let reports = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t, pair_mi, &disturbed_mi, rhs))
        .collect::<Result<Vec<_>>>()?;
    let converged = reports.iter().filter(|r| r.converged).count();
    let flagged = reports.len() - converged;
    let warnings = reports
        .iter()
        .filter(|r| !r.converged)
        .map(|r| format!("trial {}: no loss plateau within {} steps; excluded", r.trial, r.steps))
        .collect();
    let holds = converged > 0 && reports.iter().filter(|r| r.converged).all(|r| r.holds);
    Ok(BoundVerification {
        reports,
        epsilon: cfg.epsilon,
        converged,
        flagged,
        warnings,
        holds,
    })
}

const EVAL_CHUNK: usize = 500;

fn run_trial(cfg: &VerifyConfig, trial: usize, pair_mi: f64, disturbed_mi: &[f64], rhs: f64) -> Result<MiReport> {
    let root = SeededRng::new(cfg.seed).derive(trial as u64);
    let k = cfg.source.num_modalities();
    let (ta, tp) = cfg.source.sample(cfg.train_samples, root.derive(1).seed())?;
    let dims: Vec<usize> = ta.specs().iter().map(|s| s.dim).collect();
    let data = ContrastiveData::paired(ta, tp)?;
    let batch_cfg = BatchConfig {
        anchors: cfg.train_anchors,
        n_softmax: cfg.n_softmax,
        pool_size: cfg.train_samples,
        strategy: NegativeStrategy::TupleDisturb,
    };
    let mut rng = root.derive(2);
    let batch = build_batch(&data, &cfg.proposal, &AugmentationPolicy::identity(k), &batch_cfg, &mut rng)?;
    let mut encoder = FusionEncoder::new(&cfg.arch, &dims, &mut root.derive(3))?;
    let run = train_on_fixed_batch(&mut encoder, &batch, &cfg.critic, cfg.optimizer, cfg.max_steps, cfg.plateau)?;

    let (ea, ep) = cfg.source.sample(cfg.eval_anchors, root.derive(4).seed())?;
    let (_, pool) = cfg.source.sample(cfg.eval_pool, root.derive(5).seed())?;
    let mut neg_rng = root.derive(6);
    let mut loss_sum = 0.0;
    for start in (0..cfg.eval_anchors).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(cfg.eval_anchors);
        let negatives = (start..end)
            .map(|_| sample_negatives(&pool, &cfg.proposal, cfg.n_softmax - 1, &mut neg_rng))
            .collect::<Result<Vec<_>>>()?;
        let chunk = ContrastiveBatch {
            anchors: (start..end).map(|i| ea.tuple(i)).collect(),
            positives: (start..end).map(|i| ep.tuple(i)).collect(),
            negatives,
            dropout_mask: MissingSet::NONE,
            anchor_masks: vec![MissingSet::NONE; end - start],
            anchor_sources: (start..end).collect(),
        };
        loss_sum += evaluate_batch(&encoder, &chunk, &cfg.critic)?.loss * (end - start) as f64;
    }
    let eval_loss = loss_sum / cfg.eval_anchors as f64 - cfg.loss_bias;
    let bound_estimate = nce_bound_estimate(eval_loss, cfg.n_softmax);
    let margin = rhs - bound_estimate;
    let converged = run.converged_at.is_some();
    Ok(MiReport {
        trial,
        n_softmax: cfg.n_softmax,
        alpha: cfg.proposal.alpha().to_vec(),
        pair_mi,
        disturbed_mi: disturbed_mi.to_vec(),
        rhs_exact: rhs,
        bound_estimate,
        margin,
        train_loss: run.losses.last().copied().unwrap_or(f64::NAN),
        eval_loss,
        steps: run.losses.len(),
        converged,
        holds: margin >= -cfg.epsilon,
        notes: if converged {
            String::new()
        } else {
            "flagged: not converged".into()
        },
    })
}

pub fn bound_report_csv(reports: &[MiReport]) -> String {
    let mut s = String::from(
        "trial,n_softmax,alpha,pair_mi,disturbed_mi,rhs_exact,bound_estimate,margin,train_loss,eval_loss,steps,converged,holds\n",
    );
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{:?},{},{:?},{:?},{:?},{:?},{:?},{},{},{}",
            r.trial,
            r.n_softmax,
            join(&r.alpha),
            r.pair_mi,
            join(&r.disturbed_mi),
            r.rhs_exact,
            r.bound_estimate,
            r.margin,
            r.train_loss,
            r.eval_loss,
            r.steps,
            r.converged,
            r.holds
        );
    }
    s
}

pub fn verdict_text(v: &BoundVerification) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "bound check: ln N - L <= I(t1;t2) + sum_k alpha_k I(v^k; v^-k) + {}", v.epsilon);
    let _ = writeln!(s, "trials: {} converged, {} flagged", v.converged, v.flagged);
    for r in &v.reports {
        let _ = writeln!(
            s,
            "  trial {:>3}: estimate {:.4}  rhs {:.4}  margin {:+.4}  {}",
            r.trial,
            r.bound_estimate,
            r.rhs_exact,
            r.margin,
            if !r.converged {
                "FLAGGED"
            } else if r.holds {
                "ok"
            } else {
                "VIOLATED"
            }
        );
    }
    for w in &v.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(s, "verdict: {}", if v.holds { "HOLDS" } else { "FAILS" });
    s
}
