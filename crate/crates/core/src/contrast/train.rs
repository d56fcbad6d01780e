use super::batch::{apply_dropout, build_batch, BatchConfig, ContrastiveBatch, ContrastiveData, NegativeStrategy};
use super::encoder::{EncodePlan, EncoderArch, EncoderGrads, FusionEncoder};
use super::loss::{info_nce_into, CriticConfig};
use super::proposal::NegativeProposal;
use crate::augment::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::numerics::{Matrix, Optimizer, OptimizerConfig, OptimizerKind, Parameters, Schedule, SeededRng};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: EncoderArch,
    pub critic: CriticConfig,
    pub proposal: NegativeProposal,
    pub strategy: NegativeStrategy,
    pub policy: AugmentationPolicy,
    pub optimizer: OptimizerConfig,
    /// Softmax cardinality N (positive plus negatives per anchor).
    pub batch_size: usize,
    pub anchors_per_step: usize,
    pub pool_size: usize,
    pub steps: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for `num_modalities` modalities: uniform proposal, identity
    /// augmentation, SGD+momentum with a one-cycle schedule.
    pub fn new(num_modalities: usize, steps: usize) -> Self {
        Self {
            arch: EncoderArch::default(),
            critic: CriticConfig::default(),
            proposal: NegativeProposal::uniform(num_modalities),
            strategy: NegativeStrategy::TupleDisturb,
            policy: AugmentationPolicy::identity(num_modalities),
            optimizer: OptimizerConfig::sgd_onecycle(steps.max(1)),
            batch_size: 64,
            anchors_per_step: 32,
            pool_size: 64,
            steps,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn batch_config(&self) -> BatchConfig {
        BatchConfig {
            anchors: self.anchors_per_step,
            n_softmax: self.batch_size,
            pool_size: self.pool_size,
            strategy: self.strategy,
        }
    }

    pub fn validate(&self, data: &ContrastiveData) -> Result<()> {
        self.critic.validate()?;
        self.optimizer.validate()?;
        self.batch_config().validate()?;
        let k = data.num_modalities();
        if self.proposal.num_modalities() != k {
            return Err(Error::Proposal(format!(
                "proposal has {} modality weights, data has {k} modalities",
                self.proposal.num_modalities()
            )));
        }
        self.policy.validate(data.positive_source().specs())?;
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout probability {} outside [0, 1]", self.dropout)));
        }
        if self.dropout > 0.0 && k < 2 {
            return Err(Error::Config("modality dropout needs at least 2 modalities".into()));
        }
        if data.len() < 2 {
            return Err(Error::Pool(format!("need at least 2 samples, got {}", data.len())));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set_count("encoder.modality_hidden", self.arch.modality_hidden);
        m.set_count("encoder.modality_out", self.arch.modality_out);
        m.set_count("encoder.fusion_hidden", self.arch.fusion_hidden);
        m.set_count("encoder.embedding_dim", self.arch.embedding_dim);
        m.set("encoder.activation", self.arch.activation.name());
        m.set("critic.score", self.critic.score.name());
        m.set("critic.temperature", self.critic.temperature);
        m.set_reals("proposal.alpha", self.proposal.alpha());
        m.set("proposal.strategy", self.strategy.name());
        m.set("augment.policy", self.policy.describe());
        m.set("optimizer.kind", optimizer_name(self.optimizer.kind));
        m.set("optimizer.learning_rate", self.optimizer.learning_rate);
        m.set("optimizer.momentum", self.optimizer.momentum);
        m.set("optimizer.weight_decay", self.optimizer.weight_decay);
        match self.optimizer.schedule {
            Schedule::Constant => m.set("optimizer.schedule", "constant"),
            Schedule::OneCycle {
                total_steps,
                peak_fraction,
            } => {
                m.set("optimizer.schedule", "onecycle");
                m.set_count("optimizer.total_steps", total_steps);
                m.set("optimizer.peak_fraction", peak_fraction);
            }
        }
        m.set_count("train.batch_size", self.batch_size);
        m.set_count("train.anchors_per_step", self.anchors_per_step);
        m.set_count("train.pool_size", self.pool_size);
        m.set_count("train.steps", self.steps);
        m.set("train.dropout", self.dropout);
        m.set("train.seed", self.seed as i64);
        m
    }
}

pub fn optimizer_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::SgdMomentum => "sgd_momentum",
        OptimizerKind::Adam => "adam",
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    /// `ln N - loss`.
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: FusionEncoder,
    pub curve: Vec<LossPoint>,
    pub manifest: Manifest,
}

/// Mean TupleInfoNCE loss over a batch and, optionally, its gradient with
/// respect to every encoder parameter. `plan` must come from `batch.items()`.
pub fn batch_loss_and_grads(
    encoder: &FusionEncoder,
    batch: &ContrastiveBatch,
    plan: &EncodePlan,
    critic: &CriticConfig,
    with_grads: bool,
) -> Result<(f64, Option<EncoderGrads>)> {
    let (emb, cache) = encoder.forward(plan)?;
    let rows = plan.item_rows();
    let a = batch.len();
    if a == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    critic.validate()?;
    let scale = 1.0 / a as f64;
    let dim = emb.cols();
    let mut grad = with_grads.then(|| Matrix::zeros(emb.rows(), dim));
    let mut total = 0.0;
    let mut offset = 2 * a;
    let mut ga = vec![0.0; dim];
    let mut gc = Vec::new();
    let mut scratch = Vec::new();
    for i in 0..a {
        let m = batch.negatives[i].len();
        if m == 0 {
            return Err(Error::Config("need at least one negative".into()));
        }
        let neg_rows = &rows[offset..offset + m];
        offset += m;
        let negs: Vec<&[f64]> = neg_rows.iter().map(|&r| emb.row(r)).collect();
        ga.iter_mut().for_each(|v| *v = 0.0);
        gc.resize((1 + m) * dim, 0.0);
        total += info_nce_into(critic, emb.row(rows[i]), emb.row(rows[a + i]), &negs, &mut ga, &mut gc, &mut scratch)?;
        if let Some(g) = grad.as_mut() {
            add_scaled(g.row_mut(rows[i]), &ga, scale);
            for (&r, gn) in std::iter::once(&rows[a + i]).chain(neg_rows).zip(gc.chunks(dim)) {
                add_scaled(g.row_mut(r), gn, scale);
            }
        }
    }
    let grads = match grad {
        Some(g) => Some(encoder.backward(&cache, &g)?),
        None => None,
    };
    Ok((total * scale, grads))
}

fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Mean loss and mean `ln N - loss` over a batch.
pub fn evaluate_batch(encoder: &FusionEncoder, batch: &ContrastiveBatch, critic: &CriticConfig) -> Result<LossPoint> {
    let plan = EncodePlan::new(batch.num_modalities(), &batch.items())?;
    let (loss, _) = batch_loss_and_grads(encoder, batch, &plan, critic, false)?;
    let mean_ln_n = (0..batch.len())
        .map(|i| (batch.n_softmax(i) as f64).ln())
        .sum::<f64>()
        / batch.len() as f64;
    Ok(LossPoint {
        step: 0,
        loss,
        bound: mean_ln_n - loss,
    })
}

fn as_training_error(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric(reason) => Error::Training { step, reason },
        other => other,
    }
}

/// Trains a fresh encoder with TupleInfoNCE. Each step samples a batch,
/// applies modality dropout, and takes one optimizer step on the mean loss.
pub fn train_contrastive(data: &ContrastiveData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate(data)?;
    let root = SeededRng::new(cfg.seed);
    let dims: Vec<usize> = data.anchors().specs().iter().map(|s| s.dim).collect();
    let mut encoder = FusionEncoder::new(&cfg.arch, &dims, &mut root.derive(1))?;
    let mut sampler = root.derive(2);
    let mut optimizer = Optimizer::new(cfg.optimizer)?;
    let batch_cfg = cfg.batch_config();
    let ln_n = (cfg.batch_size as f64).ln();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = build_batch(data, &cfg.proposal, &cfg.policy, &batch_cfg, &mut sampler)?;
        apply_dropout(&mut batch, cfg.dropout, &mut sampler)?;
        let plan = EncodePlan::new(data.num_modalities(), &batch.items())?;
        let (loss, grads) = batch_loss_and_grads(&encoder, &batch, &plan, &cfg.critic, true)
            .map_err(|e| as_training_error(step, e))?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        curve.push(LossPoint {
            step,
            loss,
            bound: ln_n - loss,
        });
        let grads = grads.expect("gradients were requested");
        optimizer.step(&mut encoder, &grads)?;
    }
    let mut manifest = cfg.manifest();
    manifest.set_count("data.samples", data.len());
    manifest.set_count("data.modalities", data.num_modalities());
    manifest.set("data.paired", data.is_paired());
    manifest.set("data.seed", data.anchors().provenance().seed as i64);
    manifest.set("encoder.checksum", format!("{:016x}", encoder.checksum()));
    Ok(TrainOutcome {
        encoder,
        curve,
        manifest,
    })
}

/// Loss-plateau rule: converged once the relative change of the loss over
/// the last `window` steps drops below `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            window: 200,
            rel_tol: 1e-4,
        }
    }
}

impl Plateau {
    pub fn reached(&self, losses: &[f64]) -> bool {
        let n = losses.len();
        if n <= self.window {
            return false;
        }
        let old = losses[n - 1 - self.window];
        let new = losses[n - 1];
        (new - old).abs() <= self.rel_tol * old.abs().max(1e-12)
    }
}

#[derive(Debug, Clone)]
pub struct FixedBatchRun {
    pub losses: Vec<f64>,
    /// Step at which the plateau rule fired, if it did.
    pub converged_at: Option<usize>,
}

/// Full-batch training of `encoder` on one fixed batch until the plateau
/// rule fires or `max_steps` is reached.
pub fn train_on_fixed_batch(
    encoder: &mut FusionEncoder,
    batch: &ContrastiveBatch,
    critic: &CriticConfig,
    optimizer: OptimizerConfig,
    max_steps: usize,
    plateau: Plateau,
) -> Result<FixedBatchRun> {
    let plan = EncodePlan::new(batch.num_modalities(), &batch.items())?;
    let mut opt = Optimizer::new(optimizer)?;
    let mut losses = Vec::with_capacity(max_steps);
    for step in 0..max_steps {
        let (loss, grads) = batch_loss_and_grads(encoder, batch, &plan, critic, true)
            .map_err(|e| as_training_error(step, e))?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        losses.push(loss);
        if plateau.reached(&losses) {
            return Ok(FixedBatchRun {
                losses,
                converged_at: Some(step),
            });
        }
        opt.step(encoder, &grads.expect("gradients were requested"))?;
    }
    Ok(FixedBatchRun {
        losses,
        converged_at: None,
    })
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut s = String::from("step,loss,bound\n");
    for p in curve {
        let _ = writeln!(s, "{},{:?},{:?}", p.step, p.loss, p.bound);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Activation;
    use crate::synthdata::{gen_latent_factor, LatentFactorConfig, ModalitySpec};

    fn small_cfg(steps: usize) -> TrainConfig {
        let mut cfg = TrainConfig::new(2, steps);
        cfg.arch = EncoderArch {
            modality_hidden: 8,
            modality_out: 4,
            fusion_hidden: 8,
            embedding_dim: 4,
            activation: Activation::Relu,
        };
        cfg.batch_size = 8;
        cfg.anchors_per_step = 4;
        cfg.pool_size = 8;
        cfg.optimizer = OptimizerConfig::adam(1e-2);
        cfg
    }

    fn data() -> ContrastiveData {
        let specs = vec![ModalitySpec::gaussian("a", 3, 2.0), ModalitySpec::gaussian("b", 3, 1.0)];
        ContrastiveData::single(gen_latent_factor(&LatentFactorConfig::new(specs, 2, 2), 200, 9).unwrap())
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let d = data();
        let cfg = small_cfg(0);
        let out = train_contrastive(&d, &cfg).unwrap();
        let init = FusionEncoder::new(&cfg.arch, &[3, 3], &mut SeededRng::new(cfg.seed).derive(1)).unwrap();
        assert_eq!(out.encoder, init);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn same_seed_same_curve() {
        let d = data();
        let mut cfg = small_cfg(20);
        cfg.dropout = 0.6;
        let a = train_contrastive(&d, &cfg).unwrap();
        let b = train_contrastive(&d, &cfg).unwrap();
        assert_eq!(loss_curve_csv(&a.curve), loss_curve_csv(&b.curve));
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.manifest.get("train.steps").and_then(|v| v.as_integer()), Some(20));
    }

    #[test]
    fn divergence_names_the_step() {
        let d = data();
        let mut cfg = small_cfg(5);
        cfg.optimizer = OptimizerConfig::adam(1e300);
        match train_contrastive(&d, &cfg) {
            Err(Error::Training { step, .. }) => assert!(step >= 1),
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn plateau_rule() {
        let p = Plateau {
            window: 3,
            rel_tol: 1e-3,
        };
        assert!(!p.reached(&[1.0, 1.0, 1.0]));
        assert!(p.reached(&[1.0, 0.5, 0.5, 0.5, 0.5]));
        assert!(!p.reached(&[1.0, 0.9, 0.8, 0.7, 0.6]));
    }
}
