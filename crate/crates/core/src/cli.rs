//! Command-line front end: the run configuration, one function per
//! subcommand, and run manifests that are enough to repeat a run.
//!
//! Configs are TOML with dotted sections. Every key has a default, unknown
//! keys are rejected, and the fully resolved config is echoed into each run's
//! `manifest.txt` under `config.`.

use crate::augment::{enumerate_policies, AugmentationPolicy, PolicySpace, ViewAugment};
use crate::contrast::{
    load_encoder, loss_curve_csv, save_encoder, train_contrastive, ContrastiveData, CriticConfig, EncoderArch,
    NegativeProposal, NegativeStrategy, Plateau, Score, TrainConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    dropout_robustness_experiment, embed_dataset, knn_probe, linear_probe, modality_scaling_experiment,
    sampling_efficiency_experiment, ExperimentConfig, ProbeSplit,
};
use crate::manifest::Manifest;
use crate::mi::{bound_report_csv, verdict_text, verify_tnce_bound, PairSource, VerifyConfig};
use crate::numerics::{Activation, OptimizerConfig, OptimizerKind, Parameters, Schedule, SeededRng};
use crate::sampleopt::{optimize_samples, search_table_csv, search_summary, simplex_grid, RewardConfig, SearchSpec, TrainingEvaluator};
use crate::synthdata::{
    gen_latent_factor, load_dataset, save_dataset, write_atomic, DiscreteJoint, LatentFactorConfig, MissingSet,
    ModalitySpec, MultiModalDataset, ViewKind,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed: training, probe splits and search all derive from it.
    pub seed: u64,
    /// Used when neither `--out` nor `OUTPUT_DIR` is given.
    pub output_dir: String,
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub critic: CriticSection,
    pub proposal: ProposalSection,
    pub augment: AugmentSection,
    pub optimizer: OptimizerSection,
    pub train: TrainSection,
    pub probe: ProbeSection,
    pub verify: VerifySection,
    pub search: SearchSection,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            data: DataSection::default(),
            encoder: EncoderSection::default(),
            critic: CriticSection::default(),
            proposal: ProposalSection::default(),
            augment: AugmentSection::default(),
            optimizer: OptimizerSection::default(),
            train: TrainSection::default(),
            probe: ProbeSection::default(),
            verify: VerifySection::default(),
            search: SearchSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

/// Shared-latent synthetic data. Per-modality lists must all have one entry
/// per modality; `names` and `kinds` may be left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub samples: usize,
    /// Draw a second view per sample and use it as the positive.
    pub paired: bool,
    /// The dataset seed is `data.seed + seed`.
    pub seed: u64,
    pub names: Vec<String>,
    /// `gaussian`, `coords2d` or `discrete`; empty means all gaussian.
    pub kinds: Vec<String>,
    /// View dimension; for `coords2d` twice the number of points.
    pub dims: Vec<usize>,
    pub snr: Vec<f64>,
    /// Alphabet size of discrete modalities (ignored for the others).
    pub alphabet_sizes: Vec<usize>,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub label_coordinate: usize,
    pub nuisance_std: Vec<f64>,
    pub observed: Vec<Vec<usize>>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            samples: 3000,
            paired: true,
            seed: 100,
            names: Vec::new(),
            kinds: Vec::new(),
            dims: vec![4, 4, 4],
            snr: vec![2.0, 1.0, 0.5],
            alphabet_sizes: Vec::new(),
            latent_dim: 4,
            num_classes: 4,
            label_coordinate: 0,
            nuisance_std: Vec::new(),
            observed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub modality_hidden: usize,
    pub modality_out: usize,
    pub fusion_hidden: usize,
    pub embedding_dim: usize,
    /// `relu`, `tanh` or `identity`.
    pub activation: String,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            modality_hidden: 64,
            modality_out: 32,
            fusion_hidden: 64,
            embedding_dim: 32,
            activation: "relu".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSection {
    /// `cosine` or `dot`.
    pub score: String,
    pub temperature: f64,
}

impl Default for CriticSection {
    fn default() -> Self {
        Self {
            score: "cosine".into(),
            temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalSection {
    /// `[alpha_0, alpha_1..alpha_K]`, normalised on load; empty means uniform.
    pub alpha: Vec<f64>,
    /// `tuple_disturb` or `naive`.
    pub strategy: String,
}

impl Default for ProposalSection {
    fn default() -> Self {
        Self {
            alpha: Vec::new(),
            strategy: "tuple_disturb".into(),
        }
    }
}

/// Per-modality augmentation; empty lists mean the identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Absolute variance of the added Gaussian noise.
    pub noise_variance: Vec<f64>,
    pub mask_fraction: Vec<f64>,
    pub rotation_deg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    /// `adam` or `sgd_momentum`.
    pub kind: String,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `constant` or `onecycle` (over `train.steps`).
    pub schedule: String,
    pub peak_fraction: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            kind: "adam".into(),
            learning_rate: 0.003,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: "constant".into(),
            peak_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Softmax cardinality N: the positive plus N - 1 negatives.
    pub batch_size: usize,
    pub anchors_per_step: usize,
    pub pool_size: usize,
    pub steps: usize,
    pub dropout: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 64,
            anchors_per_step: 32,
            pool_size: 128,
            steps: 600,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    /// `linear` or `knn`.
    pub kind: String,
    pub epochs: usize,
    pub knn_k: usize,
    pub test_fraction: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            kind: "linear".into(),
            epochs: 300,
            knn_k: 5,
            test_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// `gaussian` (1-D pairs with correlation `rho`) or `discrete`.
    pub source: String,
    pub rho: f64,
    /// Per-modality alphabets of a random discrete pair joint.
    pub alphabets: Vec<usize>,
    /// Per-modality probability that the positive copies the anchor's symbol.
    pub keep: Vec<f64>,
    pub joint_seed: u64,
    /// Proposal weights; empty means regular negatives only.
    pub alpha: Vec<f64>,
    pub n_softmax: usize,
    pub train_samples: usize,
    pub train_anchors: usize,
    pub eval_anchors: usize,
    pub eval_pool: usize,
    pub modality_hidden: usize,
    pub modality_out: usize,
    pub fusion_hidden: usize,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub plateau_window: usize,
    pub plateau_rel_tol: f64,
    pub trials: usize,
    pub epsilon: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let plateau = Plateau::default();
        Self {
            source: "gaussian".into(),
            rho: 0.8,
            alphabets: vec![3, 2],
            keep: vec![0.8, 0.5],
            joint_seed: 0,
            alpha: Vec::new(),
            n_softmax: 128,
            train_samples: 1024,
            train_anchors: 1024,
            eval_anchors: 10_000,
            eval_pool: 10_000,
            modality_hidden: 8,
            modality_out: 4,
            fusion_hidden: 8,
            embedding_dim: 4,
            learning_rate: 0.01,
            max_steps: 4000,
            plateau_window: plateau.window,
            plateau_rel_tol: plateau.rel_tol,
            trials: 3,
            epsilon: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    /// α candidates are the simplex grid with this many steps per unit.
    pub alpha_resolution: usize,
    /// β candidates: every combination of these noise levels, in percent of
    /// each view's variance.
    pub noise_levels: Vec<f64>,
    pub policy_cap: usize,
    pub budget: usize,
    pub rounds: usize,
    pub inner_steps: usize,
    pub inner_dropout: f64,
    /// The reward set is drawn with seed `eval_seed + seed`.
    pub eval_samples: usize,
    pub eval_seed: u64,
    /// Queries per modality; 0 means every reward sample.
    pub queries: usize,
    pub distractors: usize,
    /// Probe epochs per candidate; 0 skips the probe.
    pub probe_epochs: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            alpha_resolution: 3,
            noise_levels: vec![0.0],
            policy_cap: 1000,
            budget: 64,
            rounds: 3,
            inner_steps: 300,
            inner_dropout: 0.6,
            eval_samples: 1000,
            eval_seed: 5000,
            queries: 0,
            distractors: 9,
            probe_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub subsets: Vec<Vec<usize>>,
    pub batch_sizes: Vec<usize>,
    pub strategies: Vec<String>,
    pub dropout: Vec<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            subsets: vec![vec![0], vec![0, 1], vec![0, 1, 2]],
            batch_sizes: vec![64, 128],
            strategies: vec!["tuple_disturb".into(), "naive".into()],
            dropout: vec![0.0, 0.6],
        }
    }
}

fn per_modality<T: Clone>(name: &str, values: &[T], k: usize, default: T) -> Result<Vec<T>> {
    match values.len() {
        0 => Ok(vec![default; k]),
        n if n == k => Ok(values.to_vec()),
        n => Err(Error::Config(format!("{name} has {n} entries for {k} modalities"))),
    }
}

fn proposal(alpha: &[f64], k: usize, empty: NegativeProposal) -> Result<NegativeProposal> {
    if alpha.is_empty() {
        return Ok(empty);
    }
    if alpha.len() != k + 1 {
        return Err(Error::Config(format!(
            "proposal needs {} weights for {k} modalities, got {}",
            k + 1,
            alpha.len()
        )));
    }
    let sum: f64 = alpha.iter().sum();
    if alpha.iter().any(|a| !(*a >= 0.0)) || !(sum > 0.0) {
        return Err(Error::Config(format!("proposal weights {alpha:?} must be non-negative with a positive sum")));
    }
    NegativeProposal::new(alpha.iter().map(|a| a / sum).collect())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every resolved key under `config.`, in declaration order.
    pub fn manifest(&self) -> Result<Manifest> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut m = Manifest::new();
        flatten("config", &value, &mut m);
        Ok(m)
    }

    pub fn num_modalities(&self) -> usize {
        self.data.dims.len()
    }

    pub fn latent_config(&self) -> Result<LatentFactorConfig> {
        let d = &self.data;
        let k = d.dims.len();
        if k == 0 {
            return Err(Error::Config("data.dims must list at least one modality".into()));
        }
        let names = per_modality("data.names", &d.names, k, String::new())?;
        let kinds = per_modality("data.kinds", &d.kinds, k, "gaussian".to_string())?;
        let snr = per_modality("data.snr", &d.snr, k, 1.0)?;
        let alphabets = per_modality("data.alphabet_sizes", &d.alphabet_sizes, k, 0)?;
        let specs = (0..k)
            .map(|m| {
                let name = if names[m].is_empty() { format!("m{m}") } else { names[m].clone() };
                let kind = ViewKind::from_name(&kinds[m])
                    .ok_or_else(|| Error::Config(format!("data.kinds: unknown view kind {:?}", kinds[m])))?;
                Ok(match kind {
                    ViewKind::Gaussian => ModalitySpec::gaussian(name, d.dims[m], snr[m]),
                    ViewKind::Coords2d => {
                        if d.dims[m] % 2 != 0 {
                            return Err(Error::Config(format!("data.dims: coords2d modality {m} needs an even dim")));
                        }
                        ModalitySpec::coords2d(name, d.dims[m] / 2, snr[m])
                    }
                    ViewKind::Discrete => ModalitySpec {
                        snr: snr[m],
                        ..ModalitySpec::discrete(name, alphabets[m])
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = LatentFactorConfig::new(specs, d.latent_dim, d.num_classes);
        cfg.label_coordinate = d.label_coordinate;
        cfg.nuisance_std = d.nuisance_std.clone();
        cfg.observed = d.observed.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, k: usize) -> Result<TrainConfig> {
        let e = &self.encoder;
        let o = &self.optimizer;
        let mut t = TrainConfig::new(k, self.train.steps);
        t.arch = EncoderArch {
            modality_hidden: e.modality_hidden,
            modality_out: e.modality_out,
            fusion_hidden: e.fusion_hidden,
            embedding_dim: e.embedding_dim,
            activation: Activation::from_name(&e.activation)
                .ok_or_else(|| Error::Config(format!("encoder.activation: unknown {:?}", e.activation)))?,
        };
        t.critic = CriticConfig {
            score: Score::from_name(&self.critic.score)
                .ok_or_else(|| Error::Config(format!("critic.score: unknown {:?}", self.critic.score)))?,
            temperature: self.critic.temperature,
        };
        t.proposal = proposal(&self.proposal.alpha, k, NegativeProposal::uniform(k))?;
        t.strategy = NegativeStrategy::from_name(&self.proposal.strategy)
            .ok_or_else(|| Error::Config(format!("proposal.strategy: unknown {:?}", self.proposal.strategy)))?;
        let a = &self.augment;
        let noise = per_modality("augment.noise_variance", &a.noise_variance, k, 0.0)?;
        let mask = per_modality("augment.mask_fraction", &a.mask_fraction, k, 0.0)?;
        let rot = per_modality("augment.rotation_deg", &a.rotation_deg, k, 0.0)?;
        t.policy = AugmentationPolicy {
            entries: (0..k).map(|m| ViewAugment::new(noise[m], mask[m], rot[m])).collect(),
        };
        let kind = match o.kind.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd_momentum" => OptimizerKind::SgdMomentum,
            other => return Err(Error::Config(format!("optimizer.kind: unknown {other:?}"))),
        };
        let schedule = match o.schedule.as_str() {
            "constant" => Schedule::Constant,
            "onecycle" => Schedule::OneCycle {
                total_steps: self.train.steps.max(1),
                peak_fraction: o.peak_fraction,
            },
            other => return Err(Error::Config(format!("optimizer.schedule: unknown {other:?}"))),
        };
        t.optimizer = OptimizerConfig {
            kind,
            learning_rate: o.learning_rate,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            schedule,
        };
        t.optimizer.validate()?;
        t.batch_size = self.train.batch_size;
        t.anchors_per_step = self.train.anchors_per_step;
        t.pool_size = self.train.pool_size;
        t.dropout = self.train.dropout;
        t.seed = self.seed;
        Ok(t)
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let data = self.latent_config()?;
        Ok(ExperimentConfig {
            train: self.train_config(data.specs.len())?,
            data,
            samples: self.data.samples,
            paired: self.data.paired,
            data_seed: self.data.seed,
            probe_epochs: self.probe.epochs,
            test_fraction: self.probe.test_fraction,
            seeds: self.experiment.seeds.clone(),
        })
    }

    pub fn verify_config(&self) -> Result<VerifyConfig> {
        let v = &self.verify;
        let source = match v.source.as_str() {
            "gaussian" => PairSource::Gaussian { rho: v.rho },
            "discrete" => PairSource::Discrete(DiscreteJoint::random_pair(
                &v.alphabets,
                &v.keep,
                &mut SeededRng::new(v.joint_seed),
            )?),
            other => return Err(Error::Config(format!("verify.source: unknown {other:?}"))),
        };
        let k = source.num_modalities();
        let mut cfg = VerifyConfig::new(source, proposal(&v.alpha, k, NegativeProposal::regular_only(k))?);
        cfg.n_softmax = v.n_softmax;
        cfg.train_samples = v.train_samples;
        cfg.train_anchors = v.train_anchors;
        cfg.eval_anchors = v.eval_anchors;
        cfg.eval_pool = v.eval_pool;
        cfg.arch = EncoderArch {
            modality_hidden: v.modality_hidden,
            modality_out: v.modality_out,
            fusion_hidden: v.fusion_hidden,
            embedding_dim: v.embedding_dim,
            activation: Activation::Relu,
        };
        cfg.critic = self.train_config(1)?.critic;
        cfg.optimizer = OptimizerConfig::adam(v.learning_rate);
        cfg.max_steps = v.max_steps;
        cfg.plateau = Plateau {
            window: v.plateau_window,
            rel_tol: v.plateau_rel_tol,
        };
        cfg.trials = v.trials;
        cfg.epsilon = v.epsilon;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

fn flatten(prefix: &str, value: &toml::Value, m: &mut Manifest) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&format!("{prefix}.{k}"), v, m);
            }
        }
        v => m.set(prefix, v.clone()),
    }
}

/// What a subcommand concluded, beyond having written its outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    VerificationFailed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::VerificationFailed => 3,
        }
    }
}

/// 1 for configuration and usage errors, 2 for everything that fails while running.
pub fn error_exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Proposal(_) | Error::Policy(_) | Error::Mask(_) => 1,
        _ => 2,
    }
}

#[derive(Debug, Parser)]
#[command(name = "tuplelab", version, about = "Tuple contrastive learning lab on synthetic multi-modal data")]
pub struct Cli {
    /// Worker threads for independent trials and table cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// TOML run config; defaults are used for a missing file argument.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides OUTPUT_DIR and `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured dataset (and its paired view).
    GenData(Common),
    /// Train an encoder; writes a checkpoint and the loss curve.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train on a saved dataset instead of generating one.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Aligned positive views for `--data`.
        #[arg(long, requires = "data")]
        positives: Option<PathBuf>,
    },
    /// Check the TupleInfoNCE bound against exact MI; exit code 3 if it fails.
    VerifyBound(Common),
    /// Search proposal weights and augmentation policies.
    OptimizeSamples(Common),
    /// Linear or k-NN probe of a frozen checkpoint on a labelled dataset.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run an ablation table.
    Experiment {
        #[arg(value_enum)]
        which: ExperimentKind,
        #[command(flatten)]
        common: Common,
    },
    /// Repeat a run from its manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    ModalityScaling,
    SamplingEfficiency,
    DropoutRobustness,
}

impl ExperimentKind {
    fn name(self) -> &'static str {
        match self {
            ExperimentKind::ModalityScaling => "modality-scaling",
            ExperimentKind::SamplingEfficiency => "sampling-efficiency",
            ExperimentKind::DropoutRobustness => "dropout-robustness",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        [
            ExperimentKind::ModalityScaling,
            ExperimentKind::SamplingEfficiency,
            ExperimentKind::DropoutRobustness,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// A fully resolved invocation: everything a manifest needs to repeat it.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    GenData,
    Train { data: Option<PathBuf>, positives: Option<PathBuf> },
    VerifyBound,
    OptimizeSamples,
    Probe { checkpoint: PathBuf, data: PathBuf },
    Experiment(ExperimentKind),
}

impl Task {
    fn name(&self) -> &'static str {
        match self {
            Task::GenData => "gen-data",
            Task::Train { .. } => "train",
            Task::VerifyBound => "verify-bound",
            Task::OptimizeSamples => "optimize-samples",
            Task::Probe { .. } => "probe",
            Task::Experiment(_) => "experiment",
        }
    }

    fn record(&self, m: &mut Manifest) {
        m.set("run.command", self.name());
        let path = |p: &Path| p.to_string_lossy().into_owned();
        match self {
            Task::Train { data, positives } => {
                if let Some(d) = data {
                    m.set("run.data", path(d));
                }
                if let Some(p) = positives {
                    m.set("run.positives", path(p));
                }
            }
            Task::Probe { checkpoint, data } => {
                m.set("run.checkpoint", path(checkpoint));
                m.set("run.data", path(data));
            }
            Task::Experiment(kind) => m.set("run.experiment", kind.name()),
            _ => {}
        }
    }

    fn from_manifest(run: &toml::Table) -> Result<Self> {
        let get = |key: &str| -> Result<Option<String>> {
            match run.get(key) {
                None => Ok(None),
                Some(toml::Value::String(s)) => Ok(Some(s.clone())),
                Some(v) => Err(Error::Config(format!("manifest run.{key} = {v} is not a string"))),
            }
        };
        let need = |key: &str| get(key)?.ok_or_else(|| Error::Config(format!("manifest lacks run.{key}")));
        Ok(match need("command")?.as_str() {
            "gen-data" => Task::GenData,
            "train" => Task::Train {
                data: get("data")?.map(PathBuf::from),
                positives: get("positives")?.map(PathBuf::from),
            },
            "verify-bound" => Task::VerifyBound,
            "optimize-samples" => Task::OptimizeSamples,
            "probe" => Task::Probe {
                checkpoint: need("checkpoint")?.into(),
                data: need("data")?.into(),
            },
            "experiment" => {
                let name = need("experiment")?;
                Task::Experiment(
                    ExperimentKind::from_name(&name)
                        .ok_or_else(|| Error::Config(format!("unknown experiment {name:?} in manifest")))?,
                )
            }
            other => return Err(Error::Config(format!("unknown command {other:?} in manifest"))),
        })
    }
}

/// Reads the task and config back out of a run manifest.
pub fn read_manifest(path: &Path) -> Result<(Task, RunConfig)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let section = |name: &str| match table.get(name) {
        Some(toml::Value::Table(t)) => Ok(t.clone()),
        _ => Err(Error::Config(format!("{}: no [{name}] entries", path.display()))),
    };
    let task = Task::from_manifest(&section("run")?)?;
    let cfg = toml::Value::Table(section("config")?)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((task, cfg))
}

struct Outputs {
    dir: PathBuf,
    manifest: Manifest,
}

impl Outputs {
    fn new(dir: &Path, task: &Task, cfg: &RunConfig) -> Result<Self> {
        let mut manifest = Manifest::new();
        task.record(&mut manifest);
        manifest.extend("", &cfg.manifest()?);
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.path(name), text.as_bytes())
    }

    fn finish(self) -> Result<()> {
        self.write("manifest.txt", &self.manifest.to_text())
    }
}

fn generate(cfg: &RunConfig) -> Result<(ContrastiveData, MultiModalDataset)> {
    let mut exp = cfg.experiment_config()?;
    exp.seeds = vec![cfg.seed];
    exp.dataset(cfg.seed)
}

/// Runs one task, writing its outputs and `manifest.txt` into `out`.
pub fn execute(task: &Task, cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut o = Outputs::new(out, task, cfg)?;
    let mut outcome = Outcome::Success;
    match task {
        Task::GenData => {
            let (data, _) = generate(cfg)?;
            save_dataset(data.anchors(), &o.path("data.bin"))?;
            if data.is_paired() {
                save_dataset(data.positive_source(), &o.path("positives.bin"))?;
            }
            o.manifest.set_count("result.samples", data.len());
        }
        Task::Train { data, positives } => {
            let data = match (data, positives) {
                (Some(d), Some(p)) => ContrastiveData::paired(load_dataset(d)?, load_dataset(p)?)?,
                (Some(d), None) => ContrastiveData::single(load_dataset(d)?),
                _ => generate(cfg)?.0,
            };
            let train = cfg.train_config(data.num_modalities())?;
            let run = train_contrastive(&data, &train)?;
            save_encoder(&run.encoder, &o.path("encoder.ckpt"))?;
            o.write("loss.csv", &loss_curve_csv(&run.curve))?;
            o.manifest.extend("train_run", &run.manifest);
            if let Some(last) = run.curve.last() {
                o.manifest.set("result.final_loss", last.loss);
            }
            o.manifest.set("result.encoder_checksum", format!("{:016x}", run.encoder.checksum()));
        }
        Task::VerifyBound => {
            let v = verify_tnce_bound(&cfg.verify_config()?)?;
            o.write("bound.csv", &bound_report_csv(&v.reports))?;
            o.write("verdict.txt", &verdict_text(&v))?;
            o.manifest.set("result.holds", v.holds);
            o.manifest.set_count("result.converged", v.converged);
            o.manifest.set_count("result.flagged", v.flagged);
            if !v.holds {
                outcome = Outcome::VerificationFailed;
            }
        }
        Task::OptimizeSamples => {
            let (data, _) = generate(cfg)?;
            let k = data.num_modalities();
            let mut inner = cfg.train_config(k)?;
            inner.steps = cfg.search.inner_steps;
            inner.dropout = cfg.search.inner_dropout;
            if let Schedule::OneCycle { total_steps, .. } = &mut inner.optimizer.schedule {
                *total_steps = inner.steps.max(1);
            }
            let eval = gen_latent_factor(
                &cfg.latent_config()?,
                cfg.search.eval_samples,
                cfg.search.eval_seed.wrapping_add(cfg.seed),
            )?;
            let mut reward = RewardConfig::new(eval);
            if cfg.search.queries > 0 {
                reward.queries = cfg.search.queries;
            }
            reward.distractors = cfg.search.distractors;
            reward.critic = inner.critic;
            let mut space = PolicySpace::default_for(data.positive_source());
            let variances = data.positive_source().view_variances();
            for ((g, var), spec) in space.grids.iter_mut().zip(variances).zip(data.positive_source().specs()) {
                if spec.kind != ViewKind::Discrete {
                    g.noise_variance = cfg.search.noise_levels.iter().map(|l| l / 100.0 * var).collect();
                }
            }
            let spec = SearchSpec {
                alpha_candidates: simplex_grid(k + 1, cfg.search.alpha_resolution)?,
                beta_candidates: enumerate_policies(&space, cfg.search.policy_cap)?,
                budget: cfg.search.budget,
                rounds: cfg.search.rounds,
                seed: cfg.seed,
            };
            let evaluator = TrainingEvaluator {
                data,
                inner,
                reward,
                probe_epochs: cfg.search.probe_epochs,
            };
            let result = optimize_samples(&spec, &evaluator)?;
            o.write("search.csv", &search_table_csv(&result))?;
            o.write("summary.txt", &search_summary(&result))?;
            o.manifest.set("result.best_reward", result.best_reward);
            o.manifest.set_reals("result.best_alpha", result.best_alpha.alpha());
            o.manifest.set("result.best_beta", result.best_beta.describe());
            o.manifest.set("result.truncated", result.truncated);
        }
        Task::Probe { checkpoint, data } => {
            let encoder = load_encoder(checkpoint)?;
            let ds = load_dataset(data)?;
            let labels = ds
                .labels()
                .ok_or_else(|| Error::DegenerateLabels(format!("{} has no labels", data.display())))?;
            let emb = embed_dataset(&encoder, &ds, MissingSet::NONE)?;
            let split = ProbeSplit::holdout(ds.len(), cfg.probe.test_fraction, cfg.seed)?;
            let result = match cfg.probe.kind.as_str() {
                "linear" => linear_probe(&emb, labels, &split, cfg.probe.epochs)?,
                "knn" => knn_probe(&emb, labels, &split, cfg.probe.knn_k)?,
                other => return Err(Error::Config(format!("probe.kind: unknown {other:?}"))),
            };
            o.write(
                "probe.csv",
                &format!(
                    "kind,accuracy,train_size,test_size,seed\n{},{},{},{},{}\n",
                    result.kind.name(),
                    result.accuracy,
                    result.train_size,
                    result.test_size,
                    result.seed
                ),
            )?;
            o.manifest.set("result.accuracy", result.accuracy);
            o.manifest.set("result.encoder_checksum", format!("{:016x}", encoder.checksum()));
        }
        Task::Experiment(kind) => {
            let exp = cfg.experiment_config()?;
            let (file, csv) = match kind {
                ExperimentKind::ModalityScaling => (
                    "modality_scaling.csv",
                    modality_scaling_experiment(&exp, &cfg.experiment.subsets)?.to_csv(),
                ),
                ExperimentKind::SamplingEfficiency => {
                    let strategies = cfg
                        .experiment
                        .strategies
                        .iter()
                        .map(|s| {
                            NegativeStrategy::from_name(s)
                                .ok_or_else(|| Error::Config(format!("experiment.strategies: unknown {s:?}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (
                        "sampling_efficiency.csv",
                        sampling_efficiency_experiment(&exp, &cfg.experiment.batch_sizes, &strategies)?.to_csv(),
                    )
                }
                ExperimentKind::DropoutRobustness => (
                    "dropout_robustness.csv",
                    dropout_robustness_experiment(&exp, &cfg.experiment.dropout)?.to_csv(),
                ),
            };
            o.write(file, &csv)?;
        }
    }
    o.manifest.set("result.outcome", if outcome == Outcome::Success { "ok" } else { "verification_failed" });
    o.finish()?;
    Ok(outcome)
}

fn output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}

fn load(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let (task, cfg, out) = match cli.command {
        Command::Rerun { manifest, out } => {
            let (task, cfg) = read_manifest(&manifest)?;
            let dir = output_dir(out.as_deref(), &cfg);
            (task, cfg, dir)
        }
        command => {
            let (task, common) = match command {
                Command::GenData(c) => (Task::GenData, c),
                Command::Train { common, data, positives } => (Task::Train { data, positives }, common),
                Command::VerifyBound(c) => (Task::VerifyBound, c),
                Command::OptimizeSamples(c) => (Task::OptimizeSamples, c),
                Command::Probe { common, checkpoint, data } => (Task::Probe { checkpoint, data }, common),
                Command::Experiment { which, common } => (Task::Experiment(which), common),
                Command::Rerun { .. } => unreachable!(),
            };
            let cfg = load(&common)?;
            let dir = output_dir(common.out.as_deref(), &cfg);
            (task, cfg, dir)
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| execute(&task, &cfg, &out))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_exit_code(&e))
        }
    }
}
