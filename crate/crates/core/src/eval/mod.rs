//! Frozen-representation probes and the ablation experiments built on them.

mod experiments;
mod probe;

pub use experiments::{
    dropout_robustness_experiment, modality_scaling_experiment, sampling_efficiency_experiment, train_and_probe,
    DropoutRow, DropoutTable, EfficiencyRow, EfficiencyTable, ExperimentConfig, ProbeRun, ScalingRow, ScalingTable,
};
pub use probe::{embed_dataset, knn_probe, linear_probe, raw_features, ProbeKind, ProbeResult, ProbeSplit};
