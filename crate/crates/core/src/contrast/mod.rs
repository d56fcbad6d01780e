//! Tuple contrastive learning: the mixture negative proposal, batch and
//! dropout construction, the fusion encoder and its checkpoints, the
//! TupleInfoNCE loss and the training loop.

mod batch;
mod checkpoint;
mod encoder;
mod loss;
mod proposal;
mod train;

pub use batch::{apply_dropout, build_batch, BatchConfig, ContrastiveBatch, ContrastiveData, NegativeStrategy};
pub use checkpoint::{
    decode_encoder, encode_encoder, load_encoder, save_encoder, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{EncodePlan, EncoderArch, EncoderCache, EncoderGrads, FusionEncoder, PlanBuilder};
pub use loss::{tuple_info_nce_loss, CriticConfig, InfoNceTerms, Score};
pub use proposal::{
    naive_disturb_negatives, sample_negatives, Negative, NegativeCategory, NegativeDraw, NegativeProposal,
    TuplePool, SIMPLEX_TOLERANCE,
};
pub use train::{
    batch_loss_and_grads, evaluate_batch, loss_curve_csv, optimizer_name, train_contrastive, train_on_fixed_batch,
    FixedBatchRun, LossPoint, Plateau, TrainConfig, TrainOutcome,
};
