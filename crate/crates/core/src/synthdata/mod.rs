//! Synthetic multi-modal datasets with controlled inter-modality structure,
//! and their on-disk format.

mod discrete;
mod io;
mod latent;
mod types;

pub use discrete::{gen_discrete_tuples, DiscreteJoint, MAX_JOINT_CELLS};
pub use io::{
    decode_dataset, encode_dataset, load_dataset, save_dataset, sidecar_path, sidecar_text,
    write_atomic, DATASET_MAGIC, DATASET_VERSION,
};
pub(crate) use io::{put_str, put_u32, put_u64, Reader};
pub use latent::{gen_latent_factor, gen_latent_views, LatentFactorConfig};
pub use types::{
    MissingSet, ModalitySpec, MultiModalDataset, Provenance, Tuple, ViewKind, MAX_MODALITIES,
};
