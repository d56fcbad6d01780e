//! Desk-scale laboratory for multi-modal tuple contrastive learning.
//!
//! The crate trains fusion encoders with a tuple-level InfoNCE objective whose
//! negatives come from a mixture proposal: regular tuples plus tuples with one
//! modality swapped out ("disturbed" negatives). Around that core it provides
//! exact mutual-information oracles to check the objective's lower bound,
//! augmentation policies for positives, a search over proposal weights and
//! policies driven by a crossmodal retrieval reward, and linear-probe
//! experiments on synthetic multi-modal data.

pub mod augment;
pub mod cli;
pub mod contrast;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod mi;
pub mod numerics;
pub mod sampleopt;
pub mod synthdata;

pub use error::{Error, Result};
