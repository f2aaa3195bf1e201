//! Uncertainty-aware social bot detection with per-modality neural
//! processes and evidential fusion.
//!
//! Three per-modality attentive neural processes (account metadata, pooled
//! text embeddings, a heterogeneous follow graph) each produce a Gaussian
//! latent summary. An evidential gate turns the concatenated encodings into
//! Dirichlet evidence over modalities; the resulting belief masses weight a
//! generalized product of experts that yields the joint latent posterior,
//! which a shared decoder turns into class probabilities by Monte Carlo.

pub mod anp;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod modality;
pub mod numerics;
pub mod objective;
pub mod par;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use modality::Modality;
