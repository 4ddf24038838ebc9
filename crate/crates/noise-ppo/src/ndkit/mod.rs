//! Numerical substrate: dense tensors, explicit-backward MLP layers, AdamW,
//! gradient utilities, seeded stream RNG, and the shared checkpoint format.

mod adamw;
pub mod checkpoint;
mod gradcheck;
mod mlp;
mod param;
mod rng;
mod tensor;

pub use adamw::{adamw_step, clip_grad_norm, AdamWConfig, AdamWState};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_MAX_COORDS, DEFAULT_STEP};
pub use mlp::{gelu, gelu_prime, MlpCache, MlpSpec, OutputInit};
pub use param::ParamSet;
pub use rng::{Rng, StreamKey};
pub use tensor::{cosine_similarity, Tensor};
