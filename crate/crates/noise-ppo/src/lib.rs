//! Prompt-conditioned initial-noise policies for a frozen deterministic
//! diffusion sampler, trained with one-step PPO.
//!
//! The crate is a self-contained desk-scale stack:
//!
//! - [`ndkit`] — dense `f64` tensors, explicit forward/backward MLP layers,
//!   AdamW, gradient clipping, a finite-difference gradient checker, seeded
//!   stream RNG, and the `NPPO1` checkpoint format.
//! - [`toyworld`] — synthetic prompt-conditioned data: a finite prompt
//!   vocabulary mapping to Gaussian targets in a low-dimensional space.
//! - [`diffusion`] — the frozen environment: linear noise schedule, a
//!   denoiser trained by denoising score matching, the deterministic
//!   multi-step sampler, its inversion, and a closed-form oracle denoiser.
//! - [`policy`] — the diagonal-Gaussian noise policy with exact log-density,
//!   entropy and KL, plus the value network.
//! - [`rewards`] — bounded synthetic reward components and their weighted
//!   composite.
//! - [`ppo`] — rollout collection, the clipped surrogate objective, the
//!   combined policy loss, value regression, and the training loop.
//! - [`harness`] — configuration, experiment commands, and report emission
//!   (metrics JSONL, sweep CSV, golden-noise CSV).
//!
//! See the `examples/` directory for runnable walkthroughs of each piece,
//! and the `nppo` binary for the file-driven command-line front end.

pub mod diffusion;
mod error;
pub mod harness;
pub mod ndkit;
pub mod policy;
pub mod ppo;
pub mod rewards;
pub mod stats;
pub mod toyworld;

pub use error::{Error, Result};
