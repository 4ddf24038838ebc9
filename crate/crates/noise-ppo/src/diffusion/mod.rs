//! The frozen environment: noise schedule, denoiser, deterministic sampler,
//! inversion, and the closed-form oracle used to verify all of it.

mod denoiser;
mod oracle;
mod sampler;
mod schedule;

pub use denoiser::{
    prepare_dsm_batch, time_features, train_denoiser, Denoiser, DenoiserConfig, DsmItem,
    DsmLossPoint, NoisePredictor,
};
pub use oracle::OracleDenoiser;
pub use sampler::{ddim_step, denoise_invert, golden_cosine, invert, sample};
pub use schedule::{NoiseSchedule, TimeGrid};
