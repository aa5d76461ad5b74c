//! Latent-space predictive learning for time series forecasting.
//!
//! A causal-transformer forecaster whose pretraining objective aligns
//! predicted latent states with aggregated future embeddings (stop-gradient
//! plus observation grounding), together with the training loop, synthetic
//! data generation, probabilistic evaluation, noise-robustness benchmarking,
//! and representation probing/steering machinery.

pub mod backbone;
pub mod cli;
pub mod datagen;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod params;
pub mod plot;
pub mod represent;
pub mod tensor;
pub mod threads;
pub mod tokenizer;
pub mod trainer;
