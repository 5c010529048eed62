//! Fixed-size tensor representations of event time series, sparse autoencoder
//! embeddings, and downstream analysis of the learned latent space.

pub mod analyze;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod embed;
pub mod ingest;
pub mod manifest;
pub mod report;
pub mod sae;
pub mod tensorize;
