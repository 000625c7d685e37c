//! Under-the-cover pose estimation from aligned depth and pressure-mat
//! imagery.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`numerics`] — tensor engine with reverse-mode autodiff, AdamW, and the
//!   STEN tensor file format
//! - [`geometry`] — homography estimation (DLT + RANSAC) for registering the
//!   RGB, depth, and pressure-mat planes and transferring annotations
//! - [`data`] — dataset model, deterministic synthetic generator, splits,
//!   augmentation, preprocessing
//! - [`heatmap`] — Gaussian joint-heatmap codec
//! - [`model`] — ViT encoder, masked-autoencoder pretraining forward pass,
//!   and the deconvolution pose head
//! - [`train`] — MAE pretraining, hierarchical stage variants, two-stage
//!   fine-tuning, cross-validation, ablation grid
//! - [`eval`] — PCK / NME metrics, per-joint and per-cover breakdowns,
//!   paired significance tests, report emission
//! - [`cli`] — the `matpose` command-line front end
//!
//! Every stochastic step draws from explicit seeds; given equal seeds and
//! configs, runs reproduce bit-identically regardless of worker count.

pub mod cli;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod heatmap;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod rng;
pub mod train;
