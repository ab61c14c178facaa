//! Reconstructing hidden ectopic foci in excitable media from remote
//! observations.
//!
//! The crate covers the full experimental pipeline:
//!
//! - [`sim`]: a 2-D FitzHugh-Nagumo tissue simulator and seeded generation of
//!   native (intervention-free) and intervention (ectopic-focus) datasets;
//! - [`forward`]: the lead-field operator mapping tissue potentials to a
//!   sparse remote electrode array, plus the classical first-order Tikhonov
//!   inverse baseline (ECGI);
//! - [`nn`]: a small reverse-mode autodiff engine with conv/GRU layers,
//!   differentiable RK4 integration, AdamW, and a learning-rate range test;
//! - [`models`]: the latent-ODE sequence autoencoder (stage 1), the
//!   intervention filter that explains observation/prediction residuals with
//!   a second latent ODE (stage 2), and a GRU-update ablation;
//! - [`eval`]: foci detection and localization scoring, latent-norm
//!   diagnostics;
//! - [`render`]: reconstruction panel images;
//! - [`io`]: plain-text-header tensor containers, dataset and checkpoint
//!   persistence;
//! - [`config`]: flat key-value run configuration shared by the CLI.

pub mod config;
pub mod error;
pub mod eval;
pub mod forward;
pub mod io;
pub mod models;
pub mod nn;
pub mod render;
pub mod sim;

pub use error::{Error, Result};
