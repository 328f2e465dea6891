//! Semi-supervised representation learning with dual marginalized denoising
//! autoencoders for unsupervised domain adaptation.
//!
//! The crate learns two stacked feature representations over a labeled
//! source domain and an unlabeled target domain:
//!
//! * a *global* representation ([`adapt_global`]) from a marginalized
//!   denoising autoencoder regularized by marginal and class-conditional
//!   maximum mean discrepancy between the domains, and
//! * a *local* representation ([`adapt_local`]) from one denoising
//!   autoencoder per class, each aligning the source and target members of
//!   that class.
//!
//! Every layer is solved in closed form. Target pseudo-labels come from a
//! linear SVM ([`classify`]) and are refreshed between stacking rounds by
//! [`pipeline::run_ssrlda`]. [`eval`] hosts the experiment runners used by
//! the `ssrlda` command-line tool.

pub mod adapt_global;
pub mod adapt_local;
pub mod classify;
pub mod config;
pub mod dataio;
pub mod denoiser;
mod error;
pub mod eval;
mod linalg;
pub mod mmd;
pub mod pipeline;
mod rng;
pub mod synthetic;

pub use crate::error::{Error, Result};
