//! Editing directions for self-attention layers.
//!
//! Given the query, key and value projections of one self-attention block,
//! [`directions`] builds the combined quadratic form whose leading eigenvectors
//! are the latent directions that most change the attention output.
//! [`attention`] holds a reference forward pass together with exact and
//! first-order perturbation routines used to check that claim numerically,
//! [`whitening`] measures how well a set of latents fits the second-moment
//! assumptions behind it, and [`schedule`] applies a direction to latents under
//! timestep gating. [`io`] defines the on-disk formats used by the CLI.

pub mod attention;
pub mod directions;
pub mod error;
pub mod io;
pub mod linalg;
pub mod sampling;
pub mod schedule;
pub mod stats;
pub mod validation;
pub mod whitening;

pub use error::{Error, Result};
pub use linalg::Matrix;
