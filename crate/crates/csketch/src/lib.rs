//! Compressive statistical learning at desk scale.
//!
//! The pipeline: sample a designed random-frequency set, sketch a dataset
//! into a fixed-size vector of Fourier moments, decode the sketch into
//! k-means/k-medians centroids or a fixed-covariance Gaussian mixture by
//! continuous greedy least squares, and evaluate the result against
//! ground-truth risks. Alongside the pipeline, the `checks` module verifies
//! the kernel, coherence, moment, and restricted-isometry properties that
//! justify the whole construction, numerically and at desk scale.

pub mod checks;
pub mod decode;
pub mod error;
pub mod freq;
pub mod hungarian;
pub mod kernel;
pub mod linalg;
pub mod mixture;
pub mod risk;
pub mod sketch;
pub mod synth;

pub use error::{Error, Result};
