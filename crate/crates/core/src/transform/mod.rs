//! Retinal image transform: DoG analysis bank, dyadic coefficient grid,
//! sub-band release delays, and dual-frame synthesis.

mod dog;
mod duals;
mod pyramid;

pub use dog::{build_dog_bank, DoGBank, DoGParams, DoGSpec};
pub use duals::{
    compute_duals, compute_duals_with_options, synthesize, DualBank, DualMode, DualOptions,
};
pub use pyramid::{analyze, apply_delay, DelaySchedule, DelayedPyramid, Pyramid};

pub(crate) use duals::compute_duals_shared;

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum TransformError {
    #[error("image side must be a power of two, got {0}")]
    NonPowerOfTwo(usize),
    #[error("image side must be at least {min}, got {got}")]
    SideTooSmall { got: usize, min: usize },
    #[error("surround/center sigma ratio must exceed 1, got {0}")]
    BadRatio(f64),
    #[error("base sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("image is {got_rows}x{got_cols} but the bank expects {expected}x{expected}")]
    DimensionMismatch {
        got_rows: usize,
        got_cols: usize,
        expected: usize,
    },
    #[error("pyramid shape does not match the bank: band {band} has {got} coefficients, expected {expected}")]
    ShapeMismatch {
        band: usize,
        got: usize,
        expected: usize,
    },
    #[error("frame operator is singular or severely ill-conditioned (condition estimate {condition:.3e})")]
    SingularFrame { condition: f64 },
    #[error("frame solve did not reach tolerance {tolerance:.1e} after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
}
