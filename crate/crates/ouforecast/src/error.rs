//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A simulated trajectory left the representable range.
    #[error("non-finite value produced at step {step}")]
    NumericOverflow { step: usize },

    /// An online-regression pass produced a non-finite quantity. Callers
    /// that score hyperparameters convert this into an infinite loss.
    #[error("online regression diverged at layer {layer}, step {step} ({component})")]
    Divergence {
        layer: usize,
        step: usize,
        component: &'static str,
    },

    #[error("matrix is not positive semi-definite (pivot {index})")]
    NotPositiveDefinite { index: usize },

    #[error("normal equations are rank deficient; series too short or degenerate")]
    RankDeficient,

    #[error("kernel matrix factorization failed even with jitter {jitter:e}")]
    KernelFactorization { jitter: f64 },

    #[error("forecast failed: {diverged} of {total} trajectories diverged")]
    ForecastFailed { diverged: usize, total: usize },

    #[error("backtest failed: {failed} of {total} samples failed")]
    BacktestFailed { failed: usize, total: usize },

    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Fill in the step index on a divergence raised inside a single cell
    /// update, which does not know its own position in the pass.
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::Divergence {
                layer, component, ..
            } => Error::Divergence {
                layer,
                step,
                component,
            },
            other => other,
        }
    }

    /// Fill in the layer index on a divergence propagated out of a
    /// single-layer regression pass.
    pub(crate) fn at_layer(self, layer: usize) -> Self {
        match self {
            Error::Divergence {
                step, component, ..
            } => Error::Divergence {
                layer,
                step,
                component,
            },
            other => other,
        }
    }

    /// True for failures that represent a numerically bad configuration
    /// rather than a caller mistake; tuning maps these to infinite loss.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericOverflow { .. }
                | Error::Divergence { .. }
                | Error::ForecastFailed { .. }
                | Error::NotPositiveDefinite { .. }
        )
    }
}
