//! Exact Gaussian-process regression with unit-variance kernels.
//!
//! Given observations `(X, y)` the posterior at a query `x'` is Gaussian
//! with
//!
//! ```text
//! mu     = K(x', X) K(X, X)^-1 y
//! sigma2 = k(x', x') - K(x', X) K(X, X)^-1 K(X, x')
//! ```
//!
//! Outputs are standardized to zero mean and unit variance before
//! fitting (the surrogate's zero-mean prior is meaningless on raw loss
//! scales) and de-standardized on query. A jitter term keeps the kernel
//! matrix factorizable when inputs nearly coincide, and a configurable
//! observation-noise variance accounts for Monte Carlo noise in the
//! objective.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Stationary kernel family; all members satisfy `k(x, x) = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    SquaredExponential,
    Matern32,
    Matern52,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub length_scale: f64,
}

impl Kernel {
    pub fn new(kind: KernelKind, length_scale: f64) -> Result<Self> {
        if !(length_scale.is_finite() && length_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "length scale must be positive, got {length_scale}"
            )));
        }
        Ok(Self { kind, length_scale })
    }

    /// Matern 5/2 with unit length scale, the surrogate default.
    pub fn default_matern52() -> Self {
        Self { kind: KernelKind::Matern52, length_scale: 1.0 }
    }

    /// Kernel value as a function of the distance `r = |x - x'|`.
    pub fn eval_distance(&self, r: f64) -> f64 {
        let l = self.length_scale;
        match self.kind {
            KernelKind::SquaredExponential => (-r * r / (2.0 * l * l)).exp(),
            KernelKind::Matern32 => {
                let s = 3.0_f64.sqrt() * r / l;
                (1.0 + s) * (-s).exp()
            }
            KernelKind::Matern52 => {
                let s = 5.0_f64.sqrt() * r / l;
                (1.0 + s + 5.0 * r * r / (3.0 * l * l)) * (-s).exp()
            }
        }
    }

    /// Kernel value between two points of equal dimension.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.eval_distance(r2.sqrt())
    }
}

/// Fitted Gaussian-process surrogate. Immutable after [`GpModel::fit`];
/// posterior queries are read-only.
///
/// ```
/// use ouforecast::gp::{GpModel, Kernel, KernelKind};
///
/// let kernel = Kernel::new(KernelKind::SquaredExponential, 1.0).unwrap();
/// let model = GpModel::fit(
///     vec![vec![0.0], vec![0.5], vec![1.0]],
///     &[1.0, 2.0, 3.0],
///     kernel, 1e-8, 0.0,
/// ).unwrap();
///
/// // Near-noiseless fit interpolates the observations...
/// let (mu, var) = model.posterior(&[0.5]);
/// assert!((mu - 2.0).abs() < 1e-6 && var < 1e-6);
/// // ...and reverts to the prior far away from them.
/// let (mu, var) = model.posterior(&[25.0]);
/// assert!((mu - 2.0).abs() < 1e-6 && var > 0.5);
/// ```
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    kernel: Kernel,
    factor: Cholesky<f64, Dyn>,
    /// `K^-1 y` on the standardized scale.
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    jitter: f64,
    noise: f64,
}

impl GpModel {
    /// Fit on `n >= 1` observations. `jitter` is added to the kernel
    /// diagonal and escalated tenfold (up to `1e-2`) if factorization
    /// fails; `noise` is the observation-noise variance on the
    /// standardized output scale.
    pub fn fit(inputs: Vec<Vec<f64>>, outputs: &[f64], kernel: Kernel, jitter: f64, noise: f64) -> Result<Self> {
        let n = inputs.len();
        if n == 0 || outputs.len() != n {
            return Err(Error::DimensionMismatch {
                what: "observations",
                expected: n.max(1),
                actual: outputs.len(),
            });
        }
        let dim = inputs[0].len();
        if inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::InvalidArgument("inputs must share one dimension".into()));
        }
        if !outputs.iter().all(|y| y.is_finite()) {
            return Err(Error::InvalidArgument("outputs must be finite".into()));
        }
        if jitter < 0.0 || noise < 0.0 {
            return Err(Error::InvalidArgument("jitter and noise must be >= 0".into()));
        }

        let y_mean = outputs.iter().sum::<f64>() / n as f64;
        let var = outputs.iter().map(|y| (y - y_mean) * (y - y_mean)).sum::<f64>() / n as f64;
        let y_scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let standardized = DVector::from_iterator(n, outputs.iter().map(|y| (y - y_mean) / y_scale));

        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.eval(&inputs[i], &inputs[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }

        let mut eff_jitter = jitter.max(f64::MIN_POSITIVE);
        let factor = loop {
            let mut k = gram.clone();
            for i in 0..n {
                k[(i, i)] += eff_jitter + noise;
            }
            match Cholesky::new(k) {
                Some(f) => break f,
                None if eff_jitter < 1e-2 => eff_jitter *= 10.0,
                None => return Err(Error::KernelFactorization { jitter: eff_jitter }),
            }
        };
        let alpha = factor.solve(&standardized);

        Ok(Self { inputs, kernel, factor, alpha, y_mean, y_scale, jitter: eff_jitter, noise })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Jitter actually used after any escalation.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Posterior mean and variance at `x`. Variance is clamped at zero
    /// (round-off can push it a hair negative, never below -1e-9).
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        debug_assert_eq!(x.len(), self.dim());
        let n = self.len();
        let kstar = DVector::from_fn(n, |i, _| self.kernel.eval(&self.inputs[i], x));
        let mu = self.y_mean + self.y_scale * kstar.dot(&self.alpha);
        let w = self.factor.solve(&kstar);
        let var = 1.0 - kstar.dot(&w);
        debug_assert!(var > -1e-9, "posterior variance {var} below tolerance");
        (mu, self.y_scale * self.y_scale * var.max(0.0))
    }
}
