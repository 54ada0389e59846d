//! Online regression of generalized-OU coefficients.
//!
//! Instead of fitting `(A, N, Sigma)` once over a whole window, the
//! estimates are updated at every step by plain gradient descent on the
//! one-step prediction error, with exponential moving averages tracking
//! the error mean and covariance:
//!
//! ```text
//! eps   = dZ - (A z_prev + N)
//! A    += 2 eta_A * eps z_prev^T
//! N    += 2 eta_N * eps
//! Emean = phi * eps + (1 - phi) * Emean
//! Ecov  = rho * (eps - Emean)(eps - Emean)^T + (1 - rho) * Ecov
//! Sigma -= 4 eta_Sigma * (Sigma Sigma^T - Ecov) * Sigma
//! ```
//!
//! The updated coefficients are emitted as one flat vector per step, which
//! is what lets layers of these cells stack: a d-dimensional input yields
//! a `2d^2 + d`-dimensional coefficient stream.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ou::Trajectory;

/// Output dimension of a regression layer over a d-dimensional input.
pub fn layer_dim(input_dim: usize) -> usize {
    2 * input_dim * input_dim + input_dim
}

/// Inverse of [`layer_dim`]: the input dimension whose flattened
/// coefficient vector has length `len`, if any.
pub fn dim_from_flat_len(len: usize) -> Option<usize> {
    let mut d = 1;
    while layer_dim(d) <= len {
        if layer_dim(d) == len {
            return Some(d);
        }
        d += 1;
    }
    None
}

/// Flatten `[A, N, Sigma]` into one vector: row-major A (d^2 entries),
/// then N (d), then row-major Sigma (d^2).
pub fn flatten_params(a: &DMatrix<f64>, n: &DVector<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
    let d = n.len();
    debug_assert!(a.nrows() == d && a.ncols() == d && sigma.nrows() == d && sigma.ncols() == d);
    let mut z = DVector::zeros(layer_dim(d));
    let mut idx = 0;
    for i in 0..d {
        for j in 0..d {
            z[idx] = a[(i, j)];
            idx += 1;
        }
    }
    for i in 0..d {
        z[idx] = n[i];
        idx += 1;
    }
    for i in 0..d {
        for j in 0..d {
            z[idx] = sigma[(i, j)];
            idx += 1;
        }
    }
    z
}

/// Split a flat coefficient vector back into `(A, N, Sigma)`.
pub fn unflatten_params(z: &DVector<f64>, dim: usize) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    if z.len() != layer_dim(dim) {
        return Err(Error::DimensionMismatch {
            what: "flattened coefficients",
            expected: layer_dim(dim),
            actual: z.len(),
        });
    }
    let d = dim;
    let a = DMatrix::from_fn(d, d, |i, j| z[i * d + j]);
    let n = DVector::from_fn(d, |i, _| z[d * d + i]);
    let sigma = DMatrix::from_fn(d, d, |i, j| z[d * d + d + i * d + j]);
    Ok((a, n, sigma))
}

/// Per-layer hyperparameters: three gradient-descent rates, two EMA
/// weights and the initial flattened coefficients `z0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerHyper {
    pub eta_a: f64,
    pub eta_n: f64,
    pub eta_sigma: f64,
    pub phi: f64,
    pub rho: f64,
    pub z0: DVector<f64>,
}

impl LayerHyper {
    pub fn new(eta_a: f64, eta_n: f64, eta_sigma: f64, phi: f64, rho: f64, z0: DVector<f64>) -> Result<Self> {
        for (name, v) in [("eta_a", eta_a), ("eta_n", eta_n), ("eta_sigma", eta_sigma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("phi", phi), ("rho", rho)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if dim_from_flat_len(z0.len()).is_none() {
            return Err(Error::InvalidArgument(format!(
                "z0 length {} is not of the form 2d^2 + d",
                z0.len()
            )));
        }
        if !z0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("z0 must be finite".into()));
        }
        Ok(Self { eta_a, eta_n, eta_sigma, phi, rho, z0 })
    }

    /// Input dimension d implied by the length of `z0`.
    pub fn dim(&self) -> usize {
        dim_from_flat_len(self.z0.len()).expect("validated at construction")
    }
}

/// Evolving per-layer estimate: coefficients plus EMA error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub a: DMatrix<f64>,
    pub n: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub err_mean: DVector<f64>,
    pub err_cov: DMatrix<f64>,
}

impl LayerState {
    /// Fresh state: coefficients from `z0`, error statistics at zero.
    pub fn from_hyper(hyper: &LayerHyper) -> Result<Self> {
        let d = hyper.dim();
        let (a, n, sigma) = unflatten_params(&hyper.z0, d)?;
        Ok(Self {
            a,
            n,
            sigma,
            err_mean: DVector::zeros(d),
            err_cov: DMatrix::zeros(d, d),
        })
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    pub fn flat_coeffs(&self) -> DVector<f64> {
        flatten_params(&self.a, &self.n, &self.sigma)
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        let checks: [(&'static str, bool); 5] = [
            ("A", self.a.iter().all(|v| v.is_finite())),
            ("N", self.n.iter().all(|v| v.is_finite())),
            ("Sigma", self.sigma.iter().all(|v| v.is_finite())),
            ("err_mean", self.err_mean.iter().all(|v| v.is_finite())),
            ("err_cov", self.err_cov.iter().all(|v| v.is_finite())),
        ];
        checks.iter().find(|(_, ok)| !ok).map(|(name, _)| *name)
    }
}

/// One online-regression update from the observation pair
/// `(z_prev, z_curr)`. Returns the updated flat coefficient vector.
///
/// The gradient step for `A` multiplies the error by `z_prev` (the value
/// the prediction was made from), matching the derivative of the one-step
/// loss.
pub fn step(
    state: &mut LayerState,
    hyper: &LayerHyper,
    z_prev: &DVector<f64>,
    z_curr: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = state.dim();
    for (what, v) in [("z_prev", z_prev), ("z_curr", z_curr)] {
        if v.len() != d {
            return Err(Error::DimensionMismatch { what, expected: d, actual: v.len() });
        }
    }
    if hyper.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "hyperparameters",
            expected: d,
            actual: hyper.dim(),
        });
    }

    let dz = z_curr - z_prev;
    let eps = &dz - (&state.a * z_prev + &state.n);

    state.a.ger(2.0 * hyper.eta_a, &eps, z_prev, 1.0);
    state.n.axpy(2.0 * hyper.eta_n, &eps, 1.0);

    state.err_mean = &eps * hyper.phi + &state.err_mean * (1.0 - hyper.phi);
    let centered = &eps - &state.err_mean;
    state.err_cov *= 1.0 - hyper.rho;
    state.err_cov.ger(hyper.rho, &centered, &centered, 1.0);

    let gram = &state.sigma * state.sigma.transpose() - &state.err_cov;
    let sigma_step = &gram * &state.sigma;
    state.sigma -= sigma_step * (4.0 * hyper.eta_sigma);

    if let Some(component) = state.first_non_finite() {
        return Err(Error::Divergence { layer: 0, step: 0, component });
    }
    Ok(state.flat_coeffs())
}

/// Run the online regression over a whole series.
///
/// Starts from `hyper.z0` with zero error statistics and applies
/// [`step`] for `t = 1..=T`, returning the per-step coefficient
/// vectors and the terminal state.
///
/// ```
/// use nalgebra::DVector;
/// use ouforecast::online::{regress_series, LayerHyper};
/// use ouforecast::ou::Trajectory;
///
/// let series = Trajectory::from_scalars([1.0, 1.5, 2.5, 2.0]).unwrap();
/// let hyper = LayerHyper::new(0.05, 0.05, 0.01, 0.5, 0.5,
///     DVector::from_row_slice(&[0.0, 0.0, 0.01])).unwrap();
/// let (coeffs, _state) = regress_series(&series, &hyper).unwrap();
/// assert_eq!(coeffs.len(), 3);       // one [A, N, Sigma] vector per step
/// assert_eq!(coeffs[0].len(), 3);    // univariate input: 2 + 1 coefficients
/// ```
pub fn regress_series(series: &Trajectory, hyper: &LayerHyper) -> Result<(Vec<DVector<f64>>, LayerState)> {
    if series.dim() != hyper.dim() {
        return Err(Error::DimensionMismatch {
            what: "series",
            expected: hyper.dim(),
            actual: series.dim(),
        });
    }
    if series.steps() < 1 {
        return Err(Error::InvalidArgument("series must contain at least one increment".into()));
    }
    let mut state = LayerState::from_hyper(hyper)?;
    let values = series.values();
    let mut coeffs = Vec::with_capacity(series.steps());
    for t in 1..values.len() {
        let z = step(&mut state, hyper, &values[t - 1], &values[t]).map_err(|e| e.at_step(t))?;
        coeffs.push(z);
    }
    Ok((coeffs, state))
}
