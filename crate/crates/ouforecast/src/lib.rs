//! Univariate financial time-series forecasting built on a generalized
//! Ornstein-Uhlenbeck process whose coefficients are regressed online,
//! layer by layer, and rolled forward by Monte Carlo simulation.
//!
//! The pipeline, end to end:
//!
//! 1. [`ou`] defines the process family `dY = A Y + N + Sigma dW` with a
//!    simulator and an offline least-squares calibrator.
//! 2. [`online`] tracks the coefficients `(A_t, N_t, Sigma_t)` step by
//!    step with gradient updates and EMA error statistics.
//! 3. [`net`] stacks those online regressors (layer k models layer k-1's
//!    coefficient stream), generates future paths from the terminal
//!    coefficients and scores forecasts with mean/variance losses.
//! 4. [`gp`] and [`bayesopt`] tune the stack's hyperparameters by
//!    expected-improvement Bayesian optimization under a Gaussian-process
//!    surrogate, one layer at a time.
//! 5. [`backtest`] evaluates everything on rolling historical windows
//!    against a random-walk baseline.
//!
//! Every random quantity derives from an explicit seed through named
//! substreams, so all results are reproducible bit for bit regardless of
//! thread count.
//!
//! ```
//! use ouforecast::ou::{simulate_named, Noise, ProcessKind};
//! use ouforecast::net::{forecast, NetworkConfig};
//! use ouforecast::online::LayerHyper;
//! use nalgebra::DVector;
//!
//! // A mean-reverting series and a one-layer network with fixed
//! // hyperparameters.
//! let series = simulate_named(
//!     ProcessKind::MeanReverting { rate: 0.1, level: 5.0, volatility: 0.02 },
//!     5.0, 300, Noise::Seed(7),
//! ).unwrap().scalars().unwrap();
//!
//! let hyper = LayerHyper::new(0.02, 0.02, 0.005, 0.5, 0.5,
//!     DVector::from_row_slice(&[0.0, 0.0, 0.005])).unwrap();
//! let config = NetworkConfig::new(vec![hyper], 20, 50).unwrap();
//!
//! let result = forecast(&series, &config, 42).unwrap();
//! assert_eq!(result.mean.len(), 20);
//! assert!(result.variance.iter().all(|v| *v >= 0.0));
//! ```

pub mod backtest;
pub mod bayesopt;
mod error;
pub mod gp;
pub mod net;
pub mod online;
pub mod ou;
pub mod rng;

pub use error::{Error, Result};
