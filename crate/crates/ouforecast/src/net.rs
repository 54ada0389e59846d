//! Layered online regression and Monte Carlo forecasting.
//!
//! A K-layer network regresses a univariate series: layer 1 estimates the
//! generalized-OU coefficients of the series itself, layer 2 estimates the
//! coefficients of layer 1's coefficient stream, and so on. Input
//! dimensions follow `d_k = 2 d_{k-1}^2 + d_{k-1}` from `d_0 = 1`, i.e.
//! 1, 3, 21, 903 - which caps the practical depth at two or three layers.
//!
//! Forecasting runs the stack generatively from the terminal coefficients:
//! the top layer is held constant and each lower layer evolves as an OU
//! process driven by the layer above, down to a simulated continuation of
//! the series. Averaging many such continuations gives the forecast mean
//! and variance per step.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::online::{self, LayerHyper, LayerState};
use crate::ou::Trajectory;
use crate::rng;

/// Input dimensions of successive layers.
pub const LAYER_DIMS: [usize; 4] = [1, 3, 21, 903];

/// Forecast horizon and Monte Carlo defaults used throughout the crate.
pub const DEFAULT_HORIZON: usize = 100;
pub const DEFAULT_TRAJECTORIES: usize = 50;

/// Stack shape plus forecasting budget.
#[derive(Debug, Clone)]
pub struct NetworkConfig {
    layers: Vec<LayerHyper>,
    pub horizon: usize,
    pub trajectories: usize,
}

impl NetworkConfig {
    /// A network of one or two layers. Asserts the dimension recursion:
    /// layer k's `z0` must have length 3, 21 (and 903 for the third layer
    /// admitted by [`NetworkConfig::with_three_layers`]).
    pub fn new(layers: Vec<LayerHyper>, horizon: usize, trajectories: usize) -> Result<Self> {
        Self::build(layers, horizon, trajectories, 2)
    }

    /// Same as [`NetworkConfig::new`] but admits a third layer
    /// (21-dimensional input, 903-dimensional coefficient stream).
    pub fn with_three_layers(layers: Vec<LayerHyper>, horizon: usize, trajectories: usize) -> Result<Self> {
        Self::build(layers, horizon, trajectories, 3)
    }

    fn build(layers: Vec<LayerHyper>, horizon: usize, trajectories: usize, max_depth: usize) -> Result<Self> {
        if layers.is_empty() || layers.len() > max_depth {
            return Err(Error::InvalidArgument(format!(
                "network depth must lie in 1..={max_depth}, got {}",
                layers.len()
            )));
        }
        for (k, hyper) in layers.iter().enumerate() {
            let expected = LAYER_DIMS[k];
            if hyper.dim() != expected {
                return Err(Error::DimensionMismatch {
                    what: "layer input dimension",
                    expected,
                    actual: hyper.dim(),
                });
            }
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if trajectories == 0 {
            return Err(Error::InvalidArgument("trajectory count must be >= 1".into()));
        }
        Ok(Self { layers, horizon, trajectories })
    }

    pub fn layers(&self) -> &[LayerHyper] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// Output of one regression layer over the whole series.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    /// Flattened coefficients per step, `t = 1..=T`.
    pub coeffs: Vec<DVector<f64>>,
    pub state: LayerState,
}

/// All layers' coefficient streams and terminal states.
#[derive(Debug, Clone)]
pub struct RegressedStack {
    pub layers: Vec<LayerOutput>,
}

impl RegressedStack {
    /// Terminal coefficient vectors `Z_T`, one per layer.
    pub fn terminal_coeffs(&self) -> Vec<DVector<f64>> {
        self.layers.iter().map(|l| l.coeffs.last().expect("non-empty pass").clone()).collect()
    }
}

/// Run the stacked online regression over `series`.
///
/// Layer 1 consumes the series itself; layer k consumes the coefficient
/// stream of layer k-1, prefixed with that layer's `z0` as its time-zero
/// value. Divergence errors carry the layer and step at which they arose.
///
/// ```
/// use nalgebra::DVector;
/// use ouforecast::net::{regress_stack, NetworkConfig};
/// use ouforecast::online::LayerHyper;
///
/// let series: Vec<f64> = (0..40).map(|t| 1.0 + 0.01 * (t as f64).sin()).collect();
/// let layers = vec![
///     LayerHyper::new(0.01, 0.01, 0.002, 0.5, 0.5,
///         DVector::from_row_slice(&[0.0, 0.0, 0.005])).unwrap(),
///     LayerHyper::new(0.002, 0.002, 0.0005, 0.5, 0.5,
///         DVector::from_element(21, 0.0)).unwrap(),
/// ];
/// let config = NetworkConfig::new(layers, 10, 20).unwrap();
/// let stack = regress_stack(&series, &config).unwrap();
/// assert_eq!(stack.layers[0].coeffs[0].len(), 3);
/// assert_eq!(stack.layers[1].coeffs[0].len(), 21);
/// ```
pub fn regress_stack(series: &[f64], config: &NetworkConfig) -> Result<RegressedStack> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument("series must contain at least two points".into()));
    }
    let mut input = Trajectory::from_scalars(series.iter().copied())?;
    let mut layers = Vec::with_capacity(config.depth());
    for (k, hyper) in config.layers.iter().enumerate() {
        let (coeffs, state) =
            online::regress_series(&input, hyper).map_err(|e| e.at_layer(k + 1))?;
        if k + 1 < config.depth() {
            let mut next = Vec::with_capacity(coeffs.len() + 1);
            next.push(hyper.z0.clone());
            next.extend(coeffs.iter().cloned());
            input = Trajectory::new(next)?;
        }
        layers.push(LayerOutput { coeffs, state });
    }
    Ok(RegressedStack { layers })
}

/// Noise feeding one generated path.
#[derive(Debug, Clone)]
pub enum PathNoise<'a> {
    /// Independent substream per (trajectory, layer, step); identical
    /// output for identical ids regardless of scheduling.
    Seeded { seed: u64, trajectory: u64 },
    /// Antithetic half of a trajectory pair: both halves read the
    /// substream (seed, pair, layer, step), the mirrored one negated.
    /// Pairing cancels most of the Monte Carlo error of the forecast
    /// mean, exactly so when the stack's coefficients stay constant over
    /// the horizon.
    Paired { seed: u64, pair: u64, mirrored: bool },
    /// Explicit draws, indexed `[step - 1][layer]`, each of the layer's
    /// dimension.
    Given(&'a [Vec<DVector<f64>>]),
}

/// Simulate one continuation of the series from terminal coefficients.
///
/// `terminals[k]` is layer k+1's coefficient vector at the end of the
/// regression pass; `last_value` is the final observed value. The top
/// layer stays constant; every layer below evolves by the OU increment
/// with coefficients unflattened from the layer above at the previous
/// step. Returns the layer-0 path of length `horizon`.
pub fn simulate_path(
    terminals: &[DVector<f64>],
    last_value: f64,
    horizon: usize,
    noise: PathNoise<'_>,
) -> Result<Vec<f64>> {
    let depth = terminals.len();
    if depth == 0 || depth + 1 > LAYER_DIMS.len() {
        return Err(Error::InvalidArgument(format!("unsupported stack depth {depth}")));
    }
    for (k, z) in terminals.iter().enumerate() {
        if z.len() != LAYER_DIMS[k + 1] {
            return Err(Error::DimensionMismatch {
                what: "terminal coefficients",
                expected: LAYER_DIMS[k + 1],
                actual: z.len(),
            });
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("terminal coefficients must be finite".into()));
        }
    }
    if !last_value.is_finite() {
        return Err(Error::InvalidArgument("last observed value must be finite".into()));
    }
    if let PathNoise::Given(ws) = &noise {
        if ws.len() != horizon {
            return Err(Error::DimensionMismatch {
                what: "noise steps",
                expected: horizon,
                actual: ws.len(),
            });
        }
    }

    // prev[k] is layer k's value at t-1; layer 0 is the series itself.
    let mut prev: Vec<DVector<f64>> = Vec::with_capacity(depth + 1);
    prev.push(DVector::from_element(1, last_value));
    prev.extend(terminals.iter().cloned());

    let mut path = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        // Top layer k = depth is constant; walk the lower layers downward.
        for k in (0..depth).rev() {
            let d = LAYER_DIMS[k];
            let (a, n, sigma) = online::unflatten_params(&prev[k + 1], d)?;
            let dw = match &noise {
                PathNoise::Seeded { seed, trajectory } => {
                    let mut stream = rng::substream(*seed, &[*trajectory, k as u64, t as u64]);
                    rng::standard_normals(&mut stream, d)
                }
                PathNoise::Paired { seed, pair, mirrored } => {
                    let mut stream = rng::substream(*seed, &[*pair, k as u64, t as u64]);
                    let w = rng::standard_normals(&mut stream, d);
                    if *mirrored {
                        -w
                    } else {
                        w
                    }
                }
                PathNoise::Given(ws) => {
                    let w = ws[t - 1].get(k).ok_or(Error::DimensionMismatch {
                        what: "noise layers",
                        expected: depth,
                        actual: ws[t - 1].len(),
                    })?;
                    if w.len() != d {
                        return Err(Error::DimensionMismatch { what: "noise vector", expected: d, actual: w.len() });
                    }
                    w.clone()
                }
            };
            let next = &prev[k] + &a * &prev[k] + n + sigma * dw;
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { layer: k, step: t, component: "path" });
            }
            prev[k] = next;
        }
        path.push(prev[0][0]);
    }
    Ok(path)
}

/// Per-step Monte Carlo forecast: mean, variance and a 95% band.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
    /// Kept simulated paths, row per trajectory.
    pub trajectories: Vec<Vec<f64>>,
    /// Count of paths dropped for producing non-finite values.
    pub diverged: usize,
}

impl ForecastResult {
    /// Writes `t,mean,variance,lo95,hi95` rows, `t` counting steps ahead.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,mean,variance,lo95,hi95")?;
        for i in 0..self.mean.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                i + 1,
                self.mean[i],
                self.variance[i],
                self.lo95[i],
                self.hi95[i]
            )?;
        }
        Ok(())
    }
}

/// Regress the stack once, then average `config.trajectories` generated
/// continuations. Individual diverging paths are dropped and counted; the
/// forecast fails if at least half diverge.
///
/// Trajectories are drawn in antithetic pairs (trajectory 2j+1 mirrors
/// the noise of 2j) from substreams keyed by (seed, pair, layer, step),
/// so the result is identical for any worker-thread count and the mean
/// estimator's Monte Carlo error largely cancels.
pub fn forecast(series: &[f64], config: &NetworkConfig, seed: u64) -> Result<ForecastResult> {
    if config.trajectories < 2 {
        return Err(Error::InvalidArgument("need at least two trajectories".into()));
    }
    let stack = regress_stack(series, config)?;
    let terminals = stack.terminal_coeffs();
    let last_value = *series.last().expect("validated non-empty");

    let runs: Vec<Result<Vec<f64>>> = (0..config.trajectories as u64)
        .into_par_iter()
        .map(|i| {
            simulate_path(
                &terminals,
                last_value,
                config.horizon,
                PathNoise::Paired { seed, pair: i / 2, mirrored: i % 2 == 1 },
            )
        })
        .collect();

    let total = runs.len();
    let mut kept = Vec::with_capacity(total);
    let mut diverged = 0usize;
    for run in runs {
        match run {
            Ok(path) => kept.push(path),
            Err(e) if e.is_numeric() => diverged += 1,
            Err(e) => return Err(e),
        }
    }
    if diverged * 2 >= total {
        return Err(Error::ForecastFailed { diverged, total });
    }

    let horizon = config.horizon;
    let mut mean = Vec::with_capacity(horizon);
    let mut variance = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (m, v) = step_statistics(&kept, t);
        mean.push(m);
        variance.push(v);
    }
    let lo95: Vec<f64> = mean.iter().zip(&variance).map(|(m, v)| m - 1.96 * v.sqrt()).collect();
    let hi95: Vec<f64> = mean.iter().zip(&variance).map(|(m, v)| m + 1.96 * v.sqrt()).collect();

    Ok(ForecastResult { mean, variance, lo95, hi95, trajectories: kept, diverged })
}

/// Population mean and variance of the paths' values at step `t`,
/// computed against the first path as reference point so that identical
/// paths yield exactly zero variance.
pub fn step_statistics(paths: &[Vec<f64>], t: usize) -> (f64, f64) {
    let n = paths.len() as f64;
    let reference = paths[0][t];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for path in paths {
        let delta = path[t] - reference;
        sum += delta;
        sum_sq += delta * delta;
    }
    let mean_delta = sum / n;
    let variance = (sum_sq / n - mean_delta * mean_delta).max(0.0);
    (reference + mean_delta, variance)
}

/// Root-mean-square losses of a forecast against realized values: one for
/// the mean and one for the variance,
///
/// ```text
/// L_mean = sqrt( 1/N sum (y_t - E_t)^2 )
/// L_var  = sqrt( 1/N sum ((y_t - E_t)^2 - V_t)^2 )
/// ```
pub fn mc_losses(actuals: &[f64], mean: &[f64], variance: &[f64]) -> (f64, f64) {
    debug_assert!(actuals.len() == mean.len() && mean.len() == variance.len());
    let n = actuals.len() as f64;
    let mut se = 0.0;
    let mut sv = 0.0;
    for ((y, e), v) in actuals.iter().zip(mean).zip(variance) {
        let gap = (y - e) * (y - e);
        se += gap;
        sv += (gap - v) * (gap - v);
    }
    ((se / n).sqrt(), (sv / n).sqrt())
}

/// Loss of a single regression/prediction split.
#[derive(Debug, Clone)]
pub struct HorizonLoss {
    pub loss_mean: f64,
    pub loss_variance: f64,
    /// Present unless the evaluation diverged.
    pub forecast: Option<ForecastResult>,
}

/// Score one split: regress on all but the last `config.horizon` values,
/// forecast, and compare against the held-out tail.
///
/// Numeric divergence yields infinite losses rather than an error, so
/// hyperparameter search sees bad regions as uniformly terrible.
pub fn horizon_loss(series: &[f64], config: &NetworkConfig, seed: u64) -> Result<HorizonLoss> {
    let n = config.horizon;
    if series.len() < n + 2 {
        return Err(Error::InvalidArgument(format!(
            "series of length {} cannot be split at horizon {n}",
            series.len()
        )));
    }
    let split = series.len() - n;
    match forecast(&series[..split], config, seed) {
        Ok(result) => {
            let (le, lv) = mc_losses(&series[split..], &result.mean, &result.variance);
            Ok(HorizonLoss { loss_mean: le, loss_variance: lv, forecast: Some(result) })
        }
        Err(e) if e.is_numeric() => Ok(HorizonLoss {
            loss_mean: f64::INFINITY,
            loss_variance: f64::INFINITY,
            forecast: None,
        }),
        Err(e) => Err(e),
    }
}

/// Average of [`horizon_loss`] over regression endpoints
/// `t = first, first + stride, ... <= last`: endpoint `t` regresses on
/// `series[..t]` and scores the forecast against `series[t..t + horizon]`.
pub fn average_loss_windowed(
    series: &[f64],
    config: &NetworkConfig,
    seed: u64,
    stride: usize,
    first: usize,
    last: usize,
) -> Result<(f64, f64)> {
    let n = config.horizon;
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if first < 2 || first > last {
        return Err(Error::InvalidArgument(format!(
            "endpoint window [{first}, {last}] is empty or starts before 2"
        )));
    }
    if last + n > series.len() {
        return Err(Error::InvalidArgument(format!(
            "last endpoint {last} plus horizon {n} exceeds series length {}",
            series.len()
        )));
    }
    let mut sum_mean = 0.0;
    let mut sum_var = 0.0;
    let mut count = 0usize;
    let mut t = first;
    while t <= last {
        let loss = horizon_loss(&series[..t + n], config, rng::derive_seed(seed, &[t as u64]))?;
        count += 1;
        if !loss.loss_mean.is_finite() || !loss.loss_variance.is_finite() {
            return Ok((f64::INFINITY, f64::INFINITY));
        }
        sum_mean += loss.loss_mean;
        sum_var += loss.loss_variance;
        t += stride;
    }
    Ok((sum_mean / count as f64, sum_var / count as f64))
}

/// Average loss over every endpoint `t = 2..=T` at the given stride,
/// where `T = series.len() - horizon`. A stride of 1 evaluates the full
/// endpoint sweep.
///
/// ```
/// use nalgebra::DVector;
/// use ouforecast::net::{average_loss, NetworkConfig};
/// use ouforecast::online::LayerHyper;
/// use ouforecast::ou::{simulate_named, Noise, ProcessKind};
///
/// let series = simulate_named(
///     ProcessKind::MeanReverting { rate: 0.1, level: 1.0, volatility: 0.02 },
///     1.0, 119, Noise::Seed(5),
/// ).unwrap().scalars().unwrap();
///
/// let hyper = LayerHyper::new(0.01, 0.01, 0.002, 0.5, 0.5,
///     DVector::from_row_slice(&[0.0, 0.0, 0.005])).unwrap();
/// let config = NetworkConfig::new(vec![hyper], 20, 10).unwrap();
///
/// let (l_mean, l_var) = average_loss(&series, &config, 9, 25).unwrap();
/// assert!(l_mean.is_finite() && l_var.is_finite());
/// ```
pub fn average_loss(series: &[f64], config: &NetworkConfig, seed: u64, stride: usize) -> Result<(f64, f64)> {
    if series.len() < config.horizon + 2 {
        return Err(Error::InvalidArgument(format!(
            "series of length {} cannot host horizon {}",
            series.len(),
            config.horizon
        )));
    }
    average_loss_windowed(series, config, seed, stride, 2, series.len() - config.horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ou::{self, Noise, ProcessKind};
    use approx::assert_abs_diff_eq;

    fn hyper(vals: [f64; 5], z0: Vec<f64>) -> LayerHyper {
        LayerHyper::new(vals[0], vals[1], vals[2], vals[3], vals[4], DVector::from_vec(z0)).unwrap()
    }

    fn k1_config(horizon: usize, trajectories: usize) -> NetworkConfig {
        NetworkConfig::new(
            vec![hyper([0.01, 0.01, 0.002, 0.5, 0.5], vec![0.0, 0.0, 0.005])],
            horizon,
            trajectories,
        )
        .unwrap()
    }

    fn k2_config(horizon: usize, trajectories: usize) -> NetworkConfig {
        NetworkConfig::new(
            vec![
                hyper([0.01, 0.01, 0.002, 0.5, 0.5], vec![0.0, 0.0, 0.005]),
                hyper([0.002, 0.002, 0.0005, 0.5, 0.5], vec![0.0; 21]),
            ],
            horizon,
            trajectories,
        )
        .unwrap()
    }

    fn sample_series(len: usize, seed: u64) -> Vec<f64> {
        ou::simulate_named(
            ProcessKind::MeanReverting { rate: 0.1, level: 1.0, volatility: 0.02 },
            1.0,
            len - 1,
            Noise::Seed(seed),
        )
        .unwrap()
        .scalars()
        .unwrap()
    }

    #[test]
    fn construction_rejects_wrong_dims_and_depth() {
        let bad = NetworkConfig::new(
            vec![hyper([0.1, 0.1, 0.1, 0.5, 0.5], vec![0.0; 21])],
            10,
            10,
        );
        assert!(bad.is_err());

        let too_deep = NetworkConfig::new(
            vec![
                hyper([0.1, 0.1, 0.1, 0.5, 0.5], vec![0.0; 3]),
                hyper([0.1, 0.1, 0.1, 0.5, 0.5], vec![0.0; 21]),
                hyper([0.1, 0.1, 0.1, 0.5, 0.5], vec![0.0; 903]),
            ],
            10,
            10,
        );
        assert!(too_deep.is_err());

        let three = NetworkConfig::with_three_layers(
            vec![
                hyper([0.1, 0.1, 0.1, 0.5, 0.5], vec![0.0; 3]),
                hyper([0.1, 0.1, 0.1, 0.5, 0.5], vec![0.0; 21]),
                hyper([0.1, 0.1, 0.1, 0.5, 0.5], vec![0.0; 903]),
            ],
            10,
            10,
        );
        assert!(three.is_ok());
    }

    #[test]
    fn single_layer_stack_matches_plain_regression() {
        let series = sample_series(40, 1);
        let config = k1_config(10, 10);
        let stack = regress_stack(&series, &config).unwrap();
        let traj = Trajectory::from_scalars(series.iter().copied()).unwrap();
        let (coeffs, state) = online::regress_series(&traj, &config.layers()[0]).unwrap();
        assert_eq!(stack.layers[0].coeffs, coeffs);
        assert_eq!(stack.layers[0].state, state);
    }

    #[test]
    fn second_layer_emits_21_dimensional_stream() {
        let series = sample_series(11, 2);
        let stack = regress_stack(&series, &k2_config(5, 10)).unwrap();
        assert_eq!(stack.layers.len(), 2);
        assert_eq!(stack.layers[0].coeffs.len(), 10);
        assert_eq!(stack.layers[1].coeffs.len(), 10);
        assert!(stack.layers[1].coeffs.iter().all(|z| z.len() == 21));
    }

    #[test]
    fn zero_rates_keep_all_layers_constant() {
        let series = sample_series(30, 3);
        let config = NetworkConfig::new(
            vec![
                hyper([0.0; 5], vec![0.1, -0.2, 0.3]),
                hyper([0.0; 5], (0..21).map(|i| i as f64 / 100.0).collect()),
            ],
            5,
            10,
        )
        .unwrap();
        let stack = regress_stack(&series, &config).unwrap();
        for (k, layer) in stack.layers.iter().enumerate() {
            let z0 = &config.layers()[k].z0;
            for z in &layer.coeffs {
                assert_eq!(z, z0);
            }
        }
    }

    #[test]
    fn generated_path_follows_hand_recursion() {
        // One layer holding [A, N, Sigma] = [0, 0.1, 0] from Y_T = 1.
        let terminals = vec![DVector::from_row_slice(&[0.0, 0.1, 0.0])];
        let path = simulate_path(&terminals, 1.0, 3, PathNoise::Seeded { seed: 0, trajectory: 0 }).unwrap();
        assert_abs_diff_eq!(path[0], 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(path[1], 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(path[2], 1.3, epsilon = 1e-12);
    }

    #[test]
    fn zero_volatility_path_is_seed_independent() {
        let terminals = vec![DVector::from_row_slice(&[-0.1, 0.5, 0.0])];
        let a = simulate_path(&terminals, 2.0, 20, PathNoise::Seeded { seed: 1, trajectory: 0 }).unwrap();
        let b = simulate_path(&terminals, 2.0, 20, PathNoise::Seeded { seed: 999, trajectory: 7 }).unwrap();
        assert_eq!(a, b);
        let mut y = 2.0;
        for v in &a {
            y = y + -0.1 * y + 0.5;
            assert_abs_diff_eq!(*v, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn fixed_seed_reproduces_paths_bitwise() {
        let series = sample_series(60, 4);
        let stack = regress_stack(&series, &k2_config(10, 10)).unwrap();
        let terminals = stack.terminal_coeffs();
        let last = *series.last().unwrap();
        let a = simulate_path(&terminals, last, 10, PathNoise::Seeded { seed: 5, trajectory: 3 }).unwrap();
        let b = simulate_path(&terminals, last, 10, PathNoise::Seeded { seed: 5, trajectory: 3 }).unwrap();
        let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = simulate_path(&terminals, last, 10, PathNoise::Seeded { seed: 5, trajectory: 4 }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn forecast_statistics_match_trajectories_exactly() {
        let series = sample_series(120, 6);
        let result = forecast(&series, &k1_config(15, 16), 11).unwrap();
        assert_eq!(result.diverged, 0);
        for t in 0..15 {
            let (mean, var) = step_statistics(&result.trajectories, t);
            assert_eq!(result.mean[t], mean);
            assert_eq!(result.variance[t], var);
            assert!(result.variance[t] >= 0.0);
            assert!(result.lo95[t] <= result.mean[t] && result.mean[t] <= result.hi95[t]);
        }
    }

    #[test]
    fn zero_volatility_forecast_has_zero_variance() {
        let series = sample_series(50, 7);
        let config = NetworkConfig::new(
            vec![hyper([0.0; 5], vec![-0.05, 0.3, 0.0])],
            12,
            8,
        )
        .unwrap();
        let result = forecast(&series, &config, 3).unwrap();
        let mut y = *series.last().unwrap();
        for t in 0..12 {
            assert_eq!(result.variance[t], 0.0);
            y = y + -0.05 * y + 0.3;
            assert_abs_diff_eq!(result.mean[t], y, epsilon = 1e-12);
            assert_eq!(result.lo95[t], result.hi95[t]);
        }
    }

    #[test]
    fn forecast_determinism_across_thread_counts() {
        let series = sample_series(100, 8);
        let config = k2_config(20, 24);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| forecast(&series, &config, 17).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
    }

    #[test]
    fn losses_zero_for_perfect_forecast_and_shifted_constants() {
        let actuals = [1.0, 2.0, 3.0, 4.0];
        let (le, lv) = mc_losses(&actuals, &actuals, &[0.0; 4]);
        assert_eq!((le, lv), (0.0, 0.0));

        let shifted: Vec<f64> = actuals.iter().map(|y| y + 0.5).collect();
        let (le, lv) = mc_losses(&actuals, &shifted, &[0.0; 4]);
        assert_abs_diff_eq!(le, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(lv, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn horizon_loss_matches_direct_formula() {
        let series = sample_series(44, 9);
        let config = k1_config(4, 12);
        let loss = horizon_loss(&series, &config, 21).unwrap();
        let result = loss.forecast.as_ref().unwrap();
        let tail = &series[40..];
        let mut se = 0.0;
        let mut sv = 0.0;
        for (t, y) in tail.iter().enumerate() {
            let gap = (y - result.mean[t]).powi(2);
            se += gap;
            sv += (gap - result.variance[t]).powi(2);
        }
        assert_abs_diff_eq!(loss.loss_mean, (se / 4.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss.loss_variance, (sv / 4.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn forecast_fails_when_paths_explode() {
        // Zero rates keep the regression finite while the held
        // coefficients overflow every generated path within two steps.
        let series = sample_series(30, 14);
        let config = NetworkConfig::new(
            vec![hyper([0.0; 5], vec![1e308, 0.0, 0.0])],
            10,
            8,
        )
        .unwrap();
        match forecast(&series, &config, 1).unwrap_err() {
            Error::ForecastFailed { diverged, total } => {
                assert_eq!(diverged, 8);
                assert_eq!(total, 8);
            }
            other => panic!("expected forecast failure, got {other}"),
        }
    }

    #[test]
    fn diverging_configuration_maps_to_infinite_loss() {
        let series = sample_series(80, 10);
        let config = NetworkConfig::new(
            vec![hyper([0.01, 0.01, 10.0, 0.5, 0.5], vec![0.0, 0.0, 1.0])],
            10,
            8,
        )
        .unwrap();
        let loss = horizon_loss(&series, &config, 0).unwrap();
        assert!(loss.loss_mean.is_infinite());
        assert!(loss.loss_variance.is_infinite());
        assert!(loss.forecast.is_none());
    }

    #[test]
    fn average_loss_single_endpoint_equals_horizon_loss() {
        // T = 2: exactly one endpoint, so the average is that loss.
        let config = k1_config(6, 10);
        let series = sample_series(8, 11); // len = horizon + 2
        let (le_avg, lv_avg) = average_loss(&series, &config, 33, 1).unwrap();
        let single = horizon_loss(&series, &config, rng::derive_seed(33, &[2])).unwrap();
        assert_eq!(le_avg, single.loss_mean);
        assert_eq!(lv_avg, single.loss_variance);
    }

    #[test]
    fn average_loss_is_mean_of_endpoint_losses() {
        // T = 4, stride 1: endpoints 2, 3, 4.
        let config = k1_config(5, 10);
        let series = sample_series(9, 12);
        let (le_avg, lv_avg) = average_loss(&series, &config, 5, 1).unwrap();
        let mut les = Vec::new();
        let mut lvs = Vec::new();
        for t in 2..=4usize {
            let l = horizon_loss(&series[..t + 5], &config, rng::derive_seed(5, &[t as u64])).unwrap();
            les.push(l.loss_mean);
            lvs.push(l.loss_variance);
        }
        assert_abs_diff_eq!(le_avg, les.iter().sum::<f64>() / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lv_avg, lvs.iter().sum::<f64>() / 3.0, epsilon = 1e-12);
        // The average lies between the endpoint extremes.
        let (min, max) = (les.iter().cloned().fold(f64::INFINITY, f64::min), les.iter().cloned().fold(0.0, f64::max));
        assert!(le_avg >= min && le_avg <= max);
    }

    #[test]
    fn endpoint_count_follows_stride_arithmetic() {
        // Count endpoints through an instrumented sweep.
        for (t_max, stride) in [(10usize, 1usize), (10, 3), (11, 4), (50, 7)] {
            let mut count = 0;
            let mut t = 2;
            while t <= t_max {
                count += 1;
                t += stride;
            }
            assert_eq!(count, (t_max - 2) / stride + 1);
        }
    }

    #[test]
    fn forecast_csv_layout() {
        let series = sample_series(30, 13);
        let result = forecast(&series, &k1_config(3, 8), 2).unwrap();
        let mut buf = Vec::new();
        result.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,mean,variance,lo95,hi95"));
        assert_eq!(lines.count(), 3);
    }
}
