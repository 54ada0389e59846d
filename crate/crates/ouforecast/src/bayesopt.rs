//! Expected-improvement Bayesian optimization over a bounded box, plus
//! the layerwise hyperparameter tuning driver.
//!
//! The loop seeds the surrogate with a handful of stratified random
//! points, then alternates: fit a Gaussian process on everything observed
//! so far, maximize expected improvement inside the box with a multi-start
//! bounded quasi-Newton ascent, evaluate the objective there, repeat.
//! Inputs are normalized to the unit cube before touching the kernel, so
//! a unit length scale is meaningful across coordinates of very different
//! magnitudes.

use std::io::Write;

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gp::{GpModel, Kernel};
use crate::net::{self, NetworkConfig};
use crate::online::{self, LayerHyper};
use crate::rng;

use rand::Rng;

/// Axis-aligned search box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoundsBox {
    pub fn new(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("bounds must have at least one coordinate".into()));
        }
        for (i, (lo, hi)) in pairs.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "bound {i} must satisfy min < max, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            lo: pairs.iter().map(|p| p.0).collect(),
            hi: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Map a point into `[0, 1]^m`.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    /// Map a unit-cube point back into the box.
    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| lo + v.clamp(0.0, 1.0) * (hi - lo))
            .collect()
    }

    /// Project a point onto the box, coordinate by coordinate.
    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }
}

/// Loop parameters. Defaults: 200 iterations, 5 acquisition restarts,
/// `xi = 0.01`, Matern 5/2 with unit length scale, 5 seeding samples.
#[derive(Debug, Clone)]
pub struct BoConfig {
    pub iterations: usize,
    pub restarts: usize,
    pub xi: f64,
    pub kernel: Kernel,
    pub init_samples: usize,
    pub seed: u64,
    /// Jitter on the surrogate's kernel diagonal.
    pub jitter: f64,
    /// Observation-noise variance on the standardized output scale.
    pub noise: f64,
    /// Points evaluated before the space-filling seeding (clamped into
    /// the box). Lets callers inject informed guesses such as an offline
    /// calibration.
    pub warm_starts: Vec<Vec<f64>>,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            restarts: 5,
            xi: 0.01,
            kernel: Kernel::default_matern52(),
            init_samples: 5,
            seed: 0,
            jitter: 1e-8,
            noise: 1e-4,
            warm_starts: Vec::new(),
        }
    }
}

impl BoConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 || self.init_samples == 0 {
            return Err(Error::InvalidArgument(
                "iterations, restarts and init_samples must be >= 1".into(),
            ));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(Error::InvalidArgument(format!("xi must be >= 0, got {}", self.xi)));
        }
        Ok(())
    }
}

/// One objective evaluation in a trace.
#[derive(Debug, Clone)]
pub struct BoEvaluation {
    pub x: Vec<f64>,
    pub value: f64,
    /// Expected improvement at the proposal; NaN for seeding samples.
    pub acquisition: f64,
    pub best_so_far: f64,
}

/// Full optimization history with the running best.
#[derive(Debug, Clone)]
pub struct BoTrace {
    pub evaluations: Vec<BoEvaluation>,
    pub best_x: Vec<f64>,
    pub best_f: f64,
}

impl BoTrace {
    /// Writes `iter,x1..xm,f,best_f` rows.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let m = self.best_x.len();
        let header: Vec<String> = (1..=m).map(|i| format!("x{i}")).collect();
        writeln!(w, "iter,{},f,best_f", header.join(","))?;
        for (i, ev) in self.evaluations.iter().enumerate() {
            let xs: Vec<String> = ev.x.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{},{}", i + 1, xs.join(","), ev.value, ev.best_so_far)?;
        }
        Ok(())
    }
}

/// Analytic expected improvement of a Gaussian belief `N(mu, sigma^2)`
/// over the incumbent `f_best`, with exploration margin `xi`:
/// `E[max(0, f - f_best - xi)]`. Zero when `sigma = 0`.
///
/// ```
/// use ouforecast::bayesopt::expected_improvement;
///
/// // At mu = f_best + xi the first term vanishes: EI = sigma * pdf(0).
/// let ei = expected_improvement(1.01, 1.0, 1.0, 0.01);
/// assert!((ei - 0.3989422804014327).abs() < 1e-12);
/// assert_eq!(expected_improvement(5.0, 0.0, 1.0, 0.0), 0.0);
/// ```
pub fn expected_improvement(mu: f64, sigma: f64, f_best: f64, xi: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let gain = mu - f_best - xi;
    let z = gain / sigma;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (gain * normal.cdf(z) + sigma * normal.pdf(z)).max(0.0)
}

/// Expected improvement of the surrogate at a normalized point.
fn acquisition(model: &GpModel, u: &[f64], f_best: f64, xi: f64) -> f64 {
    let (mu, var) = model.posterior(u);
    expected_improvement(mu, var.sqrt(), f_best, xi)
}

/// Maximize expected improvement inside `bounds` by projected L-BFGS
/// ascent from `restarts` starting points, with central finite-difference
/// gradients in normalized coordinates.
///
/// Expected improvement is near zero over most of the box once the
/// surrogate has a few observations, so uniform starts alone routinely
/// strand every ascent on a flat tail. The starts are therefore chosen by
/// screening a batch of uniform random candidates and keeping the best
/// `restarts` of them.
///
/// The surrogate must have been fitted on normalized inputs. Never fails:
/// if no ascent improves on its start, the best candidate is returned.
pub fn maximize_acquisition(
    model: &GpModel,
    bounds: &BoundsBox,
    f_best: f64,
    xi: f64,
    restarts: usize,
    seed: u64,
) -> Vec<f64> {
    let m = bounds.dim();
    let restarts = restarts.max(1);
    let mut stream = rng::substream(seed, &[0x61637175]);
    let objective = |u: &[f64]| acquisition(model, u, f_best, xi);

    let candidates = (64 * m).clamp(restarts, 512);
    let mut scored: Vec<(f64, Vec<f64>)> = (0..candidates)
        .map(|_| {
            let u: Vec<f64> = (0..m).map(|_| stream.random_range(0.0..1.0)).collect();
            (objective(&u), u)
        })
        .collect();
    // Stable by construction: sort_by on the score only, descending.
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut best_u = scored[0].1.clone();
    let mut best_val = scored[0].0;
    for (_, start) in scored.iter().take(restarts) {
        let (u, val) = lbfgs_box_max(&objective, start, 100);
        if val > best_val {
            best_val = val;
            best_u = u;
        }
    }
    bounds.denormalize(&best_u)
}

/// Limited-memory BFGS ascent constrained to the unit box by projection.
/// Returns the best iterate and its value.
fn lbfgs_box_max(f: &dyn Fn(&[f64]) -> f64, start: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
    const MEMORY: usize = 5;
    const FD_STEP: f64 = 1e-6;
    const ARMIJO: f64 = 1e-4;

    let m = start.len();
    let clamp = |x: &mut Vec<f64>| {
        for v in x.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    };
    let grad = |x: &[f64]| -> DVector<f64> {
        let mut g = DVector::zeros(m);
        let mut xp = x.to_vec();
        for i in 0..m {
            let orig = xp[i];
            xp[i] = orig + FD_STEP;
            let hi = f(&xp);
            xp[i] = orig - FD_STEP;
            let lo = f(&xp);
            xp[i] = orig;
            g[i] = (hi - lo) / (2.0 * FD_STEP);
        }
        g
    };

    let mut x = start.to_vec();
    clamp(&mut x);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();

    let mut best_x = x.clone();
    let mut best_f = fx;

    for _ in 0..max_iter {
        // Two-loop recursion on the ascent direction (gradient ascent
        // treated as descent on -f).
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y) in pairs.iter().rev() {
            let rho = 1.0 / y.dot(s);
            let a = rho * s.dot(&q);
            q -= y * a;
            alphas.push((rho, a));
        }
        if let Some((s, y)) = pairs.last() {
            q *= s.dot(y) / y.dot(y);
        }
        for ((s, y), (rho, a)) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q += s * (a - b);
        }
        let mut dir = q;
        if dir.dot(&g) <= 0.0 {
            dir = g.clone(); // fall back to steepest ascent
        }

        // Backtracking line search on the projected step.
        let slope = dir.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(xi, di)| xi + step * di).collect();
            clamp(&mut cand);
            let fc = f(&cand);
            if fc >= fx + ARMIJO * step * slope.max(0.0) && fc > fx {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else { break };

        let g_new = grad(&x_new);
        let s = DVector::from_iterator(m, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = &g - &g_new; // ascent convention: curvature pair for -f
        if s.dot(&y) > 1e-12 {
            pairs.push((s, y));
            if pairs.len() > MEMORY {
                pairs.remove(0);
            }
        }

        let gain = f_new - fx;
        x = x_new;
        fx = f_new;
        g = g_new;
        if fx > best_f {
            best_f = fx;
            best_x = x.clone();
        }

        // Projected-gradient convergence: ignore components pushing
        // outside the active box faces.
        let proj_inf = x
            .iter()
            .zip(g.iter())
            .map(|(xi, gi)| {
                if (*xi <= 0.0 && *gi < 0.0) || (*xi >= 1.0 && *gi > 0.0) {
                    0.0
                } else {
                    gi.abs()
                }
            })
            .fold(0.0_f64, f64::max);
        if proj_inf < 1e-8 || gain < 1e-14 {
            break;
        }
    }
    (best_x, best_f)
}

/// Stratified (Latin hypercube) seeding points in the unit cube.
fn latin_hypercube(count: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut strata: Vec<f64> = (0..count)
            .map(|i| (i as f64 + rng.random_range(0.0..1.0)) / count as f64)
            .collect();
        // Fisher-Yates with the seeded stream.
        for i in (1..count).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        coords.push(strata);
    }
    (0..count).map(|i| coords.iter().map(|c| c[i]).collect()).collect()
}

/// Surrogate targets: finite values pass through; non-finite evaluations
/// become `worst_finite - 3 * spread` so the surrogate sees bad regions
/// as uniformly terrible without ingesting infinities.
fn surrogate_targets(values: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return vec![0.0; values.len()];
    }
    let max = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = (max - min).max(1.0);
    let penalty = min - 3.0 * spread;
    values.iter().map(|v| if v.is_finite() { *v } else { penalty }).collect()
}

/// Maximize a (possibly noisy) objective over `bounds`.
///
/// Evaluates `init_samples` stratified points, then runs
/// `config.iterations` rounds of fit / propose / evaluate. Objective
/// values of NaN are treated as negative infinity; the incumbent only
/// moves on strictly better finite values.
///
/// The kernel length scale applies to *normalized* inputs, so it should
/// reflect how many basins the box is expected to hold; on this 12-wide
/// interval a scale of 1/12 resolves unit-width features.
///
/// ```
/// use ouforecast::bayesopt::{bayes_optimize, BoConfig, BoundsBox};
/// use ouforecast::gp::{Kernel, KernelKind};
///
/// let bounds = BoundsBox::new(&[(-2.0, 10.0)]).unwrap();
/// let kernel = Kernel::new(KernelKind::Matern52, 1.0 / 12.0).unwrap();
/// let config = BoConfig { iterations: 25, seed: 1, kernel, ..BoConfig::default() };
/// let f = |x: &[f64]| {
///     let x = x[0];
///     (-(x - 2.0) * (x - 2.0)).exp() + (-(x - 6.0) * (x - 6.0) / 10.0).exp() + 1.0 / (x * x + 1.0)
/// };
/// let trace = bayes_optimize(f, &bounds, &config).unwrap();
/// assert!((trace.best_x[0] - 2.0).abs() < 0.1);
/// ```
pub fn bayes_optimize(
    mut objective: impl FnMut(&[f64]) -> f64,
    bounds: &BoundsBox,
    config: &BoConfig,
) -> Result<BoTrace> {
    config.validate()?;
    let mut evaluations: Vec<BoEvaluation> = Vec::with_capacity(config.init_samples + config.iterations);
    let mut xs_unit: Vec<Vec<f64>> = Vec::new();
    let mut fs: Vec<f64> = Vec::new();
    let mut best_x: Option<Vec<f64>> = None;
    let mut best_f = f64::NEG_INFINITY;

    let record = |x: Vec<f64>,
                  u: Vec<f64>,
                  value: f64,
                  acq: f64,
                  evaluations: &mut Vec<BoEvaluation>,
                  xs_unit: &mut Vec<Vec<f64>>,
                  fs: &mut Vec<f64>,
                  best_x: &mut Option<Vec<f64>>,
                  best_f: &mut f64| {
        let value = if value.is_nan() { f64::NEG_INFINITY } else { value };
        if best_x.is_none() || value > *best_f {
            *best_f = value;
            *best_x = Some(x.clone());
        }
        xs_unit.push(u);
        fs.push(value);
        evaluations.push(BoEvaluation { x, value, acquisition: acq, best_so_far: *best_f });
    };

    for w in &config.warm_starts {
        if w.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "warm start",
                expected: bounds.dim(),
                actual: w.len(),
            });
        }
        let x = bounds.clamp(w);
        let u = bounds.normalize(&x);
        let value = objective(&x);
        record(x, u, value, f64::NAN, &mut evaluations, &mut xs_unit, &mut fs, &mut best_x, &mut best_f);
    }

    let mut init_rng = rng::substream(config.seed, &[0x696e6974]);
    for u in latin_hypercube(config.init_samples, bounds.dim(), &mut init_rng) {
        let x = bounds.denormalize(&u);
        let value = objective(&x);
        record(x, u, value, f64::NAN, &mut evaluations, &mut xs_unit, &mut fs, &mut best_x, &mut best_f);
    }

    for iter in 0..config.iterations {
        let targets = surrogate_targets(&fs);
        let model = GpModel::fit(xs_unit.clone(), &targets, config.kernel, config.jitter, config.noise)?;
        let incumbent = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x_next = maximize_acquisition(
            &model,
            bounds,
            incumbent,
            config.xi,
            config.restarts,
            rng::derive_seed(config.seed, &[1 + iter as u64]),
        );
        let u_next = bounds.normalize(&x_next);
        let acq = acquisition(&model, &u_next, incumbent, config.xi);
        let value = objective(&x_next);
        record(x_next, u_next, value, acq, &mut evaluations, &mut xs_unit, &mut fs, &mut best_x, &mut best_f);
    }

    Ok(BoTrace {
        evaluations,
        best_x: best_x.expect("at least one evaluation"),
        best_f,
    })
}

/// Per-group bounds for one layer's hyperparameter search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerBounds {
    pub a0: (f64, f64),
    pub n0: (f64, f64),
    pub sigma0: (f64, f64),
    pub eta: (f64, f64),
    pub ema: (f64, f64),
}

impl LayerBounds {
    /// First-layer search box: initial coefficients in [-0.3, 0.3],
    /// initial volatility in [0.001, 0.01], rates in [0.001, 0.3], EMA
    /// weights in [0.1, 1.0].
    pub fn layer1() -> Self {
        Self {
            a0: (-0.3, 0.3),
            n0: (-0.3, 0.3),
            sigma0: (0.001, 0.01),
            eta: (0.001, 0.3),
            ema: (0.1, 1.0),
        }
    }

    /// Second-layer search box: tighter coefficient ranges around zero.
    pub fn layer2() -> Self {
        Self {
            a0: (-0.1, 0.1),
            n0: (-0.1, 0.1),
            sigma0: (-0.001, 0.001),
            eta: (0.001, 0.3),
            ema: (0.1, 1.0),
        }
    }

    pub fn for_layer(layer: usize) -> Self {
        if layer <= 1 {
            Self::layer1()
        } else {
            Self::layer2()
        }
    }
}

/// How a layer's initial coefficient vector is exposed to the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Z0Mode {
    /// One scalar per coefficient group (A0, N0, Sigma0), replicated over
    /// the group's entries: 3 + 5 search dimensions for any layer.
    #[default]
    Tied,
    /// Every z0 entry is its own dimension: `2d^2 + d + 5` dimensions.
    Full,
}

/// Whether tuning objective evaluations share Monte Carlo noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    /// Common random numbers: each candidate sees identical noise, which
    /// smooths the surface the surrogate has to model.
    #[default]
    Common,
    /// Fresh substream per objective evaluation.
    PerEvaluation,
}

/// Layerwise tuning request.
#[derive(Debug, Clone)]
pub struct TuneSpec {
    pub layers: usize,
    pub horizon: usize,
    pub trajectories: usize,
    pub bounds: Vec<LayerBounds>,
    /// Endpoint stride of the averaged loss; 1 sweeps every endpoint.
    pub stride: usize,
    /// Optional endpoint window (first, last); defaults to the full
    /// `2..=T` sweep.
    pub eval_window: Option<(usize, usize)>,
    pub z0_mode: Z0Mode,
    pub noise_mode: NoiseMode,
}

impl TuneSpec {
    pub fn new(layers: usize, horizon: usize, trajectories: usize) -> Self {
        Self {
            layers,
            horizon,
            trajectories,
            bounds: (1..=layers).map(LayerBounds::for_layer).collect(),
            stride: 64,
            eval_window: None,
            z0_mode: Z0Mode::default(),
            noise_mode: NoiseMode::default(),
        }
    }
}

/// Tuned hyperparameters plus the optimization traces per layer.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub hypers: Vec<LayerHyper>,
    pub traces: Vec<BoTrace>,
}

/// Search box for one layer under the given parameterization.
fn layer_box(dim: usize, bounds: &LayerBounds, mode: Z0Mode) -> BoundsBox {
    let mut pairs = Vec::new();
    match mode {
        Z0Mode::Tied => {
            pairs.push(bounds.a0);
            pairs.push(bounds.n0);
            pairs.push(bounds.sigma0);
        }
        Z0Mode::Full => {
            pairs.extend(std::iter::repeat_n(bounds.a0, dim * dim));
            pairs.extend(std::iter::repeat_n(bounds.n0, dim));
            pairs.extend(std::iter::repeat_n(bounds.sigma0, dim * dim));
        }
    }
    pairs.push(bounds.eta);
    pairs.push(bounds.eta);
    pairs.push(bounds.eta);
    pairs.push(bounds.ema);
    pairs.push(bounds.ema);
    BoundsBox::new(&pairs).expect("static bounds are valid")
}

/// Informed first evaluations for one layer's search: the offline
/// calibration of the layer's input series (first layer only, when it is
/// available) and the inert point whose coefficients start at zero with
/// every rate at its floor. Both are clamped into the box, so the search
/// always begins from the static estimate and from a configuration that
/// forecasts like the last-value baseline.
fn layer_warm_starts(series: &[f64], layer: usize, dim: usize, bounds: &LayerBounds, mode: Z0Mode) -> Vec<Vec<f64>> {
    let z0_len = match mode {
        Z0Mode::Tied => 3,
        Z0Mode::Full => online::layer_dim(dim),
    };
    let floors = [bounds.eta.0, bounds.eta.0, bounds.eta.0, bounds.ema.0, bounds.ema.0];
    let mut starts = Vec::new();

    if layer == 0 && dim == 1 {
        if let Ok(traj) = crate::ou::Trajectory::from_scalars(series.iter().copied()) {
            if let Ok(fit) = crate::ou::ols_fit(&traj) {
                let mut x = vec![
                    fit.params.a_matrix()[(0, 0)],
                    fit.params.n_vector()[0],
                    fit.params.sigma_matrix()[(0, 0)],
                ];
                x.extend(floors);
                starts.push(x);
            }
        }
    }

    let mut inert = vec![0.0; z0_len];
    inert.extend(floors);
    starts.push(inert);
    starts
}

/// Assemble a layer's hyperparameters from a search-space point.
fn hyper_from_point(dim: usize, x: &[f64], mode: Z0Mode) -> Result<LayerHyper> {
    let z_len = online::layer_dim(dim);
    let (z0, rates) = match mode {
        Z0Mode::Tied => {
            let mut z0 = DVector::zeros(z_len);
            for i in 0..dim * dim {
                z0[i] = x[0];
            }
            for i in 0..dim {
                z0[dim * dim + i] = x[1];
            }
            for i in 0..dim * dim {
                z0[dim * dim + dim + i] = x[2];
            }
            (z0, &x[3..])
        }
        Z0Mode::Full => {
            let z0 = DVector::from_iterator(z_len, x[..z_len].iter().copied());
            (z0, &x[z_len..])
        }
    };
    LayerHyper::new(rates[0], rates[1], rates[2], rates[3], rates[4], z0)
}

/// Tune one layer at a time: layer k is searched with layers `< k` frozen
/// at their optima, maximizing the negated average forecast loss on
/// `series`. The per-layer search spaces, loss windows and noise policy
/// come from `spec`; the loop budget from `bo`.
///
/// Each layer's search is warmed with the offline calibration of its
/// input series and with the inert zero-coefficient point before the
/// stratified seeding, so the optimizer always starts from the static
/// estimate and from a configuration that forecasts like the last-value
/// baseline.
///
/// ```
/// use ouforecast::bayesopt::{tune_layerwise, BoConfig, TuneSpec};
/// use ouforecast::ou::{simulate_named, Noise, ProcessKind};
///
/// let series = simulate_named(
///     ProcessKind::MeanReverting { rate: 0.1, level: 2.0, volatility: 0.01 },
///     2.0, 119, Noise::Seed(3),
/// ).unwrap().scalars().unwrap();
///
/// let mut spec = TuneSpec::new(1, 20, 8);
/// spec.stride = 50;
/// let bo = BoConfig { iterations: 5, seed: 21, ..BoConfig::default() };
/// let outcome = tune_layerwise(&series, &spec, &bo).unwrap();
/// assert_eq!(outcome.hypers.len(), 1);
/// assert!(outcome.traces[0].best_f.is_finite());
/// ```
pub fn tune_layerwise(series: &[f64], spec: &TuneSpec, bo: &BoConfig) -> Result<TuneOutcome> {
    if spec.layers == 0 || spec.layers > 2 {
        return Err(Error::InvalidArgument(format!(
            "layerwise tuning supports 1 or 2 layers, got {}",
            spec.layers
        )));
    }
    if spec.bounds.len() != spec.layers {
        return Err(Error::DimensionMismatch {
            what: "per-layer bounds",
            expected: spec.layers,
            actual: spec.bounds.len(),
        });
    }
    if series.len() < spec.horizon + 2 {
        return Err(Error::InvalidArgument(format!(
            "series of length {} cannot host horizon {}",
            series.len(),
            spec.horizon
        )));
    }
    let t_last = series.len() - spec.horizon;
    let (first, last) = spec.eval_window.unwrap_or((2, t_last));
    if first < 2 || last > t_last || first > last {
        return Err(Error::InvalidArgument(format!(
            "evaluation window [{first}, {last}] does not fit 2..={t_last}"
        )));
    }

    let mut hypers: Vec<LayerHyper> = Vec::with_capacity(spec.layers);
    let mut traces = Vec::with_capacity(spec.layers);
    for k in 0..spec.layers {
        let dim = net::LAYER_DIMS[k];
        let bounds = layer_box(dim, &spec.bounds[k], spec.z0_mode);
        let mut layer_bo = BoConfig { seed: rng::derive_seed(bo.seed, &[k as u64]), ..bo.clone() };
        layer_bo
            .warm_starts
            .extend(layer_warm_starts(series, k, dim, &spec.bounds[k], spec.z0_mode));
        let frozen = hypers.clone();
        let mut eval_count = 0u64;
        let objective = |x: &[f64]| -> f64 {
            let Ok(candidate) = hyper_from_point(dim, x, spec.z0_mode) else {
                return f64::NEG_INFINITY;
            };
            let mut layers = frozen.clone();
            layers.push(candidate);
            let Ok(config) = NetworkConfig::new(layers, spec.horizon, spec.trajectories) else {
                return f64::NEG_INFINITY;
            };
            let eval_seed = match spec.noise_mode {
                NoiseMode::Common => layer_bo.seed,
                NoiseMode::PerEvaluation => {
                    eval_count += 1;
                    rng::derive_seed(layer_bo.seed, &[0x6576c, eval_count])
                }
            };
            match net::average_loss_windowed(series, &config, eval_seed, spec.stride, first, last) {
                Ok((le, lv)) => {
                    let total = le + lv;
                    if total.is_finite() {
                        -total
                    } else {
                        f64::NEG_INFINITY
                    }
                }
                Err(e) if e.is_numeric() => f64::NEG_INFINITY,
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let trace = bayes_optimize(objective, &bounds, &layer_bo)?;
        hypers.push(hyper_from_point(dim, &trace.best_x, spec.z0_mode)?);
        traces.push(trace);
    }
    Ok(TuneOutcome { hypers, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ou::{simulate_named, Noise, ProcessKind};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn ei_zero_sigma_and_phi_zero_cases() {
        assert_eq!(expected_improvement(123.0, 0.0, 0.0, 0.0), 0.0);
        // mu = f_best + xi collapses the first term: EI = sigma * pdf(0).
        let ei = expected_improvement(0.11, 1.0, 0.1, 0.01);
        assert_abs_diff_eq!(ei, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn ei_matches_monte_carlo_oracle() {
        // E[max(0, G - f_best - xi)] for G ~ N(mu, sigma^2), 1e6 draws.
        let (mu, sigma, f_best, xi) = (1.0, 0.5, 0.0, 0.0);
        let analytic = expected_improvement(mu, sigma, f_best, xi);
        let mut stream = rng::substream(123, &[]);
        let draws = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let g: f64 = mu + sigma * stream.sample::<f64, _>(rand_distr::StandardNormal);
            acc += (g - f_best - xi).max(0.0);
        }
        let mc = acc / draws as f64;
        assert!((analytic - mc).abs() < 1e-3, "analytic {analytic} vs mc {mc}");
    }

    #[test]
    fn ei_properties_on_random_draws() {
        let mut r = rng::substream(9, &[]);
        for _ in 0..200 {
            let mu = r.random_range(-2.0..2.0);
            let sigma = r.random_range(0.0..1.5);
            let f_best = r.random_range(-2.0..2.0);
            let xi = r.random_range(0.0..0.2);
            let ei = expected_improvement(mu, sigma, f_best, xi);
            assert!(ei >= 0.0);
            // Strictly increasing in mu for sigma > 0 (up to underflow of
            // the far Gaussian tail).
            if sigma > 1e-9 {
                let ei_up = expected_improvement(mu + 0.1, sigma, f_best, xi);
                assert!(ei_up >= ei);
                if ei > 1e-12 {
                    assert!(ei_up > ei);
                }
                if mu > f_best {
                    assert!(expected_improvement(mu, sigma, f_best, 0.0) > 0.0);
                }
            }
        }
    }

    #[test]
    fn bounds_box_roundtrip_and_rejection() {
        let b = BoundsBox::new(&[(-2.0, 10.0), (0.001, 0.3)]).unwrap();
        let x = vec![4.0, 0.2];
        let u = b.normalize(&x);
        assert_abs_diff_eq!(b.denormalize(&u)[0], 4.0, epsilon = 1e-12);
        assert!(b.contains(&x));
        assert!(!b.contains(&[11.0, 0.2]));
        assert!(BoundsBox::new(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn acquisition_maximizer_beats_box_corners() {
        // One observation at the box center: proposals must dominate EI
        // at every corner.
        let bounds = BoundsBox::new(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let model = GpModel::fit(
            vec![bounds.normalize(&[0.0, 0.0])],
            &[1.0],
            Kernel::new(crate::gp::KernelKind::SquaredExponential, 1.0).unwrap(),
            1e-8,
            0.0,
        )
        .unwrap();
        let x = maximize_acquisition(&model, &bounds, 1.0, 0.0, 5, 3);
        assert!(bounds.contains(&x));
        let ei_at = |p: &[f64]| acquisition(&model, &bounds.normalize(p), 1.0, 0.0);
        let best = ei_at(&x);
        for corner in [[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]] {
            assert!(best >= ei_at(&corner) - 1e-12);
        }
    }

    #[test]
    fn acquisition_maximizer_matches_grid_oracle() {
        // 1-D surrogate from five samples of an off-center parabola (the
        // asymmetry makes the EI argmax unique); the proposal must sit
        // within 0.05 of the dense-grid argmax.
        let bounds = BoundsBox::new(&[(-2.0, 2.0)]).unwrap();
        let xs = [-2.0, -1.1, 0.0, 0.9, 2.0];
        let inputs: Vec<Vec<f64>> = xs.iter().map(|&x| bounds.normalize(&[x])).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| -(x - 0.4) * (x - 0.4)).collect();
        let f_best = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let model = GpModel::fit(inputs, &ys, Kernel::default_matern52(), 1e-8, 1e-6).unwrap();

        let proposal = maximize_acquisition(&model, &bounds, f_best, 0.01, 8, 11)[0];
        let mut grid_best = (f64::NEG_INFINITY, 0.0);
        for i in 0..10_000 {
            let x = -2.0 + 4.0 * i as f64 / 9_999.0;
            let ei = acquisition(&model, &bounds.normalize(&[x]), f_best, 0.01);
            if ei > grid_best.0 {
                grid_best = (ei, x);
            }
        }
        let ei_prop = acquisition(&model, &bounds.normalize(&[proposal]), f_best, 0.01);
        assert!(
            (proposal - grid_best.1).abs() < 0.05,
            "proposal {proposal} (EI {ei_prop}) vs grid argmax {} (EI {})",
            grid_best.1,
            grid_best.0
        );
    }

    #[test]
    fn single_restart_fixed_seed_is_deterministic() {
        let bounds = BoundsBox::new(&[(0.0, 1.0)]).unwrap();
        let model = GpModel::fit(
            vec![vec![0.2], vec![0.8]],
            &[1.0, 2.0],
            Kernel::default_matern52(),
            1e-8,
            1e-4,
        )
        .unwrap();
        let a = maximize_acquisition(&model, &bounds, 2.0, 0.01, 1, 77);
        let b = maximize_acquisition(&model, &bounds, 2.0, 0.01, 1, 77);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn optimizer_finds_the_benchmark_peak() {
        let bounds = BoundsBox::new(&[(-2.0, 10.0)]).unwrap();
        let kernel = Kernel::new(crate::gp::KernelKind::Matern52, 1.0 / 12.0).unwrap();
        let config = BoConfig { iterations: 25, seed: 5, kernel, ..BoConfig::default() };
        let f = |x: &[f64]| {
            let x = x[0];
            (-(x - 2.0) * (x - 2.0)).exp() + (-(x - 6.0) * (x - 6.0) / 10.0).exp() + 1.0 / (x * x + 1.0)
        };
        let trace = bayes_optimize(f, &bounds, &config).unwrap();
        assert!((trace.best_x[0] - 2.0).abs() <= 0.1, "best_x = {}", trace.best_x[0]);
        assert_eq!(trace.evaluations.len(), 30);
    }

    #[test]
    fn constant_objective_terminates_cleanly() {
        let bounds = BoundsBox::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let config = BoConfig { iterations: 8, seed: 2, ..BoConfig::default() };
        let trace = bayes_optimize(|_| 1.5, &bounds, &config).unwrap();
        assert_eq!(trace.best_f, 1.5);
        assert_eq!(trace.evaluations.len(), 8 + config.init_samples);
        for ev in &trace.evaluations {
            assert!(bounds.contains(&ev.x));
        }
    }

    #[test]
    fn quadratic_bowl_argmax_recovered_in_2d() {
        let bounds = BoundsBox::new(&[(-3.0, 3.0), (-3.0, 3.0)]).unwrap();
        let c = [0.8, -1.2];
        let config = BoConfig { iterations: 35, seed: 4, ..BoConfig::default() };
        let trace = bayes_optimize(
            |x| -((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)),
            &bounds,
            &config,
        )
        .unwrap();
        assert!((trace.best_x[0] - c[0]).abs() <= 0.1, "x0 = {}", trace.best_x[0]);
        assert!((trace.best_x[1] - c[1]).abs() <= 0.1, "x1 = {}", trace.best_x[1]);
    }

    #[test]
    fn best_f_is_monotone_and_proposals_stay_in_bounds() {
        let bounds = BoundsBox::new(&[(-1.0, 4.0)]).unwrap();
        let config = BoConfig { iterations: 12, seed: 8, ..BoConfig::default() };
        let trace = bayes_optimize(|x| (x[0] - 1.0).sin(), &bounds, &config).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for ev in &trace.evaluations {
            assert!(ev.best_so_far >= prev);
            assert!(bounds.contains(&ev.x));
            prev = ev.best_so_far;
        }
        let max_hist = trace
            .evaluations
            .iter()
            .map(|e| e.value)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(trace.best_f, max_hist);
    }

    #[test]
    fn failing_objective_regions_do_not_stop_the_loop() {
        // NaN / -inf over half the box; the optimizer must still finish
        // and settle in the healthy half.
        let bounds = BoundsBox::new(&[(-1.0, 1.0)]).unwrap();
        let config = BoConfig { iterations: 15, seed: 6, ..BoConfig::default() };
        let trace = bayes_optimize(
            |x| if x[0] < 0.0 { f64::NAN } else { 1.0 - (x[0] - 0.5).abs() },
            &bounds,
            &config,
        )
        .unwrap();
        assert!(trace.best_f > 0.8, "best_f = {}", trace.best_f);
        assert!(trace.best_x[0] >= 0.0);
    }

    #[test]
    fn trace_csv_layout() {
        let bounds = BoundsBox::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let config = BoConfig { iterations: 3, seed: 1, ..BoConfig::default() };
        let trace = bayes_optimize(|x| x[0] + x[1], &bounds, &config).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,x1,x2,f,best_f"));
        assert_eq!(lines.count(), 3 + config.init_samples);
    }

    #[test]
    fn layer_search_dimensions() {
        assert_eq!(layer_box(1, &LayerBounds::layer1(), Z0Mode::Full).dim(), 8);
        assert_eq!(layer_box(3, &LayerBounds::layer2(), Z0Mode::Tied).dim(), 8);
        assert_eq!(layer_box(3, &LayerBounds::layer2(), Z0Mode::Full).dim(), 26);
        let b1 = LayerBounds::layer1();
        assert_eq!(b1.a0, (-0.3, 0.3));
        assert_eq!(b1.sigma0, (0.001, 0.01));
        assert_eq!(b1.eta, (0.001, 0.3));
        assert_eq!(b1.ema, (0.1, 1.0));
    }

    #[test]
    fn tied_point_replicates_groups() {
        let x = [0.05, -0.02, 0.003, 0.1, 0.2, 0.01, 0.5, 0.6];
        let hyper = hyper_from_point(3, &x, Z0Mode::Tied).unwrap();
        let (a, n, s) = online::unflatten_params(&hyper.z0, 3).unwrap();
        assert!(a.iter().all(|&v| v == 0.05));
        assert!(n.iter().all(|&v| v == -0.02));
        assert!(s.iter().all(|&v| v == 0.003));
        assert_eq!(
            (hyper.eta_a, hyper.eta_n, hyper.eta_sigma, hyper.phi, hyper.rho),
            (0.1, 0.2, 0.01, 0.5, 0.6)
        );
    }

    #[test]
    fn layerwise_tuning_beats_random_search_at_equal_budget() {
        // Synthetic mean-reverting series; the tuned loss must be at
        // most the median loss of 20 random in-bounds draws.
        let series = simulate_named(
            ProcessKind::MeanReverting { rate: 0.05, level: 5.0, volatility: 0.02 },
            5.0,
            449,
            Noise::Seed(31),
        )
        .unwrap()
        .scalars()
        .unwrap();

        let mut spec = TuneSpec::new(1, 50, 20);
        spec.stride = 64;
        let bo = BoConfig { iterations: 40, seed: 13, ..BoConfig::default() };
        let outcome = tune_layerwise(&series, &spec, &bo).unwrap();
        let tuned_loss = -outcome.traces[0].best_f;
        assert!(tuned_loss.is_finite());

        let bounds = layer_box(1, &spec.bounds[0], spec.z0_mode);
        let mut r = rng::substream(77, &[]);
        let mut random_losses = Vec::new();
        for _ in 0..20 {
            let x: Vec<f64> = (0..bounds.dim()).map(|i| {
                let (lo, hi) = (bounds.lo[i], bounds.hi[i]);
                r.random_range(lo..hi)
            }).collect();
            let hyper = hyper_from_point(1, &x, spec.z0_mode).unwrap();
            let config = NetworkConfig::new(vec![hyper], spec.horizon, spec.trajectories).unwrap();
            let (le, lv) = net::average_loss_windowed(
                &series,
                &config,
                rng::derive_seed(bo.seed, &[0]),
                spec.stride,
                2,
                series.len() - spec.horizon,
            )
            .unwrap();
            random_losses.push(le + lv);
        }
        random_losses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = random_losses[random_losses.len() / 2];
        assert!(
            tuned_loss <= median,
            "tuned {tuned_loss} vs random median {median}"
        );
    }

    #[test]
    fn two_layer_tuning_freezes_the_first_layer() {
        let series = simulate_named(
            ProcessKind::MeanReverting { rate: 0.08, level: 1.0, volatility: 0.015 },
            1.0,
            159,
            Noise::Seed(17),
        )
        .unwrap()
        .scalars()
        .unwrap();
        let mut spec = TuneSpec::new(2, 20, 8);
        spec.stride = 60;
        let bo = BoConfig { iterations: 4, init_samples: 3, seed: 7, ..BoConfig::default() };
        let outcome = tune_layerwise(&series, &spec, &bo).unwrap();
        assert_eq!(outcome.hypers.len(), 2);
        assert_eq!(outcome.traces.len(), 2);
        assert_eq!(outcome.hypers[0].dim(), 1);
        assert_eq!(outcome.hypers[1].dim(), 3);
        assert!(outcome.traces[1].best_f.is_finite());

        // Layer 1 tuned alone must equal the first layer of the two-layer
        // run: the second search never touches it.
        let mut spec1 = spec.clone();
        spec1.layers = 1;
        spec1.bounds.truncate(1);
        let alone = tune_layerwise(&series, &spec1, &bo).unwrap();
        assert_eq!(alone.hypers[0], outcome.hypers[0]);

        // Tied parameterization: each coefficient group of layer 2 shares
        // one searched scalar.
        let (a, n, s) = online::unflatten_params(&outcome.hypers[1].z0, 3).unwrap();
        assert!(a.iter().all(|&v| v == a[(0, 0)]));
        assert!(n.iter().all(|&v| v == n[0]));
        assert!(s.iter().all(|&v| v == s[(0, 0)]));
    }

    #[test]
    fn deterministic_end_to_end_given_seeds() {
        let series = simulate_named(
            ProcessKind::MeanReverting { rate: 0.1, level: 2.0, volatility: 0.01 },
            2.0,
            119,
            Noise::Seed(3),
        )
        .unwrap()
        .scalars()
        .unwrap();
        let mut spec = TuneSpec::new(1, 20, 8);
        spec.stride = 50;
        let bo = BoConfig { iterations: 6, seed: 21, ..BoConfig::default() };
        let a = tune_layerwise(&series, &spec, &bo).unwrap();
        let b = tune_layerwise(&series, &spec, &bo).unwrap();
        assert_eq!(a.hypers, b.hypers);
        assert_eq!(a.traces[0].best_f.to_bits(), b.traces[0].best_f.to_bits());
    }
}
