//! Generalized Ornstein-Uhlenbeck processes.
//!
//! The process family modelled here is the d-dimensional difference
//! equation
//!
//! ```text
//! Y_t = Y_{t-1} + A * Y_{t-1} + N + Sigma * dW_t,   dW_{i,t} ~ N(0, 1) i.i.d.
//! ```
//!
//! It subsumes the Wiener process (`A = 0, N = 0, Sigma = I`), Brownian
//! motion with drift (`A = 0`) and the univariate mean-reverting process
//! (`A = -alpha, N = alpha * n, Sigma = sigma`). The module provides a
//! simulator over this family plus an offline ordinary-least-squares
//! calibrator that recovers `(A, N, Sigma)` from an observed trajectory.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng;

/// Coefficients of a d-dimensional generalized OU process.
#[derive(Debug, Clone, PartialEq)]
pub struct GouParams {
    a_matrix: DMatrix<f64>,
    n_vector: DVector<f64>,
    sigma_matrix: DMatrix<f64>,
}

impl GouParams {
    /// Validates that `a` and `sigma` are d x d, `n` has length d and all
    /// entries are finite.
    pub fn new(a: DMatrix<f64>, n: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = n.len();
        if d == 0 {
            return Err(Error::InvalidArgument("process dimension must be >= 1".into()));
        }
        for (what, rows, cols) in [("a_matrix", a.nrows(), a.ncols()), ("sigma_matrix", sigma.nrows(), sigma.ncols())] {
            if rows != d || cols != d {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: d,
                    actual: if rows != d { rows } else { cols },
                });
            }
        }
        let finite = a.iter().chain(n.iter()).chain(sigma.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("process coefficients must be finite".into()));
        }
        Ok(Self {
            a_matrix: a,
            n_vector: n,
            sigma_matrix: sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_vector.len()
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn n_vector(&self) -> &DVector<f64> {
        &self.n_vector
    }

    pub fn sigma_matrix(&self) -> &DMatrix<f64> {
        &self.sigma_matrix
    }
}

/// A realized path `Y_0..Y_T`, every value finite and of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(values: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = values.first() else {
            return Err(Error::InvalidArgument("trajectory must contain at least one value".into()));
        };
        let d = first.len();
        if d == 0 {
            return Err(Error::InvalidArgument("trajectory dimension must be >= 1".into()));
        }
        for (t, v) in values.iter().enumerate() {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "trajectory value",
                    expected: d,
                    actual: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NumericOverflow { step: t });
            }
        }
        Ok(Self { values })
    }

    /// Univariate trajectory from raw samples.
    pub fn from_scalars(xs: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(xs.into_iter().map(|x| DVector::from_element(1, x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Number of stored points (`T + 1`).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction
    }

    /// Number of increments (`T`).
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// The flat `f64` view of a univariate trajectory.
    pub fn scalars(&self) -> Option<Vec<f64>> {
        (self.dim() == 1).then(|| self.values.iter().map(|v| v[0]).collect())
    }

    /// Writes `t,y1,..,yd` rows. Floats print in shortest round-trip form.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let d = self.dim();
        let header: Vec<String> = (1..=d).map(|i| format!("y{i}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for (t, v) in self.values.iter().enumerate() {
            let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead, path: &str) -> Result<Self> {
        let csv_err = |line: usize, message: String| Error::Csv {
            path: path.to_string(),
            line,
            message,
        };
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| csv_err(1, "empty file".into()))?;
        let header = header?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(csv_err(1, format!("expected header `t,y1..yd`, got `{header}`")));
        }
        let d = cols.len() - 1;
        let mut values = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != d + 1 {
                return Err(csv_err(idx + 1, format!("expected {} fields, got {}", d + 1, fields.len())));
            }
            let mut v = DVector::zeros(d);
            for (j, field) in fields[1..].iter().enumerate() {
                v[j] = field
                    .parse::<f64>()
                    .map_err(|e| csv_err(idx + 1, format!("bad value `{field}`: {e}")))?;
            }
            values.push(v);
        }
        Self::new(values)
    }
}

/// Noise feeding a simulation: either explicit increments or a seed.
#[derive(Debug, Clone)]
pub enum Noise<'a> {
    Seed(u64),
    Given(&'a [DVector<f64>]),
}

/// Simulate `Y_0..Y_steps` of a generalized OU process.
///
/// With `Noise::Seed`, increments are i.i.d. standard normal from a seeded
/// stream; the output is deterministic for a fixed seed.
pub fn simulate(params: &GouParams, y0: &DVector<f64>, steps: usize, noise: Noise) -> Result<Trajectory> {
    let d = params.dim();
    if y0.len() != d {
        return Err(Error::DimensionMismatch {
            what: "y0",
            expected: d,
            actual: y0.len(),
        });
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    if let Noise::Given(ws) = &noise {
        if ws.len() != steps {
            return Err(Error::DimensionMismatch {
                what: "noise sequence",
                expected: steps,
                actual: ws.len(),
            });
        }
        if let Some(w) = ws.iter().find(|w| w.len() != d) {
            return Err(Error::DimensionMismatch {
                what: "noise vector",
                expected: d,
                actual: w.len(),
            });
        }
    }

    let mut rng_state = match &noise {
        Noise::Seed(seed) => Some(rng::substream(*seed, &[])),
        Noise::Given(_) => None,
    };
    let mut values = Vec::with_capacity(steps + 1);
    values.push(y0.clone());
    let mut y = y0.clone();
    for t in 1..=steps {
        let dw = match &noise {
            Noise::Given(ws) => ws[t - 1].clone(),
            Noise::Seed(_) => rng::standard_normals(rng_state.as_mut().unwrap(), d),
        };
        y = &y + params.a_matrix() * &y + params.n_vector() + params.sigma_matrix() * dw;
        if !y.iter().all(|x| x.is_finite()) {
            return Err(Error::NumericOverflow { step: t });
        }
        values.push(y.clone());
    }
    Trajectory::new(values)
}

/// The classical univariate special cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessKind {
    Wiener,
    Brownian { drift: f64, volatility: f64 },
    MeanReverting { rate: f64, level: f64, volatility: f64 },
}

impl ProcessKind {
    /// Embed the named process into generalized OU coefficients.
    pub fn to_gou(self) -> Result<GouParams> {
        let (a, n, sigma) = match self {
            ProcessKind::Wiener => (0.0, 0.0, 1.0),
            ProcessKind::Brownian { drift, volatility } => (0.0, drift, volatility),
            ProcessKind::MeanReverting { rate, level, volatility } => (-rate, rate * level, volatility),
        };
        if sigma < 0.0 {
            return Err(Error::InvalidArgument("volatility must be non-negative".into()));
        }
        GouParams::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, n),
            DMatrix::from_element(1, 1, sigma),
        )
    }
}

/// Simulate one of the named univariate processes.
///
/// ```
/// use ouforecast::ou::{simulate_named, Noise, ProcessKind};
///
/// let kind = ProcessKind::Brownian { drift: 1.0, volatility: 0.0 };
/// let path = simulate_named(kind, 0.0, 5, Noise::Seed(0)).unwrap();
/// assert_eq!(path.scalars().unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
/// ```
pub fn simulate_named(kind: ProcessKind, y0: f64, steps: usize, noise: Noise) -> Result<Trajectory> {
    simulate(&kind.to_gou()?, &DVector::from_element(1, y0), steps, noise)
}

/// Lower-triangular factorization `M M^T = k` of a symmetric PSD matrix.
///
/// Pivots inside `[-tol, 0]` are clamped to zero so positive
/// *semi*-definite inputs factor cleanly; a pivot below `-tol` reports its
/// index. `tol = 1e-10 * max(1, |k|_max)`.
pub fn cholesky(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = k.nrows();
    if k.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "cholesky input",
            expected: d,
            actual: k.ncols(),
        });
    }
    let scale = k.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    let tol = 1e-10 * scale;
    for i in 0..d {
        for j in (i + 1)..d {
            if (k[(i, j)] - k[(j, i)]).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut pivot = k[(j, j)];
        for t in 0..j {
            pivot -= l[(j, t)] * l[(j, t)];
        }
        if pivot < -tol {
            return Err(Error::NotPositiveDefinite { index: j });
        }
        let diag = pivot.max(0.0).sqrt();
        l[(j, j)] = diag;
        for i in (j + 1)..d {
            if diag == 0.0 {
                continue; // semi-definite direction; column stays zero
            }
            let mut s = k[(i, j)];
            for t in 0..j {
                s -= l[(i, t)] * l[(j, t)];
            }
            l[(i, j)] = s / diag;
        }
    }
    Ok(l)
}

/// Result of offline least-squares calibration.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub params: GouParams,
    /// Population covariance of the regression residuals.
    pub residual_cov: DMatrix<f64>,
    /// Stacked coefficient matrix `[N ; A]`, d x (d+1).
    pub beta: DMatrix<f64>,
    /// True when `residual_cov` needed eigenvalue clipping before factoring.
    pub eigenvalue_clipped: bool,
}

/// Calibrate generalized-OU coefficients from an observed trajectory.
///
/// Regresses the increments on `x_{t-1} = [1, Y_{t-1}]` via the normal
/// equations (solved by factorization, not explicit inversion), then takes
/// `Sigma` as the lower Cholesky factor of the residual covariance.
///
/// ```
/// use ouforecast::ou::{ols_fit, Trajectory};
///
/// // Deterministic drift: Y_t = Y_{t-1} + 0.1 recovers N = 0.1, A = 0.
/// let path = Trajectory::from_scalars((0..=50).map(|t| 0.1 * t as f64)).unwrap();
/// let fit = ols_fit(&path).unwrap();
/// assert!((fit.params.n_vector()[0] - 0.1).abs() < 1e-10);
/// assert!(fit.params.a_matrix()[(0, 0)].abs() < 1e-10);
/// ```
pub fn ols_fit(traj: &Trajectory) -> Result<OlsFit> {
    let d = traj.dim();
    let t_steps = traj.steps();
    if t_steps < d + 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} steps to calibrate a {d}-dimensional process, got {t_steps}",
            d + 2
        )));
    }

    // Accumulate the normal equations over x_{t-1} = [1, Y_{t-1}].
    let values = traj.values();
    let mut s_xx = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut s_yx = DMatrix::<f64>::zeros(d, d + 1);
    let mut x = DVector::<f64>::zeros(d + 1);
    for t in 1..=t_steps {
        x[0] = 1.0;
        x.rows_mut(1, d).copy_from(&values[t - 1]);
        let y = &values[t] - &values[t - 1];
        s_xx.syger(1.0, &x, &x, 1.0);
        s_yx.ger(1.0, &y, &x, 1.0);
    }
    s_xx.fill_upper_triangle_with_lower_triangle();

    let chol = nalgebra::Cholesky::new(s_xx).ok_or(Error::RankDeficient)?;
    let beta = chol.solve(&s_yx.transpose()).transpose();
    if !beta.iter().all(|v| v.is_finite()) {
        return Err(Error::RankDeficient);
    }

    let n_vector = beta.column(0).into_owned();
    let a_matrix = beta.columns(1, d).into_owned();

    // Residual covariance with the population divisor 1/T. The residual
    // mean is ~0 by construction (intercept column), subtracted anyway.
    let mut residuals = Vec::with_capacity(t_steps);
    let mut mean = DVector::<f64>::zeros(d);
    for t in 1..=t_steps {
        x[0] = 1.0;
        x.rows_mut(1, d).copy_from(&values[t - 1]);
        let eps = (&values[t] - &values[t - 1]) - &beta * &x;
        mean += &eps;
        residuals.push(eps);
    }
    mean /= t_steps as f64;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for eps in &residuals {
        let c = eps - &mean;
        cov.syger(1.0 / t_steps as f64, &c, &c, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();

    let (sigma, clipped) = match cholesky(&cov) {
        Ok(m) => (m, false),
        Err(Error::NotPositiveDefinite { .. }) => (cholesky(&clip_psd(&cov))?, true),
        Err(e) => return Err(e),
    };

    Ok(OlsFit {
        params: GouParams::new(a_matrix, n_vector, sigma)?,
        residual_cov: cov,
        beta,
        eigenvalue_clipped: clipped,
    })
}

/// Nearest-PSD projection: clip negative eigenvalues at zero.
fn clip_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);
    let clipped = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)));
    let out = &eig.eigenvectors * clipped * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}
