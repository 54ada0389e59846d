//! Rolling-window backtesting of the forecaster against a random-walk
//! baseline.
//!
//! A dated price series is cut into overlapping samples of
//! `train + valid + test` consecutive observations, advancing by a fixed
//! stride. Per sample, hyperparameters are tuned on the train segment
//! with forecasts scored inside the validation segment (test data never
//! enters tuning), the tuned network forecasts the test window, and the
//! forecast is scored with Pearson correlation, R-squared, RMSE and mean
//! directional accuracy. The random-walk baseline forecasts the last
//! observed value flat over the horizon. Calendar gaps are ignored:
//! consecutive rows are consecutive steps, the daily-close convention.

use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::bayesopt::{self, BoConfig, BoTrace, LayerBounds, NoiseMode, TuneSpec, Z0Mode};
use crate::error::{Error, Result};
use crate::net::{self, ForecastResult, NetworkConfig};
use crate::online::LayerHyper;
use crate::rng;

/// A validated daily close series: strictly increasing dates, strictly
/// positive finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct PricedSeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl PricedSeries {
    pub fn new(dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::DimensionMismatch {
                what: "dates",
                expected: values.len(),
                actual: dates.len(),
            });
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument("series must not be empty".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "value at row {} must be positive and finite, got {v}",
                    i + 1
                )));
            }
        }
        for (i, pair) in dates.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidArgument(format!(
                    "dates must be strictly increasing; row {} ({}) does not follow {}",
                    i + 2,
                    pair[1],
                    pair[0]
                )));
            }
        }
        Ok(Self { dates, values })
    }

    /// Parse a `date,value` CSV with ISO-8601 dates.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn read_csv(r: impl BufRead, path: &str) -> Result<Self> {
        let csv_err = |line: usize, message: String| Error::Csv {
            path: path.to_string(),
            line,
            message,
        };
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| csv_err(1, "empty file".into()))?;
        let header = header?;
        if header.trim() != "date,value" {
            return Err(csv_err(1, format!("expected header `date,value`, got `{header}`")));
        }
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let (date_s, value_s) = trimmed
                .split_once(',')
                .ok_or_else(|| csv_err(line_no, "expected two comma-separated fields".into()))?;
            let date = NaiveDate::parse_from_str(date_s.trim(), "%Y-%m-%d")
                .map_err(|e| csv_err(line_no, format!("bad date `{date_s}`: {e}")))?;
            let value: f64 = value_s
                .trim()
                .parse()
                .map_err(|e| csv_err(line_no, format!("bad value `{value_s}`: {e}")))?;
            if !(value.is_finite() && value > 0.0) {
                return Err(csv_err(line_no, format!("value must be positive and finite, got {value}")));
            }
            if let Some(prev) = dates.last() {
                if date == *prev {
                    return Err(csv_err(line_no, format!("duplicate date {date}")));
                }
                if date < *prev {
                    return Err(csv_err(line_no, format!("dates must be increasing; {date} follows {prev}")));
                }
            }
            dates.push(date);
            values.push(value);
        }
        Self::new(dates, values)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "date,value")?;
        for (d, v) in self.dates.iter().zip(&self.values) {
            writeln!(w, "{d},{v}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }
}

/// Rolling sample geometry. Defaults to 1830 training, 200 validation and
/// 100 test observations advancing 30 rows per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplePlan {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub stride: usize,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self { train: 1830, valid: 200, test: 100, stride: 30 }
    }
}

impl SamplePlan {
    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }

    fn validate(&self) -> Result<()> {
        if self.train == 0 || self.valid == 0 || self.test == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument("plan fields must all be >= 1".into()));
        }
        Ok(())
    }
}

/// Index ranges of one sample inside the full series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleWindow {
    pub start: usize,
    pub train: std::ops::Range<usize>,
    pub valid: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

/// Cut a series of `series_len` rows into rolling windows at offsets
/// `0, stride, 2*stride, ...`; the count is
/// `floor((series_len - total) / stride) + 1`.
///
/// ```
/// use ouforecast::backtest::{make_samples, SamplePlan};
///
/// let windows = make_samples(4975, &SamplePlan::default()).unwrap();
/// assert_eq!(windows.len(), 95);
/// ```
pub fn make_samples(series_len: usize, plan: &SamplePlan) -> Result<Vec<SampleWindow>> {
    plan.validate()?;
    let total = plan.total();
    if total > series_len {
        return Err(Error::InvalidArgument(format!(
            "plan needs {total} observations but the series has {series_len}"
        )));
    }
    let count = (series_len - total) / plan.stride + 1;
    let mut windows = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * plan.stride;
        windows.push(SampleWindow {
            start,
            train: start..start + plan.train,
            valid: start + plan.train..start + plan.train + plan.valid,
            test: start + plan.train + plan.valid..start + total,
        });
    }
    Ok(windows)
}

/// Forecast-quality metrics over one test window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub pearson_r: f64,
    pub r_squared: f64,
    pub rmse: f64,
    pub mda: f64,
    /// False when the correlation (and R-squared) are undefined because
    /// one side is constant; the undefined entries are NaN, not zero.
    pub correlation_defined: bool,
}

pub const METRIC_NAMES: [&str; 4] = ["pearson_r", "r_squared", "rmse", "mda"];

impl MetricsRow {
    pub fn get(&self, metric: &str) -> f64 {
        match metric {
            "pearson_r" => self.pearson_r,
            "r_squared" => self.r_squared,
            "rmse" => self.rmse,
            "mda" => self.mda,
            other => panic!("unknown metric {other}"),
        }
    }
}

/// Score a forecast against realized values.
///
/// Directions are taken step over step with the last observed value
/// `anchor` prepended to both sides; a zero move counts as a match only
/// against a zero move.
///
/// ```
/// use ouforecast::backtest::compute_metrics;
///
/// let actuals = [1.0, 1.2, 1.1, 1.4];
/// let m = compute_metrics(&actuals, &actuals, 0.9).unwrap();
/// assert_eq!((m.rmse, m.mda), (0.0, 1.0));
/// assert!((m.pearson_r - 1.0).abs() < 1e-12);
/// ```
pub fn compute_metrics(actuals: &[f64], forecast_mean: &[f64], anchor: f64) -> Result<MetricsRow> {
    let n = actuals.len();
    if n < 2 {
        return Err(Error::InvalidArgument("metrics need at least two steps".into()));
    }
    if forecast_mean.len() != n {
        return Err(Error::DimensionMismatch {
            what: "forecast",
            expected: n,
            actual: forecast_mean.len(),
        });
    }

    let mean_y = actuals.iter().sum::<f64>() / n as f64;
    let mean_e = forecast_mean.iter().sum::<f64>() / n as f64;
    let mut ss_tot = 0.0;
    let mut ss_res = 0.0;
    let mut cov = 0.0;
    let mut var_e = 0.0;
    for (y, e) in actuals.iter().zip(forecast_mean) {
        ss_tot += (y - mean_y) * (y - mean_y);
        ss_res += (y - e) * (y - e);
        cov += (y - mean_y) * (e - mean_e);
        var_e += (e - mean_e) * (e - mean_e);
    }
    // A constant side makes the correlation 0/0. Accumulated rounding in
    // the centering leaves a deviation of order sqrt(n) * eps * scale, so
    // the degeneracy check is scale-aware rather than exact.
    let degenerate = |ss: f64, scale: f64| ss.sqrt() <= 1e-12 * scale.max(1.0);
    let scale_y = actuals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let scale_e = forecast_mean.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let defined = !degenerate(ss_tot, scale_y) && !degenerate(var_e, scale_e);
    let pearson_r = if defined { cov / (ss_tot.sqrt() * var_e.sqrt()) } else { f64::NAN };
    let r_squared = if degenerate(ss_tot, scale_y) { f64::NAN } else { 1.0 - ss_res / ss_tot };
    let rmse = (ss_res / n as f64).sqrt();

    let mut matches = 0usize;
    let mut prev_y = anchor;
    let mut prev_e = anchor;
    for (y, e) in actuals.iter().zip(forecast_mean) {
        let dy = y - prev_y;
        let de = e - prev_e;
        let hit = if dy == 0.0 || de == 0.0 {
            dy == 0.0 && de == 0.0
        } else {
            dy.signum() == de.signum()
        };
        if hit {
            matches += 1;
        }
        prev_y = *y;
        prev_e = *e;
    }
    let mda = matches as f64 / n as f64;

    Ok(MetricsRow { pearson_r, r_squared, rmse, mda, correlation_defined: defined })
}

/// Harness configuration: network shape, tuning budget and seeding.
#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub layers: usize,
    pub trajectories: usize,
    pub bounds: Vec<LayerBounds>,
    pub bo: BoConfig,
    /// Endpoint stride for the tuning objective.
    pub tune_stride: usize,
    pub z0_mode: Z0Mode,
    pub noise_mode: NoiseMode,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn new(layers: usize, seed: u64) -> Self {
        Self {
            layers,
            trajectories: net::DEFAULT_TRAJECTORIES,
            bounds: (1..=layers).map(LayerBounds::for_layer).collect(),
            bo: BoConfig::default(),
            tune_stride: 64,
            z0_mode: Z0Mode::default(),
            noise_mode: NoiseMode::default(),
            seed,
        }
    }
}

/// One successfully evaluated sample.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub index: usize,
    pub window: SampleWindow,
    pub model: MetricsRow,
    pub baseline: MetricsRow,
    pub forecast: ForecastResult,
    pub hypers: Vec<LayerHyper>,
    pub traces: Vec<BoTrace>,
}

/// Mean and standard deviation of one metric across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub model: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Aggregated backtest result.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub samples: Vec<SampleOutcome>,
    /// Indices of samples that failed, with the failure text.
    pub failures: Vec<(usize, String)>,
    pub summaries: Vec<MetricSummary>,
}

impl BacktestReport {
    /// Writes the aggregate table: `model,metric,mean,std`, four metrics
    /// for the model followed by four for the baseline.
    pub fn write_summary_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "model,metric,mean,std")?;
        for s in &self.summaries {
            writeln!(w, "{},{},{},{}", s.model, s.metric, s.mean, s.std)?;
        }
        Ok(())
    }

    /// Writes per-sample metric rows for both models.
    pub fn write_samples_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "sample,model,pearson_r,r_squared,rmse,mda")?;
        for s in &self.samples {
            for (name, row) in [("ouforecast", &s.model), ("random_walk", &s.baseline)] {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    s.index, name, row.pearson_r, row.r_squared, row.rmse, row.mda
                )?;
            }
        }
        Ok(())
    }
}

fn summarize(model: &str, rows: &[MetricsRow]) -> Vec<MetricSummary> {
    METRIC_NAMES
        .iter()
        .map(|metric| {
            let vals: Vec<f64> = rows.iter().map(|r| r.get(metric)).filter(|v| v.is_finite()).collect();
            let (mean, std) = if vals.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            MetricSummary { model: model.to_string(), metric: metric.to_string(), mean, std }
        })
        .collect()
}

/// Run the full harness: tune, forecast and score every sample, in
/// parallel, with per-sample seeds derived from the master seed. Fails if
/// more than half the samples fail.
pub fn run_backtest(series: &PricedSeries, plan: &SamplePlan, cfg: &BacktestConfig) -> Result<BacktestReport> {
    if plan.valid < plan.test {
        return Err(Error::InvalidArgument(format!(
            "validation segment ({}) must be at least the forecast horizon ({})",
            plan.valid, plan.test
        )));
    }
    let windows = make_samples(series.len(), plan)?;
    let values = series.values();

    let results: Vec<(usize, std::result::Result<SampleOutcome, String>)> = windows
        .into_par_iter()
        .enumerate()
        .map(|(index, window)| {
            let outcome = run_sample(values, plan, cfg, index, window);
            (index, outcome.map_err(|e| e.to_string()))
        })
        .collect();

    let total = results.len();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (index, res) in results {
        match res {
            Ok(outcome) => samples.push(outcome),
            Err(msg) => failures.push((index, msg)),
        }
    }
    if failures.len() * 2 > total {
        return Err(Error::BacktestFailed { failed: failures.len(), total });
    }

    let model_rows: Vec<MetricsRow> = samples.iter().map(|s| s.model).collect();
    let baseline_rows: Vec<MetricsRow> = samples.iter().map(|s| s.baseline).collect();
    let mut summaries = summarize("ouforecast", &model_rows);
    summaries.extend(summarize("random_walk", &baseline_rows));

    Ok(BacktestReport { samples, failures, summaries })
}

fn run_sample(
    values: &[f64],
    plan: &SamplePlan,
    cfg: &BacktestConfig,
    index: usize,
    window: SampleWindow,
) -> Result<SampleOutcome> {
    let sample_seed = rng::derive_seed(cfg.seed, &[index as u64]);
    let tune_series = &values[window.train.start..window.valid.end];
    let test_actuals = &values[window.test.clone()];

    let spec = TuneSpec {
        layers: cfg.layers,
        horizon: plan.test,
        trajectories: cfg.trajectories,
        bounds: cfg.bounds.clone(),
        stride: cfg.tune_stride,
        eval_window: Some((plan.train, plan.train + plan.valid - plan.test)),
        z0_mode: cfg.z0_mode,
        noise_mode: cfg.noise_mode,
    };
    let bo = BoConfig { seed: sample_seed, ..cfg.bo.clone() };
    let tuned = bayesopt::tune_layerwise(tune_series, &spec, &bo)?;

    let config = NetworkConfig::new(tuned.hypers.clone(), plan.test, cfg.trajectories)?;
    let forecast = net::forecast(tune_series, &config, rng::derive_seed(sample_seed, &[0xf0ca5]))?;
    let anchor = *tune_series.last().expect("non-empty tune series");

    let model = compute_metrics(test_actuals, &forecast.mean, anchor)?;
    let baseline_mean = vec![anchor; test_actuals.len()];
    let baseline = compute_metrics(test_actuals, &baseline_mean, anchor)?;

    Ok(SampleOutcome {
        index,
        window,
        model,
        baseline,
        forecast,
        hypers: tuned.hypers,
        traces: tuned.traces,
    })
}
