//! TOML run configuration. Every field is optional; command-line flags
//! override file values, and unknown keys are rejected so typos fail
//! fast with the offending key in the message.

use serde::Deserialize;

use ouforecast::backtest::SamplePlan;
use ouforecast::bayesopt::{BoConfig, LayerBounds, NoiseMode, Z0Mode};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    #[serde(default)]
    pub plan: PlanSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub layers: Option<usize>,
    pub horizon: Option<usize>,
    pub trajectories: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub iterations: Option<usize>,
    pub restarts: Option<usize>,
    pub xi: Option<f64>,
    pub init_samples: Option<usize>,
    pub stride: Option<usize>,
    /// Score tuning forecasts only inside the last `valid` observations.
    pub valid: Option<usize>,
    pub z0_mode: Option<String>,
    pub noise_mode: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub layer1: Option<BoundsRow>,
    pub layer2: Option<BoundsRow>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsRow {
    pub a0: Option<[f64; 2]>,
    pub n0: Option<[f64; 2]>,
    pub sigma0: Option<[f64; 2]>,
    pub eta: Option<[f64; 2]>,
    pub ema: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub train: Option<usize>,
    pub valid: Option<usize>,
    pub test: Option<usize>,
    pub stride: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn plan(&self) -> SamplePlan {
        let defaults = SamplePlan::default();
        SamplePlan {
            train: self.plan.train.unwrap_or(defaults.train),
            valid: self.plan.valid.unwrap_or(defaults.valid),
            test: self.plan.test.unwrap_or(defaults.test),
            stride: self.plan.stride.unwrap_or(defaults.stride),
        }
    }

    pub fn bounds(&self, layers: usize) -> Result<Vec<LayerBounds>, CliError> {
        let mut out = Vec::with_capacity(layers);
        for layer in 1..=layers {
            let row = match layer {
                1 => self.bounds.layer1.as_ref(),
                2 => self.bounds.layer2.as_ref(),
                _ => None,
            };
            let mut bounds = LayerBounds::for_layer(layer);
            if let Some(row) = row {
                let pair = |v: Option<[f64; 2]>, fallback: (f64, f64)| match v {
                    Some([lo, hi]) => (lo, hi),
                    None => fallback,
                };
                bounds = LayerBounds {
                    a0: pair(row.a0, bounds.a0),
                    n0: pair(row.n0, bounds.n0),
                    sigma0: pair(row.sigma0, bounds.sigma0),
                    eta: pair(row.eta, bounds.eta),
                    ema: pair(row.ema, bounds.ema),
                };
            }
            for (name, (lo, hi)) in [
                ("a0", bounds.a0),
                ("n0", bounds.n0),
                ("sigma0", bounds.sigma0),
                ("eta", bounds.eta),
                ("ema", bounds.ema),
            ] {
                // NaN must fail this check too, hence not `lo >= hi`.
                if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                    return Err(CliError::Usage(format!(
                        "bounds.layer{layer}.{name}: min must be below max, got [{lo}, {hi}]"
                    )));
                }
            }
            out.push(bounds);
        }
        Ok(out)
    }

    pub fn z0_mode(&self) -> Result<Z0Mode, CliError> {
        match self.tune.z0_mode.as_deref() {
            None | Some("tied") => Ok(Z0Mode::Tied),
            Some("full") => Ok(Z0Mode::Full),
            Some(other) => Err(CliError::Usage(format!(
                "tune.z0_mode must be `tied` or `full`, got `{other}`"
            ))),
        }
    }

    pub fn noise_mode(&self) -> Result<NoiseMode, CliError> {
        match self.tune.noise_mode.as_deref() {
            None | Some("common") => Ok(NoiseMode::Common),
            Some("per-evaluation") => Ok(NoiseMode::PerEvaluation),
            Some(other) => Err(CliError::Usage(format!(
                "tune.noise_mode must be `common` or `per-evaluation`, got `{other}`"
            ))),
        }
    }

    pub fn bo_config(&self, seed: u64) -> BoConfig {
        let defaults = BoConfig::default();
        BoConfig {
            iterations: self.tune.iterations.unwrap_or(defaults.iterations),
            restarts: self.tune.restarts.unwrap_or(defaults.restarts),
            xi: self.tune.xi.unwrap_or(defaults.xi),
            init_samples: self.tune.init_samples.unwrap_or(defaults.init_samples),
            seed,
            ..defaults
        }
    }
}
