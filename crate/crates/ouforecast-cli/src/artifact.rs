//! On-disk artifacts: tuned hyperparameters and calibrated process
//! coefficients, both versioned TOML.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use ouforecast::online::LayerHyper;
use ouforecast::ou::OlsFit;

use crate::CliError;

pub const HYPER_SCHEMA: &str = "ouforecast/hyper/v1";
pub const PARAMS_SCHEMA: &str = "ouforecast/params/v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperFile {
    schema: String,
    layer: Vec<HyperLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperLayer {
    eta_a: f64,
    eta_n: f64,
    eta_sigma: f64,
    phi: f64,
    rho: f64,
    z0: Vec<f64>,
}

pub fn save_hypers(path: &std::path::Path, hypers: &[LayerHyper]) -> Result<(), CliError> {
    let file = HyperFile {
        schema: HYPER_SCHEMA.to_string(),
        layer: hypers
            .iter()
            .map(|h| HyperLayer {
                eta_a: h.eta_a,
                eta_n: h.eta_n,
                eta_sigma: h.eta_sigma,
                phi: h.phi,
                rho: h.rho,
                z0: h.z0.iter().copied().collect(),
            })
            .collect(),
    };
    let text = toml::to_string(&file).map_err(|e| CliError::Io(format!("serialize hyperparameters: {e}")))?;
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_hypers(path: &std::path::Path) -> Result<Vec<LayerHyper>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read hyperparameters {}: {e}", path.display())))?;
    let file: HyperFile =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if file.schema != HYPER_SCHEMA {
        return Err(CliError::Usage(format!(
            "{}: unsupported schema `{}`, expected `{HYPER_SCHEMA}`",
            path.display(),
            file.schema
        )));
    }
    file.layer
        .into_iter()
        .map(|l| {
            LayerHyper::new(l.eta_a, l.eta_n, l.eta_sigma, l.phi, l.rho, DVector::from_vec(l.z0))
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ParamsFile {
    schema: &'static str,
    dim: usize,
    a: Vec<Vec<f64>>,
    n: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    residual_cov: Vec<Vec<f64>>,
    eigenvalue_clipped: bool,
}

pub fn save_fit(path: &std::path::Path, fit: &OlsFit) -> Result<(), CliError> {
    let d = fit.params.dim();
    let rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect()
    };
    let file = ParamsFile {
        schema: PARAMS_SCHEMA,
        dim: d,
        a: rows(fit.params.a_matrix()),
        n: fit.params.n_vector().iter().copied().collect(),
        sigma: rows(fit.params.sigma_matrix()),
        residual_cov: rows(&fit.residual_cov),
        eigenvalue_clipped: fit.eigenvalue_clipped,
    };
    let text = toml::to_string(&file).map_err(|e| CliError::Io(format!("serialize calibration: {e}")))?;
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))?;
    Ok(())
}
