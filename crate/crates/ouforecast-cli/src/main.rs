//! Command-line interface: simulate processes, calibrate coefficients,
//! run the online regression, forecast, tune hyperparameters and
//! backtest, all reproducibly from explicit seeds.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric or
//! divergence failure, 3 I/O failure.

mod artifact;
mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ouforecast::backtest::{make_samples, run_backtest, BacktestConfig, PricedSeries};
use ouforecast::bayesopt::{tune_layerwise, TuneSpec};
use ouforecast::net::{forecast, regress_stack, NetworkConfig, DEFAULT_HORIZON, DEFAULT_TRAJECTORIES};
use ouforecast::ou::{ols_fit, simulate_named, Noise, ProcessKind, Trajectory};

use config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

impl From<ouforecast::Error> for CliError {
    fn from(e: ouforecast::Error) -> Self {
        use ouforecast::Error::*;
        match &e {
            InvalidArgument(_) | DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            NumericOverflow { .. } | Divergence { .. } | NotPositiveDefinite { .. } | RankDeficient
            | KernelFactorization { .. } | ForecastFailed { .. } | BacktestFailed { .. } => {
                CliError::Numeric(e.to_string())
            }
            Csv { .. } | Io(_) => CliError::Io(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "ouforecast", version, about = "Mean-reverting process forecasting toolkit")]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for Monte Carlo and backtest samples (0 = automatic).
    /// Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a named process and write the trajectory CSV.
    Simulate(SimulateArgs),
    /// Fit process coefficients to a series by least squares.
    Calibrate(CalibrateArgs),
    /// Run the layered online regression and dump coefficient streams.
    Regress(RegressArgs),
    /// Monte Carlo forecast with mean, variance and a 95% band.
    Forecast(ForecastArgs),
    /// Tune layer hyperparameters by Bayesian optimization.
    Tune(TuneArgs),
    /// Rolling-window backtest against a random-walk baseline.
    Backtest(BacktestArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Wiener,
    Brownian,
    Ou,
}

#[derive(Args)]
struct SimulateArgs {
    /// Process family to simulate.
    #[arg(long, value_enum)]
    kind: Kind,
    /// Drift per step (brownian).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mu: f64,
    /// Volatility per sqrt-step (brownian, ou).
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    sigma: f64,
    /// Mean-reversion rate (ou).
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    alpha: f64,
    /// Mean-reversion level (ou).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    n: f64,
    /// Starting value.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    y0: f64,
    /// Number of increments to generate.
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (`t,y1`).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Input CSV: either `date,value` or `t,y1..yd`.
    #[arg(long)]
    input: PathBuf,
    /// Output TOML with the fitted coefficients.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct RegressArgs {
    /// Input series CSV (`date,value`).
    #[arg(long)]
    input: PathBuf,
    /// Hyperparameter artifact from `tune`.
    #[arg(long)]
    hyper: PathBuf,
    /// Writes `<prefix>.layer<k>.csv` per layer.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct ForecastArgs {
    /// Input series CSV (`date,value`).
    #[arg(long)]
    input: PathBuf,
    /// Hyperparameter artifact from `tune`.
    #[arg(long)]
    hyper: PathBuf,
    /// Steps ahead to forecast [default: 100].
    #[arg(long)]
    horizon: Option<usize>,
    /// Monte Carlo trajectories per forecast [default: 50].
    #[arg(long)]
    trajectories: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path (`t,mean,variance,lo95,hi95`).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    /// Input series CSV (`date,value`).
    #[arg(long)]
    input: PathBuf,
    /// Layers to tune, 1 or 2 [default: 2].
    #[arg(long)]
    layers: Option<usize>,
    /// Optimizer iterations per layer after seeding [default: 200].
    #[arg(long)]
    iterations: Option<usize>,
    /// Forecast horizon of the tuning loss [default: 100].
    #[arg(long)]
    horizon: Option<usize>,
    /// Monte Carlo trajectories per loss evaluation [default: 50].
    #[arg(long)]
    trajectories: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output hyperparameter artifact (TOML).
    #[arg(short, long)]
    output: PathBuf,
    /// Also write `<prefix>.layer<k>.csv` optimization traces.
    #[arg(long)]
    trace_prefix: Option<String>,
}

#[derive(Args)]
struct BacktestArgs {
    /// Input series CSV (`date,value`).
    #[arg(long)]
    input: PathBuf,
    /// Layers per sample network, 1 or 2 [default: 2].
    #[arg(long)]
    layers: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics, forecasts and traces.
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let threads = if cli.threads > 0 { cli.threads } else { file.threads.unwrap_or(0) };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {threads} threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Regress(args) => cmd_regress(args),
        Command::Forecast(args) => cmd_forecast(args, &file),
        Command::Tune(args) => cmd_tune(args, &file),
        Command::Backtest(args) => cmd_backtest(args, &file),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))
}

fn load_series(path: &Path) -> Result<PricedSeries, CliError> {
    PricedSeries::load_csv(path).map_err(CliError::from)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.sigma < 0.0 {
        return Err(CliError::Usage(format!(
            "--sigma must be non-negative, got {}",
            args.sigma
        )));
    }
    let kind = match args.kind {
        Kind::Wiener => ProcessKind::Wiener,
        Kind::Brownian => ProcessKind::Brownian { drift: args.mu, volatility: args.sigma },
        Kind::Ou => ProcessKind::MeanReverting {
            rate: args.alpha,
            level: args.n,
            volatility: args.sigma,
        },
    };
    let traj = simulate_named(kind, args.y0, args.steps, Noise::Seed(args.seed))?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    write_file(&args.output, &buf)?;
    println!("wrote {} ({} rows)", args.output.display(), traj.len());
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", args.input.display())))?;
    let name = args.input.display().to_string();
    let traj = if text.starts_with("date,") {
        let series = PricedSeries::read_csv(text.as_bytes(), &name)?;
        Trajectory::from_scalars(series.values().iter().copied())?
    } else {
        Trajectory::read_csv(text.as_bytes(), &name)?
    };
    let fit = ols_fit(&traj)?;
    artifact::save_fit(&args.output, &fit)?;
    let d = fit.params.dim();
    if d == 1 {
        let a = fit.params.a_matrix()[(0, 0)];
        let n = fit.params.n_vector()[0];
        println!(
            "fitted: A = {a:.6}, N = {n:.6}, Sigma = {:.6} (rate {:.6}, level {:.6})",
            fit.params.sigma_matrix()[(0, 0)],
            -a,
            if a != 0.0 { -n / a } else { f64::NAN },
        );
    } else {
        println!("fitted a {d}-dimensional process; coefficients in {}", args.output.display());
    }
    Ok(())
}

fn cmd_regress(args: RegressArgs) -> Result<(), CliError> {
    let series = load_series(&args.input)?;
    let hypers = artifact::load_hypers(&args.hyper)?;
    let config = NetworkConfig::new(hypers, 1, 2)?;
    let stack = regress_stack(series.values(), &config)?;
    for (k, layer) in stack.layers.iter().enumerate() {
        let path = PathBuf::from(format!("{}.layer{}.csv", args.out_prefix, k + 1));
        let mut buf = Vec::new();
        let dim = layer.coeffs[0].len();
        let header: Vec<String> = (1..=dim).map(|i| format!("z{i}")).collect();
        writeln!(buf, "t,{}", header.join(",")).map_err(|e| CliError::Io(e.to_string()))?;
        for (t, z) in layer.coeffs.iter().enumerate() {
            let row: Vec<String> = z.iter().map(|v| v.to_string()).collect();
            writeln!(buf, "{},{}", t + 1, row.join(",")).map_err(|e| CliError::Io(e.to_string()))?;
        }
        write_file(&path, &buf)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_forecast(args: ForecastArgs, file: &FileConfig) -> Result<(), CliError> {
    let series = load_series(&args.input)?;
    let hypers = artifact::load_hypers(&args.hyper)?;
    let horizon = args.horizon.or(file.network.horizon).unwrap_or(DEFAULT_HORIZON);
    let trajectories = args.trajectories.or(file.network.trajectories).unwrap_or(DEFAULT_TRAJECTORIES);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let config = NetworkConfig::new(hypers, horizon, trajectories)?;
    let result = forecast(series.values(), &config, seed)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    write_file(&args.output, &buf)?;
    if result.diverged > 0 {
        eprintln!("note: {} of {trajectories} trajectories diverged and were dropped", result.diverged);
    }
    println!("wrote {} ({horizon} steps)", args.output.display());
    Ok(())
}

fn cmd_tune(args: TuneArgs, file: &FileConfig) -> Result<(), CliError> {
    let series = load_series(&args.input)?;
    let values = series.values();
    let horizon = args.horizon.or(file.network.horizon).unwrap_or(DEFAULT_HORIZON);
    let trajectories = args.trajectories.or(file.network.trajectories).unwrap_or(DEFAULT_TRAJECTORIES);
    let layers = args.layers.or(file.network.layers).unwrap_or(2);

    let mut spec = TuneSpec::new(layers, horizon, trajectories);
    spec.bounds = file.bounds(layers)?;
    spec.z0_mode = file.z0_mode()?;
    spec.noise_mode = file.noise_mode()?;
    if let Some(stride) = file.tune.stride {
        spec.stride = stride;
    }
    if let Some(valid) = file.tune.valid {
        if valid < horizon || valid + 2 > values.len() {
            return Err(CliError::Usage(format!(
                "tune.valid = {valid} does not fit a series of {} with horizon {horizon}",
                values.len()
            )));
        }
        spec.eval_window = Some((values.len() - valid, values.len() - horizon));
    }

    let mut bo = file.bo_config(args.seed.or(file.seed).unwrap_or(0));
    if let Some(iterations) = args.iterations.or(file.tune.iterations) {
        bo.iterations = iterations;
    }

    let outcome = tune_layerwise(values, &spec, &bo)?;
    artifact::save_hypers(&args.output, &outcome.hypers)?;
    println!("wrote {}", args.output.display());
    for (k, trace) in outcome.traces.iter().enumerate() {
        println!(
            "layer {}: best loss {:.6} after {} evaluations",
            k + 1,
            -trace.best_f,
            trace.evaluations.len()
        );
        if let Some(prefix) = &args.trace_prefix {
            let path = PathBuf::from(format!("{prefix}.layer{}.csv", k + 1));
            let mut buf = Vec::new();
            trace.write_csv(&mut buf)?;
            write_file(&path, &buf)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_backtest(args: BacktestArgs, file: &FileConfig) -> Result<(), CliError> {
    let series = load_series(&args.input)?;
    let plan = file.plan();
    let layers = args.layers.or(file.network.layers).unwrap_or(2);

    let mut cfg = BacktestConfig::new(layers, args.seed.or(file.seed).unwrap_or(0));
    cfg.trajectories = file.network.trajectories.unwrap_or(DEFAULT_TRAJECTORIES);
    cfg.bounds = file.bounds(layers)?;
    cfg.bo = file.bo_config(0);
    cfg.z0_mode = file.z0_mode()?;
    cfg.noise_mode = file.noise_mode()?;
    if let Some(stride) = file.tune.stride {
        cfg.tune_stride = stride;
    }

    let windows = make_samples(series.len(), &plan)?;
    println!("running {} samples of {} observations each", windows.len(), plan.total());

    let report = run_backtest(&series, &plan, &cfg)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("create {}: {e}", args.out_dir.display())))?;
    let mut buf = Vec::new();
    report.write_summary_csv(&mut buf)?;
    write_file(&args.out_dir.join("metrics.csv"), &buf)?;

    let mut buf = Vec::new();
    report.write_samples_csv(&mut buf)?;
    write_file(&args.out_dir.join("samples.csv"), &buf)?;

    for sample in &report.samples {
        let mut buf = Vec::new();
        sample.forecast.write_csv(&mut buf)?;
        write_file(&args.out_dir.join(format!("sample_{:03}.forecast.csv", sample.index)), &buf)?;
        for (k, trace) in sample.traces.iter().enumerate() {
            let mut buf = Vec::new();
            trace.write_csv(&mut buf)?;
            write_file(
                &args.out_dir.join(format!("sample_{:03}.layer{}.trace.csv", sample.index, k + 1)),
                &buf,
            )?;
        }
    }
    for (index, message) in &report.failures {
        eprintln!("sample {index} failed: {message}");
    }
    println!(
        "wrote {} ({} samples, {} failures)",
        args.out_dir.display(),
        report.samples.len(),
        report.failures.len()
    );
    Ok(())
}
