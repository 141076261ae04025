//! Command-line front end binding the library modules.
//!
//! Every command writes a JSON run manifest next to its output (or to stderr
//! when the output goes to stdout). Exit codes: 0 success, 1 usage error,
//! 2 partial estimator failure, 3 I/O error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use spreadkit::lab::{
    self, EstimatorId, EstimatorSettings, EvalRecord, ExperimentReport, RunOptions, SweepRow,
};
use spreadkit::series::{self, PriceScale, DEFAULT_ANNUALIZATION};
use spreadkit::simkit::{SimConfig, Simulator};
use spreadkit::spreads::FitOptions;
use spreadkit::theory::{self, AsymptoticVariance, CorrelationSource};
use spreadkit::{Error, ModelKind, ModelSpec, VarianceScheme};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

const DAY_SECONDS: f64 = 28_800.0;

#[derive(Debug, Parser, Serialize)]
#[command(name = "spreadkit", version, about = "Bid-ask spread estimation under serial dependence")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Simulate one day of a market model and write bars or fine prices.
    Simulate(SimulateArgs),
    /// Estimate spreads from a price CSV.
    Estimate(EstimateArgs),
    /// Monte Carlo table of estimator bias, std and relevance test.
    Experiment(ExperimentArgs),
    /// Closed-form moments and asymptotic variances.
    Asymptotics(AsymptoticsArgs),
    /// Compare estimates with reference spreads by (date, asset).
    Evaluate(EvaluateArgs),
}

/// Market model parameters shared by several commands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Model: 1 Brownian/iid signs, 2 fBm, 3 correlated signs, 4 both.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub model: u8,
    /// Relative spread S.
    #[arg(long, default_value_t = 0.005)]
    pub spread: f64,
    /// Annualised volatility; defaults to the --daily-sd conversion for
    /// simulation commands and to 0.2 for asymptotics.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Standard deviation of the mid price over a 28,800-second day.
    #[arg(long, default_value_t = 0.03)]
    pub daily_sd: f64,
    /// Hurst exponent (models 2 and 4).
    #[arg(long, default_value_t = 0.5)]
    pub hurst: f64,
    /// Mean reversion of the hidden OU sign process, per second.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Decay time of the trade-sign autocorrelation, in seconds.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Observation step in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub tau_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum ScaleArg {
    Raw,
    Log,
}

impl From<ScaleArg> for PriceScale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Raw => PriceScale::Raw,
            ScaleArg::Log => PriceScale::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Fine steps per bar.
    #[arg(long, default_value_t = 60)]
    pub bar_factor: usize,
    /// Number of fine steps in the day.
    #[arg(long, default_value_t = 28_800)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability that a fine step carries a trade.
    #[arg(long, default_value_t = 1.0)]
    pub liquidity_prob: f64,
    /// Write fine-grid closes instead of bars.
    #[arg(long)]
    pub fine: bool,
    #[arg(long, value_enum, default_value_t = ScaleArg::Raw)]
    pub price_scale: ScaleArg,
    #[arg(long, default_value = "sim.csv")]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// CSV with `timestamp,close` or `timestamp,open,high,low,close`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Comma-separated estimator ids (s11,s21,s31,s41,s1med,roll,cs,ar,agk1,agk2).
    #[arg(long, default_value = "s11")]
    pub estimators: String,
    #[arg(long, default_value_t = 1)]
    pub l: usize,
    #[arg(long, default_value_t = 2)]
    pub lprime: usize,
    #[arg(long, default_value_t = 1)]
    pub lhurst: usize,
    #[arg(long, default_value_t = 10)]
    pub lmax: usize,
    /// Variance scheme: 1 overlapping, 2 non-overlapping, 3 strictly disjoint.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub v: u8,
    #[arg(long, value_enum, default_value_t = ScaleArg::Raw)]
    pub price_scale: ScaleArg,
    /// Observation step in seconds; inferred from timestamps when omitted.
    #[arg(long)]
    pub step_seconds: Option<f64>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Grid nodes in H for the four-parameter fit.
    #[arg(long, default_value_t = 50)]
    pub hurst_nodes: usize,
    /// Grid nodes in λ for the four-parameter fit.
    #[arg(long, default_value_t = 50)]
    pub lambda_nodes: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 60)]
    pub bar_factor: usize,
    #[arg(long, default_value_t = 28_800)]
    pub steps: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub liquidity_prob: f64,
    #[arg(long, default_value = "s11,s21,s31,s41,roll,cs,ar,agk1")]
    pub estimators: String,
    #[arg(long, default_value_t = 1)]
    pub l: usize,
    #[arg(long, default_value_t = 2)]
    pub lprime: usize,
    /// L' used by s11 in the tables.
    #[arg(long, default_value_t = 6)]
    pub s11_lprime: usize,
    #[arg(long, default_value_t = 1)]
    pub lhurst: usize,
    #[arg(long, default_value_t = 10)]
    pub lmax: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub v: u8,
    #[arg(long, default_value_t = 0.05)]
    pub significance: f64,
    /// Comma-separated spreads; runs a spread sweep instead of one table.
    #[arg(long, conflicts_with = "sweep_liquidity")]
    pub sweep_spread: Option<String>,
    /// Comma-separated liquidity probabilities; runs a liquidity sweep.
    #[arg(long)]
    pub sweep_liquidity: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AsymptoticsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub l: usize,
    #[arg(long, default_value_t = 2)]
    pub lprime: usize,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub v: u8,
    /// Emit Γ(L, m(L+1)-1) and its curves over S and n (model 1).
    #[arg(long)]
    pub gamma: bool,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Number of observations.
    #[arg(long, default_value_t = 510)]
    pub n: usize,
    /// Supplied limit correlation of V̂(L) and V̂(L'); simulated when omitted.
    #[arg(long)]
    pub r: Option<f64>,
    /// Replicates for simulated correlations.
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Estimates CSV with columns date,asset,estimator,value.
    #[arg(long)]
    pub input: PathBuf,
    /// Reference CSV with columns date,asset,value.
    #[arg(long)]
    pub truth: PathBuf,
    /// Optional CSV with columns asset,value.
    #[arg(long)]
    pub capitalization: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Record written alongside every output.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: serde_json::Value,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: msg.into() }
    }

    fn io(msg: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: msg.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Csv { .. } => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let started = now();
    let outcome = dispatch(&cli.command);
    let (code, manifest_target) = match outcome {
        Ok(o) => (o.code, o.manifest),
        Err(e) => {
            eprintln!("spreadkit: {}", e.message);
            return e.code;
        }
    };
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        args: serde_json::to_value(&cli.command).unwrap_or(serde_json::Value::Null),
        argv,
        seed: command_seed(&cli.command),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_at: started,
        finished_at: now(),
    };
    match write_manifest(&manifest, manifest_target.as_deref()) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("spreadkit: {}", e.message);
            EXIT_IO
        }
    }
}

struct Outcome {
    code: i32,
    /// Manifest path, or `None` for stderr.
    manifest: Option<PathBuf>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Estimate(_) => "estimate",
        Command::Experiment(_) => "experiment",
        Command::Asymptotics(_) => "asymptotics",
        Command::Evaluate(_) => "evaluate",
    }
}

fn command_seed(c: &Command) -> Option<u64> {
    match c {
        Command::Simulate(a) => Some(a.seed),
        Command::Experiment(a) => Some(a.seed),
        Command::Asymptotics(a) => Some(a.seed),
        _ => None,
    }
}

/// `sim.csv` -> `sim.<suffix>`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn write_manifest(m: &RunManifest, target: Option<&Path>) -> CliResult<()> {
    let json = serde_json::to_string_pretty(m).map_err(|e| CliError::io(e.to_string()))?;
    match target {
        Some(p) => fs::write(p, json + "\n").map_err(|e| CliError::io(format!("{}: {e}", p.display()))),
        None => {
            eprintln!("{json}");
            Ok(())
        }
    }
}

fn dispatch(c: &Command) -> CliResult<Outcome> {
    match c {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Asymptotics(a) => cmd_asymptotics(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn years(seconds: f64) -> f64 {
    seconds / DEFAULT_ANNUALIZATION
}

impl ModelArgs {
    /// Builds the model; `sigma_fallback` is used when --sigma is absent,
    /// otherwise the --daily-sd conversion applies.
    fn build(&self, sigma_fallback: Option<f64>) -> CliResult<ModelSpec> {
        let kind = ModelKind::from_number(self.model)?;
        let tau = years(self.tau_seconds);
        let hurst = match kind {
            ModelKind::FbmPrice | ModelKind::Full => self.hurst,
            _ => 0.5,
        };
        let sigma = match (self.sigma, sigma_fallback) {
            (Some(s), _) => s,
            (None, Some(s)) => s,
            (None, None) => ModelSpec::sigma_for_daily_sd(self.daily_sd, years(DAY_SECONDS), hurst),
        };
        let lambda = self.lambda.map(years);
        let mut m = match kind {
            ModelKind::Iid => ModelSpec::iid(self.spread, sigma, tau),
            ModelKind::FbmPrice => ModelSpec::fbm(self.spread, sigma, hurst, tau),
            ModelKind::OuTrades | ModelKind::Full => {
                let mut m = ModelSpec::full(self.spread, sigma, hurst, 1.0, tau);
                m.kind = kind;
                m.lambda_years = lambda;
                m.theta_per_second = match (self.theta, lambda) {
                    (Some(t), _) => Some(t),
                    (None, None) => Some(0.01),
                    (None, Some(_)) => None,
                };
                m
            }
        };
        if kind == ModelKind::Iid || kind == ModelKind::FbmPrice {
            m.theta_per_second = None;
        }
        m.validate()?;
        Ok(m)
    }
}

/// Gives a correlated-trade model a decay time from θ when none was set, by
/// matching the lag-one sign correlation.
fn with_effective_lambda(mut m: ModelSpec, tau_seconds: f64) -> ModelSpec {
    if m.lambda_years.is_none() {
        if let Some(theta) = m.theta_per_second {
            let rho = theory::ou_sign_correlation(theta, tau_seconds);
            if rho > 0.0 && rho < 1.0 {
                m.lambda_years = Some(-m.tau_years / rho.ln());
            }
        }
    }
    m
}

fn sim_config(model: ModelSpec, seed: u64, steps: usize, bar_factor: usize, liquidity: f64) -> CliResult<SimConfig> {
    let mut c = SimConfig::new(model, seed);
    c.n_fine = steps;
    c.bar_factor = bar_factor;
    c.liquidity_prob = liquidity;
    c.validate()?;
    Ok(c)
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<Outcome> {
    let model = a.model.build(None)?;
    let cfg = sim_config(model, a.seed, a.steps, a.bar_factor, a.liquidity_prob)?;
    let sim = Simulator::new(cfg)?;
    let (path, bars) = sim.bars(0)?;
    let scale = PriceScale::from(a.price_scale);
    if a.fine {
        let fine = spreadkit::LogPriceSeries::with_annualization(
            path.fine_log_prices,
            cfg.fine_step_seconds(),
            cfg.annualization,
        )?;
        series::write_close_csv(&a.output, &fine, scale, 0.0)?;
    } else {
        series::write_ohlc_csv(&a.output, &bars, scale, 0.0)?;
    }
    #[derive(Serialize)]
    struct Truth<'a> {
        spread: f64,
        model: &'a ModelSpec,
        config: &'a SimConfig,
        seed: u64,
        fine: bool,
    }
    let truth = Truth { spread: model.s, model: &model, config: &cfg, seed: a.seed, fine: a.fine };
    let json = serde_json::to_string_pretty(&truth).map_err(|e| CliError::io(e.to_string()))?;
    fs::write(sidecar(&a.output, "truth.json"), json + "\n")?;
    Ok(Outcome { code: EXIT_OK, manifest: Some(sidecar(&a.output, "manifest.json")) })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct EstimateRow {
    estimator: String,
    s_squared: Option<f64>,
    s: Option<f64>,
    hurst: Option<f64>,
    rho: Option<f64>,
    sigma_sq: Option<f64>,
    lambda: Option<f64>,
    error: Option<String>,
}

fn cmd_estimate(a: &EstimateArgs) -> CliResult<Outcome> {
    let ids = EstimatorId::parse_list(&a.estimators).map_err(|e| CliError::usage(e.to_string()))?;
    if ids.is_empty() {
        return Err(CliError::usage("no estimators given"));
    }
    let v = VarianceScheme::from_index(a.v)?;
    if !a.input.exists() {
        return Err(CliError::io(format!("{}: no such file", a.input.display())));
    }
    let schema = series::detect_schema(&a.input)?;
    let loaded = series::load_csv(&a.input, &schema, a.price_scale.into(), a.step_seconds)?;
    let closes = loaded.closes()?;
    let settings = EstimatorSettings {
        l: a.l,
        lprime: a.lprime,
        lhurst: a.lhurst,
        lmax: a.lmax,
        v,
        s11_lprime: None,
        fit: FitOptions { hurst_nodes: a.hurst_nodes, lambda_nodes: a.lambda_nodes, ..FitOptions::default() },
    };
    let mut failed = false;
    let rows: Vec<EstimateRow> = ids
        .iter()
        .map(|&id| match lab::estimate_one(id, &closes, loaded.bars(), &settings) {
            Ok(e) => {
                let d = e.diagnostics.unwrap_or_default();
                EstimateRow {
                    estimator: id.to_string(),
                    s_squared: Some(e.s_squared),
                    s: Some(e.s),
                    hurst: d.hurst,
                    rho: d.rho,
                    sigma_sq: d.sigma_sq,
                    lambda: d.lambda,
                    error: None,
                }
            }
            Err(err) => {
                failed = true;
                eprintln!("spreadkit: {id}: {err}");
                EstimateRow {
                    estimator: id.to_string(),
                    s_squared: None,
                    s: None,
                    hurst: None,
                    rho: None,
                    sigma_sq: None,
                    lambda: None,
                    error: Some(err.to_string()),
                }
            }
        })
        .collect();
    let text = match a.format {
        FormatArg::Json => serde_json::to_string_pretty(&rows).map_err(|e| CliError::io(e.to_string()))? + "\n",
        FormatArg::Csv => {
            let mut s = String::from("estimator,s_squared,s,hurst,rho,sigma_sq,lambda,error\n");
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    r.estimator,
                    fmt_opt(r.s_squared),
                    fmt_opt(r.s),
                    fmt_opt(r.hurst),
                    fmt_opt(r.rho),
                    fmt_opt(r.sigma_sq),
                    fmt_opt(r.lambda),
                    csv_field(r.error.as_deref().unwrap_or("")),
                );
            }
            s
        }
    };
    let manifest = emit(a.output.as_deref(), &text)?;
    Ok(Outcome { code: if failed { EXIT_PARTIAL } else { EXIT_OK }, manifest })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `text` to the output file or stdout and returns the manifest path.
fn emit(output: Option<&Path>, text: &str) -> CliResult<Option<PathBuf>> {
    match output {
        Some(p) => {
            fs::write(p, text).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            Ok(Some(sidecar(p, "manifest.json")))
        }
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(None)
        }
    }
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::usage(format!("bad grid value '{t}'"))))
        .collect()
}

fn fmt_p(p: Option<f64>) -> String {
    p.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

/// Table layout as CSV.
pub fn report_csv(rep: &ExperimentReport) -> String {
    let mut s = String::from("estimator,mean,bias,std,quadratic_risk,p_value,decision,failures\n");
    for r in &rep.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.id,
            r.mean,
            r.bias,
            r.std,
            r.quadratic_risk,
            fmt_opt(r.p_value),
            r.decision.map(|d| d.to_string()).unwrap_or_default(),
            r.failures
        );
    }
    s
}

/// Table layout as aligned text.
pub fn report_text(rep: &ExperimentReport) -> String {
    let mut s = format!(
        "{:<8} {:>12} {:>12} {:>12} {:>8} {:>9} {:>8}\n",
        "", "bias", "std", "quad_risk", "p-value", "decision", "failures"
    );
    for r in &rep.rows {
        let _ = writeln!(
            s,
            "{:<8} {:>12.3e} {:>12.3e} {:>12.3e} {:>8} {:>9} {:>8}",
            r.id.as_str(),
            r.bias,
            r.std,
            r.quadratic_risk,
            fmt_p(r.p_value),
            r.decision.map(|d| d.to_string()).unwrap_or_else(|| "-".into()),
            r.failures
        );
    }
    s
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("parameter,estimator,mean,bias,std,failures\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.parameter, r.id, r.mean, r.bias, r.std, r.failures);
    }
    s
}

fn cmd_experiment(a: &ExperimentArgs) -> CliResult<Outcome> {
    let ids = EstimatorId::parse_list(&a.estimators).map_err(|e| CliError::usage(e.to_string()))?;
    if ids.is_empty() {
        return Err(CliError::usage("no estimators given"));
    }
    if a.trials < 2 {
        return Err(CliError::usage("need at least 2 trials"));
    }
    let model = a.model.build(None)?;
    let cfg = sim_config(model, a.seed, a.steps, a.bar_factor, a.liquidity_prob)?;
    let settings = EstimatorSettings {
        l: a.l,
        lprime: a.lprime,
        lhurst: a.lhurst,
        lmax: a.lmax,
        v: VarianceScheme::from_index(a.v)?,
        s11_lprime: Some(a.s11_lprime),
        fit: FitOptions::default(),
    };
    let opts = RunOptions { n_trials: a.trials, jobs: a.jobs, significance: a.significance };
    let sweep = match (&a.sweep_spread, &a.sweep_liquidity) {
        (Some(g), _) => Some(lab::sweep_spread(&cfg, &ids, &parse_grid(g)?, &settings, &opts)?),
        (None, Some(g)) => Some(lab::sweep_liquidity(&cfg, &ids, &parse_grid(g)?, &settings, &opts)?),
        (None, None) => None,
    };
    let (csv_text, text, partial) = match sweep {
        Some(rows) => {
            let partial = rows.iter().any(|r| r.failures > 0);
            (sweep_csv(&rows), None, partial)
        }
        None => {
            let rep = lab::run_experiment(&cfg, &ids, &settings, &opts)?;
            let partial = rep.rows.iter().any(|r| r.failures > 0);
            (report_csv(&rep), Some(report_text(&rep)), partial)
        }
    };
    let manifest = emit(a.output.as_deref(), &csv_text)?;
    if let Some(t) = text {
        if a.output.is_some() {
            print!("{t}");
        } else {
            eprint!("{t}");
        }
    }
    Ok(Outcome { code: if partial { EXIT_PARTIAL } else { EXIT_OK }, manifest })
}

struct AsymRow {
    quantity: String,
    l: usize,
    lp: Option<usize>,
    s: f64,
    n: Option<usize>,
    value: f64,
    source: &'static str,
}

fn source_name(s: CorrelationSource) -> &'static str {
    match s {
        CorrelationSource::ClosedForm => "closed_form",
        CorrelationSource::Simulated => "simulated",
        CorrelationSource::Supplied => "supplied",
    }
}

fn asym_csv(rows: &[AsymRow]) -> String {
    let mut s = String::from("quantity,L,L_prime,S,n,value,correlation_source\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.quantity,
            r.l,
            r.lp.map(|x| x.to_string()).unwrap_or_default(),
            r.s,
            r.n.map(|x| x.to_string()).unwrap_or_default(),
            r.value,
            r.source
        );
    }
    s
}

/// Monte Carlo correlation of V̂ at `lags` on `n` observations of the model.
fn simulated_r(a: &AsymptoticsArgs, model: &ModelSpec, lags: &[usize], v: VarianceScheme) -> CliResult<Vec<Vec<f64>>> {
    if a.trials < 3 {
        return Err(CliError::usage("need at least 3 trials to simulate correlations"));
    }
    let cfg = sim_config(*model, a.seed, a.n, 1, 1.0)?;
    Ok(lab::simulated_variance_correlation(&cfg, lags, v, a.trials, a.jobs)?)
}

fn cmd_asymptotics(a: &AsymptoticsArgs) -> CliResult<Outcome> {
    let model = with_effective_lambda(a.model.build(Some(0.2))?, a.model.tau_seconds);
    let v = VarianceScheme::from_index(a.v)?;
    let n = a.n;
    if n < 2 {
        return Err(CliError::usage("need n >= 2"));
    }
    let mut rows = Vec::new();
    if a.gamma {
        let lp = a.m * (a.l + 1) - 1;
        let g = theory::gamma_standard_special(a.l, a.m, &model)?;
        let src = source_name(g.correlation_source);
        rows.push(AsymRow { quantity: "gamma".into(), l: a.l, lp: Some(lp), s: model.s, n: None, value: g.value, source: src });
        for (name, val) in &g.components {
            rows.push(AsymRow {
                quantity: format!("gamma_{name}"),
                l: a.l,
                lp: Some(lp),
                s: model.s,
                n: None,
                value: *val,
                source: src,
            });
        }
        for i in 1..=40 {
            let s = i as f64 * 0.0005;
            let m = ModelSpec { s, ..model };
            let g = theory::gamma_standard_special(a.l, a.m, &m)?;
            rows.push(AsymRow {
                quantity: "curve_s".into(),
                l: a.l,
                lp: Some(lp),
                s,
                n: Some(n),
                value: (g.value / n as f64).sqrt(),
                source: src,
            });
        }
        let mut ns: Vec<usize> = vec![10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000, n];
        ns.sort_unstable();
        ns.dedup();
        for k in ns {
            rows.push(AsymRow {
                quantity: "curve_n".into(),
                l: a.l,
                lp: Some(lp),
                s: model.s,
                n: Some(k),
                value: (g.value / k as f64).sqrt(),
                source: src,
            });
        }
    } else {
        let (l, lp) = (a.l, a.lprime);
        if l == lp || l == 0 || lp == 0 {
            return Err(CliError::usage("need distinct positive --l and --lprime"));
        }
        for lag in [l, lp] {
            let row = |q: &str, value: f64| AsymRow {
                quantity: q.into(),
                l: lag,
                lp: None,
                s: model.s,
                n: Some(n),
                value,
                source: "closed_form",
            };
            rows.push(row("variance", theory::theoretical_variance(&model, lag)));
            if model.kind != ModelKind::Full {
                let s2 = theory::var_of_variance(&model, lag, v)?;
                rows.push(row("var_of_variance", s2));
                if model.kind == ModelKind::FbmPrice && v != VarianceScheme::Overlapping {
                    let k = spreadkit::varest::increment_count(n, lag, v)?;
                    rows.push(row("xi", theory::xi_remainder(&model, lag, v, k)?));
                }
            }
        }
        if model.kind != ModelKind::Full {
            let (r, source) = match a.r {
                Some(r) => (r, CorrelationSource::Supplied),
                None => (simulated_r(a, &model, &[l, lp], v)?[0][1], CorrelationSource::Simulated),
            };
            let g = theory::gamma_two_lag(&model, v, l, lp, r, source)?;
            push_gamma(&mut rows, "gamma_known", l, Some(lp), &model, n, &g);
            let plug = match model.kind {
                ModelKind::FbmPrice => {
                    let r3 = to3(&simulated_r(a, &model, &[1, 2, 4], v)?);
                    Some(("gamma_plugin", 1, theory::fbm_plugin_asymptotic(&model, v, &r3, CorrelationSource::Simulated)?))
                }
                ModelKind::OuTrades => {
                    let r3 = to3(&simulated_r(a, &model, &[l, 2 * l, 4 * l], v)?);
                    Some(("gamma_plugin", l, theory::ou_plugin_asymptotic(&model, v, l, &r3, CorrelationSource::Simulated)?))
                }
                _ => None,
            };
            if let Some((q, lag, g)) = plug {
                push_gamma(&mut rows, q, lag, None, &model, n, &g);
            }
        }
    }
    let manifest = emit(a.output.as_deref(), &asym_csv(&rows))?;
    Ok(Outcome { code: EXIT_OK, manifest })
}

fn to3(r: &[Vec<f64>]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r[i][j];
        }
    }
    out
}

fn push_gamma(
    rows: &mut Vec<AsymRow>,
    q: &str,
    l: usize,
    lp: Option<usize>,
    model: &ModelSpec,
    n: usize,
    g: &AsymptoticVariance,
) {
    let source = source_name(g.correlation_source);
    rows.push(AsymRow { quantity: q.into(), l, lp, s: model.s, n: None, value: g.value, source });
    rows.push(AsymRow {
        quantity: format!("{q}_sd"),
        l,
        lp,
        s: model.s,
        n: Some(n),
        value: (g.value / n as f64).sqrt(),
        source,
    });
    for (name, val) in &g.components {
        rows.push(AsymRow { quantity: format!("{q}_{name}"), l, lp, s: model.s, n: None, value: *val, source });
    }
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    date: String,
    asset: String,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct CapRow {
    asset: String,
    value: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::io(format!("{}: row {}: {e}", path.display(), i + 1))))
        .collect()
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<Outcome> {
    let estimates: Vec<EvalRecord> = read_csv(&a.input)?;
    let truths: Vec<EvalRecord> = read_csv::<TruthRow>(&a.truth)?
        .into_iter()
        .map(|t| EvalRecord { date: t.date, asset: t.asset, estimator: String::new(), value: t.value })
        .collect();
    let caps: Option<BTreeMap<String, f64>> = match &a.capitalization {
        Some(p) => Some(read_csv::<CapRow>(p)?.into_iter().map(|c| (c.asset, c.value)).collect()),
        None => None,
    };
    let rep = lab::evaluate(&estimates, &truths, caps.as_ref())?;
    let mut s = String::from("scope,estimator,asset,rmse,mape,n_days,spearman_rmse,spearman_mape\n");
    for m in &rep.per_estimator {
        let _ = writeln!(
            s,
            "estimator,{},,{},{},,{},{}",
            csv_field(&m.estimator),
            m.rmse,
            m.mape,
            fmt_opt(m.spearman_rmse),
            fmt_opt(m.spearman_mape)
        );
    }
    for m in &rep.per_asset {
        let _ = writeln!(
            s,
            "asset,{},{},{},{},{},,",
            csv_field(&m.estimator),
            csv_field(&m.asset),
            m.rmse,
            m.mape,
            m.n_days
        );
    }
    if rep.excluded > 0 || rep.unmatched > 0 {
        eprintln!("spreadkit: {} rows excluded (nonpositive), {} unmatched", rep.excluded, rep.unmatched);
    }
    let manifest = emit(a.output.as_deref(), &s)?;
    Ok(Outcome { code: EXIT_OK, manifest })
}
