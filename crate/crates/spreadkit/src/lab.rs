//! Monte Carlo harness, relevance test and evaluation metrics.
//!
//! Every trial simulates one day, aggregates it into bars and feeds the same
//! path to all estimators. Close-based estimators see the bar closes, range
//! estimators see the bars. Reported statistics use the truncated spread
//! `max(0, Ŝ²)^{1/2}` and the population standard deviation. Per-trial results
//! are gathered in trial order and reduced by pairwise summation, so reports
//! do not depend on the number of worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::benchmarks;
use crate::series::{LogPriceSeries, OhlcSeries};
use crate::simkit::{SimConfig, Simulator};
use crate::spreads::{self, FitOptions, SpreadEstimate};
use crate::varest::{variance_of, VarianceScheme};
use crate::{Error, Result};

/// Estimators known to the harness and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorId {
    S11,
    S21,
    S31,
    S41,
    S1Med,
    Roll,
    Cs,
    Ar,
    Agk1,
    Agk2,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 10] = [
        EstimatorId::S11,
        EstimatorId::S21,
        EstimatorId::S31,
        EstimatorId::S41,
        EstimatorId::S1Med,
        EstimatorId::Roll,
        EstimatorId::Cs,
        EstimatorId::Ar,
        EstimatorId::Agk1,
        EstimatorId::Agk2,
    ];

    /// The estimators of the simulation tables.
    pub const TABLE: [EstimatorId; 8] = [
        EstimatorId::S11,
        EstimatorId::S21,
        EstimatorId::S31,
        EstimatorId::S41,
        EstimatorId::Roll,
        EstimatorId::Cs,
        EstimatorId::Ar,
        EstimatorId::Agk1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::S11 => "s11",
            EstimatorId::S21 => "s21",
            EstimatorId::S31 => "s31",
            EstimatorId::S41 => "s41",
            EstimatorId::S1Med => "s1med",
            EstimatorId::Roll => "roll",
            EstimatorId::Cs => "cs",
            EstimatorId::Ar => "ar",
            EstimatorId::Agk1 => "agk1",
            EstimatorId::Agk2 => "agk2",
        }
    }

    pub fn needs_bars(self) -> bool {
        matches!(self, EstimatorId::Cs | EstimatorId::Ar | EstimatorId::Agk1 | EstimatorId::Agk2)
    }

    /// Parses a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<EstimatorId>> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        EstimatorId::ALL
            .into_iter()
            .find(|e| e.as_str() == lower)
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimator '{s}'")))
    }
}

/// Lags and scheme used by the estimators.
///
/// S11 uses (l, lprime) unless `s11_lprime` overrides L'. S21 uses
/// (l, lprime) with Ĥ at `lhurst`, S31 uses (l, 2l, l), S41 fits lags
/// 1..=lmax and the median estimator stacks (1, L) for L ≤ lmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub l: usize,
    pub lprime: usize,
    pub lhurst: usize,
    pub lmax: usize,
    pub v: VarianceScheme,
    pub s11_lprime: Option<usize>,
    pub fit: FitOptions,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            l: 1,
            lprime: 2,
            lhurst: 1,
            lmax: 10,
            v: VarianceScheme::Overlapping,
            s11_lprime: None,
            fit: FitOptions::default(),
        }
    }
}

impl EstimatorSettings {
    /// Settings used for the simulation tables: S11 at lags (1, 6).
    pub fn replication() -> Self {
        Self { s11_lprime: Some(6), ..Self::default() }
    }
}

/// Runs one estimator on a day of closes and, when needed, its bars.
pub fn estimate_one(
    id: EstimatorId,
    closes: &LogPriceSeries,
    bars: Option<&OhlcSeries>,
    settings: &EstimatorSettings,
) -> Result<SpreadEstimate> {
    let st = settings;
    let need_bars = || {
        bars.ok_or_else(|| Error::InvalidInput(format!("estimator {id} needs OHLC bars")))
    };
    let mut est = match id {
        EstimatorId::S11 => spreads::s2_standard(closes, st.l, st.s11_lprime.unwrap_or(st.lprime), st.v)?,
        EstimatorId::S21 => spreads::s2_fbm_plugin(closes, st.l, st.lprime, st.lhurst, st.v)?,
        EstimatorId::S31 => spreads::s2_ou_plugin(closes, st.l, st.v)?,
        EstimatorId::S41 => spreads::s2_full_fit(closes, st.lmax, st.v, &st.fit)?.to_estimate(),
        EstimatorId::S1Med => spreads::s2_standard_median(closes, st.v, st.lmax)?,
        EstimatorId::Roll => benchmarks::roll(closes)?,
        EstimatorId::Cs => benchmarks::corwin_schultz(need_bars()?)?.estimate,
        EstimatorId::Ar => benchmarks::abdi_ranaldo(need_bars()?)?,
        EstimatorId::Agk1 => benchmarks::agk1(need_bars()?)?,
        EstimatorId::Agk2 => benchmarks::agk2(need_bars()?)?,
    };
    est.estimator_id = id.as_str().to_string();
    Ok(est)
}

/// Sum with pairwise splitting.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 8 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = pairwise_sum(x) / n;
    let dev: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
    (mean, (pairwise_sum(&dev) / n).sqrt())
}

/// Outcome of the relevance test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accepted,
    Rejected,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Accepted => "Accepted",
            Decision::Rejected => "Rejected",
        })
    }
}

/// Two-sided Gaussian test of `true_s` against the distribution of the
/// estimates: p = 2(1 - Φ(|true_s - mean| / std)).
pub fn bootstrap_test(estimates: &[f64], true_s: f64, significance: f64) -> Result<(f64, Decision)> {
    if estimates.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: estimates.len() });
    }
    let (mean, std) = mean_std(estimates);
    if !(std > 0.0) {
        return Err(Error::Degenerate("degenerate estimate distribution".into()));
    }
    let z = (true_s - mean).abs() / std;
    let p = erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    let d = if p < significance { Decision::Rejected } else { Decision::Accepted };
    Ok((p, d))
}

/// Statistics of one estimator over the trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub id: EstimatorId,
    pub mean: f64,
    pub bias: f64,
    pub std: f64,
    pub quadratic_risk: f64,
    pub p_value: Option<f64>,
    pub decision: Option<Decision>,
    pub n_trials: usize,
    pub failures: usize,
    pub first_error: Option<String>,
}

/// Results of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<EstimatorRow>,
    pub config: SimConfig,
    pub settings: EstimatorSettings,
    pub significance: f64,
    pub n_trials: usize,
}

impl ExperimentReport {
    pub fn row(&self, id: EstimatorId) -> Option<&EstimatorRow> {
        self.rows.iter().find(|r| r.id == id)
    }
}

/// Options of [`run_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub n_trials: usize,
    pub jobs: usize,
    pub significance: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { n_trials: 1000, jobs: 0, significance: 0.05 }
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

type TrialOutcome = Vec<std::result::Result<f64, String>>;

fn run_trial(sim: &Simulator, trial: u64, ids: &[EstimatorId], settings: &EstimatorSettings) -> TrialOutcome {
    let (bars, closes) = match sim.bars(trial).and_then(|(_, b)| {
        let c = b.closes()?;
        Ok((b, c))
    }) {
        Ok(x) => x,
        Err(e) => return ids.iter().map(|_| Err(e.to_string())).collect(),
    };
    ids.iter()
        .map(|&id| {
            estimate_one(id, &closes, Some(&bars), settings)
                .map(|e| e.s)
                .map_err(|e| e.to_string())
                .and_then(|s| if s.is_finite() { Ok(s) } else { Err("non-finite estimate".into()) })
        })
        .collect()
}

/// Runs `n_trials` simulated days and summarises each estimator.
pub fn run_experiment(
    config: &SimConfig,
    ids: &[EstimatorId],
    settings: &EstimatorSettings,
    options: &RunOptions,
) -> Result<ExperimentReport> {
    if options.n_trials < 2 {
        return Err(Error::InvalidInput("need at least 2 trials".into()));
    }
    if ids.is_empty() {
        return Err(Error::InvalidInput("no estimators requested".into()));
    }
    let sim = Simulator::new(*config)?;
    let outcomes: Vec<TrialOutcome> = with_pool(options.jobs, || {
        (0..options.n_trials as u64)
            .into_par_iter()
            .map(|t| run_trial(&sim, t, ids, settings))
            .collect()
    })?;
    let true_s = config.model.s;
    let rows = ids
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let mut values = Vec::with_capacity(outcomes.len());
            let mut failures = 0;
            let mut first_error = None;
            for o in &outcomes {
                match &o[k] {
                    Ok(v) => values.push(*v),
                    Err(e) => {
                        failures += 1;
                        first_error.get_or_insert_with(|| e.clone());
                    }
                }
            }
            summarise(id, &values, true_s, options.significance, failures, first_error)
        })
        .collect();
    Ok(ExperimentReport {
        rows,
        config: *config,
        settings: *settings,
        significance: options.significance,
        n_trials: options.n_trials,
    })
}

fn summarise(
    id: EstimatorId,
    values: &[f64],
    true_s: f64,
    significance: f64,
    failures: usize,
    first_error: Option<String>,
) -> EstimatorRow {
    if values.is_empty() {
        return EstimatorRow {
            id,
            mean: f64::NAN,
            bias: f64::NAN,
            std: f64::NAN,
            quadratic_risk: f64::NAN,
            p_value: None,
            decision: None,
            n_trials: 0,
            failures,
            first_error,
        };
    }
    let (mean, std) = mean_std(values);
    let bias = mean - true_s;
    let test = bootstrap_test(values, true_s, significance).ok();
    EstimatorRow {
        id,
        mean,
        bias,
        std,
        quadratic_risk: bias * bias + std * std,
        p_value: test.map(|t| t.0),
        decision: test.map(|t| t.1),
        n_trials: values.len(),
        failures,
        first_error,
    }
}

/// One cell of a sensitivity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub id: EstimatorId,
    pub mean: f64,
    pub bias: f64,
    pub std: f64,
    pub failures: usize,
}

fn sweep(
    configs: Vec<(f64, SimConfig)>,
    ids: &[EstimatorId],
    settings: &EstimatorSettings,
    options: &RunOptions,
) -> Result<Vec<SweepRow>> {
    if configs.is_empty() {
        return Err(Error::InvalidInput("empty sweep grid".into()));
    }
    let mut out = Vec::new();
    for (param, cfg) in configs {
        let rep = run_experiment(&cfg, ids, settings, options)?;
        out.extend(rep.rows.into_iter().map(|r| SweepRow {
            parameter: param,
            id: r.id,
            mean: r.mean,
            bias: r.bias,
            std: r.std,
            failures: r.failures,
        }));
    }
    Ok(out)
}

/// Experiment repeated over spreads with a common seed.
pub fn sweep_spread(
    config: &SimConfig,
    ids: &[EstimatorId],
    s_grid: &[f64],
    settings: &EstimatorSettings,
    options: &RunOptions,
) -> Result<Vec<SweepRow>> {
    let configs = s_grid
        .iter()
        .map(|&s| {
            let mut c = *config;
            c.model.s = s;
            (s, c)
        })
        .collect();
    sweep(configs, ids, settings, options)
}

/// Experiment repeated over liquidity probabilities with a common seed.
pub fn sweep_liquidity(
    config: &SimConfig,
    ids: &[EstimatorId],
    pi_grid: &[f64],
    settings: &EstimatorSettings,
    options: &RunOptions,
) -> Result<Vec<SweepRow>> {
    let configs = pi_grid
        .iter()
        .map(|&p| {
            let mut c = *config;
            c.liquidity_prob = p;
            (p, c)
        })
        .collect();
    sweep(configs, ids, settings, options)
}

/// Monte Carlo correlation matrix of V̂_v at the given lags on bar closes.
pub fn simulated_variance_correlation(
    config: &SimConfig,
    lags: &[usize],
    v: VarianceScheme,
    n_trials: usize,
    jobs: usize,
) -> Result<Vec<Vec<f64>>> {
    let sim = Simulator::new(*config)?;
    let draws: Vec<Result<Vec<f64>>> = with_pool(jobs, || {
        (0..n_trials as u64)
            .into_par_iter()
            .map(|t| {
                let (_, bars) = sim.bars(t)?;
                let c = bars.closes()?;
                lags.iter().map(|&l| variance_of(c.values(), l, v)).collect()
            })
            .collect()
    })?;
    let draws: Vec<Vec<f64>> = draws.into_iter().collect::<Result<_>>()?;
    let k = lags.len();
    let cols: Vec<Vec<f64>> = (0..k).map(|i| draws.iter().map(|d| d[i]).collect()).collect();
    let stats: Vec<(f64, f64)> = cols.iter().map(|c| mean_std(c)).collect();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let prods: Vec<f64> = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - stats[i].0) * (b - stats[j].0))
                .collect();
            out[i][j] = pairwise_sum(&prods) / n_trials as f64 / (stats[i].1 * stats[j].1);
        }
    }
    Ok(out)
}

/// One estimated or true spread for a (date, asset) key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub date: String,
    pub asset: String,
    pub estimator: String,
    pub value: f64,
}

/// Log-error metrics of one estimator on one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMetrics {
    pub estimator: String,
    pub asset: String,
    pub rmse: f64,
    pub mape: f64,
    pub n_days: usize,
}

/// Averages over assets and capitalisation rank correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub estimator: String,
    pub rmse: f64,
    pub mape: f64,
    pub spearman_rmse: Option<f64>,
    pub spearman_mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_asset: Vec<AssetMetrics>,
    pub per_estimator: Vec<EvalMetrics>,
    /// Rows dropped because an estimate or truth was not strictly positive.
    pub excluded: usize,
    /// Estimate rows with no matching truth.
    pub unmatched: usize,
}

/// Average ranks (1 = smallest), ties sharing the mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when a ranking is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// RMSE and MAPE of log spreads per asset, their averages per estimator and,
/// given capitalisations, Spearman correlations between capitalisation ranks
/// and the per-asset error ranks among estimators.
pub fn evaluate(
    estimates: &[EvalRecord],
    truths: &[EvalRecord],
    capitalization: Option<&BTreeMap<String, f64>>,
) -> Result<EvalReport> {
    let truth: BTreeMap<(&str, &str), f64> =
        truths.iter().map(|t| ((t.date.as_str(), t.asset.as_str()), t.value)).collect();
    let mut excluded = 0;
    let mut unmatched = 0;
    // (estimator, asset) -> log errors and log truths
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for e in estimates {
        let Some(&t) = truth.get(&(e.date.as_str(), e.asset.as_str())) else {
            unmatched += 1;
            continue;
        };
        if !(e.value > 0.0 && t > 0.0) {
            excluded += 1;
            continue;
        }
        groups
            .entry((e.estimator.clone(), e.asset.clone()))
            .or_default()
            .push((e.value.ln() - t.ln(), t.ln()));
    }
    if groups.is_empty() {
        return Err(Error::InvalidInput("no matching positive (date, asset) rows".into()));
    }
    let per_asset: Vec<AssetMetrics> = groups
        .into_iter()
        .map(|((estimator, asset), rows)| {
            let n = rows.len() as f64;
            let sq: Vec<f64> = rows.iter().map(|(d, _)| d * d).collect();
            let ab: Vec<f64> = rows.iter().map(|(d, lt)| (d / lt).abs()).collect();
            AssetMetrics {
                estimator,
                asset,
                rmse: (pairwise_sum(&sq) / n).sqrt(),
                mape: pairwise_sum(&ab) / n,
                n_days: rows.len(),
            }
        })
        .collect();

    let estimators: BTreeSet<&str> = per_asset.iter().map(|m| m.estimator.as_str()).collect();
    let assets: BTreeSet<&str> = per_asset.iter().map(|m| m.asset.as_str()).collect();
    let lookup: BTreeMap<(&str, &str), &AssetMetrics> =
        per_asset.iter().map(|m| ((m.estimator.as_str(), m.asset.as_str()), m)).collect();

    // Ranks of each estimator's error among estimators, per asset.
    let mut rank_rmse: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut rank_mape: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for &a in &assets {
        let present: Vec<&AssetMetrics> =
            estimators.iter().filter_map(|&e| lookup.get(&(e, a)).copied()).collect();
        let rr = average_ranks(&present.iter().map(|m| m.rmse).collect::<Vec<_>>());
        let rm = average_ranks(&present.iter().map(|m| m.mape).collect::<Vec<_>>());
        for (k, m) in present.iter().enumerate() {
            rank_rmse.insert((m.estimator.as_str(), a), rr[k]);
            rank_mape.insert((m.estimator.as_str(), a), rm[k]);
        }
    }

    let per_estimator = estimators
        .iter()
        .map(|&e| {
            let mine: Vec<&AssetMetrics> = per_asset.iter().filter(|m| m.estimator == e).collect();
            let n = mine.len() as f64;
            let rmse = pairwise_sum(&mine.iter().map(|m| m.rmse).collect::<Vec<_>>()) / n;
            let mape = pairwise_sum(&mine.iter().map(|m| m.mape).collect::<Vec<_>>()) / n;
            let (mut sr, mut sm) = (None, None);
            if let Some(cap) = capitalization {
                let with_cap: Vec<&AssetMetrics> =
                    mine.iter().copied().filter(|m| cap.contains_key(&m.asset)).collect();
                let caps: Vec<f64> = with_cap.iter().map(|m| cap[&m.asset]).collect();
                let r1: Vec<f64> = with_cap.iter().map(|m| rank_rmse[&(e, m.asset.as_str())]).collect();
                let r2: Vec<f64> = with_cap.iter().map(|m| rank_mape[&(e, m.asset.as_str())]).collect();
                sr = spearman(&caps, &r1);
                sm = spearman(&caps, &r2);
            }
            EvalMetrics { estimator: e.to_string(), rmse, mape, spearman_rmse: sr, spearman_mape: sm }
        })
        .collect();

    Ok(EvalReport { per_asset, per_estimator, excluded, unmatched })
}
