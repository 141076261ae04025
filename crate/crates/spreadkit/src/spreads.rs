//! Moment-based spread estimators.
//!
//! Each estimator combines empirical variances V̂(L) at a few lags. The
//! `*_from_variances` functions hold the arithmetic and are shared with the
//! theory module; the series-level functions add lag validation and
//! bookkeeping. Estimates of S² can be negative; [`SpreadEstimate::s`] applies
//! `max(0, S²)^{1/2}`.

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::brent::BrentOpt;
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use crate::series::LogPriceSeries;
use crate::varest::{increment_count, variance_curve, variance_of, VarianceScheme};
use crate::{Error, Result};

/// Nuisance parameters estimated alongside the spread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub hurst: Option<f64>,
    pub rho: Option<f64>,
    pub sigma_sq: Option<f64>,
    pub lambda: Option<f64>,
}

/// A spread estimate in squared and level form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadEstimate {
    pub s_squared: f64,
    pub s: f64,
    pub estimator_id: String,
    pub diagnostics: Option<Diagnostics>,
}

impl SpreadEstimate {
    pub fn from_squared(s_squared: f64, estimator_id: impl Into<String>) -> Self {
        Self {
            s_squared,
            s: truncated_spread(s_squared),
            estimator_id: estimator_id.into(),
            diagnostics: None,
        }
    }

    pub fn with_diagnostics(mut self, d: Diagnostics) -> Self {
        self.diagnostics = Some(d);
        self
    }
}

/// max(0, x)^{1/2}; NaN maps to NaN.
pub fn truncated_spread(s_squared: f64) -> f64 {
    if s_squared > 0.0 {
        s_squared.sqrt()
    } else if s_squared.is_nan() {
        f64::NAN
    } else {
        0.0
    }
}

fn two_lag(a: f64, b: f64, d: f64, vl: f64, vlp: f64) -> f64 {
    2.0 * (a * vl - b * vlp) / d
}

/// 2(L'V(L) - L V(L')) / (L' - L).
pub fn s2_standard_from_variances(vl: f64, vlp: f64, lag: usize, lag_prime: usize) -> f64 {
    let (l, lp) = (lag as f64, lag_prime as f64);
    two_lag(lp, l, lp - l, vl, vlp)
}

/// 2(L'^{2H} V(L) - L^{2H} V(L')) / (L'^{2H} - L^{2H}).
pub fn s2_fbm_from_variances(vl: f64, vlp: f64, lag: usize, lag_prime: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let a = (lag_prime as f64).powf(h2);
    let b = (lag as f64).powf(h2);
    two_lag(a, b, a - b, vl, vlp)
}

/// 2(L'V(L) - L V(L')) / (L'(1-ρ^L) - L(1-ρ^{L'})).
pub fn s2_ou_from_variances(vl: f64, vlp: f64, lag: usize, lag_prime: usize, rho: f64) -> f64 {
    let (l, lp) = (lag as f64, lag_prime as f64);
    let d = lp * (1.0 - rho.powi(lag as i32)) - l * (1.0 - rho.powi(lag_prime as i32));
    two_lag(lp, l, d, vl, vlp)
}

/// ½ log₂ |(V(4L) - V(2L)) / (V(2L) - V(L))|, not clamped to (0, 1).
pub fn hurst_from_variances(v1: f64, v2: f64, v4: f64) -> Result<f64> {
    let den = v2 - v1;
    let h = 0.5 * ((v4 - v2) / den).abs().log2();
    if den == 0.0 || !h.is_finite() {
        return Err(Error::Degenerate("degenerate variance differences".into()));
    }
    Ok(h)
}

/// √|(2V(2L) - V(4L)) / (2V(L) - V(2L))| - 1, an estimate of ρ^L.
pub fn rho_from_variances(v1: f64, v2: f64, v4: f64) -> Result<f64> {
    let den = 2.0 * v1 - v2;
    if den == 0.0 {
        return Err(Error::Degenerate("degenerate variance differences".into()));
    }
    Ok(((2.0 * v2 - v4) / den).abs().sqrt() - 1.0)
}

/// 2(2V(L) - V(2L))² / (2√|2V(L) - V(2L)| - √|2V(2L) - V(4L)|)².
pub fn s2_ou_plugin_from_variances(v1: f64, v2: f64, v4: f64) -> Result<f64> {
    let a = 2.0 * v1 - v2;
    let b = 2.0 * v2 - v4;
    // 2√|a| - √|b| written without subtracting square roots.
    let d = (4.0 * a.abs() - b.abs()) / (2.0 * a.abs().sqrt() + b.abs().sqrt());
    if d == 0.0 || !d.is_finite() {
        return Err(Error::Degenerate("zero denominator in plug-in estimator".into()));
    }
    Ok(2.0 * a * a / (d * d))
}

fn check_pair(n: usize, lag: usize, lag_prime: usize, v: VarianceScheme) -> Result<()> {
    if lag == lag_prime {
        return Err(Error::InvalidInput(format!("lags must differ, got L = L' = {lag}")));
    }
    increment_count(n, lag, v)?;
    increment_count(n, lag_prime, v)?;
    Ok(())
}

/// Estimator for Brownian mid price and independent trades.
pub fn s2_standard(
    series: &LogPriceSeries,
    lag: usize,
    lag_prime: usize,
    v: VarianceScheme,
) -> Result<SpreadEstimate> {
    check_pair(series.len(), lag, lag_prime, v)?;
    let x = series.values();
    let s2 = s2_standard_from_variances(variance_of(x, lag, v)?, variance_of(x, lag_prime, v)?, lag, lag_prime);
    Ok(SpreadEstimate::from_squared(s2, "S1"))
}

/// Median of a non-empty slice; the mean of the two central values for even length.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("median of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Median over L ∈ [2, L_max] of the standard estimator at lags (1, L).
pub fn s2_standard_median(
    series: &LogPriceSeries,
    v: VarianceScheme,
    l_max: usize,
) -> Result<SpreadEstimate> {
    if l_max < 2 {
        return Err(Error::InvalidInput(format!("L_max must be at least 2, got {l_max}")));
    }
    increment_count(series.len(), l_max, v)?;
    let curve = variance_curve(series.values(), l_max, v)?;
    let members: Vec<f64> =
        (2..=l_max).map(|l| s2_standard_from_variances(curve[0], curve[l - 1], 1, l)).collect();
    Ok(SpreadEstimate::from_squared(median(&members)?, "S1-median"))
}

fn three_variances(series: &LogPriceSeries, lag: usize, v: VarianceScheme) -> Result<(f64, f64, f64)> {
    let x = series.values();
    increment_count(x.len(), 4 * lag, v)?;
    Ok((variance_of(x, lag, v)?, variance_of(x, 2 * lag, v)?, variance_of(x, 4 * lag, v)?))
}

/// Ĥ_L from the variances at L, 2L and 4L.
pub fn hurst_estimate(series: &LogPriceSeries, lag: usize, v: VarianceScheme) -> Result<f64> {
    let (v1, v2, v4) = three_variances(series, lag, v)?;
    hurst_from_variances(v1, v2, v4)
}

/// Estimator for a fractional Brownian mid price with known H.
pub fn s2_fbm(
    series: &LogPriceSeries,
    lag: usize,
    lag_prime: usize,
    v: VarianceScheme,
    hurst: f64,
) -> Result<SpreadEstimate> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidInput(format!("hurst must lie in (0,1), got {hurst}")));
    }
    check_pair(series.len(), lag, lag_prime, v)?;
    let x = series.values();
    let s2 = s2_fbm_from_variances(variance_of(x, lag, v)?, variance_of(x, lag_prime, v)?, lag, lag_prime, hurst);
    Ok(SpreadEstimate::from_squared(s2, "S2").with_diagnostics(Diagnostics {
        hurst: Some(hurst),
        ..Default::default()
    }))
}

/// fBm estimator with H replaced by Ĥ at lag `lag_hurst`. Ĥ is used as is,
/// even outside (0, 1).
pub fn s2_fbm_plugin(
    series: &LogPriceSeries,
    lag: usize,
    lag_prime: usize,
    lag_hurst: usize,
    v: VarianceScheme,
) -> Result<SpreadEstimate> {
    let h = hurst_estimate(series, lag_hurst, v)?;
    check_pair(series.len(), lag, lag_prime, v)?;
    let x = series.values();
    let s2 = s2_fbm_from_variances(variance_of(x, lag, v)?, variance_of(x, lag_prime, v)?, lag, lag_prime, h);
    Ok(SpreadEstimate::from_squared(s2, "S2-plugin").with_diagnostics(Diagnostics {
        hurst: Some(h),
        ..Default::default()
    }))
}

/// ρ̂^L from the variances at L, 2L and 4L.
pub fn rho_estimate(series: &LogPriceSeries, lag: usize, v: VarianceScheme) -> Result<f64> {
    let (v1, v2, v4) = three_variances(series, lag, v)?;
    rho_from_variances(v1, v2, v4)
}

/// Estimator for autocorrelated trades with known ρ = e^{-τ/λ}.
pub fn s2_ou(
    series: &LogPriceSeries,
    lag: usize,
    lag_prime: usize,
    v: VarianceScheme,
    rho: f64,
) -> Result<SpreadEstimate> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho must lie in [0,1), got {rho}")));
    }
    check_pair(series.len(), lag, lag_prime, v)?;
    let x = series.values();
    let s2 = s2_ou_from_variances(variance_of(x, lag, v)?, variance_of(x, lag_prime, v)?, lag, lag_prime, rho);
    if !s2.is_finite() {
        return Err(Error::Degenerate("zero denominator for this rho and lag pair".into()));
    }
    Ok(SpreadEstimate::from_squared(s2, "S3").with_diagnostics(Diagnostics {
        rho: Some(rho),
        ..Default::default()
    }))
}

/// Plug-in estimator for autocorrelated trades at (L, 2L, L).
pub fn s2_ou_plugin(series: &LogPriceSeries, lag: usize, v: VarianceScheme) -> Result<SpreadEstimate> {
    let (v1, v2, v4) = three_variances(series, lag, v)?;
    let s2 = s2_ou_plugin_from_variances(v1, v2, v4)?;
    let rho = rho_from_variances(v1, v2, v4).ok();
    Ok(SpreadEstimate::from_squared(s2, "S3-plugin").with_diagnostics(Diagnostics {
        rho,
        ..Default::default()
    }))
}

/// Settings of the four-parameter fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub hurst_nodes: usize,
    pub lambda_nodes: usize,
    pub hurst_bounds: (f64, f64),
    /// λ bounds in years; `None` means [τ/100, 100·n·τ].
    pub lambda_bounds: Option<(f64, f64)>,
    pub polish: bool,
    pub max_iters: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            hurst_nodes: 50,
            lambda_nodes: 50,
            hurst_bounds: (0.01, 0.99),
            lambda_bounds: None,
            polish: true,
            max_iters: 2000,
        }
    }
}

/// Parameters minimising the squared distance to the empirical variance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub s_squared: f64,
    pub sigma_squared: f64,
    pub hurst: f64,
    pub lambda: f64,
    pub objective: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn to_estimate(&self) -> SpreadEstimate {
        SpreadEstimate::from_squared(self.s_squared, "S4").with_diagnostics(Diagnostics {
            hurst: Some(self.hurst),
            rho: None,
            sigma_sq: Some(self.sigma_squared),
            lambda: Some(self.lambda),
        })
    }
}

/// Starts polished by the local search, from each source.
const POLISH_STARTS: usize = 6;

/// Curve in units of the first lag: V_l / scale at l = 1..=L_max.
#[derive(Clone)]
struct CurveFit {
    target: Vec<f64>,
    h_bounds: (f64, f64),
    ln_lam_bounds: (f64, f64),
}

impl CurveFit {
    /// Nonnegative least squares of target on (l^{2H}, 1 - e^{-l/λ}).
    /// Returns (α, β, residual sum of squares).
    fn inner(&self, h: f64, lam: f64) -> (f64, f64, f64) {
        let (mut xx, mut yy, mut xy, mut xv, mut yv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &t) in self.target.iter().enumerate() {
            let l = (i + 1) as f64;
            let x = l.powf(2.0 * h);
            let y = -(-l / lam).exp_m1();
            xx += x * x;
            yy += y * y;
            xy += x * y;
            xv += x * t;
            yv += y * t;
        }
        let rss = |a: f64, b: f64| -> f64 {
            self.target
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let l = (i + 1) as f64;
                    let r = a * l.powf(2.0 * h) - b * (-l / lam).exp_m1() - t;
                    r * r
                })
                .sum()
        };
        let det = xx * yy - xy * xy;
        if det > 1e-14 * xx * yy {
            let a = (yy * xv - xy * yv) / det;
            let b = (xx * yv - xy * xv) / det;
            if a >= 0.0 && b >= 0.0 {
                return (a, b, rss(a, b));
            }
        }
        let a_only = (xv / xx).max(0.0);
        let b_only = if yy > 0.0 { (yv / yy).max(0.0) } else { 0.0 };
        let (ra, rb) = (rss(a_only, 0.0), rss(0.0, b_only));
        if ra <= rb {
            (a_only, 0.0, ra)
        } else {
            (0.0, b_only, rb)
        }
    }

    /// Fit with S² = 0: (α, residual sum of squares).
    fn power_law(&self, h: f64) -> (f64, f64) {
        let (mut xx, mut xv) = (0.0, 0.0);
        for (i, &t) in self.target.iter().enumerate() {
            let x = ((i + 1) as f64).powf(2.0 * h);
            xx += x * x;
            xv += x * t;
        }
        let a = (xv / xx).max(0.0);
        let rss = self
            .target
            .iter()
            .enumerate()
            .map(|(i, &t)| (a * ((i + 1) as f64).powf(2.0 * h) - t).powi(2))
            .sum();
        (a, rss)
    }

    fn clamp(&self, p: &[f64]) -> (f64, f64) {
        let h = p[0].clamp(self.h_bounds.0, self.h_bounds.1);
        let ll = p[1].clamp(self.ln_lam_bounds.0, self.ln_lam_bounds.1);
        (h, ll)
    }
}

/// One-dimensional profile of the objective.
struct Profile<F>(F);

impl<F: Fn(f64) -> f64> CostFunction for Profile<F> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok((self.0)(*x))
    }
}

/// Brent minimisation of `f` on [lo, hi], endpoints included; returns (argmin, min).
fn brent_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> (f64, f64) {
    let (flo, fhi) = (f(lo), f(hi));
    let mut best = if flo <= fhi { (lo, flo) } else { (hi, fhi) };
    let solver = BrentOpt::new(lo, hi).set_tolerance(1e-12, 1e-14);
    if let Ok(res) = Executor::new(Profile(&f), solver).configure(|s| s.max_iters(200)).run() {
        let st = res.state();
        if let Some(&x) = st.get_best_param() {
            let v = f(x);
            if v < best.1 {
                best = (x, v);
            }
        }
    }
    best
}

impl CostFunction for CurveFit {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let (h, ll) = self.clamp(p);
        Ok(self.inner(h, ll.exp()).2)
    }
}

/// Fits (S², σ², H, λ) to variances at lags 1..=L_max (`variances[l-1]`).
///
/// A deterministic grid over (H, ln λ) with a closed-form nonnegative inner
/// solve for (σ², S²/2) is followed by a Nelder-Mead polish. The residual at
/// lag l uses (lτ)^{2H} and 1 - e^{-lτ/λ}.
pub fn full_fit_curve(variances: &[f64], tau_years: f64, n: usize, options: &FitOptions) -> Result<FitResult> {
    if variances.len() < 4 {
        return Err(Error::InvalidInput(format!("full fit needs L_max >= 4, got {}", variances.len())));
    }
    if variances.iter().any(|v| !v.is_finite()) || !(tau_years > 0.0) {
        return Err(Error::InvalidInput("non-finite variance or non-positive tau".into()));
    }
    if options.hurst_nodes < 2 || options.lambda_nodes < 2 {
        return Err(Error::InvalidInput("fit grid needs at least 2 nodes per axis".into()));
    }
    let scale = variances.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(FitResult {
            s_squared: 0.0,
            sigma_squared: 0.0,
            hurst: 0.5,
            lambda: tau_years,
            objective: 0.0,
            converged: true,
        });
    }
    let target: Vec<f64> = variances.iter().map(|v| v / scale).collect();
    let (lam_lo, lam_hi) = options
        .lambda_bounds
        .unwrap_or((tau_years / 100.0, 100.0 * n as f64 * tau_years));
    if !(lam_lo > 0.0 && lam_hi > lam_lo) {
        return Err(Error::InvalidInput("invalid lambda bounds".into()));
    }
    let problem = CurveFit {
        target,
        h_bounds: options.hurst_bounds,
        ln_lam_bounds: ((lam_lo / tau_years).ln(), (lam_hi / tau_years).ln()),
    };

    let (h_lo, h_hi) = options.hurst_bounds;
    let (ll_lo, ll_hi) = problem.ln_lam_bounds;
    let (nh, nl) = (options.hurst_nodes, options.lambda_nodes);
    let dh = (h_hi - h_lo) / (nh - 1) as f64;
    let dl = (ll_hi - ll_lo) / (nl - 1) as f64;
    let node = |i: usize, j: usize| (h_lo + dh * i as f64, ll_lo + dl * j as f64);
    let mut grid = vec![f64::INFINITY; nh * nl];
    for i in 0..nh {
        for j in 0..nl {
            let (h, ll) = node(i, j);
            grid[i * nl + j] = problem.inner(h, ll.exp()).2;
        }
    }
    // Grid local minima, best first. The surface can have several basins
    // (e.g. a linear curve is also matched by H -> 1 with λ -> ∞).
    let mut minima: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..nh {
        for j in 0..nl {
            let r = grid[i * nl + j];
            let lower = (i.saturating_sub(1)..=(i + 1).min(nh - 1)).any(|a| {
                (j.saturating_sub(1)..=(j + 1).min(nl - 1)).any(|b| grid[a * nl + b] < r)
            });
            if !lower && r.is_finite() {
                minima.push((r, i, j));
            }
        }
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    minima.truncate(POLISH_STARTS);
    let Some(&(r0, i0, j0)) = minima.first() else {
        return Err(Error::Fit("non-finite objective on the whole grid".into()));
    };
    let (h0, ll0) = node(i0, j0);
    let mut best = (r0, h0, ll0);

    // Basins narrower than the λ spacing are found by a line search in ln λ
    // around the best node of each H row.
    let mut rows: Vec<(f64, f64, f64)> = (0..nh)
        .map(|i| {
            let j = (0..nl).min_by(|&a, &b| grid[i * nl + a].total_cmp(&grid[i * nl + b])).unwrap_or(0);
            let h = node(i, 0).0;
            let lo = node(i, j.saturating_sub(1)).1;
            let hi = node(i, (j + 1).min(nl - 1)).1;
            let (ll, r) = brent_min(|ll| problem.inner(h, ll.exp()).2, lo, hi);
            (r, h, ll)
        })
        .filter(|c| c.0.is_finite())
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.truncate(POLISH_STARTS);
    for &c in &rows {
        if c.0 < best.0 {
            best = c;
        }
    }
    let starts: Vec<(f64, f64)> =
        minima.iter().map(|&(_, i, j)| node(i, j)).chain(rows.iter().map(|c| (c.1, c.2))).collect();

    let mut converged = true;
    if options.polish {
        let run = |start: (f64, f64), step: (f64, f64)| -> Result<(f64, f64, f64, bool)> {
            let simplex = vec![
                vec![start.0, start.1],
                vec![start.0 + step.0, start.1],
                vec![start.0, start.1 + step.1],
            ];
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-30)
                .map_err(|e| Error::Fit(e.to_string()))?;
            let res = Executor::new(problem.clone(), solver)
                .configure(|s| s.max_iters(options.max_iters))
                .run()
                .map_err(|e| Error::Fit(e.to_string()))?;
            let state = res.state();
            let done = !matches!(
                state.get_termination_status(),
                TerminationStatus::Terminated(TerminationReason::MaxItersReached)
            );
            let (h, ll) = state.get_best_param().map_or(start, |p| problem.clamp(p));
            Ok((problem.inner(h, ll.exp()).2, h, ll, done))
        };
        for &start in &starts {
            let (r1, h1, l1, _) = run(start, (dh, dl))?;
            // A restart with a fresh, smaller simplex.
            let (r2, h2, l2, done) = run((h1, l1), (0.1 * dh, 0.1 * dl))?;
            let cand = if r2 <= r1 { (r2, h2, l2) } else { (r1, h1, l1) };
            if cand.0 <= best.0 {
                best = cand;
                converged = done;
            }
        }
    }

    // Without noise the curve is a pure power law. Near that face a large λ
    // with H -> 1 can mimic it, so the face is fitted on its own.
    let (hf, rf) = brent_min(|h| problem.power_law(h).1, h_lo, h_hi);
    if rf.is_finite() && rf <= best.0 {
        let a = problem.power_law(hf).0;
        return Ok(FitResult {
            s_squared: 0.0,
            sigma_squared: a * scale / tau_years.powf(2.0 * hf),
            hurst: hf,
            lambda: lam_hi,
            objective: rf * scale * scale,
            converged,
        });
    }

    let (_, h, ll) = best;
    let lam_units = ll.exp();
    let (a, b, rss) = problem.inner(h, lam_units);
    if !rss.is_finite() {
        return Err(Error::Fit("non-finite objective".into()));
    }
    Ok(FitResult {
        s_squared: 2.0 * b * scale,
        sigma_squared: a * scale / tau_years.powf(2.0 * h),
        hurst: h,
        lambda: lam_units * tau_years,
        objective: rss * scale * scale,
        converged,
    })
}

/// Four-parameter fit on the empirical variance curve of a series.
pub fn s2_full_fit(
    series: &LogPriceSeries,
    l_max: usize,
    v: VarianceScheme,
    options: &FitOptions,
) -> Result<FitResult> {
    if l_max < 4 {
        return Err(Error::InvalidInput(format!("L_max must be at least 4, got {l_max}")));
    }
    increment_count(series.len(), l_max, v)?;
    let curve = variance_curve(series.values(), l_max, v)?;
    full_fit_curve(&curve, series.tau_years(), series.len(), options)
}
