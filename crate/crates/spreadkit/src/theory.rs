//! Closed-form moments and asymptotics of the variance-based spread estimators.
//!
//! All quantities are in log-price units with time in years. `u` denotes an
//! increment duration and `delta` the overlap of two increments of duration
//! `u`: the second increment is `[u - delta, 2u - delta]`, so `delta = u` is
//! the same increment, `delta = 0` two adjacent increments sharing a bound and
//! `delta < 0` strictly disjoint increments.
//!
//! `K(u, delta)` is the raw moment `E[(p_u - p_0)^2 (p_{2u-delta} - p_{u-delta})^2]`;
//! the covariance of the two squared increments is `K - V(u)^2`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::spreads;
use crate::varest::{increment_count, VarianceScheme};
use crate::{Error, Result};

/// Generative market model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Brownian mid price, independent trade signs.
    Iid,
    /// Fractional Brownian mid price, independent trade signs.
    FbmPrice,
    /// Brownian mid price, exponentially autocorrelated trade signs.
    OuTrades,
    /// Fractional Brownian mid price and autocorrelated trade signs.
    Full,
}

impl ModelKind {
    /// Model number 1 to 4 as used on the command line.
    pub fn number(self) -> u8 {
        match self {
            ModelKind::Iid => 1,
            ModelKind::FbmPrice => 2,
            ModelKind::OuTrades => 3,
            ModelKind::Full => 4,
        }
    }

    pub fn from_number(m: u8) -> Result<Self> {
        match m {
            1 => Ok(ModelKind::Iid),
            2 => Ok(ModelKind::FbmPrice),
            3 => Ok(ModelKind::OuTrades),
            4 => Ok(ModelKind::Full),
            _ => Err(Error::InvalidInput(format!("model must be 1..=4, got {m}"))),
        }
    }

    fn has_fbm(self) -> bool {
        matches!(self, ModelKind::FbmPrice | ModelKind::Full)
    }

    fn has_correlated_trades(self) -> bool {
        matches!(self, ModelKind::OuTrades | ModelKind::Full)
    }
}

/// Parameters of a market model.
///
/// `sigma` is annualised, `tau_years` is the observation step. `lambda_years`
/// is the decay time of the trade-sign autocorrelation, so `ρ = e^{-τ/λ}`.
/// `theta_per_second` is the mean reversion of the hidden OU process used by
/// the binarized simulator; the closed forms use `lambda_years` only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub s: f64,
    pub sigma: f64,
    pub hurst: f64,
    pub lambda_years: Option<f64>,
    pub theta_per_second: Option<f64>,
    pub tau_years: f64,
}

impl ModelSpec {
    pub fn iid(s: f64, sigma: f64, tau_years: f64) -> Self {
        Self {
            kind: ModelKind::Iid,
            s,
            sigma,
            hurst: 0.5,
            lambda_years: None,
            theta_per_second: None,
            tau_years,
        }
    }

    pub fn fbm(s: f64, sigma: f64, hurst: f64, tau_years: f64) -> Self {
        Self { kind: ModelKind::FbmPrice, hurst, ..Self::iid(s, sigma, tau_years) }
    }

    pub fn ou(s: f64, sigma: f64, lambda_years: f64, tau_years: f64) -> Self {
        Self {
            kind: ModelKind::OuTrades,
            lambda_years: Some(lambda_years),
            ..Self::iid(s, sigma, tau_years)
        }
    }

    pub fn full(s: f64, sigma: f64, hurst: f64, lambda_years: f64, tau_years: f64) -> Self {
        Self {
            kind: ModelKind::Full,
            hurst,
            lambda_years: Some(lambda_years),
            ..Self::iid(s, sigma, tau_years)
        }
    }

    pub fn with_theta(mut self, theta_per_second: f64) -> Self {
        self.theta_per_second = Some(theta_per_second);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return bad(format!("spread must be nonnegative, got {}", self.s));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if !(self.tau_years > 0.0 && self.tau_years.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau_years));
        }
        if self.kind.has_fbm() && !(self.hurst > 0.0 && self.hurst < 1.0) {
            return bad(format!("hurst must lie in (0,1), got {}", self.hurst));
        }
        if self.kind.has_correlated_trades() {
            match (self.lambda_years, self.theta_per_second) {
                (Some(l), _) if l > 0.0 => {}
                (None, Some(t)) if t > 0.0 => {}
                _ => return bad("correlated-trade models need lambda > 0 or theta > 0".into()),
            }
        }
        Ok(())
    }

    /// Hurst exponent actually used by the mid price (1/2 for Brownian kinds).
    pub fn effective_hurst(&self) -> f64 {
        if self.kind.has_fbm() {
            self.hurst
        } else {
            0.5
        }
    }

    /// Trade-sign decay time, if the model has correlated trades.
    pub fn lambda(&self) -> Option<f64> {
        if self.kind.has_correlated_trades() {
            self.lambda_years
        } else {
            None
        }
    }

    /// Lag-one trade-sign correlation ρ = e^{-τ/λ} (0 without correlation).
    pub fn rho(&self) -> f64 {
        self.lambda().map_or(0.0, |l| (-self.tau_years / l).exp())
    }

    /// Annualised sigma such that the mid-price variance over `day_years`
    /// equals `daily_sd^2`.
    pub fn sigma_for_daily_sd(daily_sd: f64, day_years: f64, hurst: f64) -> f64 {
        daily_sd / day_years.powf(hurst)
    }

    fn noise_factor(&self, u: f64) -> f64 {
        match self.lambda() {
            Some(l) => -(-u / l).exp_m1(),
            None => 1.0,
        }
    }

    /// Mid-price increment variance σ² u^{2H}.
    fn mid_variance(&self, u: f64) -> f64 {
        self.sigma * self.sigma * u.powf(2.0 * self.effective_hurst())
    }

    /// V(u) = σ² u^{2H} + (S²/2)(1 - e^{-u/λ}).
    pub fn variance_at(&self, u: f64) -> f64 {
        self.mid_variance(u) + 0.5 * self.s * self.s * self.noise_factor(u)
    }
}

/// Theoretical variance V(Lτ) of the observed log-price increment.
pub fn theoretical_variance(model: &ModelSpec, lag: usize) -> f64 {
    model.variance_at(lag as f64 * model.tau_years)
}

/// Increment correlation kernel of fractional Gaussian noise over blocks:
/// c(x) = ½(|2-x|^{2H} - 2|1-x|^{2H} + |x|^{2H}).
pub fn c_function(x: f64, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * ((2.0 - x).abs().powf(h2) - 2.0 * (1.0 - x).abs().powf(h2) + x.abs().powf(h2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Overlap {
    Disjoint,
    Adjacent,
    Partial,
    Same,
}

fn classify(u: f64, delta: f64) -> Result<Overlap> {
    if !(u > 0.0) || delta > u || !delta.is_finite() {
        return Err(Error::InvalidInput(format!("need u > 0 and delta <= u, got u={u}, delta={delta}")));
    }
    Ok(if delta == u {
        Overlap::Same
    } else if delta == 0.0 {
        Overlap::Adjacent
    } else if delta < 0.0 {
        Overlap::Disjoint
    } else {
        Overlap::Partial
    })
}

/// K(u, δ) - V(u)² for an already classified overlap.
fn excess_moment(model: &ModelSpec, u: f64, delta: f64, case: Overlap) -> Result<f64> {
    let s2 = model.s * model.s;
    let s4 = s2 * s2;
    let sig2 = model.sigma * model.sigma;
    let sig4 = sig2 * sig2;
    match model.kind {
        ModelKind::Iid => Ok(match case {
            Overlap::Disjoint | Overlap::Adjacent => 0.0,
            Overlap::Partial => 2.0 * sig4 * delta * delta,
            Overlap::Same => 2.0 * sig4 * u * u + 2.0 * sig2 * u * s2 + s4 / 4.0,
        }),
        ModelKind::FbmPrice => {
            let h = model.hurst;
            let u2h = u.powf(2.0 * h);
            let u4h = u2h * u2h;
            Ok(match case {
                Overlap::Disjoint | Overlap::Partial => {
                    let c = c_function(delta / u, h);
                    2.0 * c * c * u4h * sig4
                }
                Overlap::Adjacent => {
                    let c0 = c_function(0.0, h);
                    2.0 * c0 * c0 * u4h * sig4 - c0 * u2h * sig2 * s2
                }
                Overlap::Same => 2.0 * u4h * sig4 + 2.0 * u2h * sig2 * s2 + s4 / 4.0,
            })
        }
        ModelKind::OuTrades => {
            let l = model
                .lambda()
                .ok_or_else(|| Error::InvalidInput("OuTrades model needs lambda".into()))?;
            Ok(match case {
                Overlap::Disjoint => 0.0,
                _ => {
                    2.0 * delta * delta * sig4
                        + s4 / 4.0 * ((-2.0 * (u - delta) / l).exp() - (-2.0 * u / l).exp())
                        + delta
                            * sig2
                            * s2
                            * (2.0 * (-(u - delta) / l).exp()
                                - (-delta / l).exp()
                                - (-(2.0 * u - delta) / l).exp())
                }
            })
        }
        ModelKind::Full => Err(Error::Unsupported(
            "closed form of K(u, delta) not available for the full model".into(),
        )),
    }
}

/// K(u, δ), the second cross moment of two squared increments.
pub fn cov_squared_increments(model: &ModelSpec, u: f64, delta: f64) -> Result<f64> {
    let case = classify(u, delta)?;
    let v = model.variance_at(u);
    Ok(v * v + excess_moment(model, u, delta, case)?)
}

/// Covariance of two squared increments of `lag` steps whose starts are
/// `offset` steps apart. Integer offsets select the overlap case exactly.
pub fn squared_increment_covariance(model: &ModelSpec, lag: usize, offset: usize) -> Result<f64> {
    let u = lag as f64 * model.tau_years;
    let delta = (lag as f64 - offset as f64) * model.tau_years;
    let case = if offset == 0 {
        Overlap::Same
    } else if offset == lag {
        Overlap::Adjacent
    } else if offset > lag {
        Overlap::Disjoint
    } else {
        Overlap::Partial
    };
    excess_moment(model, u, delta, case)
}

/// Asymptotic variance constant σ²_{m,v}(L), so that Var[V̂_v(n,L)] ≈ σ²/k_v.
///
/// Under the fBm model the S² cross coefficient is `4 - 2^{2H}`, the value
/// obtained from K(u, δ) for increments sharing one bound; it reduces to the
/// Brownian coefficient 2 at H = 1/2. The long-memory sums of c(·)² are not
/// part of this constant: for v ∈ {2, 3} they are returned by [`xi_remainder`],
/// and [`exact_var_of_variance`] gives the finite-sample variance for any v.
pub fn var_of_variance(model: &ModelSpec, lag: usize, v: VarianceScheme) -> Result<f64> {
    if lag == 0 {
        return Err(Error::InvalidInput("lag must be at least 1".into()));
    }
    let l = lag as f64;
    let tau = model.tau_years;
    let u = l * tau;
    let s2 = model.s * model.s;
    let s4 = s2 * s2;
    let sig2 = model.sigma * model.sigma;
    let sig4 = sig2 * sig2;
    match model.kind {
        ModelKind::Iid => Ok(match v {
            VarianceScheme::Overlapping => {
                2.0 / 3.0 * sig4 * l * (1.0 + 2.0 * l * l) * tau * tau + 2.0 * sig2 * u * s2 + s4 / 4.0
            }
            _ => 2.0 * sig4 * u * u + 2.0 * sig2 * u * s2 + s4 / 4.0,
        }),
        ModelKind::FbmPrice => {
            let h = model.hurst;
            let u2h = u.powf(2.0 * h);
            let lead = 2.0 * u2h * u2h * sig4 + s4 / 4.0;
            match v {
                VarianceScheme::Overlapping if h >= 0.75 => Err(Error::Unsupported(
                    "overlapping variance under fBm requires H < 3/4".into(),
                )),
                VarianceScheme::Overlapping | VarianceScheme::NonOverlapping => {
                    Ok(lead + (4.0 - 2f64.powf(2.0 * h)) * u2h * sig2 * s2)
                }
                VarianceScheme::StrictlyDisjoint => Ok(lead + 2.0 * u2h * sig2 * s2),
            }
        }
        ModelKind::OuTrades => {
            let lam = model
                .lambda()
                .ok_or_else(|| Error::InvalidInput("OuTrades model needs lambda".into()))?;
            let base = 2.0 * u * u * sig4
                + s4 / 4.0 * (-(-2.0 * u / lam).exp_m1())
                + 2.0 * u * sig2 * s2 * (-(-u / lam).exp_m1());
            match v {
                VarianceScheme::Overlapping => {
                    // Partial-overlap terms, written as decaying exponentials so
                    // that small λ cannot overflow.
                    let mut noise = 0.0;
                    let mut cross = 0.0;
                    for m in 1..lag {
                        let mf = m as f64;
                        noise += (-2.0 * (l - mf) * tau / lam).exp() - (-2.0 * u / lam).exp();
                        cross += mf
                            * (2.0 * (-(l - mf) * tau / lam).exp()
                                - (-mf * tau / lam).exp()
                                - (-(2.0 * l - mf) * tau / lam).exp());
                    }
                    Ok(base
                        + 2.0 / 3.0 * tau * tau * sig4 * (l - 1.0) * l * (2.0 * l - 1.0)
                        + s4 / 2.0 * noise
                        + 2.0 * tau * sig2 * s2 * cross)
                }
                _ => Ok(base),
            }
        }
        ModelKind::Full => Err(Error::Unsupported(
            "variance of the empirical variance not available for the full model".into(),
        )),
    }
}

/// Long-memory remainder ξ_v(L, k) of the fBm model for v ∈ {2, 3}.
pub fn xi_remainder(model: &ModelSpec, lag: usize, v: VarianceScheme, k: usize) -> Result<f64> {
    if model.kind != ModelKind::FbmPrice {
        return Err(Error::Unsupported("xi remainder is defined for the fBm model only".into()));
    }
    if k < 2 {
        return Err(Error::InvalidInput("xi remainder needs k >= 2".into()));
    }
    let h = model.hurst;
    let l = lag as f64;
    let u4h = (l * model.tau_years).powf(4.0 * h);
    let sig4 = model.sigma.powi(4);
    let kf = k as f64;
    let sum: f64 = (0..=k - 2)
        .map(|i| {
            let fi = i as f64;
            let x = match v {
                VarianceScheme::NonOverlapping => -fi,
                VarianceScheme::StrictlyDisjoint => -fi - (fi + 1.0) / l,
                VarianceScheme::Overlapping => return f64::NAN,
            };
            let c = c_function(x, h);
            c * c * (kf - 1.0 - fi)
        })
        .sum();
    if sum.is_nan() {
        return Err(Error::Unsupported("xi remainder is defined for v = 2 or 3".into()));
    }
    Ok(4.0 * u4h * sig4 / (kf * kf) * sum)
}

/// Exact finite-sample Var[V̂_v(n, L)] from the double sum of squared-increment
/// covariances.
pub fn exact_var_of_variance(
    model: &ModelSpec,
    n: usize,
    lag: usize,
    v: VarianceScheme,
) -> Result<f64> {
    let k = increment_count(n, lag, v)?;
    let stride = match v {
        VarianceScheme::Overlapping => 1,
        VarianceScheme::NonOverlapping => lag,
        VarianceScheme::StrictlyDisjoint => lag + 1,
    };
    let mut total = k as f64 * squared_increment_covariance(model, lag, 0)?;
    for d in 1..k {
        let c = squared_increment_covariance(model, lag, d * stride)?;
        total += 2.0 * (k - d) as f64 * c;
    }
    Ok(total / (k as f64 * k as f64))
}

/// Where the limit correlations of an asymptotic variance come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationSource {
    ClosedForm,
    Simulated,
    Supplied,
}

/// An asymptotic variance with its labelled components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticVariance {
    pub value: f64,
    pub components: BTreeMap<String, f64>,
    pub correlation_source: CorrelationSource,
}

/// Γ(L, L') for the Brownian model with strictly disjoint increments.
pub fn gamma_closed_form(model: &ModelSpec, lag: usize, lag_prime: usize) -> Result<AsymptoticVariance> {
    if model.kind != ModelKind::Iid {
        return Err(Error::Unsupported("closed-form gamma is defined for the Iid model".into()));
    }
    if lag == lag_prime || lag == 0 || lag_prime == 0 {
        return Err(Error::InvalidInput("need distinct positive lags".into()));
    }
    let (l, lp) = (lag as f64, lag_prime as f64);
    let tau = model.tau_years;
    let s2 = model.s * model.s;
    let excess = |x: f64| -> Result<f64> {
        Ok(cov_squared_increments(model, x * tau, x * tau)? - model.variance_at(x * tau).powi(2))
    };
    let own_l = lp * (lp * (l + 1.0) / (lp + 1.0) - 2.0 * l) * excess(l)?;
    let own_lp = l * l * excess(lp)?;
    let cross = -2.0
        * lp
        * l
        * (-2.0 * (lp - l) / (lp + 1.0) * s2 * model.variance_at(l * tau)
            + (3.0 * lp - 4.0 * l - 1.0) / (lp + 1.0) * s2 * s2 / 4.0);
    let pre = 4.0 * (lp + 1.0) / ((lp - l) * (lp - l));
    let mut components = BTreeMap::new();
    components.insert("own_L".to_string(), pre * own_l);
    components.insert("own_L_prime".to_string(), pre * own_lp);
    components.insert("cross".to_string(), pre * cross);
    Ok(AsymptoticVariance {
        value: pre * (own_l + own_lp + cross),
        components,
        correlation_source: CorrelationSource::ClosedForm,
    })
}

/// γ_{1,3}(L, m(L+1)-1) = Γ(L, m(L+1)-1) for m ≥ 2.
pub fn gamma_standard_special(lag: usize, m: usize, model: &ModelSpec) -> Result<AsymptoticVariance> {
    if m < 2 {
        return Err(Error::InvalidInput("multiplier m must be at least 2".into()));
    }
    gamma_closed_form(model, lag, m * (lag + 1) - 1)
}

/// Weights `(a, b, d)` such that the estimator is `2(a V̂(L) - b V̂(L')) / d`.
fn estimator_weights(model: &ModelSpec, lag: usize, lag_prime: usize) -> (f64, f64, f64) {
    let (l, lp) = (lag as f64, lag_prime as f64);
    match model.kind {
        ModelKind::FbmPrice => {
            let h2 = 2.0 * model.hurst;
            let (a, b) = (lp.powf(h2), l.powf(h2));
            (a, b, a - b)
        }
        ModelKind::OuTrades => {
            let rho = model.rho();
            (lp, l, lp * (1.0 - rho.powi(lag as i32)) - l * (1.0 - rho.powi(lag_prime as i32)))
        }
        _ => (lp, l, lp - l),
    }
}

/// γ_{m,v}(L, L') for a known nuisance parameter, given the limit correlation
/// `r` of V̂_v(n, L) and V̂_v(n, L').
pub fn gamma_two_lag(
    model: &ModelSpec,
    v: VarianceScheme,
    lag: usize,
    lag_prime: usize,
    r: f64,
    source: CorrelationSource,
) -> Result<AsymptoticVariance> {
    let (a, b, d) = estimator_weights(model, lag, lag_prime);
    let s_l = var_of_variance(model, lag, v)?;
    let s_lp = var_of_variance(model, lag_prime, v)?;
    let (z_l, z_lp) = (v.zeta(lag), v.zeta(lag_prime));
    let t1 = a * a * z_l * s_l;
    let t2 = b * b * z_lp * s_lp;
    let t3 = -2.0 * a * b * (z_l * z_lp).sqrt() * s_l.sqrt() * s_lp.sqrt() * r;
    let pre = 4.0 / (d * d);
    let mut components = BTreeMap::new();
    components.insert("own_L".to_string(), pre * t1);
    components.insert("own_L_prime".to_string(), pre * t2);
    components.insert("cross".to_string(), pre * t3);
    components.insert("r".to_string(), r);
    Ok(AsymptoticVariance { value: pre * (t1 + t2 + t3), components, correlation_source: source })
}

fn sigma_matrix(
    model: &ModelSpec,
    v: VarianceScheme,
    lags: [usize; 3],
    r: &[[f64; 3]; 3],
) -> Result<[[f64; 3]; 3]> {
    let mut sd = [0.0; 3];
    for (i, &l) in lags.iter().enumerate() {
        sd[i] = (v.zeta(l) * var_of_variance(model, l, v)?).sqrt();
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = sd[i] * sd[j] * r[i][j];
        }
    }
    Ok(out)
}

fn quad_form(w: &[f64; 3], m: &[[f64; 3]; 3]) -> f64 {
    (0..3).map(|i| (0..3).map(|j| w[i] * m[i][j] * w[j]).sum::<f64>()).sum()
}

/// Asymptotic variance of the fBm plug-in estimator at (L, L', L'') = (1, 2, 1):
/// `4 / (V(4τ) - 2V(2τ) + V(τ))^4 · WᵀΣW`.
///
/// The limit theorem is stated for H ≤ 1/2; other values are evaluated and
/// flagged with the `outside_stated_validity` component.
pub fn fbm_plugin_asymptotic(
    model: &ModelSpec,
    v: VarianceScheme,
    r: &[[f64; 3]; 3],
    source: CorrelationSource,
) -> Result<AsymptoticVariance> {
    let (v1, v2, v4) = (
        theoretical_variance(model, 1),
        theoretical_variance(model, 2),
        theoretical_variance(model, 4),
    );
    let w = fbm_plugin_w(v1, v2, v4);
    let sigma = sigma_matrix(model, v, [1, 2, 4], r)?;
    let d = v4 - 2.0 * v2 + v1;
    let value = 4.0 / d.powi(4) * quad_form(&w, &sigma);
    let mut components = BTreeMap::new();
    for (i, wi) in w.iter().enumerate() {
        components.insert(format!("W{}", i + 1), *wi);
    }
    if model.effective_hurst() > 0.5 {
        components.insert("outside_stated_validity".to_string(), 1.0);
    }
    Ok(AsymptoticVariance { value, components, correlation_source: source })
}

/// The vector W of the fBm plug-in limit.
pub fn fbm_plugin_w(v1: f64, v2: f64, v4: f64) -> [f64; 3] {
    [
        (v4 - v2).powi(2),
        2.0 * v2 * (v2 - v4 - v1) + 2.0 * v4 * v1,
        (v1 - v2).powi(2),
    ]
}

/// h(x, y, z) = 2(2x-y)² / (2√(2x-y) - √(2y-z))².
pub fn ou_plugin_h(x: f64, y: f64, z: f64) -> f64 {
    let a = 2.0 * x - y;
    let b = 2.0 * y - z;
    2.0 * a * a / (2.0 * a.sqrt() - b.sqrt()).powi(2)
}

/// Gradient of [`ou_plugin_h`].
pub fn ou_plugin_gradient(x: f64, y: f64, z: f64) -> [f64; 3] {
    let a = 2.0 * x - y;
    let b = 2.0 * y - z;
    let d = 2.0 * a.sqrt() - b.sqrt();
    let da = 4.0 * a / (d * d) - 4.0 * a.powf(1.5) / d.powi(3);
    let db = 2.0 * a * a / (d.powi(3) * b.sqrt());
    [2.0 * da, -da + 2.0 * db, -db]
}

/// Asymptotic variance WᵀΣW of the OU plug-in estimator at (L, 2L, L).
pub fn ou_plugin_asymptotic(
    model: &ModelSpec,
    v: VarianceScheme,
    lag: usize,
    r: &[[f64; 3]; 3],
    source: CorrelationSource,
) -> Result<AsymptoticVariance> {
    let vv = |k: usize| theoretical_variance(model, k * lag);
    let w = ou_plugin_gradient(vv(1), vv(2), vv(4));
    let sigma = sigma_matrix(model, v, [lag, 2 * lag, 4 * lag], r)?;
    let mut components = BTreeMap::new();
    for (i, wi) in w.iter().enumerate() {
        components.insert(format!("W{}", i + 1), *wi);
    }
    Ok(AsymptoticVariance { value: quad_form(&w, &sigma), components, correlation_source: source })
}

/// Autocorrelation of the sign of a stationary OU process at a lag.
pub fn ou_sign_correlation(theta_per_second: f64, lag_seconds: f64) -> f64 {
    let e = (2.0 * theta_per_second * lag_seconds).exp_m1();
    2.0 / PI * (1.0 / e.sqrt()).atan()
}

/// Pairwise correlations of four ±1 variables, `rIJ = corr(Y_I, Y_J)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelations {
    pub r21: f64,
    pub r31: f64,
    pub r41: f64,
    pub r32: f64,
    pub r42: f64,
    pub r43: f64,
}

impl PairCorrelations {
    /// Correlations of a Markov chain from its three consecutive links.
    pub fn from_chain(r21: f64, r32: f64, r43: f64) -> Self {
        Self { r21, r31: r32 * r21, r41: r43 * r32 * r21, r32, r42: r43 * r32, r43 }
    }

    pub fn zero() -> Self {
        Self::from_chain(0.0, 0.0, 0.0)
    }
}

/// Which pairing the cokurtosis refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CokurtosisVariant {
    /// E[(G_a + Y2 - Y1)² (G_b + Y4 - Y3)²]
    Minus,
    /// E[(G_a + Y3 - Y1)² (G_b + Y4 - Y2)²]
    Plus,
}

/// Cokurtosis of Gaussian-plus-sign-difference variables.
pub fn cokurtosis(
    rho_g: f64,
    sigma_g_sq: f64,
    r: &PairCorrelations,
    variant: CokurtosisVariant,
) -> f64 {
    let g4 = (1.0 + 2.0 * rho_g * rho_g) * sigma_g_sq * sigma_g_sq;
    match variant {
        CokurtosisVariant::Minus => {
            g4 + 2.0 * sigma_g_sq * (2.0 - r.r43 - r.r21)
                + 4.0 * (1.0 - r.r21) * (1.0 - r.r43)
                + 4.0 * rho_g * sigma_g_sq * (r.r31 - r.r41 - r.r32 + r.r42)
        }
        CokurtosisVariant::Plus => {
            g4 + 2.0 * sigma_g_sq * (2.0 - r.r42 - r.r31)
                + 4.0 * (1.0 - r.r42 - r.r31 + r.r43 * r.r21)
                + 4.0 * rho_g * sigma_g_sq * (r.r43 - r.r32 - r.r41 + r.r21)
        }
    }
}

/// Direct sum f_L(x) = Σ_{m=1}^{L-1} e^{xm}.
pub fn f_l(x: f64, lag: usize) -> f64 {
    (1..lag).map(|m| (x * m as f64).exp()).sum()
}

/// Direct sum f_L'(x) = Σ_{m=1}^{L-1} m e^{xm}.
pub fn f_l_prime(x: f64, lag: usize) -> f64 {
    (1..lag).map(|m| m as f64 * (x * m as f64).exp()).sum()
}

/// Quotient form (e^x - e^{xL}) / (1 - e^x) of f_L, singular at x = 0.
pub fn f_l_quotient(x: f64, lag: usize) -> f64 {
    (x.exp() - (x * lag as f64).exp()) / (1.0 - x.exp())
}

/// What an impulse response is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImpulseMode {
    Hurst,
    SpreadKnownH,
    SpreadPlugin,
}

/// Response of Ĥ_L or of the fBm spread estimator at (L, 2L) to an impulse
/// `x` in one observed log price, starting from theoretical variances.
pub fn impulse_response(
    model: &ModelSpec,
    n: usize,
    lag: usize,
    v: VarianceScheme,
    x: f64,
    mode: ImpulseMode,
) -> Result<f64> {
    let bump = |k: usize| -> Result<f64> {
        let l = k * lag;
        Ok(theoretical_variance(model, l) + 2.0 * x * x / increment_count(n, l, v)? as f64)
    };
    let (v1, v2, v4) = (bump(1)?, bump(2)?, bump(4)?);
    let (l, lp) = (lag, 2 * lag);
    match mode {
        ImpulseMode::Hurst => spreads::hurst_from_variances(v1, v2, v4),
        ImpulseMode::SpreadKnownH => {
            Ok(spreads::s2_fbm_from_variances(v1, v2, l, lp, model.effective_hurst()))
        }
        ImpulseMode::SpreadPlugin => {
            let h = spreads::hurst_from_variances(v1, v2, v4)?;
            Ok(spreads::s2_fbm_from_variances(v1, v2, l, lp, h))
        }
    }
}
