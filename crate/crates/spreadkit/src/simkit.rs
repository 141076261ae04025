//! Simulators for the generative market models.
//!
//! A day is simulated on a fine grid (one second by default), observed
//! prices are `p = p* + (S/2)·sign`, and bars are built by aggregating
//! `bar_factor` fine points. Each trial draws independent sub-streams for the
//! mid price, the trade signs and the thinning from a ChaCha stream selected
//! by the trial index, so runs are reproducible whatever the thread count.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::series::{aggregate_bars, LogPriceSeries, OhlcSeries, DEFAULT_ANNUALIZATION};
use crate::theory::{ModelKind, ModelSpec};
use crate::{Error, Result};

/// Generator of trade signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    IidSigns,
    BinarizedOu,
    RademacherChain,
}

/// One simulation setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Model parameters; `model.tau_years` is the bar duration.
    pub model: ModelSpec,
    pub n_fine: usize,
    pub bar_factor: usize,
    pub seed: u64,
    pub liquidity_prob: f64,
    pub noise_kind: NoiseKind,
    pub annualization: f64,
}

impl SimConfig {
    /// 28,800 one-second steps aggregated into one-minute bars, with the
    /// sign generator implied by the model kind.
    pub fn new(model: ModelSpec, seed: u64) -> Self {
        let noise_kind = match model.kind {
            ModelKind::Iid | ModelKind::FbmPrice => NoiseKind::IidSigns,
            _ if model.theta_per_second.is_some() => NoiseKind::BinarizedOu,
            _ => NoiseKind::RademacherChain,
        };
        Self {
            model,
            n_fine: 28_800,
            bar_factor: 60,
            seed,
            liquidity_prob: 1.0,
            noise_kind,
            annualization: DEFAULT_ANNUALIZATION,
        }
    }

    pub fn fine_tau_years(&self) -> f64 {
        self.model.tau_years / self.bar_factor as f64
    }

    pub fn fine_step_seconds(&self) -> f64 {
        self.fine_tau_years() * self.annualization
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.bar_factor < 1 || self.n_fine < self.bar_factor || self.n_fine < 2 {
            return Err(Error::InvalidInput(format!(
                "need n_fine >= bar_factor >= 1, got n_fine={}, bar_factor={}",
                self.n_fine, self.bar_factor
            )));
        }
        if !(self.liquidity_prob > 0.0 && self.liquidity_prob <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "liquidity probability must lie in (0,1], got {}",
                self.liquidity_prob
            )));
        }
        match self.noise_kind {
            NoiseKind::BinarizedOu if !self.model.theta_per_second.is_some_and(|t| t > 0.0) => {
                Err(Error::InvalidInput("binarized OU signs need theta > 0".into()))
            }
            NoiseKind::RademacherChain if !self.model.lambda_years.is_some_and(|l| l > 0.0) => {
                Err(Error::InvalidInput("chain signs need lambda > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A simulated fine-grid day.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub fine_log_prices: Vec<f64>,
    pub fine_mid: Vec<f64>,
    pub fine_signs: Vec<f64>,
}

/// Brownian path starting at 0 with step variance σ²τ.
pub fn gen_brownian_with<R: Rng + ?Sized>(n: usize, sigma: f64, tau: f64, rng: &mut R) -> Vec<f64> {
    let sd = sigma * tau.sqrt();
    let mut out = Vec::with_capacity(n);
    let mut x = 0.0;
    for i in 0..n {
        if i > 0 {
            let z: f64 = rng.sample(StandardNormal);
            x += sd * z;
        }
        out.push(x);
    }
    out
}

pub fn gen_brownian(n: usize, sigma: f64, tau: f64, seed: u64) -> Vec<f64> {
    gen_brownian_with(n, sigma, tau, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Autocovariance of unit-step fractional Gaussian noise.
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Sampling method of [`FbmGenerator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FbmMethod {
    CirculantEmbedding,
    DurbinLevinson,
}

enum FbmPlan {
    Circulant { fft: Arc<dyn Fft<f64>>, sqrt_eig: Vec<f64> },
    Levinson { phis: Vec<Vec<f64>>, vars: Vec<f64> },
}

/// Exact fBm sampler for a fixed length and Hurst exponent. The FFT plan and
/// spectrum are computed once and reused across samples.
pub struct FbmGenerator {
    n: usize,
    hurst: f64,
    plan: FbmPlan,
}

impl FbmGenerator {
    /// Circulant embedding, falling back to Durbin-Levinson when the
    /// embedding has a negative eigenvalue.
    pub fn new(n: usize, hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::InvalidInput(format!("hurst must lie in (0,1), got {hurst}")));
        }
        if n < 2 {
            return Err(Error::TooShort { needed: 2, got: n });
        }
        match Self::circulant(n, hurst) {
            Some(plan) => Ok(Self { n, hurst, plan }),
            None => Self::with_method(n, hurst, FbmMethod::DurbinLevinson),
        }
    }

    pub fn with_method(n: usize, hurst: f64, method: FbmMethod) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::InvalidInput(format!("hurst must lie in (0,1), got {hurst}")));
        }
        if n < 2 {
            return Err(Error::TooShort { needed: 2, got: n });
        }
        let plan = match method {
            FbmMethod::CirculantEmbedding => Self::circulant(n, hurst).ok_or_else(|| {
                Error::Degenerate("circulant embedding has negative eigenvalues".into())
            })?,
            FbmMethod::DurbinLevinson => Self::levinson(n - 1, hurst),
        };
        Ok(Self { n, hurst, plan })
    }

    pub fn method(&self) -> FbmMethod {
        match self.plan {
            FbmPlan::Circulant { .. } => FbmMethod::CirculantEmbedding,
            FbmPlan::Levinson { .. } => FbmMethod::DurbinLevinson,
        }
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    fn circulant(n: usize, hurst: f64) -> Option<FbmPlan> {
        let m_inc = n - 1;
        let m = 2 * m_inc;
        let mut row: Vec<Complex<f64>> = (0..m)
            .map(|j| {
                let k = if j <= m_inc { j } else { m - j };
                Complex::new(fgn_autocovariance(k, hurst), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);
        let mut sqrt_eig = Vec::with_capacity(m);
        let tol = 1e-10 * row[0].re.abs().max(1.0);
        for c in &row {
            if c.re < -tol {
                return None;
            }
            sqrt_eig.push((c.re.max(0.0) / m as f64).sqrt());
        }
        Some(FbmPlan::Circulant { fft, sqrt_eig })
    }

    fn levinson(n_inc: usize, hurst: f64) -> FbmPlan {
        let gamma: Vec<f64> = (0..=n_inc).map(|k| fgn_autocovariance(k, hurst)).collect();
        let mut phis: Vec<Vec<f64>> = vec![Vec::new()];
        let mut vars = vec![gamma[0]];
        for t in 1..n_inc {
            let prev = &phis[t - 1];
            let num = gamma[t] - (0..t - 1).map(|j| prev[j] * gamma[t - 1 - j]).sum::<f64>();
            let kappa = num / vars[t - 1];
            let mut next = Vec::with_capacity(t);
            for j in 0..t - 1 {
                next.push(prev[j] - kappa * prev[t - 2 - j]);
            }
            next.push(kappa);
            vars.push(vars[t - 1] * (1.0 - kappa * kappa));
            phis.push(next);
        }
        FbmPlan::Levinson { phis, vars }
    }

    /// Unit-step fractional Gaussian noise of length `n - 1`.
    fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n_inc = self.n - 1;
        match &self.plan {
            FbmPlan::Circulant { fft, sqrt_eig } => {
                let mut w: Vec<Complex<f64>> = sqrt_eig
                    .iter()
                    .map(|s| {
                        let a: f64 = rng.sample(StandardNormal);
                        let b: f64 = rng.sample(StandardNormal);
                        Complex::new(s * a, s * b)
                    })
                    .collect();
                fft.process(&mut w);
                w[..n_inc].iter().map(|c| c.re).collect()
            }
            FbmPlan::Levinson { phis, vars } => {
                let mut x = Vec::with_capacity(n_inc);
                for t in 0..n_inc {
                    // phis[t][j] weights x[t-1-j].
                    let mean: f64 = phis[t].iter().enumerate().map(|(j, p)| p * x[t - 1 - j]).sum();
                    let z: f64 = rng.sample(StandardNormal);
                    x.push(mean + vars[t].sqrt() * z);
                }
                x
            }
        }
    }

    /// fBm path of length `n` starting at 0 with Var(B_{kτ}) = σ²(kτ)^{2H}.
    pub fn sample<R: Rng + ?Sized>(&self, sigma: f64, tau: f64, rng: &mut R) -> Vec<f64> {
        let scale = sigma * tau.powf(self.hurst);
        let noise = self.sample_noise(rng);
        let mut out = Vec::with_capacity(self.n);
        let mut x = 0.0;
        out.push(x);
        for z in noise {
            x += scale * z;
            out.push(x);
        }
        out
    }
}

pub fn gen_fbm(n: usize, hurst: f64, sigma: f64, tau: f64, seed: u64) -> Result<Vec<f64>> {
    let g = FbmGenerator::new(n, hurst)?;
    Ok(g.sample(sigma, tau, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn coin<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

pub fn gen_signs_iid_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| coin(rng)).collect()
}

pub fn gen_signs_iid(n: usize, seed: u64) -> Vec<f64> {
    gen_signs_iid_with(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Signs of a stationary OU path sampled exactly every `step_seconds`.
pub fn gen_signs_ou_with<R: Rng + ?Sized>(
    n: usize,
    theta_per_second: f64,
    step_seconds: f64,
    rng: &mut R,
) -> Vec<f64> {
    let a = (-theta_per_second * step_seconds).exp();
    let innov = (-(-2.0 * theta_per_second * step_seconds).exp_m1()).sqrt();
    let mut x: f64 = rng.sample(StandardNormal);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let z: f64 = rng.sample(StandardNormal);
            x = a * x + innov * z;
        }
        out.push(if x >= 0.0 { 1.0 } else { -1.0 });
    }
    out
}

pub fn gen_signs_ou(n: usize, theta_per_second: f64, step_seconds: f64, seed: u64) -> Vec<f64> {
    gen_signs_ou_with(n, theta_per_second, step_seconds, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Y₁ uniform, then each step keeps the sign with probability (1+ρ)/2, so
/// corr(Y_i, Y_j) = ρ^{|i-j|}.
pub fn gen_signs_chain_with<R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> Vec<f64> {
    let keep = 0.5 * (1.0 + rho);
    let mut y = coin(rng);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.gen::<f64>() >= keep {
            y = -y;
        }
        out.push(y);
    }
    out
}

pub fn gen_signs_chain(n: usize, rho: f64, seed: u64) -> Vec<f64> {
    gen_signs_chain_with(n, rho, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Carries the previous observation forward with probability 1 - π.
/// Price, mid and sign move together; the first point is always kept.
pub fn thin_infrequent_with<R: Rng + ?Sized>(path: &SimPath, liquidity_prob: f64, rng: &mut R) -> SimPath {
    let mut out = path.clone();
    if liquidity_prob >= 1.0 {
        return out;
    }
    for i in 1..out.fine_log_prices.len() {
        if rng.gen::<f64>() >= liquidity_prob {
            out.fine_log_prices[i] = out.fine_log_prices[i - 1];
            out.fine_mid[i] = out.fine_mid[i - 1];
            out.fine_signs[i] = out.fine_signs[i - 1];
        }
    }
    out
}

pub fn thin_infrequent(path: &SimPath, liquidity_prob: f64, seed: u64) -> SimPath {
    thin_infrequent_with(path, liquidity_prob, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Stream of random numbers for one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Reusable simulator for a configuration.
pub struct Simulator {
    config: SimConfig,
    fbm: Option<FbmGenerator>,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let fbm = match config.model.kind {
            ModelKind::FbmPrice | ModelKind::Full if config.model.hurst != 0.5 => {
                Some(FbmGenerator::new(config.n_fine, config.model.hurst)?)
            }
            _ => None,
        };
        Ok(Self { config, fbm })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Fine-grid day for trial `trial`, thinned when π < 1.
    pub fn path(&self, trial: u64) -> SimPath {
        let c = &self.config;
        let mut master = trial_rng(c.seed, trial);
        let mut mid_rng = ChaCha8Rng::seed_from_u64(master.gen());
        let mut sign_rng = ChaCha8Rng::seed_from_u64(master.gen());
        let mut thin_rng = ChaCha8Rng::seed_from_u64(master.gen());
        let n = c.n_fine;
        let tau = c.fine_tau_years();
        let m = &c.model;
        let fine_mid = match &self.fbm {
            Some(g) => g.sample(m.sigma, tau, &mut mid_rng),
            None => gen_brownian_with(n, m.sigma, tau, &mut mid_rng),
        };
        let fine_signs = match c.noise_kind {
            NoiseKind::IidSigns => gen_signs_iid_with(n, &mut sign_rng),
            NoiseKind::BinarizedOu => gen_signs_ou_with(
                n,
                m.theta_per_second.unwrap_or(f64::INFINITY),
                c.fine_step_seconds(),
                &mut sign_rng,
            ),
            NoiseKind::RademacherChain => {
                let rho = m.lambda_years.map_or(0.0, |l| (-tau / l).exp());
                gen_signs_chain_with(n, rho, &mut sign_rng)
            }
        };
        let half = 0.5 * m.s;
        let fine_log_prices = fine_mid.iter().zip(&fine_signs).map(|(p, y)| p + half * y).collect();
        let path = SimPath { fine_log_prices, fine_mid, fine_signs };
        if c.liquidity_prob < 1.0 {
            thin_infrequent_with(&path, c.liquidity_prob, &mut thin_rng)
        } else {
            path
        }
    }

    /// Fine path and one-minute bars for trial `trial`.
    pub fn bars(&self, trial: u64) -> Result<(SimPath, OhlcSeries)> {
        let path = self.path(trial);
        let bars = path_bars(&path, &self.config)?;
        Ok((path, bars))
    }
}

/// Bars of a simulated path for its configuration.
pub fn path_bars(path: &SimPath, config: &SimConfig) -> Result<OhlcSeries> {
    let fine = LogPriceSeries::with_annualization(
        path.fine_log_prices.clone(),
        config.fine_step_seconds(),
        config.annualization,
    )?;
    aggregate_bars(&fine, config.bar_factor)
}

/// Simulates trial 0 of a configuration.
pub fn assemble(config: &SimConfig) -> Result<SimPath> {
    Ok(Simulator::new(*config)?.path(0))
}

/// Sample autocorrelation at `lag` around the sample mean.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
    cov / var
}
