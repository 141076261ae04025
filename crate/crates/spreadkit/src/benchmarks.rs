//! Reference spread estimators from the literature.
//!
//! Bar `j` covers `[jτ, (j+1)τ]`; its close is the observed price at the end
//! of the bar and its mid-range is `(h + l)/2`. All estimators return a
//! squared-spread estimate with the usual `max(0, ·)^{1/2}` transform.

use std::f64::consts::{LN_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::series::{LogPriceSeries, OhlcSeries};
use crate::spreads::SpreadEstimate;
use crate::{Error, Result};

/// -4 · mean of products of successive increments.
pub fn roll(series: &LogPriceSeries) -> Result<SpreadEstimate> {
    let p = series.values();
    if p.len() < 3 {
        return Err(Error::TooShort { needed: 3, got: p.len() });
    }
    let sum: f64 = p.windows(3).map(|w| (w[1] - w[0]) * (w[2] - w[1])).sum();
    Ok(SpreadEstimate::from_squared(-4.0 * sum / (p.len() - 2) as f64, "Roll"))
}

fn check_bars(bars: &OhlcSeries, needed: usize) -> Result<()> {
    if bars.len() < needed {
        return Err(Error::TooShort { needed, got: bars.len() });
    }
    Ok(())
}

const KAPPA1: f64 = 4.0 * LN_2;

fn kappa2() -> f64 {
    (8.0 / PI).sqrt()
}

/// Per-window quantities of the Corwin-Schultz estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsIntermediate {
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl CsIntermediate {
    pub fn spread(&self) -> f64 {
        let e = self.alpha.exp();
        2.0 * (e - 1.0) / (1.0 + e)
    }
}

/// Corwin-Schultz estimate with root-solver bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsReport {
    pub estimate: SpreadEstimate,
    pub windows: usize,
    /// Windows whose equation had no sign change and fell back to ε = 0.
    pub fallbacks: usize,
}

fn radicand(eps: f64, beta: f64) -> f64 {
    let k2 = kappa2();
    (eps * eps * (k2 * k2 - KAPPA1) + beta / 2.0).max(0.0)
}

fn cs_equation(eps: f64, beta: f64, gamma: f64) -> f64 {
    let k2 = kappa2();
    eps * eps * (2.0 * k2 * k2 * (1.0 - SQRT_2) + KAPPA1)
        + eps * 2.0 * k2 * (SQRT_2 - 1.0) * radicand(eps, beta).sqrt()
        + beta / 2.0
        - gamma
}

/// Solves the window equation by bisection on `[0, ε_max]`, where `ε_max` is
/// the edge of the real domain of the square root. Returns `None` when there
/// is no sign change.
pub fn cs_solve_epsilon(beta: f64, gamma: f64) -> Option<f64> {
    let k2 = kappa2();
    let eps_max = (beta / (2.0 * (KAPPA1 - k2 * k2))).sqrt();
    let f0 = cs_equation(0.0, beta, gamma);
    if f0 == 0.0 {
        return Some(0.0);
    }
    let f1 = cs_equation(eps_max, beta, gamma);
    if f1 == 0.0 {
        return Some(eps_max);
    }
    if f0.signum() == f1.signum() {
        return None;
    }
    let (mut lo, mut hi, mut flo) = (0.0, eps_max, f0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = cs_equation(mid, beta, gamma);
        if fm.abs() < 1e-12 * (beta + gamma).max(1e-300) || hi - lo <= f64::EPSILON * hi {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Window quantities for two consecutive bars; the flag reports a fallback.
pub fn cs_window(
    first: &crate::series::OhlcBar,
    second: &crate::series::OhlcBar,
) -> (CsIntermediate, bool) {
    let beta = (first.high - first.low).powi(2) + (second.high - second.low).powi(2);
    let gamma = (first.high.max(second.high) - first.low.min(second.low)).powi(2);
    let (epsilon, fallback) = match cs_solve_epsilon(beta, gamma) {
        Some(e) => (e, false),
        None => (0.0, true),
    };
    let alpha = -kappa2() * epsilon + radicand(epsilon, beta).sqrt();
    (CsIntermediate { beta, gamma, epsilon, alpha }, fallback)
}

/// Corwin-Schultz range-based estimator averaged over consecutive-bar windows.
///
/// Each window yields a spread level `CS_t ∈ (-2, 2)`; `s_squared` holds
/// `sign(CS)·CS²` so that the positivity transform returns `max(0, CS)`.
pub fn corwin_schultz(bars: &OhlcSeries) -> Result<CsReport> {
    check_bars(bars, 3)?;
    let b = bars.bars();
    let mut total = 0.0;
    let mut fallbacks = 0;
    for w in b.windows(2) {
        let (inter, fb) = cs_window(&w[0], &w[1]);
        fallbacks += fb as usize;
        total += inter.spread();
    }
    let windows = b.len() - 1;
    let cs = total / windows as f64;
    Ok(CsReport {
        estimate: SpreadEstimate::from_squared(cs.signum() * cs * cs, "CS"),
        windows,
        fallbacks,
    })
}

/// Abdi-Ranaldo: -4 · mean of (c_j - m_j)(m_{j+1} - c_j).
pub fn abdi_ranaldo(bars: &OhlcSeries) -> Result<SpreadEstimate> {
    check_bars(bars, 3)?;
    let b = bars.bars();
    let sum: f64 = b
        .windows(2)
        .map(|w| (w[0].close - w[0].mid_range()) * (w[1].mid_range() - w[0].close))
        .sum();
    Ok(SpreadEstimate::from_squared(-4.0 * sum / (b.len() - 1) as f64, "AR"))
}

/// AGK₁ correction for infrequent trading.
///
/// For bar j ≥ 1, x_j = m_j - o_j and y_j = o_j - c_{j-1}. A window counts
/// when o_j differs from both h_j and l_j and the previous close is not equal
/// to a flat bar. x is centred on the counted windows and the estimate is
/// -8 Σ (x_j - x̄) y_j over counted windows divided by their number.
pub fn agk1(bars: &OhlcSeries) -> Result<SpreadEstimate> {
    check_bars(bars, 3)?;
    let b = bars.bars();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for w in b.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let open_inside = cur.open != cur.high && cur.open != cur.low;
        let flat_at_prev = prev.close == cur.high && cur.high == cur.low;
        if open_inside && !flat_at_prev {
            xs.push(cur.mid_range() - cur.open);
            ys.push(cur.open - prev.close);
        }
    }
    if xs.is_empty() {
        return Err(Error::Degenerate("no tradable windows".into()));
    }
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * y).sum();
    Ok(SpreadEstimate::from_squared(-8.0 * num / xs.len() as f64, "AGK1"))
}

/// The efficient discrete generalized estimator is reserved but not provided.
pub fn agk2(_bars: &OhlcSeries) -> Result<SpreadEstimate> {
    Err(Error::Unimplemented("agk2 (EDGE)".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::OhlcBar;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bar(o: f64, h: f64, l: f64, c: f64) -> OhlcBar {
        OhlcBar::new(o, h, l, c).unwrap()
    }

    #[test]
    fn roll_examples() {
        let c = LogPriceSeries::new(vec![1.0; 10], 60.0).unwrap();
        assert_eq!(roll(&c).unwrap().s_squared, 0.0);
        let s = 0.01;
        let bounce: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { s / 2.0 } else { -s / 2.0 }).collect();
        let r = roll(&LogPriceSeries::new(bounce, 60.0).unwrap()).unwrap();
        assert_relative_eq!(r.s_squared, 4.0 * s * s, max_relative = 1e-12);
        assert_relative_eq!(r.s, 2.0 * s, max_relative = 1e-12);
        let ramp: Vec<f64> = (0..20).map(|i| i as f64 * 0.003).collect();
        let r = roll(&LogPriceSeries::new(ramp, 60.0).unwrap()).unwrap();
        assert_relative_eq!(r.s_squared, -4.0 * 0.003f64.powi(2), max_relative = 1e-9);
        assert_eq!(r.s, 0.0);
        assert!(roll(&LogPriceSeries::new(vec![0.0, 1.0], 60.0).unwrap()).is_err());
    }

    #[test]
    fn cs_degenerate_window_is_zero() {
        let b = bar(1.0, 1.0, 1.0, 1.0);
        let (w, fb) = cs_window(&b, &b);
        assert!(!fb);
        assert_eq!((w.beta, w.gamma, w.epsilon, w.alpha), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(w.spread(), 0.0);
        let bars = OhlcSeries::new(vec![b; 5], 60.0).unwrap();
        let r = corwin_schultz(&bars).unwrap();
        assert_eq!(r.estimate.s_squared, 0.0);
        assert_eq!(r.windows, 4);
    }

    #[test]
    fn cs_root_solves_equation() {
        let (beta, gamma) = (2e-6, 1.6e-6);
        let e = cs_solve_epsilon(beta, gamma).unwrap();
        assert!(cs_equation(e, beta, gamma).abs() < 1e-12 * (beta + gamma) * 10.0);
        assert!(e > 0.0);
        // γ well above 1.965β has no root in the real domain.
        assert!(cs_solve_epsilon(1e-6, 3e-6).is_none());
    }

    #[test]
    fn ar_hand_evaluation() {
        let bars = OhlcSeries::new(
            vec![bar(0.0, 0.3, -0.1, 0.2), bar(0.2, 0.5, 0.1, 0.1), bar(0.1, 0.2, -0.4, -0.3)],
            60.0,
        )
        .unwrap();
        let m = [0.1, 0.3, -0.1];
        let c = [0.2, 0.1, -0.3];
        let want = -4.0 / 2.0 * ((c[0] - m[0]) * (m[1] - c[0]) + (c[1] - m[1]) * (m[2] - c[1]));
        assert_relative_eq!(abdi_ranaldo(&bars).unwrap().s_squared, want, max_relative = 1e-12);
        let flat = OhlcSeries::new(vec![bar(1.0, 1.0, 1.0, 1.0); 4], 60.0).unwrap();
        assert_eq!(abdi_ranaldo(&flat).unwrap().s_squared, 0.0);
    }

    #[test]
    fn agk1_examples() {
        let flat = OhlcSeries::new(vec![bar(1.0, 1.0, 1.0, 1.0); 4], 60.0).unwrap();
        assert!(matches!(agk1(&flat), Err(Error::Degenerate(_))));
        let bars = OhlcSeries::new(
            vec![
                bar(0.0, 0.3, -0.1, 0.2),
                bar(0.25, 0.5, 0.1, 0.1),
                bar(0.15, 0.2, -0.4, -0.3),
                bar(-0.3, -0.3, -0.5, -0.4),
            ],
            60.0,
        )
        .unwrap();
        // Bar 3 opens at its high and is excluded.
        let xs = [0.3 - 0.25, -0.1 - 0.15];
        let ys = [0.25 - 0.2, 0.15 - 0.1];
        let xbar = (xs[0] + xs[1]) / 2.0;
        let want = -8.0 * ((xs[0] - xbar) * ys[0] + (xs[1] - xbar) * ys[1]) / 2.0;
        assert_relative_eq!(agk1(&bars).unwrap().s_squared, want, max_relative = 1e-12);
        assert!(matches!(agk2(&bars), Err(Error::Unimplemented(_))));
    }

    #[test]
    fn range_benchmarks_need_three_bars() {
        let two = OhlcSeries::new(vec![bar(1.0, 1.1, 0.9, 1.0); 2], 60.0).unwrap();
        assert!(corwin_schultz(&two).is_err());
        assert!(abdi_ranaldo(&two).is_err());
        assert!(agk1(&two).is_err());
    }

    fn arb_bars() -> impl Strategy<Value = Vec<OhlcBar>> {
        prop::collection::vec((-1.0f64..1.0, 0.0f64..0.3, 0.0f64..1.0, 0.0f64..1.0), 3..30)
            .prop_map(|raw| {
                raw.into_iter()
                    .map(|(base, range, fo, fc)| {
                        let low = base;
                        let high = base + range;
                        let open = low + fo * (high - low);
                        let close = low + fc * (high - low);
                        OhlcBar::new(open, high, low, close).unwrap()
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn cs_window_spread_bounded(bars in arb_bars()) {
            for w in bars.windows(2) {
                let (i, _) = cs_window(&w[0], &w[1]);
                prop_assert!(i.beta >= 0.0 && i.gamma >= 0.0);
                let s = i.spread();
                prop_assert!(s > -2.0 && s < 2.0);
            }
        }

        #[test]
        fn translation_invariance(bars in arb_bars(), c in -2.0f64..2.0) {
            let shifted: Vec<OhlcBar> = bars
                .iter()
                .map(|b| OhlcBar::new(b.open + c, b.high + c, b.low + c, b.close + c).unwrap())
                .collect();
            let a = OhlcSeries::new(bars, 60.0).unwrap();
            let b = OhlcSeries::new(shifted, 60.0).unwrap();
            let (x, y) = (abdi_ranaldo(&a).unwrap().s_squared, abdi_ranaldo(&b).unwrap().s_squared);
            prop_assert!((x - y).abs() <= 1e-9);
            let (x, y) = (corwin_schultz(&a).unwrap(), corwin_schultz(&b).unwrap());
            prop_assert!((x.estimate.s_squared - y.estimate.s_squared).abs() <= 1e-6);
        }
    }
}
