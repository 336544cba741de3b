//! CUSUM test for a change in the volatility of a coordinate process.
//!
//! Under the null `T_n` converges to `sup|B°|` for a Brownian bridge `B°`, so
//! decisions and p-values come from the Kolmogorov distribution.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::coords::QuadraticVariation;
use crate::error::{Error, Result};

/// Terms below this are dropped from either series.
const SERIES_EPS: f64 = 1e-17;
const SERIES_MAX_TERMS: usize = 10_000;
/// Crossover between the dual series (below) and the alternating series (above).
const SERIES_SWITCH: f64 = 0.75;

/// Statistic part of a test: `T_n` and the smallest index attaining the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumStatistic {
    pub t_n: f64,
    pub k_star: usize,
    pub n: usize,
}

/// Decision part of a test at a given level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub p_value: f64,
    pub critical_value: f64,
    pub level: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_n: f64,
    pub k_star: usize,
    pub n: usize,
    pub beta_sq: f64,
    pub p_value: f64,
    pub critical_value: f64,
    pub level: f64,
    pub reject: bool,
}

impl TestResult {
    pub fn new(stat: CusumStatistic, beta_sq: f64, decision: Decision) -> Self {
        Self {
            t_n: stat.t_n,
            k_star: stat.k_star,
            n: stat.n,
            beta_sq,
            p_value: decision.p_value,
            critical_value: decision.critical_value,
            level: decision.level,
            reject: decision.reject,
        }
    }
}

/// `T_n = (1/β²) √(n/2) max_{1≤k≤n} |S_k − (k/n) S_n|`.
pub fn t_statistic(qv: &QuadraticVariation, beta_sq: f64) -> Result<CusumStatistic> {
    if !(beta_sq > 0.0 && beta_sq.is_finite()) {
        return Err(Error::InvalidParameter(format!("β² must be positive, got {beta_sq}")));
    }
    let n = qv.n();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("the test needs n ≥ 2 increments, got {n}")));
    }
    let total = qv.total();
    let (mut best, mut k_star) = (-1.0, 1);
    for k in 1..=n {
        let dev = (qv.partials[k] - k as f64 * total / n as f64).abs();
        if dev > best {
            best = dev;
            k_star = k;
        }
    }
    Ok(CusumStatistic {
        t_n: (n as f64 / 2.0).sqrt() * best / beta_sq,
        k_star,
        n,
    })
}

/// `1 − 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²x²}`.
pub fn kolmogorov_cdf_alternating(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 1..=SERIES_MAX_TERMS {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < SERIES_EPS {
            break;
        }
    }
    (1.0 - 2.0 * s).clamp(0.0, 1.0)
}

/// `(√(2π)/x) Σ_{k≥1} e^{−(2k−1)²π²/(8x²)}`.
pub fn kolmogorov_cdf_dual(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let pref = (2.0 * PI).sqrt() / x;
    let mut s = 0.0;
    for k in 1..=SERIES_MAX_TERMS {
        let odd = (2 * k - 1) as f64;
        let term = (-odd * odd * PI * PI / (8.0 * x * x)).exp();
        s += term;
        if pref * term < SERIES_EPS {
            break;
        }
    }
    (pref * s).clamp(0.0, 1.0)
}

pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x >= SERIES_SWITCH {
        kolmogorov_cdf_alternating(x)
    } else {
        kolmogorov_cdf_dual(x)
    }
}

/// Survival function `1 − F(x)`, summed directly to keep upper-tail accuracy.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x < SERIES_SWITCH {
        return 1.0 - kolmogorov_cdf_dual(x);
    }
    let mut s = 0.0;
    for k in 1..=SERIES_MAX_TERMS {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < SERIES_EPS * s.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Inverse of the CDF by bisection on `[1e-6, 10]`.
pub fn kolmogorov_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("quantile level must lie in (0, 1), got {p}")));
    }
    let (mut lo, mut hi) = (1e-6, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn p_value(t_n: f64) -> f64 {
    kolmogorov_sf(t_n)
}

/// Reject when `t_n` exceeds the `1 − level` quantile.
pub fn decide(t_n: f64, level: f64) -> Result<Decision> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("level must lie in (0, 1), got {level}")));
    }
    let critical_value = kolmogorov_quantile(1.0 - level)?;
    Ok(Decision {
        p_value: p_value(t_n),
        critical_value,
        level,
        reject: t_n > critical_value,
    })
}

/// Statistic and decision in one call.
pub fn run_test(qv: &QuadraticVariation, beta_sq: f64, level: f64) -> Result<TestResult> {
    let stat = t_statistic(qv, beta_sq)?;
    Ok(TestResult::new(stat, beta_sq, decide(stat.t_n, level)?))
}
