//! The pipeline on the unit square.
//!
//! Rectangle increments `T_{i,j,k}` of the time increments are summed on a fine
//! thinning and on a coarse one with half the spatial points and a quarter of
//! the time points; the log-ratio of their energies gives `α̂`. Then
//! `(κ, θ₂, V)` is fitted against `V e^{−κ·ȳ} c_γ^α̂ ψ_{r,α̂}(θ₂)`.

use std::collections::HashMap;
use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::{minimize_box, OptimizerConfig};
use super::special::psi_r_alpha;
use super::{defaults, SpatialDesign};
use crate::dataset::FieldDataset;
use crate::error::{Error, Result};
use crate::model::{GammaRule, ThinningPlan};

/// `log(√2 − 1)` in absolute value.
const LOG_SQRT2_MINUS_1: f64 = 0.881_373_587_019_543;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate2D {
    pub alpha_hat: f64,
    pub kappa_hat: [f64; 2],
    pub theta2_hat: f64,
    pub v_hat: f64,
    pub objective_value: f64,
}

fn check_2d(ds: &FieldDataset) -> Result<()> {
    if ds.grid().dim() != 2 {
        return Err(Error::Config("this estimator needs a two-dimensional dataset".into()));
    }
    Ok(())
}

/// `T_{i,j,k}` for `i = 1..=n` in the cell `(j, k)`.
fn cell_increments(ds: &FieldDataset, design: &SpatialDesign, j: usize, k: usize) -> Vec<f64> {
    let (ys, zs) = (&design.indices.space[0], &design.indices.space[1]);
    let corner = |a: usize, b: usize| design.time_increments(ds, &[a, b]);
    let pp = corner(ys[j], zs[k]);
    let mp = corner(ys[j - 1], zs[k]);
    let pm = corner(ys[j], zs[k - 1]);
    let mm = corner(ys[j - 1], zs[k - 1]);
    (0..pp.len()).map(|i| pp[i] - mp[i] - pm[i] + mm[i]).collect()
}

fn cells(m: usize) -> Vec<(usize, usize)> {
    (1..=m).flat_map(|j| (1..=m).map(move |k| (j, k))).collect()
}

/// `(T_{i,j,k}, T̃_{i,j,k})`, with `T̃` absent at `i = n`.
pub fn triple_increments(
    ds: &FieldDataset,
    plan: &ThinningPlan,
    i: usize,
    j: usize,
    k: usize,
) -> Result<(f64, Option<f64>)> {
    check_2d(ds)?;
    let n = plan.n;
    if i == 0 || i > n || j == 0 || j > plan.m || k == 0 || k > plan.m {
        return Err(Error::IndexOutOfRange(format!(
            "need 1 ≤ i ≤ {n} and 1 ≤ j, k ≤ {}, got ({i}, {j}, {k})",
            plan.m
        )));
    }
    let design = SpatialDesign::new(ds, plan)?;
    let t = cell_increments(ds, &design, j, k);
    Ok((t[i - 1], (i < n).then(|| t[i - 1] + t[i])))
}

/// `(1/(m n)) Σ_{i,j,k} T²` with `m = m₁m₂`.
fn mean_square(ds: &FieldDataset, plan: &ThinningPlan) -> Result<f64> {
    let design = SpatialDesign::new(ds, plan)?;
    let total: f64 = cells(plan.m)
        .par_iter()
        .map(|&(j, k)| cell_increments(ds, &design, j, k).iter().map(|t| t * t).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / ((plan.m * plan.m) as f64 * plan.n as f64))
}

/// `log(coarse / fine) / log 4`.
pub fn alpha_from_mean_squares(fine: f64, coarse: f64) -> Result<f64> {
    if !(fine > 0.0 && coarse > 0.0 && fine.is_finite() && coarse.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "mean squares must be positive and finite, got fine = {fine}, coarse = {coarse}"
        )));
    }
    Ok((coarse / fine).ln() / 4f64.ln())
}

/// The coarse companion of `fine`: half the spatial points, a quarter of the time points.
pub fn coarse_plan(fine: &ThinningPlan) -> Result<ThinningPlan> {
    if !fine.m.is_multiple_of(2) || !fine.n.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "the coarse thinning needs m even and n divisible by 4, got m = {}, n = {}",
            fine.m, fine.n
        )));
    }
    ThinningPlan::new(fine.b, fine.m / 2, fine.n / 4)
}

pub fn estimate_alpha(ds: &FieldDataset, fine: &ThinningPlan, coarse: &ThinningPlan) -> Result<f64> {
    check_2d(ds)?;
    let expected = coarse_plan(fine)?;
    if coarse.b != fine.b || coarse.m != expected.m || coarse.n != expected.n {
        return Err(Error::Config(format!(
            "coarse thinning must be (b, m/2, n/4) = ({}, {}, {}), got ({}, {}, {})",
            expected.b, expected.m, expected.n, coarse.b, coarse.m, coarse.n
        )));
    }
    let n_full = ds.grid().n_time;
    if coarse.time_stride(n_full) != 4 * fine.time_stride(n_full) {
        return Err(Error::Config(format!(
            "N = {n_full} does not give a coarse time stride of four fine strides"
        )));
    }
    alpha_from_mean_squares(mean_square(ds, fine)?, mean_square(ds, coarse)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectangleStats {
    /// Cell midpoints `(ȳ_j, z̄_k)`.
    pub midpoints: Vec<[f64; 2]>,
    /// `(1/(n Δ^α)) Σ_{i=1}^n T²`.
    pub plain: Vec<f64>,
    /// `(1/(n (2Δ)^α)) Σ_{i=1}^{n−1} T̃²`.
    pub tilde: Vec<f64>,
    pub r: f64,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!("α̂ = {alpha} is outside (0, 2)")));
    }
    Ok(())
}

pub fn rectangle_stats(ds: &FieldDataset, plan: &ThinningPlan, alpha: f64) -> Result<RectangleStats> {
    check_2d(ds)?;
    check_alpha(alpha)?;
    if plan.n < 2 {
        return Err(Error::Config("the contrast needs n ≥ 2 time steps".into()));
    }
    let design = SpatialDesign::new(ds, plan)?;
    let r = design.consistent_r(plan)?;
    let dt = design.dt;
    let n = plan.n as f64;
    let mids = design.midpoints();
    let cells = cells(plan.m);
    let (plain, tilde): (Vec<f64>, Vec<f64>) = cells
        .par_iter()
        .map(|&(j, k)| {
            let t = cell_increments(ds, &design, j, k);
            let s: f64 = t.iter().map(|v| v * v).sum();
            let st: f64 = t.windows(2).map(|w| (w[0] + w[1]).powi(2)).sum();
            (s / (n * dt.powf(alpha)), st / (n * (2.0 * dt).powf(alpha)))
        })
        .unzip();
    Ok(RectangleStats {
        midpoints: cells.iter().map(|&(j, k)| [mids[0][j - 1], mids[1][k - 1]]).collect(),
        plain,
        tilde,
        r,
        alpha,
    })
}

/// Lower edge of admissible `θ₂`: `r²/(8|log(√2 − 1)|)`.
pub fn theta2_lower_bound(r: f64) -> f64 {
    r * r / (8.0 * LOG_SQRT2_MINUS_1)
}

/// Box over `(κ₁, κ₂, θ₂, V)` with the `θ₂` edge moved just inside the admissible region.
pub fn default_box(r: f64) -> OptimizerConfig {
    let lo = defaults::THETA2.0.max(theta2_lower_bound(r) + 1e-6);
    OptimizerConfig::new(
        vec![defaults::KAPPA.0, defaults::KAPPA.0, lo, defaults::V.0],
        vec![defaults::KAPPA.1, defaults::KAPPA.1, defaults::THETA2.1.max(2.0 * lo), defaults::V.1],
    )
    .expect("default box is valid")
}

fn c_gamma(rule: GammaRule, theta2: f64) -> Result<f64> {
    match rule {
        GammaRule::Spectral => Ok(theta2),
        GammaRule::Polynomial { .. } => Ok(1.0),
        GammaRule::Cylindrical => Err(Error::Config(
            "the two-dimensional contrast needs a damped noise; cylindrical noise has c_γ = 0".into(),
        )),
    }
}

/// Curve factors `c_γ^α ψ_{r,α}(θ₂)` and `c_γ^α ψ_{r/√2,α}(θ₂)`, memoized on `θ₂`.
struct CurveCache {
    r: f64,
    alpha: f64,
    rule: GammaRule,
    values: HashMap<u64, (f64, f64)>,
    error: Option<Error>,
}

impl CurveCache {
    fn get(&mut self, theta2: f64) -> Option<(f64, f64)> {
        if let Some(&v) = self.values.get(&theta2.to_bits()) {
            return Some(v);
        }
        let eval = || -> Result<(f64, f64)> {
            let c = c_gamma(self.rule, theta2)?.powf(self.alpha);
            let a = psi_r_alpha(theta2, self.r, self.alpha)?;
            let b = psi_r_alpha(theta2, self.r / SQRT_2, self.alpha)?;
            Ok((c * a, c * b))
        };
        match eval() {
            Ok(v) => {
                self.values.insert(theta2.to_bits(), v);
                Some(v)
            }
            Err(e) => {
                self.error.get_or_insert(e);
                None
            }
        }
    }
}

fn contrast_with(stats: &RectangleStats, kappa: [f64; 2], v: f64, curve: (f64, f64)) -> f64 {
    let mut s = 0.0;
    for ((y, &a), &b) in stats.midpoints.iter().zip(&stats.plain).zip(&stats.tilde) {
        let e = v * (-kappa[0] * y[0] - kappa[1] * y[1]).exp();
        s += (a - curve.0 * e).powi(2) + (b - curve.1 * e).powi(2);
    }
    s / stats.midpoints.len() as f64
}

/// The two-term contrast at `ν = (κ, θ₂, V)`.
pub fn contrast(stats: &RectangleStats, kappa: [f64; 2], theta2: f64, v: f64, rule: GammaRule) -> Result<f64> {
    check_alpha(stats.alpha)?;
    let c = c_gamma(rule, theta2)?.powf(stats.alpha);
    let curve = (
        c * psi_r_alpha(theta2, stats.r, stats.alpha)?,
        c * psi_r_alpha(theta2, stats.r / SQRT_2, stats.alpha)?,
    );
    Ok(contrast_with(stats, kappa, v, curve))
}

pub fn fit_from_statistics(
    stats: &RectangleStats,
    cfg: &OptimizerConfig,
    rule: GammaRule,
) -> Result<Estimate2D> {
    check_alpha(stats.alpha)?;
    c_gamma(rule, 1.0)?;
    if cfg.dim() != 4 {
        return Err(Error::Config("the two-dimensional fit has four parameters (κ₁, κ₂, θ₂, V)".into()));
    }
    let bound = theta2_lower_bound(stats.r);
    if cfg.lower[2] <= bound {
        return Err(Error::Config(format!(
            "θ₂ range starts at {} but must lie above r²/(8|log(√2 − 1)|) = {bound}",
            cfg.lower[2]
        )));
    }
    let mut cache = CurveCache {
        r: stats.r,
        alpha: stats.alpha,
        rule,
        values: HashMap::new(),
        error: None,
    };
    let mut f = |p: &[f64]| match cache.get(p[2]) {
        Some(curve) => contrast_with(stats, [p[0], p[1]], p[3], curve),
        None => f64::INFINITY,
    };
    let min = minimize_box(&mut f, cfg)?;
    if !min.value.is_finite() {
        return Err(cache.error.take().unwrap_or_else(|| {
            Error::InvalidParameter("contrast is not finite anywhere on the box".into())
        }));
    }
    Ok(Estimate2D {
        alpha_hat: stats.alpha,
        kappa_hat: [min.point[0], min.point[1]],
        theta2_hat: min.point[2],
        v_hat: min.point[3],
        objective_value: min.value,
    })
}

pub fn fit_2d(
    ds: &FieldDataset,
    plan: &ThinningPlan,
    alpha_hat: f64,
    cfg: &OptimizerConfig,
    rule: GammaRule,
) -> Result<Estimate2D> {
    let stats = rectangle_stats(ds, plan, alpha_hat)?;
    fit_from_statistics(&stats, cfg, rule)
}
