//! Double increments in space and time.
//!
//! `D_{i,j} = Δ_i X(ỹ_j) − Δ_i X(ỹ_{j−1})` and `D̃_{i,j} = D_{i,j} + D_{i+1,j}`.
//! With `r = δ/√Δ` fixed, the scaled realized sums of `D` and `D̃` have means
//! `V e^{−κȳ_j} ψ_r(θ₂)` and `V e^{−κȳ_j} ψ_{r/√2}(θ₂)`.

use std::f64::consts::SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::{minimize_box, OptimizerConfig};
use super::special::psi_r;
use super::{defaults, SpatialDesign};
use crate::dataset::FieldDataset;
use crate::error::{Error, Result};
use crate::model::ThinningPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateB {
    pub kappa_hat: f64,
    pub theta2_hat: f64,
    pub v_hat: f64,
    pub objective_value: f64,
}

pub fn default_box() -> OptimizerConfig {
    OptimizerConfig::new(
        vec![defaults::KAPPA.0, defaults::THETA2.0, defaults::V.0],
        vec![defaults::KAPPA.1, defaults::THETA2.1, defaults::V.1],
    )
    .expect("default box is valid")
}

/// Per-column statistics entering the contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleIncrementStats {
    /// `ȳ_j`, `j = 1..=m`.
    pub midpoints: Vec<f64>,
    /// `(1/(N√Δ)) Σ_{i=1}^N D²_{i,j}`.
    pub plain: Vec<f64>,
    /// `(1/(N√(2Δ))) Σ_{i=1}^{N−1} D̃²_{i,j}`.
    pub tilde: Vec<f64>,
    pub r: f64,
}

fn check_1d(ds: &FieldDataset) -> Result<()> {
    if ds.grid().dim() != 1 {
        return Err(Error::Config("this estimator needs a one-dimensional dataset".into()));
    }
    Ok(())
}

fn column_increments(ds: &FieldDataset, design: &SpatialDesign, j: usize) -> Vec<f64> {
    let nodes = &design.indices.space[0];
    let a = design.time_increments(ds, &[nodes[j - 1]]);
    let b = design.time_increments(ds, &[nodes[j]]);
    b.iter().zip(&a).map(|(b, a)| b - a).collect()
}

/// `(D_{i,j}, D̃_{i,j})` for `1 ≤ j ≤ m`, `1 ≤ i ≤ N`; `D̃` is `None` at `i = N`.
pub fn double_increments(
    ds: &FieldDataset,
    plan: &ThinningPlan,
    i: usize,
    j: usize,
) -> Result<(f64, Option<f64>)> {
    check_1d(ds)?;
    let n = plan.n;
    if i == 0 || i > n || j == 0 || j > plan.m {
        return Err(Error::IndexOutOfRange(format!(
            "need 1 ≤ i ≤ {n} and 1 ≤ j ≤ {}, got i = {i}, j = {j}",
            plan.m
        )));
    }
    let design = SpatialDesign::new(ds, plan)?;
    let d = column_increments(ds, &design, j);
    Ok((d[i - 1], (i < n).then(|| d[i - 1] + d[i])))
}

pub fn double_increment_stats(ds: &FieldDataset, plan: &ThinningPlan) -> Result<DoubleIncrementStats> {
    check_1d(ds)?;
    if plan.n < 2 {
        return Err(Error::Config("Methodology B needs n ≥ 2 time steps".into()));
    }
    let design = SpatialDesign::new(ds, plan)?;
    let dt = design.dt;
    let r = design.consistent_r(plan)?;
    let n = plan.n as f64;
    let (plain, tilde): (Vec<f64>, Vec<f64>) = (1..=plan.m)
        .into_par_iter()
        .map(|j| {
            let d = column_increments(ds, &design, j);
            let s: f64 = d.iter().map(|v| v * v).sum();
            let st: f64 = d.windows(2).map(|w| (w[0] + w[1]).powi(2)).sum();
            (s / (n * dt.sqrt()), st / (n * (2.0 * dt).sqrt()))
        })
        .unzip();
    Ok(DoubleIncrementStats {
        midpoints: design.midpoints().swap_remove(0),
        plain,
        tilde,
        r,
    })
}

/// The two-term contrast at `ν = (κ, θ₂, V)`.
pub fn contrast(stats: &DoubleIncrementStats, kappa: f64, theta2: f64, v: f64) -> f64 {
    let p1 = v * psi_r(theta2, stats.r);
    let p2 = v * psi_r(theta2, stats.r / SQRT_2);
    let m = stats.midpoints.len() as f64;
    let mut s = 0.0;
    for ((&y, &a), &b) in stats.midpoints.iter().zip(&stats.plain).zip(&stats.tilde) {
        let e = (-kappa * y).exp();
        s += (a - p1 * e).powi(2) + (b - p2 * e).powi(2);
    }
    s / m
}

pub fn fit_from_statistics(stats: &DoubleIncrementStats, cfg: &OptimizerConfig) -> Result<EstimateB> {
    if cfg.dim() != 3 {
        return Err(Error::Config("Methodology B fits three parameters (κ, θ₂, V)".into()));
    }
    if cfg.lower[1] <= 0.0 {
        return Err(Error::Config("the θ₂ range must be positive".into()));
    }
    let mut f = |p: &[f64]| contrast(stats, p[0], p[1], p[2]);
    let min = minimize_box(&mut f, cfg)?;
    Ok(EstimateB {
        kappa_hat: min.point[0],
        theta2_hat: min.point[1],
        v_hat: min.point[2],
        objective_value: min.value,
    })
}

pub fn fit_methodology_b(
    ds: &FieldDataset,
    plan: &ThinningPlan,
    cfg: &OptimizerConfig,
) -> Result<EstimateB> {
    let stats = double_increment_stats(ds, plan)?;
    fit_from_statistics(&stats, cfg)
}
