//! Realized volatility at single spatial points.
//!
//! `Z_j = (1/(N√Δ)) Σ_i (Δ_i X(ỹ_j))²` has mean `V₀ e^{−κỹ_j}/√π + O(Δ)` with
//! `V₀ = ∫σ²/√θ₂`, and `(κ, V₀)` is fitted by least squares over `j = 1..=m`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::{minimize_box, OptimizerConfig};
use super::{defaults, sum_sq, SpatialDesign};
use crate::dataset::FieldDataset;
use crate::error::{Error, Result};
use crate::model::ThinningPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateA {
    pub kappa_hat: f64,
    pub v0_hat: f64,
    pub objective_value: f64,
}

pub fn default_box() -> OptimizerConfig {
    OptimizerConfig::new(
        vec![defaults::KAPPA.0, defaults::V.0],
        vec![defaults::KAPPA.1, defaults::V.1],
    )
    .expect("default box is valid")
}

fn check_1d(ds: &FieldDataset) -> Result<()> {
    if ds.grid().dim() != 1 {
        return Err(Error::Config("this estimator needs a one-dimensional dataset".into()));
    }
    Ok(())
}

fn z_at(ds: &FieldDataset, design: &SpatialDesign, node: usize) -> f64 {
    let inc = design.time_increments(ds, &[node]);
    sum_sq(inc.iter().copied()) / (inc.len() as f64 * design.dt.sqrt())
}

/// `Z_{j,N}` for `j ∈ 0..=m` over the plan's time points.
pub fn z_statistic(ds: &FieldDataset, plan: &ThinningPlan, j: usize) -> Result<f64> {
    check_1d(ds)?;
    if j > plan.m {
        return Err(Error::IndexOutOfRange(format!("j = {j} exceeds m = {}", plan.m)));
    }
    let design = SpatialDesign::new(ds, plan)?;
    Ok(z_at(ds, &design, design.indices.space[0][j]))
}

/// `(ỹ_j, Z_{j,N})` for `j = 1..=m`.
pub fn z_statistics(ds: &FieldDataset, plan: &ThinningPlan) -> Result<(Vec<f64>, Vec<f64>)> {
    check_1d(ds)?;
    let design = SpatialDesign::new(ds, plan)?;
    let n = plan.n as f64;
    if plan.m as f64 > n.sqrt() {
        log::warn!(
            "m = {} exceeds √N = {:.1}; the rate condition m = O(N^ρ), ρ < 1/2, is not met",
            plan.m,
            n.sqrt()
        );
    }
    let nodes = &design.indices.space[0][1..];
    let z = nodes.par_iter().map(|&node| z_at(ds, &design, node)).collect();
    Ok((design.points[0][1..].to_vec(), z))
}

/// `(1/m) Σ_j (Z_j − V₀ e^{−κ y_j}/√π)²`.
pub fn contrast(y: &[f64], z: &[f64], kappa: f64, v0: f64) -> f64 {
    let scale = v0 / PI.sqrt();
    let s: f64 = y
        .iter()
        .zip(z)
        .map(|(&yj, &zj)| (zj - scale * (-kappa * yj).exp()).powi(2))
        .sum();
    s / y.len() as f64
}

pub fn fit_from_statistics(y: &[f64], z: &[f64], cfg: &OptimizerConfig) -> Result<EstimateA> {
    if cfg.dim() != 2 {
        return Err(Error::Config("Methodology A fits two parameters (κ, V₀)".into()));
    }
    if y.len() != z.len() || y.is_empty() {
        return Err(Error::InvalidParameter("need matching, non-empty y and Z".into()));
    }
    let mut f = |p: &[f64]| contrast(y, z, p[0], p[1]);
    let min = minimize_box(&mut f, cfg)?;
    Ok(EstimateA {
        kappa_hat: min.point[0],
        v0_hat: min.point[1],
        objective_value: min.value,
    })
}

pub fn fit_methodology_a(
    ds: &FieldDataset,
    plan: &ThinningPlan,
    cfg: &OptimizerConfig,
) -> Result<EstimateA> {
    let (y, z) = z_statistics(ds, plan)?;
    fit_from_statistics(&y, &z, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetMeta;
    use crate::model::{eigenfunction_1d, SpaceTimeGrid, VolatilityProfile};
    use ndarray::Array2;

    fn separable(m: usize, n: usize, w: &[f64], kappa: f64) -> FieldDataset {
        let grid = SpaceTimeGrid::new(n, vec![m]).unwrap();
        let v = Array2::from_shape_fn((n + 1, m + 1), |(i, j)| {
            if j == 0 || j == m { 0.0 } else { w[i] * eigenfunction_1d(1, j as f64 / m as f64, kappa) }
        });
        FieldDataset::new(grid, v, DatasetMeta::default()).unwrap()
    }

    #[test]
    fn zero_field_gives_zero() {
        let ds = separable(100, 50, &[0.0; 51], 1.0);
        let plan = ThinningPlan::new(0.1, 8, 50).unwrap();
        assert_eq!(z_statistic(&ds, &plan, 3).unwrap(), 0.0);
    }

    #[test]
    fn single_mode_factorizes() {
        let n = 64;
        let w: Vec<f64> = (0..=n).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let (m, kappa) = (100, 0.7);
        let ds = separable(m, n, &w, kappa);
        let plan = ThinningPlan::new(0.1, 8, n).unwrap();
        let rv: f64 = w.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum();
        for j in [0, 3, 8] {
            let y = plan.point(j);
            let want = eigenfunction_1d(1, y, kappa).powi(2) * rv / (n as f64 * (1.0 / n as f64).sqrt());
            let got = z_statistic(&ds, &plan, j).unwrap();
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
        }
        assert!(z_statistic(&ds, &plan, 9).is_err());
    }

    #[test]
    fn zero_residual_recovery() {
        let y: Vec<f64> = (1..=20).map(|j| 0.1 + 0.04 * j as f64).collect();
        let z: Vec<f64> = y.iter().map(|&yj| 2.0 / PI.sqrt() * (-yj).exp()).collect();
        let est = fit_from_statistics(&y, &z, &default_box()).unwrap();
        assert!((est.kappa_hat - 1.0).abs() < 1e-6, "{est:?}");
        assert!((est.v0_hat - 2.0).abs() < 1e-6, "{est:?}");
    }

    #[test]
    fn scaling_the_field_scales_v0_only() {
        let y: Vec<f64> = (1..=20).map(|j| 0.05 + 0.045 * j as f64).collect();
        let z: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(j, &yj)| 1.3 / PI.sqrt() * (-0.8 * yj).exp() * (1.0 + 0.05 * ((j * 5 % 7) as f64 - 3.0)))
            .collect();
        let base = fit_from_statistics(&y, &z, &default_box()).unwrap();
        let z4: Vec<f64> = z.iter().map(|v| 4.0 * v).collect();
        let scaled = fit_from_statistics(&y, &z4, &default_box()).unwrap();
        assert!((scaled.kappa_hat - base.kappa_hat).abs() < 1e-6);
        assert!((scaled.v0_hat / base.v0_hat - 4.0).abs() < 1e-6);
    }

    #[test]
    fn v0_under_a_change() {
        let profile = VolatilityProfile::single_change(0.3, 1.0, 1.8).unwrap();
        let v0 = profile.integrated_variance() / 0.2f64.sqrt();
        assert!((v0 - (0.3 + 0.7 * 3.24) / 0.2f64.sqrt()).abs() < 1e-12);
    }
}
