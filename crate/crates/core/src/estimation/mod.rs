//! Minimum-contrast estimation of the operator and volatility parameters.
//!
//! * [`methodology_a`]: realized volatility at single points, fitting `(κ, V₀)`.
//! * [`methodology_b`]: double increments in space and time, fitting `(κ, θ₂, V)`.
//! * [`two_d`]: rectangle increments on the unit square, with a damping estimate `α̂`.

pub mod methodology_a;
pub mod methodology_b;
pub mod optimize;
pub mod quadrature;
pub mod special;
pub mod two_d;

pub use methodology_a::{fit_methodology_a, z_statistic, EstimateA};
pub use methodology_b::{double_increments, fit_methodology_b, EstimateB};
pub use optimize::{minimize_box, Minimum, OptimizerConfig};
pub use special::{bessel_j0, psi_r, psi_r_alpha};
pub use two_d::{estimate_alpha, fit_2d, triple_increments, Estimate2D};

use crate::dataset::FieldDataset;
use crate::error::{Error, Result};
use crate::model::{thinned_grid, ThinnedIndices, ThinningPlan};

/// Relative tolerance on each snapped spacing against the nominal `δ`.
const SPACING_TOL: f64 = 0.02;

/// Spatial side of a thinning resolved against a dataset.
#[derive(Debug, Clone)]
pub(crate) struct SpatialDesign {
    pub indices: ThinnedIndices,
    /// Snapped positions `ỹ_j`, per axis.
    pub points: Vec<Vec<f64>>,
    /// Thinned time step `Δ_n`.
    pub dt: f64,
}

impl SpatialDesign {
    pub fn new(ds: &FieldDataset, plan: &ThinningPlan) -> Result<Self> {
        let grid = ds.grid();
        let indices = thinned_grid(grid, plan)?;
        let points = indices
            .space
            .iter()
            .enumerate()
            .map(|(k, axis)| axis.iter().map(|&j| grid.coord(k, j)).collect())
            .collect();
        let dt = plan.time_step(grid.n_time);
        Ok(Self { indices, points, dt })
    }

    /// Time increments `X(t_i) − X(t_{i−1})` of one spatial series along the thinned times.
    pub fn time_increments(&self, ds: &FieldDataset, node: &[usize]) -> Vec<f64> {
        let x = ds.series(node);
        self.indices.time.windows(2).map(|w| x[w[1]] - x[w[0]]).collect()
    }

    /// Checks that every snapped spacing matches `δ` so that `r = δ/√Δ` is one
    /// number across the design, and returns that `r`.
    pub fn consistent_r(&self, plan: &ThinningPlan) -> Result<f64> {
        let delta = plan.delta();
        for (k, axis) in self.points.iter().enumerate() {
            for (j, w) in axis.windows(2).enumerate() {
                let spacing = w[1] - w[0];
                if (spacing / delta - 1.0).abs() > SPACING_TOL {
                    return Err(Error::Config(format!(
                        "spacing ỹ_{} − ỹ_{j} = {spacing} on axis {k} differs from δ = {delta} \
                         by more than {}%; r = δ/√Δ is not constant",
                        j + 1,
                        SPACING_TOL * 100.0
                    )));
                }
            }
        }
        let axis = &self.points[0];
        let mean = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
        Ok(mean / self.dt.sqrt())
    }

    /// Midpoints `ȳ_j = (ỹ_{j−1} + ỹ_j)/2`, `j = 1..=m`, per axis.
    pub fn midpoints(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|axis| axis.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect())
            .collect()
    }
}

/// Bounds and defaults of the parameter box when none is supplied.
pub mod defaults {
    pub const KAPPA: (f64, f64) = (-10.0, 10.0);
    pub const THETA2: (f64, f64) = (1e-3, 10.0);
    pub const V: (f64, f64) = (1e-4, 1e2);
}

/// Sum of squares in a fixed order, so parallel callers stay bit-reproducible.
pub(crate) fn sum_sq(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v).sum()
}
