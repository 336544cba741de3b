//! Parametric structure of the SPDE: operator coefficients and their eigenpairs,
//! the spatial noise colouring, step volatility profiles, and the observation /
//! thinning grids shared by the rest of the crate.
//!
//! The operator is `-A = θ₂Δ + θ₁·∇ + θ₀` on `(0,1)^d` with Dirichlet boundary,
//! `d ∈ {1, 2}`. Its eigenfunctions are orthonormal for the weighted inner
//! product `⟨u, v⟩ = ∫ u v exp(κᵀy) dy` with `κ = θ₁/θ₂`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// A spectral multi-index `l ∈ ℕ^d` with 1-based components.
pub type ModeIndex = Vec<usize>;

fn check_dim(d: usize) -> Result<()> {
    ensure(d == 1 || d == 2, || format!("dimension must be 1 or 2, got {d}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorParamsRepr")]
pub struct OperatorParams {
    theta0: f64,
    theta1: Vec<f64>,
    theta2: f64,
}

#[derive(Deserialize)]
struct OperatorParamsRepr {
    theta0: f64,
    theta1: Vec<f64>,
    theta2: f64,
}

impl TryFrom<OperatorParamsRepr> for OperatorParams {
    type Error = Error;

    fn try_from(r: OperatorParamsRepr) -> Result<Self> {
        OperatorParams::new(r.theta0, r.theta1, r.theta2)
    }
}

impl OperatorParams {
    /// Validates `θ₂ > 0` and positivity of the smallest eigenvalue `λ_{1_d}`.
    pub fn new(theta0: f64, theta1: Vec<f64>, theta2: f64) -> Result<Self> {
        check_dim(theta1.len())?;
        ensure(
            theta0.is_finite() && theta1.iter().all(|v| v.is_finite()),
            || "operator coefficients must be finite".into(),
        )?;
        ensure(theta2 > 0.0 && theta2.is_finite(), || {
            format!("theta2 must be positive, got {theta2}")
        })?;
        let params = Self {
            theta0,
            theta1,
            theta2,
        };
        let lambda_min = params.eigenvalue(&vec![1; params.dim()]);
        ensure(lambda_min > 0.0, || {
            format!("smallest eigenvalue must be positive, got {lambda_min}")
        })?;
        Ok(params)
    }

    /// One-dimensional convenience constructor.
    pub fn new_1d(theta0: f64, theta1: f64, theta2: f64) -> Result<Self> {
        Self::new(theta0, vec![theta1], theta2)
    }

    pub fn dim(&self) -> usize {
        self.theta1.len()
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn theta1(&self) -> &[f64] {
        &self.theta1
    }

    pub fn theta2(&self) -> f64 {
        self.theta2
    }

    /// `κ = θ₁/θ₂`, componentwise.
    pub fn kappa(&self) -> Vec<f64> {
        self.theta1.iter().map(|t| t / self.theta2).collect()
    }

    /// `λ_l = θ₂π²|l|² + |θ₁|²/(4θ₂) − θ₀`.
    pub fn eigenvalue(&self, l: &[usize]) -> f64 {
        debug_assert_eq!(l.len(), self.dim());
        let l_sq: f64 = l.iter().map(|&k| (k * k) as f64).sum();
        let drift_sq: f64 = self.theta1.iter().map(|t| t * t).sum();
        self.theta2 * PI * PI * l_sq + drift_sq / (4.0 * self.theta2) - self.theta0
    }
}

/// One-dimensional factor `√2 exp(−κy/2) sin(πly)`.
#[inline]
pub fn eigenfunction_1d(l: usize, y: f64, kappa: f64) -> f64 {
    std::f64::consts::SQRT_2 * (-0.5 * kappa * y).exp() * (PI * l as f64 * y).sin()
}

/// `e_l(y; κ) = 2^{d/2} exp(−κᵀy/2) ∏ sin(π l_k y_k)`.
pub fn eigenfunction(l: &[usize], y: &[f64], kappa: &[f64]) -> f64 {
    debug_assert!(l.len() == y.len() && y.len() == kappa.len());
    l.iter()
        .zip(y)
        .zip(kappa)
        .map(|((&lk, &yk), &kk)| eigenfunction_1d(lk, yk, kk))
        .product()
}

/// Spatial colouring of the Q-Wiener process, `W^Q = Σ γ_l^{−α/2} w_l e_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GammaRule {
    /// `γ_l = λ_l`.
    Spectral,
    /// `γ_l = π²|l|² + μ₀`.
    Polynomial { mu0: f64 },
    /// `γ_l = 1`, only meaningful together with `α = 0` in one dimension.
    Cylindrical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub gamma: GammaRule,
}

impl NoiseSpec {
    pub fn cylindrical() -> Self {
        Self {
            alpha: 0.0,
            gamma: GammaRule::Cylindrical,
        }
    }

    pub fn new(alpha: f64, gamma: GammaRule) -> Self {
        Self { alpha, gamma }
    }

    /// Checks `α ∈ [0,∞) ∩ (d/2 − 1, ∞)` and positivity of every `γ_l`.
    pub fn validate(&self, params: &OperatorParams) -> Result<()> {
        let d = params.dim();
        ensure(
            self.alpha.is_finite() && self.alpha >= 0.0 && self.alpha > d as f64 / 2.0 - 1.0,
            || format!("damping exponent {} not admissible for d = {d}", self.alpha),
        )?;
        match self.gamma {
            GammaRule::Spectral => Ok(()),
            GammaRule::Polynomial { mu0 } => {
                // the smallest |l|² is d
                ensure(PI * PI * d as f64 + mu0 > 0.0, || {
                    format!("mu0 = {mu0} makes gamma non-positive")
                })
            }
            GammaRule::Cylindrical => ensure(d == 1 && self.alpha == 0.0, || {
                "cylindrical noise requires d = 1 and alpha = 0".into()
            }),
        }
    }

    pub fn gamma(&self, l: &[usize], params: &OperatorParams) -> f64 {
        match self.gamma {
            GammaRule::Spectral => params.eigenvalue(l),
            GammaRule::Polynomial { mu0 } => {
                let l_sq: f64 = l.iter().map(|&k| (k * k) as f64).sum();
                PI * PI * l_sq + mu0
            }
            GammaRule::Cylindrical => 1.0,
        }
    }

    /// Per-mode noise amplitude `γ_l^{−α/2}`.
    pub fn amplitude(&self, l: &[usize], params: &OperatorParams) -> f64 {
        if self.alpha == 0.0 {
            1.0
        } else {
            self.gamma(l, params).powf(-0.5 * self.alpha)
        }
    }

    /// `c_γ = lim γ_l / (π²|l|²)`; `None` for cylindrical noise where the limit is 0.
    pub fn c_gamma(&self, theta2: f64) -> Option<f64> {
        match self.gamma {
            GammaRule::Spectral => Some(theta2),
            GammaRule::Polynomial { .. } => Some(1.0),
            GammaRule::Cylindrical => None,
        }
    }
}

/// Step volatility `σ(t) = Σ σ_j 1_{[τ_{j−1}, τ_j)}(t)`, last interval closed at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VolatilityRepr")]
pub struct VolatilityProfile {
    change_points: Vec<f64>,
    levels: Vec<f64>,
}

#[derive(Deserialize)]
struct VolatilityRepr {
    #[serde(default)]
    change_points: Vec<f64>,
    levels: Vec<f64>,
}

impl TryFrom<VolatilityRepr> for VolatilityProfile {
    type Error = Error;

    fn try_from(r: VolatilityRepr) -> Result<Self> {
        VolatilityProfile::new(r.change_points, r.levels)
    }
}

impl VolatilityProfile {
    pub fn new(change_points: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        ensure(levels.len() == change_points.len() + 1, || {
            format!(
                "{} change points need {} levels, got {}",
                change_points.len(),
                change_points.len() + 1,
                levels.len()
            )
        })?;
        ensure(
            change_points.iter().all(|&t| t > 0.0 && t < 1.0)
                && change_points.windows(2).all(|w| w[0] < w[1]),
            || "change points must be strictly increasing inside (0, 1)".into(),
        )?;
        ensure(levels.iter().all(|&s| s > 0.0 && s.is_finite()), || {
            "volatility levels must be positive".into()
        })?;
        ensure(levels.windows(2).all(|w| w[0] != w[1]), || {
            "adjacent volatility levels must differ".into()
        })?;
        Ok(Self {
            change_points,
            levels,
        })
    }

    pub fn constant(sigma: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![sigma])
    }

    /// One change at `tau` from `sigma1` to `sigma2`.
    pub fn single_change(tau: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        Self::new(vec![tau], vec![sigma1, sigma2])
    }

    pub fn change_points(&self) -> &[f64] {
        &self.change_points
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn is_constant(&self) -> bool {
        self.change_points.is_empty()
    }

    pub fn at(&self, t: f64) -> f64 {
        let idx = self.change_points.partition_point(|&tau| tau <= t);
        self.levels[idx]
    }

    /// `∫₀¹ σ(t)² dt`.
    pub fn integrated_variance(&self) -> f64 {
        let mut prev = 0.0;
        let mut acc = 0.0;
        for (j, &level) in self.levels.iter().enumerate() {
            let end = self.change_points.get(j).copied().unwrap_or(1.0);
            acc += level * level * (end - prev);
            prev = end;
        }
        acc
    }
}

/// Full observation grid `t_i = i/N`, `y_j^{(k)} = j/M_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub n_time: usize,
    pub m_space: Vec<usize>,
}

impl SpaceTimeGrid {
    pub fn new(n_time: usize, m_space: Vec<usize>) -> Result<Self> {
        check_dim(m_space.len())?;
        ensure(n_time >= 1, || "N must be at least 1".into())?;
        ensure(m_space.iter().all(|&m| m >= 2), || {
            "every spatial count must be at least 2".into()
        })?;
        Ok(Self { n_time, m_space })
    }

    pub fn dim(&self) -> usize {
        self.m_space.len()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_time as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.n_time as f64
    }

    pub fn coord(&self, axis: usize, j: usize) -> f64 {
        j as f64 / self.m_space[axis] as f64
    }

    /// Spatial node counts per axis, `M_k + 1`.
    pub fn space_shape(&self) -> Vec<usize> {
        self.m_space.iter().map(|m| m + 1).collect()
    }

    pub fn space_len(&self) -> usize {
        self.space_shape().iter().product()
    }
}

/// Thinning of the full grid: `m` interior points per axis on `[b, 1−b]` and
/// `n` time points with spacing `Δ_n = ⌊N/n⌋/N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinningPlan {
    pub b: f64,
    pub m: usize,
    pub n: usize,
}

impl ThinningPlan {
    pub fn new(b: f64, m: usize, n: usize) -> Result<Self> {
        ensure(b > 0.0 && b < 0.5, || format!("b must lie in (0, 1/2), got {b}"))?;
        ensure(m >= 1 && n >= 1, || "thinned counts must be positive".into())?;
        Ok(Self { b, m, n })
    }

    /// Nominal spatial spacing `δ = (1 − 2b)/m`.
    pub fn delta(&self) -> f64 {
        (1.0 - 2.0 * self.b) / self.m as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        self.b + j as f64 * self.delta()
    }

    pub fn time_stride(&self, n_time: usize) -> usize {
        n_time / self.n
    }

    /// `Δ_n = ⌊N/n⌋ / N`.
    pub fn time_step(&self, n_time: usize) -> f64 {
        self.time_stride(n_time) as f64 / n_time as f64
    }
}

/// Index maps of a thinning into the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinnedIndices {
    /// `i·⌊N/n⌋` for `i = 0..=n`.
    pub time: Vec<usize>,
    /// Per axis, grid indices of `ỹ_0..ỹ_m`.
    pub space: Vec<Vec<usize>>,
    /// Largest snap displacement in grid cells (0 when exactly aligned).
    pub max_displacement: f64,
}

/// Offsets below this many cells count as exact alignment.
const ALIGN_EXACT: f64 = 1e-9;

/// Maps a plan onto the full grid, snapping each `ỹ_j` to the nearest node.
///
/// Snapping by up to half a cell is accepted with a logged warning; the
/// displacement is recorded in the result. Two thinned points collapsing onto
/// the same node are an alignment error.
pub fn thinned_grid(full: &SpaceTimeGrid, plan: &ThinningPlan) -> Result<ThinnedIndices> {
    if plan.n > full.n_time {
        return Err(Error::Config(format!(
            "thinned time count n = {} exceeds N = {}",
            plan.n, full.n_time
        )));
    }
    let stride = plan.time_stride(full.n_time);
    let time = (0..=plan.n).map(|i| i * stride).collect();

    let mut max_displacement = 0.0f64;
    let mut space = Vec::with_capacity(full.dim());
    for &m_k in &full.m_space {
        if plan.m > m_k {
            return Err(Error::Config(format!(
                "thinned space count m = {} exceeds M = {m_k}",
                plan.m
            )));
        }
        let mut axis = Vec::with_capacity(plan.m + 1);
        for j in 0..=plan.m {
            let position = plan.point(j);
            let real_index = position * m_k as f64;
            let snapped = real_index.round();
            let offset = real_index - snapped;
            if offset.abs() > 0.5 + ALIGN_EXACT || snapped < 0.0 || snapped > m_k as f64 {
                return Err(Error::Alignment {
                    index: j,
                    position,
                    offset,
                });
            }
            let idx = snapped as usize;
            if axis.last().is_some_and(|&prev| prev >= idx) {
                return Err(Error::Alignment {
                    index: j,
                    position,
                    offset,
                });
            }
            if offset.abs() > ALIGN_EXACT * m_k as f64 {
                max_displacement = max_displacement.max(offset.abs());
            }
            axis.push(idx);
        }
        space.push(axis);
    }
    if max_displacement > 0.0 {
        log::warn!(
            "thinned points snapped to grid nodes (max displacement {max_displacement:.4} cells)"
        );
    }
    Ok(ThinnedIndices {
        time,
        space,
        max_displacement,
    })
}

/// `h^{a ⋏ b}` for `h ∈ (0,1)`: `h^a` if `a < b`, `−h^b log h` if `a = b`, `h^b` if `a > b`.
pub fn tilde_min_pow(h: f64, a: f64, b: f64) -> f64 {
    if a < b {
        h.powf(a)
    } else if a == b {
        -h.powf(b) * h.ln()
    } else {
        h.powf(b)
    }
}

/// `L^{a ⋏ b} = 1 / (1/L)^{a ⋏ b}` for `L > 1`.
pub fn tilde_min_pow_large(big: f64, a: f64, b: f64) -> f64 {
    1.0 / tilde_min_pow(1.0 / big, a, b)
}
