//! Truncated spectral simulation.
//!
//! Each coordinate `x_l` is an Ornstein–Uhlenbeck process
//! `dx_l = −λ_l x_l dt + σ(t) γ_l^{−α/2} dw_l`, advanced with its exact Gaussian
//! transition over `Δ = 1/N` with the volatility frozen at the left endpoint.
//! The field on the grid is the truncated expansion `Σ_l x_l(t_i) e_l(y_j)`.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, FieldDataset};
use crate::error::{ensure, Error, Result};
use crate::model::{
    eigenfunction_1d, ModeIndex, NoiseSpec, OperatorParams, SpaceTimeGrid, VolatilityProfile,
};
use crate::rng;

/// Rectangular truncation `{1..L_1} × … × {1..L_d}`, enumerated with the last
/// axis varying fastest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSet {
    counts: Vec<usize>,
}

impl ModeSet {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        ensure(counts.len() == 1 || counts.len() == 2, || {
            "truncation must have 1 or 2 axes".into()
        })?;
        ensure(counts.iter().all(|&c| c >= 1), || {
            "every mode count must be at least 1".into()
        })?;
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self, row: usize) -> ModeIndex {
        match self.counts.as_slice() {
            [_] => vec![row + 1],
            [_, l2] => vec![row / l2 + 1, row % l2 + 1],
            _ => unreachable!(),
        }
    }

    pub fn row_of(&self, mode: &[usize]) -> Option<usize> {
        if mode.len() != self.dim() || mode.iter().zip(&self.counts).any(|(&l, &c)| l == 0 || l > c) {
            return None;
        }
        Some(match *mode {
            [l] => l - 1,
            [l1, l2] => (l1 - 1) * self.counts[1] + (l2 - 1),
            _ => unreachable!(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = ModeIndex> + '_ {
        (0..self.len()).map(|r| self.mode(r))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `X_0 = 0`.
    #[default]
    Zero,
    /// Explicit `x_l(0)`, one value per mode in truncation order.
    Coefficients(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub params: OperatorParams,
    pub noise: NoiseSpec,
    pub profile: VolatilityProfile,
    pub n_time: usize,
    pub modes: ModeSet,
    pub seed: u64,
    #[serde(default)]
    pub replication: u64,
    #[serde(default)]
    pub initial: InitialState,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate(&self.params)?;
        ensure(self.n_time >= 1, || "N must be at least 1".into())?;
        ensure(self.modes.dim() == self.params.dim(), || {
            "truncation dimension does not match the operator".into()
        })?;
        if let InitialState::Coefficients(c) = &self.initial {
            ensure(c.len() == self.modes.len(), || {
                format!("{} initial coefficients for {} modes", c.len(), self.modes.len())
            })?;
        }
        Ok(())
    }

    fn initial_value(&self, row: usize) -> f64 {
        match &self.initial {
            InitialState::Zero => 0.0,
            InitialState::Coefficients(c) => c[row],
        }
    }

    /// `σ(t_{i−1})` for `i = 1..=N`.
    fn step_volatility(&self) -> Vec<f64> {
        let dt = 1.0 / self.n_time as f64;
        (0..self.n_time)
            .map(|i| self.profile.at(i as f64 * dt))
            .collect()
    }
}

/// Exact one-step transition of a coordinate: `x ↦ decay·x + σ·scale·Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuStep {
    pub decay: f64,
    pub scale: f64,
}

impl OuStep {
    /// `decay = e^{−λΔ}`, `scale = amplitude·√((1 − e^{−2λΔ})/(2λ))`.
    pub fn new(lambda: f64, amplitude: f64, dt: f64) -> Self {
        let decay = (-lambda * dt).exp();
        let var = -(-2.0 * lambda * dt).exp_m1() / (2.0 * lambda);
        Self {
            decay,
            scale: amplitude * var.sqrt(),
        }
    }
}

fn fill_path(
    cfg: &SimulationConfig,
    mode: &ModeIndex,
    x0: f64,
    sigma: &[f64],
    out: &mut [f64],
) {
    let lambda = cfg.params.eigenvalue(mode);
    let amp = cfg.noise.amplitude(mode, &cfg.params);
    let step = OuStep::new(lambda, amp, 1.0 / cfg.n_time as f64);
    let mut rng = rng::mode_stream(cfg.seed, cfg.replication, mode);
    out[0] = x0;
    for i in 1..out.len() {
        let z: f64 = StandardNormal.sample(&mut rng);
        out[i] = step.decay * out[i - 1] + sigma[i - 1] * step.scale * z;
    }
}

/// Coefficient paths `x_l(t_i)`: one row per mode, one column per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPaths {
    pub config: SimulationConfig,
    values: Array2<f64>,
}

impl CoefficientPaths {
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn modes(&self) -> &ModeSet {
        &self.config.modes
    }

    pub fn n_time(&self) -> usize {
        self.config.n_time
    }

    pub fn path(&self, mode: &[usize]) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.config.modes.row_of(mode).map(|r| self.values.row(r))
    }
}

pub fn simulate_coefficients(cfg: &SimulationConfig) -> Result<CoefficientPaths> {
    cfg.validate()?;
    let sigma = cfg.step_volatility();
    let mut values = Array2::<f64>::zeros((cfg.modes.len(), cfg.n_time + 1));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(row, mut out)| {
            let mode = cfg.modes.mode(row);
            let x0 = cfg.initial_value(row);
            fill_path(
                cfg,
                &mode,
                x0,
                &sigma,
                out.as_slice_mut().expect("rows are contiguous"),
            );
        });
    Ok(CoefficientPaths {
        config: cfg.clone(),
        values,
    })
}

/// Simulates a single coordinate with exactly the stream it gets inside
/// [`simulate_coefficients`]; the coordinate-level fast path.
pub fn simulate_mode(cfg: &SimulationConfig, mode: &[usize]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let row = cfg.modes.row_of(mode).ok_or_else(|| {
        Error::IndexOutOfRange(format!("mode {mode:?} outside truncation {:?}", cfg.modes.counts()))
    })?;
    let sigma = cfg.step_volatility();
    let mut out = vec![0.0; cfg.n_time + 1];
    fill_path(cfg, &mode.to_vec(), cfg.initial_value(row), &sigma, &mut out);
    Ok(out)
}

/// Per-mode stationary variance weight `γ_l^{−α}/(2λ_l)` (unit volatility).
fn stationary_weight(params: &OperatorParams, noise: &NoiseSpec, mode: &[usize]) -> f64 {
    let amp = noise.amplitude(mode, params);
    amp * amp / (2.0 * params.eigenvalue(mode))
}

/// Smallest per-axis truncation whose omitted stationary-variance tail is below
/// `rel_tol` of the retained sum. The tail is estimated from the power-law decay
/// `|l|^{−2−2α}` of the weights.
pub fn default_truncation(
    params: &OperatorParams,
    noise: &NoiseSpec,
    rel_tol: f64,
) -> Result<ModeSet> {
    noise.validate(params)?;
    const CAP: usize = 1 << 20;
    let decay = 2.0 + 2.0 * noise.alpha;
    match params.dim() {
        1 => {
            let mut retained = 0.0;
            for l in 1..=CAP {
                let w = stationary_weight(params, noise, &[l]);
                retained += w;
                let tail = w * l as f64 / (decay - 1.0);
                if tail < rel_tol * retained {
                    return ModeSet::new(vec![l]);
                }
            }
            Err(Error::Config("default truncation exceeds 2^20 modes".into()))
        }
        _ => {
            let mut retained = 0.0;
            for l in 1..=4096usize {
                // add the new L-shaped shell of the square truncation
                for k in 1..=l {
                    retained += stationary_weight(params, noise, &[l, k]);
                    if k < l {
                        retained += stationary_weight(params, noise, &[k, l]);
                    }
                }
                let edge = stationary_weight(params, noise, &[l, 1]);
                let tail = std::f64::consts::FRAC_PI_2 * edge * (l * l) as f64 / (decay - 2.0);
                if tail < rel_tol * retained {
                    return ModeSet::new(vec![l, l]);
                }
            }
            Err(Error::Config("default truncation exceeds 4096 modes per axis".into()))
        }
    }
}

/// Basis matrix `E[l−1, j] = e_l(j/M)` for one axis, exactly zero on the boundary.
pub fn basis_matrix(n_modes: usize, m: usize, kappa: f64) -> Array2<f64> {
    let mut e = Array2::<f64>::zeros((n_modes, m + 1));
    for l in 1..=n_modes {
        for j in 1..m {
            e[[l - 1, j]] = eigenfunction_1d(l, j as f64 / m as f64, kappa);
        }
    }
    e
}

/// Evaluates the truncated expansion on the grid.
///
/// In two dimensions each time slice is `E₁ᵀ C(t) E₂` with `C(t)` the
/// `L₁ × L₂` coefficient matrix.
pub fn assemble_field(coeffs: &CoefficientPaths, grid: &SpaceTimeGrid) -> Result<FieldDataset> {
    let cfg = &coeffs.config;
    if grid.n_time != cfg.n_time {
        return Err(Error::Config(format!(
            "grid has N = {} but coefficients were simulated with N = {}",
            grid.n_time, cfg.n_time
        )));
    }
    if grid.dim() != cfg.modes.dim() {
        return Err(Error::Config("grid and truncation dimensions differ".into()));
    }
    let kappa = cfg.params.kappa();
    let counts = cfg.modes.counts();
    let values = match grid.dim() {
        1 => {
            let e = basis_matrix(counts[0], grid.m_space[0], kappa[0]);
            coeffs.values.t().dot(&e)
        }
        _ => {
            let (l1, l2) = (counts[0], counts[1]);
            let e1t = basis_matrix(l1, grid.m_space[0], kappa[0]).reversed_axes();
            let e2 = basis_matrix(l2, grid.m_space[1], kappa[1]);
            let (p1, p2) = (grid.m_space[0] + 1, grid.m_space[1] + 1);
            let mut out = Array2::<f64>::zeros((grid.n_time + 1, p1 * p2));
            out.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(i, mut row)| {
                    let c = coeffs.values.slice(s![.., i]);
                    let c = c
                        .to_shape((l1, l2))
                        .expect("coefficient column reshapes to the mode grid");
                    let slice = e1t.dot(&c).dot(&e2);
                    row.assign(&slice.to_shape(p1 * p2).expect("slice flattens"));
                });
            out
        }
    };
    let meta = DatasetMeta::from_simulation(cfg);
    FieldDataset::new(grid.clone(), values, meta)
}
