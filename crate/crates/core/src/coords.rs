//! Approximate coordinate processes and their realized quadratic variation.
//!
//! The coordinate `x_ℓ(t) = ⟨X_t, e_ℓ⟩` is recovered from grid data by
//! integrating the weighted eigenfunction exactly over each cell `D_j` against
//! the (piecewise-constant) observed value at the cell's upper corner.

use std::io::Write;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FieldDataset;
use crate::error::{Error, Result};
use crate::model::{ModeIndex, ThinningPlan};
use crate::simulate::CoefficientPaths;

/// Antiderivative of `√2 e^{ax} e^{−ax/2} sin(πpx) = √2 e^{ax/2} sin(πpx)`.
pub fn g_antideriv(p: usize, x: f64, a: f64) -> f64 {
    let w = std::f64::consts::PI * p as f64;
    let h = 0.5 * a;
    std::f64::consts::SQRT_2 * (h * x).exp() / (h * h + w * w)
        * (h * (w * x).sin() - w * (w * x).cos())
}

/// Cell weights `g_p(y_j : a) − g_p(y_{j−1} : a)` for `j = 1..=m`; index 0 is unused.
pub fn cell_weights(p: usize, m: usize, a: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..=m).map(|j| g_antideriv(p, j as f64 / m as f64, a)).collect();
    let mut w = vec![0.0; m + 1];
    for j in 1..=m {
        w[j] = g[j] - g[j - 1];
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatePath {
    pub ell: ModeIndex,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub kappa_used: Vec<f64>,
}

impl CoordinatePath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Columns `i, t, value, S` with `S` the partial quadratic variation.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let qv = partial_qv(self)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "t", "value", "S"])?;
        for (i, (&t, &v)) in self.times.iter().zip(&self.values).enumerate() {
            w.write_record(&[i.to_string(), t.to_string(), v.to_string(), qv.partials[i].to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads the `value` column (and `t` if present) written by [`CoordinatePath::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R, ell: ModeIndex) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let vcol = col("value").ok_or_else(|| Error::Format("CSV has no `value` column".into()))?;
        let tcol = col("t");
        let (mut times, mut values) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {i}: `{}` is not a number", &rec[k])))
            };
            values.push(parse(vcol)?);
            times.push(match tcol {
                Some(k) => parse(k)?,
                None => i as f64,
            });
        }
        Ok(Self {
            ell,
            times,
            values,
            kappa_used: Vec::new(),
        })
    }
}

/// Partial sums `S_k = Σ_{i≤k} (Δ_i x)²`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticVariation {
    pub partials: Vec<f64>,
}

impl QuadraticVariation {
    pub fn from_increments(increments: &[f64]) -> Self {
        let mut partials = Vec::with_capacity(increments.len() + 1);
        let mut acc = 0.0;
        partials.push(acc);
        for d in increments {
            acc += d * d;
            partials.push(acc);
        }
        Self { partials }
    }

    /// Number of increments `n`.
    pub fn n(&self) -> usize {
        self.partials.len() - 1
    }

    /// `S_n`, the total realized quadratic variation.
    pub fn total(&self) -> f64 {
        *self.partials.last().expect("partials always hold S_0")
    }
}

pub fn partial_qv(path: &CoordinatePath) -> Result<QuadraticVariation> {
    if path.len() < 2 {
        return Err(Error::InvalidParameter(
            "a coordinate path needs at least two points".into(),
        ));
    }
    Ok(QuadraticVariation::from_increments(&path.increments()))
}

fn check_ell(ell: &[usize], m_space: &[usize]) -> Result<()> {
    if ell.len() != m_space.len() {
        return Err(Error::InvalidParameter(format!(
            "mode {ell:?} does not match a {}-dimensional grid",
            m_space.len()
        )));
    }
    for (&l, &m) in ell.iter().zip(m_space) {
        if l == 0 || 2 * l > m {
            return Err(Error::IndexOutOfRange(format!(
                "mode component {l} outside 1..={} (M = {m} cannot resolve it)",
                m / 2
            )));
        }
    }
    Ok(())
}

fn thinned_times(n_time: usize, plan: &ThinningPlan) -> Result<Vec<usize>> {
    if plan.n > n_time {
        return Err(Error::Config(format!(
            "thinned time count n = {} exceeds N = {n_time}",
            plan.n
        )));
    }
    let stride = plan.time_stride(n_time);
    Ok((0..=plan.n).map(|i| i * stride).collect())
}

pub fn approx_coordinate(
    ds: &FieldDataset,
    ell: &[usize],
    kappa_hat: &[f64],
    plan: &ThinningPlan,
) -> Result<CoordinatePath> {
    let grid = ds.grid();
    check_ell(ell, &grid.m_space)?;
    if kappa_hat.len() != grid.dim() {
        return Err(Error::InvalidParameter("κ̂ dimension does not match the grid".into()));
    }
    let times = thinned_times(grid.n_time, plan)?;
    let weights: Vec<Vec<f64>> = ell
        .iter()
        .zip(&grid.m_space)
        .zip(kappa_hat)
        .map(|((&l, &m), &a)| cell_weights(l, m, a))
        .collect();
    let flat: Array1<f64> = match weights.as_slice() {
        [w] => Array1::from(w.clone()),
        [w1, w2] => {
            let p2 = w2.len();
            Array1::from_shape_fn(w1.len() * p2, |f| w1[f / p2] * w2[f % p2])
        }
        _ => unreachable!(),
    };
    let values: Vec<f64> = times
        .par_iter()
        .map(|&i| ds.slice(i).dot(&flat))
        .collect();
    Ok(CoordinatePath {
        ell: ell.to_vec(),
        times: times.iter().map(|&i| grid.time(i)).collect(),
        values,
        kappa_used: kappa_hat.to_vec(),
    })
}

pub fn exact_coordinate(
    coeffs: &CoefficientPaths,
    ell: &[usize],
    plan: &ThinningPlan,
) -> Result<CoordinatePath> {
    let path = coeffs.path(ell).ok_or_else(|| {
        Error::IndexOutOfRange(format!(
            "mode {ell:?} outside the simulated truncation {:?}",
            coeffs.modes().counts()
        ))
    })?;
    let n_time = coeffs.n_time();
    let times = thinned_times(n_time, plan)?;
    Ok(CoordinatePath {
        ell: ell.to_vec(),
        times: times.iter().map(|&i| i as f64 / n_time as f64).collect(),
        values: times.iter().map(|&i| path[i]).collect(),
        kappa_used: coeffs.config.params.kappa(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetMeta;
    use crate::model::{NoiseSpec, OperatorParams, SpaceTimeGrid, VolatilityProfile};
    use crate::simulate::{assemble_field, simulate_coefficients, InitialState, ModeSet, SimulationConfig};
    use ndarray::Array2;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn g_examples() {
        assert!((g_antideriv(1, 0.0, 0.0) + SQRT_2 / PI).abs() < 1e-15);
        assert!((g_antideriv(1, 1.0, 0.0) - SQRT_2 / PI).abs() < 1e-15);
        assert!((SQRT_2 / PI - 0.450158).abs() < 1e-6);
    }

    #[test]
    fn g_is_an_antiderivative() {
        let h = 1e-5;
        let mut worst = 0.0f64;
        for p in 1..=8 {
            for &a in &[-3.0, -1.5, 0.0, 1.0, 3.0] {
                for k in 0..=200 {
                    let x = k as f64 / 200.0;
                    let fd = (g_antideriv(p, x + h, a) - g_antideriv(p, x - h, a)) / (2.0 * h);
                    let exact = SQRT_2 * (0.5 * a * x).exp() * (PI * p as f64 * x).sin();
                    worst = worst.max((fd - exact).abs());
                }
            }
        }
        assert!(worst <= 1e-6, "{worst}");
        let fd = (g_antideriv(2, 0.3 + h, 1.0) - g_antideriv(2, 0.3 - h, 1.0)) / (2.0 * h);
        assert!((fd - SQRT_2 * 0.15f64.exp() * (0.6 * PI).sin()).abs() <= 1e-6);
    }

    #[test]
    fn weights_telescope() {
        for &(p, a) in &[(1, 1.0), (3, -2.0), (7, 0.5)] {
            let w = cell_weights(p, 997, a);
            let total: f64 = w[1..].iter().sum();
            let exact = g_antideriv(p, 1.0, a) - g_antideriv(p, 0.0, a);
            assert!((total - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn qv_examples() {
        let path = CoordinatePath {
            ell: vec![1],
            times: vec![0.0; 5],
            values: vec![0.0, 1.0, 0.0, 1.0, 1.0],
            kappa_used: vec![0.0],
        };
        assert_eq!(partial_qv(&path).unwrap().partials, vec![0.0, 1.0, 2.0, 3.0, 3.0]);
        let flat = CoordinatePath { values: vec![2.5; 6], times: vec![0.0; 6], ..path.clone() };
        assert!(partial_qv(&flat).unwrap().partials.iter().all(|&s| s == 0.0));
        let neg = CoordinatePath { values: path.values.iter().map(|v| -v).collect(), ..path.clone() };
        assert_eq!(partial_qv(&neg).unwrap(), partial_qv(&path).unwrap());
        let short = CoordinatePath { values: vec![1.0], times: vec![0.0], ..path };
        assert!(partial_qv(&short).is_err());
    }

    fn single_mode(m: usize, kappa: f64, c: f64) -> FieldDataset {
        let grid = SpaceTimeGrid::new(4, vec![m]).unwrap();
        let mut v = Array2::zeros((5, m + 1));
        for i in 0..5 {
            for j in 1..m {
                v[[i, j]] = c * crate::model::eigenfunction_1d(1, j as f64 / m as f64, kappa);
            }
        }
        FieldDataset::new(grid, v, DatasetMeta::default()).unwrap()
    }

    #[test]
    fn single_mode_recovery() {
        let plan = ThinningPlan::new(0.05, 10, 4).unwrap();
        let path = approx_coordinate(&single_mode(1000, 0.0, 2.0), &[1], &[0.0], &plan).unwrap();
        assert!(path.values.iter().all(|v| (v - 2.0).abs() <= 1e-4 * 2.0));
        // the upper-corner rule has a first-order error −κ/(4M) when κ ≠ 0
        let path = approx_coordinate(&single_mode(1000, 1.0, 2.0), &[1], &[1.0], &plan).unwrap();
        let rel = path.values[2] / 2.0 - 1.0;
        assert!((rel + 1.0 / 4000.0).abs() < 1e-5, "{rel}");
    }

    #[test]
    fn zero_field_and_aliasing_guard() {
        let grid = SpaceTimeGrid::new(4, vec![20]).unwrap();
        let ds = FieldDataset::new(grid, Array2::zeros((5, 21)), DatasetMeta::default()).unwrap();
        let plan = ThinningPlan::new(0.05, 10, 2).unwrap();
        let path = approx_coordinate(&ds, &[1], &[1.0], &plan).unwrap();
        assert_eq!(path.values, vec![0.0; 3]);
        assert_eq!(path.times, vec![0.0, 0.5, 1.0]);
        assert!(approx_coordinate(&ds, &[10], &[0.0], &plan).is_ok());
        assert!(approx_coordinate(&ds, &[11], &[0.0], &plan).is_err());
        assert!(approx_coordinate(&ds, &[0], &[0.0], &plan).is_err());
    }

    fn sim(modes: usize, n_time: usize) -> SimulationConfig {
        SimulationConfig {
            params: OperatorParams::new_1d(0.0, 0.2, 0.2).unwrap(),
            noise: NoiseSpec::cylindrical(),
            profile: VolatilityProfile::constant(1.0).unwrap(),
            n_time,
            modes: ModeSet::new(vec![modes]).unwrap(),
            seed: 11,
            replication: 0,
            initial: InitialState::Zero,
        }
    }

    #[test]
    fn exact_coordinate_extracts_rows() {
        let c = simulate_coefficients(&sim(5, 100)).unwrap();
        let full = exact_coordinate(&c, &[1], &ThinningPlan::new(0.1, 2, 100).unwrap()).unwrap();
        assert_eq!(full.values, c.path(&[1]).unwrap().to_vec());
        let thin = exact_coordinate(&c, &[2], &ThinningPlan::new(0.1, 2, 10).unwrap()).unwrap();
        assert_eq!(thin.values[3], c.path(&[2]).unwrap()[30]);
        assert!(exact_coordinate(&c, &[6], &ThinningPlan::new(0.1, 2, 10).unwrap()).is_err());
    }

    #[test]
    fn approximation_improves_with_m() {
        let c = simulate_coefficients(&sim(200, 50)).unwrap();
        let plan = ThinningPlan::new(0.1, 2, 50).unwrap();
        let exact = exact_coordinate(&c, &[1], &plan).unwrap();
        let mut prev = f64::INFINITY;
        for m in [250, 500, 1000] {
            let ds = assemble_field(&c, &SpaceTimeGrid::new(50, vec![m]).unwrap()).unwrap();
            let approx = approx_coordinate(&ds, &[1], &[1.0], &plan).unwrap();
            let err = approx
                .values
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < prev, "M = {m}: {err} !< {prev}");
            prev = err;
        }
    }

    #[test]
    fn two_dimensional_contraction() {
        let (m1, m2) = (16, 12);
        let grid = SpaceTimeGrid::new(2, vec![m1, m2]).unwrap();
        let kappa = [0.5, -1.0];
        let mut v = Array2::zeros((3, (m1 + 1) * (m2 + 1)));
        for j1 in 1..m1 {
            for j2 in 1..m2 {
                let y = [j1 as f64 / m1 as f64, j2 as f64 / m2 as f64];
                v[[1, j1 * (m2 + 1) + j2]] = crate::model::eigenfunction(&[1, 2], &y, &kappa);
            }
        }
        let ds = FieldDataset::new(grid, v, DatasetMeta::default()).unwrap();
        let plan = ThinningPlan::new(0.1, 2, 2).unwrap();
        let path = approx_coordinate(&ds, &[1, 2], &kappa, &plan).unwrap();
        let w1 = cell_weights(1, m1, kappa[0]);
        let w2 = cell_weights(2, m2, kappa[1]);
        let mut direct = 0.0;
        for (j1, a) in w1.iter().enumerate().skip(1) {
            for (j2, b) in w2.iter().enumerate().skip(1) {
                direct += ds.at(1, &[j1, j2]) * a * b;
            }
        }
        assert!((path.values[1] - direct).abs() < 1e-13);
        assert!((path.values[1] - 1.0).abs() < 0.1);
    }

    #[test]
    fn csv_round_trip() {
        let c = simulate_coefficients(&sim(3, 20)).unwrap();
        let path = exact_coordinate(&c, &[1], &ThinningPlan::new(0.1, 2, 20).unwrap()).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let back = CoordinatePath::read_csv(buf.as_slice(), vec![1]).unwrap();
        assert_eq!(back.values, path.values);
        assert_eq!(back.times, path.times);
    }
}
