//! Box-constrained derivative-free minimization: a coarse grid scan followed by
//! Nelder–Mead refinement with every trial point projected onto the box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default = "default_grid")]
    pub coarse_grid: usize,
    #[serde(default = "default_refine_tol")]
    pub refine_tol: f64,
    /// Simplex size, relative to the box width, below which refinement stops.
    #[serde(default = "default_x_tol")]
    pub x_tol: f64,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
}

fn default_grid() -> usize {
    17
}
fn default_refine_tol() -> f64 {
    1e-10
}
fn default_x_tol() -> f64 {
    1e-10
}
fn default_max_evals() -> usize {
    100_000
}

impl OptimizerConfig {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            lower,
            upper,
            coarse_grid: default_grid(),
            refine_tol: default_refine_tol(),
            x_tol: default_x_tol(),
            max_evals: default_max_evals(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::Config("box bounds must be non-empty and of equal length".into()));
        }
        for (k, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "box axis {k}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        if self.coarse_grid < 2 {
            return Err(Error::Config("coarse grid needs at least 2 points per axis".into()));
        }
        Ok(())
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(lo, hi);
        }
    }

    fn grid_point(&self, flat: usize) -> Vec<f64> {
        let g = self.coarse_grid;
        let mut rest = flat;
        let mut x = vec![0.0; self.dim()];
        for k in (0..self.dim()).rev() {
            let idx = rest % g;
            rest /= g;
            x[k] = self.lower[k] + (self.upper[k] - self.lower[k]) * idx as f64 / (g - 1) as f64;
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

struct Counter<'a> {
    f: &'a mut dyn FnMut(&[f64]) -> f64,
    evals: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl Counter<'_> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        // NaN objectives rank last
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if self.best.as_ref().is_none_or(|(_, b)| v < *b) {
            self.best = Some((x.to_vec(), v));
        }
        v
    }
}

/// Minimizes `objective` over the box in `cfg`.
///
/// The returned point is the best one evaluated, so its value is never worse
/// than the best coarse-grid value.
pub fn minimize_box(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    cfg: &OptimizerConfig,
) -> Result<Minimum> {
    cfg.validate()?;
    let d = cfg.dim();
    let mut ctr = Counter {
        f: objective,
        evals: 0,
        best: None,
    };
    let total = cfg
        .coarse_grid
        .checked_pow(d as u32)
        .filter(|&t| t <= cfg.max_evals)
        .ok_or_else(|| Error::Config("coarse grid alone exceeds the evaluation budget".into()))?;
    for flat in 0..total {
        let x = cfg.grid_point(flat);
        ctr.eval(&x);
    }

    let widths: Vec<f64> = cfg.lower.iter().zip(&cfg.upper).map(|(l, u)| u - l).collect();
    let mut step: Vec<f64> = widths.iter().map(|w| 0.5 * w / (cfg.coarse_grid - 1) as f64).collect();
    // one restart from the refined point guards against a collapsed simplex
    for _ in 0..2 {
        let start = ctr.best.as_ref().expect("grid was evaluated").0.clone();
        nelder_mead(&mut ctr, cfg, &start, &step, &widths)?;
        step.iter_mut().zip(&widths).for_each(|(s, w)| *s = (*s * 0.1).max(1e-6 * w));
    }
    let (point, value) = ctr.best.expect("grid was evaluated");
    Ok(Minimum {
        point,
        value,
        evals: ctr.evals,
    })
}

fn nelder_mead(
    ctr: &mut Counter<'_>,
    cfg: &OptimizerConfig,
    start: &[f64],
    step: &[f64],
    widths: &[f64],
) -> Result<()> {
    let d = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = ctr.eval(start);
    simplex.push((start.to_vec(), f0));
    for k in 0..d {
        let mut x = start.to_vec();
        // step inward when the start sits on the upper bound
        x[k] = if x[k] + step[k] <= cfg.upper[k] { x[k] + step[k] } else { x[k] - step[k] };
        cfg.project(&mut x);
        let f = ctr.eval(&x);
        simplex.push((x, f));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .zip(widths)
                    .map(|((a, b), w)| (a - b).abs() / w)
            })
            .fold(0.0, f64::max);
        if (spread <= cfg.refine_tol && size <= cfg.x_tol) || size <= 1e-15 {
            return Ok(());
        }
        if ctr.evals >= cfg.max_evals {
            let (best_point, best_value) = ctr.best.clone().expect("evaluated");
            return Err(Error::Convergence {
                evals: ctr.evals,
                best_point,
                best_value,
            });
        }

        let centroid: Vec<f64> = (0..d)
            .map(|k| simplex[..d].iter().map(|(x, _)| x[k]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            let mut x: Vec<f64> = centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect();
            cfg.project(&mut x);
            x
        };
        let worst = simplex[d].0.clone();
        let xr = along(1.0, &worst);
        let fr = ctr.eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(2.0, &worst);
            let fe = ctr.eval(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[d].1 {
            let x = along(0.5, &worst);
            let f = ctr.eval(&x);
            (x, f)
        } else {
            let x = along(-0.5, &worst);
            let f = ctr.eval(&x);
            (x, f)
        };
        if fc < fr.min(simplex[d].1) {
            simplex[d] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
            cfg.project(&mut x);
            let f = ctr.eval(&x);
            *v = (x, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lower: Vec<f64>, upper: Vec<f64>) -> OptimizerConfig {
        OptimizerConfig::new(lower, upper).unwrap()
    }

    #[test]
    fn interior_quadratic() {
        let c = cfg(vec![-10.0, 0.0], vec![10.0, 5.0]);
        let mut f = |x: &[f64]| (x[0] - 1.234).powi(2) + 3.0 * (x[1] - 0.777).powi(2) + 0.5 * x[0] * x[1];
        // minimizer of the coupled quadratic
        let det = 2.0 * 6.0 - 0.25;
        let bx = 2.0 * 1.234;
        let by = 6.0 * 0.777;
        let x0 = (6.0 * bx - 0.5 * by) / det;
        let y0 = (2.0 * by - 0.5 * bx) / det;
        let m = minimize_box(&mut f, &c).unwrap();
        assert!((m.point[0] - x0).abs() < 1e-6 && (m.point[1] - y0).abs() < 1e-6, "{:?}", m.point);
        assert!(m.value - f(&[x0, y0]) <= 1e-10);
    }

    #[test]
    fn boundary_minimum() {
        let c = cfg(vec![0.0, 0.0], vec![1.0, 1.0]);
        let mut f = |x: &[f64]| (x[0] + 1.0).powi(2) + (x[1] - 0.3).powi(2);
        let m = minimize_box(&mut f, &c).unwrap();
        assert_eq!(m.point[0], 0.0);
        assert!((m.point[1] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn grid_selects_global_basin() {
        // narrow deep well at 0.8, wide shallow one at −0.5
        let obj = |x: f64| -0.5 * (-(x + 0.5f64).powi(2) / 0.5).exp() - 1.0 * (-(x - 0.8f64).powi(2) / 0.02).exp();
        let c = cfg(vec![-2.0], vec![2.0]);
        let m = minimize_box(&mut |x: &[f64]| obj(x[0]), &c).unwrap();
        let (mut bx, mut bv) = (0.0, f64::INFINITY);
        for k in 0..=400_000 {
            let x = -2.0 + 4.0 * k as f64 / 400_000.0;
            if obj(x) < bv {
                bv = obj(x);
                bx = x;
            }
        }
        assert!((m.point[0] - bx).abs() < 1e-4);
        assert!(m.value <= bv + 1e-12);
    }

    #[test]
    fn never_worse_than_grid_and_inside_box() {
        let c = cfg(vec![-1.0, -1.0, 0.5], vec![1.0, 2.0, 3.0]);
        let mut f = |x: &[f64]| (3.0 * x[0]).sin() + (x[1] * x[2]).cos() + 0.1 * x[2];
        let m = minimize_box(&mut f, &c).unwrap();
        let grid_best = (0..17usize.pow(3)).map(|i| f(&c.grid_point(i))).fold(f64::INFINITY, f64::min);
        assert!(m.value <= grid_best);
        for k in 0..3 {
            assert!(m.point[k] >= c.lower[k] && m.point[k] <= c.upper[k]);
        }
    }

    #[test]
    fn deterministic() {
        let c = cfg(vec![-3.0, -3.0], vec![3.0, 3.0]);
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let a = minimize_box(&mut |x: &[f64]| rosen(x), &c).unwrap();
        let b = minimize_box(&mut |x: &[f64]| rosen(x), &c).unwrap();
        assert_eq!(a, b);
        assert!((a.point[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn budget_exhaustion_carries_best_point() {
        let mut c = cfg(vec![-3.0, -3.0], vec![3.0, 3.0]);
        c.max_evals = 17 * 17 + 10;
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        match minimize_box(&mut |x: &[f64]| rosen(x), &c) {
            Err(Error::Convergence { best_point, best_value, .. }) => {
                assert_eq!(best_point.len(), 2);
                assert!(best_value <= rosen(&[1.125, 1.125]));
            }
            other => panic!("expected a convergence error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_box() {
        assert!(OptimizerConfig::new(vec![1.0], vec![1.0]).is_err());
        assert!(OptimizerConfig::new(vec![0.0], vec![f64::INFINITY]).is_err());
        assert!(OptimizerConfig::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }
}
