//! Christoffel-Darboux approximation of a function from the moment matrix of
//! the measure carried by its graph.
//!
//! For a bivariate monomial dictionary `x^j y^k` the approximation at `x` is
//! the minimizer over `y` of the inverse Christoffel function `K(x, y)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::linalg::SpectralGramian;

/// Quantile function of the standard Gaussian.
///
/// Starts from the inverse complementary error function and polishes with
/// Newton steps on the lower tail, where `erfc` keeps full relative accuracy.
pub fn gaussian_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -gaussian_quantile(1.0 - p);
    }
    let mut x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..6 {
        let cdf = 0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2);
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf == 0.0 {
            break;
        }
        let step = (cdf - p) / pdf;
        x -= step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// The sigmoid-like test function `(q(eps) - q((1 - 2 eps) x + eps)) / (2 q(eps))`.
pub fn target_f(epsilon: f64, x: f64) -> f64 {
    let qe = gaussian_quantile(epsilon);
    let value = (qe - gaussian_quantile((1.0 - 2.0 * epsilon) * x + epsilon)) / (2.0 * qe);
    if value <= 0.0 {
        0.0
    } else {
        value.min(1.0)
    }
}

/// Target parameter, per-axis degree and evaluation grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdProblem {
    pub epsilon: f64,
    pub degree: usize,
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
}

impl Default for CdProblem {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            degree: 8,
            x_grid: linspace(0.0, 1.0, 201),
            y_grid: linspace(0.0, 1.0, 1000),
        }
    }
}

/// `count` equispaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    b
                } else {
                    a + (b - a) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

impl CdProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidSpec(format!("epsilon {} outside (0, 0.5)", self.epsilon)));
        }
        if self.degree == 0 {
            return Err(Error::InvalidSpec("degree must be positive".into()));
        }
        for (name, grid) in [("x", &self.x_grid), ("y", &self.y_grid)] {
            if grid.is_empty()
                || grid.iter().any(|v| !(0.0..=1.0).contains(v))
                || grid.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(Error::InvalidSpec(format!(
                    "{name} grid must be strictly increasing inside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Target values on the x grid.
    pub fn truth(&self) -> Vec<f64> {
        self.x_grid.iter().map(|&x| target_f(self.epsilon, x)).collect()
    }
}

/// Evaluates `K(x, y)` on a tensor grid, reducing the precision matrix to a
/// `degree x degree` matrix in `y` once per `x`.
struct SliceEvaluator<'a> {
    precision: &'a DMatrix<f64>,
    degree: usize,
}

impl SliceEvaluator<'_> {
    fn slice(&self, x: f64) -> DMatrix<f64> {
        let d = self.degree;
        let xs: Vec<f64> = (0..d).map(|j| x.powi(j as i32)).collect();
        let mut q = DMatrix::zeros(d, d);
        for j in 0..d {
            for jp in 0..d {
                let scale = xs[j] * xs[jp];
                for k in 0..d {
                    for kp in 0..d {
                        q[(k, kp)] += scale * self.precision[(j * d + k, jp * d + kp)];
                    }
                }
            }
        }
        q
    }

    fn eval(q: &DMatrix<f64>, y: f64) -> f64 {
        let d = q.nrows();
        let ys: Vec<f64> = (0..d).map(|k| y.powi(k as i32)).collect();
        let mut total = 0.0;
        for k in 0..d {
            let mut acc = 0.0;
            for kp in 0..d {
                acc += q[(k, kp)] * ys[kp];
            }
            total += acc * ys[k];
        }
        total
    }
}

fn evaluator<'a>(precision: &'a DMatrix<f64>, problem: &CdProblem) -> Result<SliceEvaluator<'a>> {
    problem.validate()?;
    let dim = problem.degree * problem.degree;
    if precision.shape() != (dim, dim) {
        return Err(Error::InvalidShape(format!(
            "moment matrix {:?} does not match degree {}",
            precision.shape(),
            problem.degree
        )));
    }
    Ok(SliceEvaluator {
        precision,
        degree: problem.degree,
    })
}

/// `f_d(x) = argmin_y K_h(x, y)` over the grids of `problem`; ties go to the
/// smallest `y`.
pub fn cd_approximation(h: &SpectralGramian, problem: &CdProblem) -> Result<Vec<f64>> {
    let precision = h.pinv_floored();
    let eval = evaluator(&precision, problem)?;
    Ok(problem
        .x_grid
        .iter()
        .map(|&x| {
            let q = eval.slice(x);
            let mut best = (f64::INFINITY, problem.y_grid[0]);
            for &y in &problem.y_grid {
                let value = SliceEvaluator::eval(&q, y);
                if value < best.0 {
                    best = (value, y);
                }
            }
            best.1
        })
        .collect())
}

/// `K_h(x_i, y_j)` with rows indexed by the x grid.
pub fn christoffel_levels(h: &SpectralGramian, problem: &CdProblem) -> Result<DMatrix<f64>> {
    let precision = h.pinv_floored();
    let eval = evaluator(&precision, problem)?;
    let mut levels = DMatrix::zeros(problem.x_grid.len(), problem.y_grid.len());
    for (i, &x) in problem.x_grid.iter().enumerate() {
        let q = eval.slice(x);
        for (j, &y) in problem.y_grid.iter().enumerate() {
            levels[(i, j)] = SliceEvaluator::eval(&q, y);
        }
    }
    Ok(levels)
}

/// Largest `|approx - truth|` over x grid points inside `[lo, hi]`.
pub fn max_error(problem: &CdProblem, approx: &[f64], lo: f64, hi: f64) -> f64 {
    problem
        .x_grid
        .iter()
        .zip(approx)
        .filter(|(x, _)| (lo..=hi).contains(*x))
        .map(|(&x, &a)| (a - target_f(problem.epsilon, x)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bisection on `erfc`, independent of the Newton path.
    fn quantile_by_bisection(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 0.5 * erfc(-mid / std::f64::consts::SQRT_2) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_matches_bisection() {
        for p in [1e-12, 1e-6, 1e-3, 0.01, 0.2, 0.5, 0.7, 0.999] {
            let q = gaussian_quantile(p);
            let oracle = quantile_by_bisection(p);
            assert!((q - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{p}: {q} vs {oracle}");
        }
        // tabulated value
        assert!((gaussian_quantile(0.975) - 1.959963984540054).abs() < 1e-14);
    }

    #[test]
    fn target_fixed_points() {
        let eps = 1e-3;
        assert_eq!(target_f(eps, 0.0), 0.0);
        assert!((target_f(eps, 1.0) - 1.0).abs() < 1e-15);
        assert!((target_f(eps, 0.5) - 0.5).abs() < 1e-15);
        let x = 0.25;
        let qe = quantile_by_bisection(eps);
        let oracle = (qe - quantile_by_bisection((1.0 - 2.0 * eps) * x + eps)) / (2.0 * qe);
        assert!((target_f(eps, x) - oracle).abs() < 1e-12);
    }

    #[test]
    fn identity_moments_pick_zero_at_origin() {
        let problem = CdProblem {
            degree: 3,
            x_grid: vec![0.0, 0.5],
            y_grid: linspace(0.0, 1.0, 11),
            ..CdProblem::default()
        };
        let h = SpectralGramian::identity(9);
        let approx = cd_approximation(&h, &problem).unwrap();
        assert_eq!(approx[0], 0.0);
        // |B|^2 is increasing in y for nonnegative x
        assert_eq!(approx[1], 0.0);
    }

    #[test]
    fn slice_matches_direct_evaluation() {
        let problem = CdProblem {
            degree: 3,
            x_grid: vec![0.3],
            y_grid: vec![0.7],
            ..CdProblem::default()
        };
        let p = DMatrix::from_fn(9, 9, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let h = SpectralGramian::new(p.clone()).unwrap();
        let levels = christoffel_levels(&h, &problem).unwrap();
        let precision = h.pinv_floored();
        let b: Vec<f64> = (0..3)
            .flat_map(|j| (0..3).map(move |k| 0.3f64.powi(j) * 0.7f64.powi(k)))
            .collect();
        let direct = crate::linalg::quadratic_form(&precision, &b);
        assert!((levels[(0, 0)] - direct).abs() <= 1e-9 * direct.abs());
    }

    #[test]
    fn rejects_bad_grids() {
        let problem = CdProblem {
            y_grid: vec![0.5, 0.2],
            ..CdProblem::default()
        };
        assert!(problem.validate().is_err());
    }
}
