//! Suboptimality factors, total variation distances, the matrix-Chebyshev
//! bound curve and quantile reduction over repetitions.

use serde::{Deserialize, Serialize};

use crate::christoffel::ChristoffelFunction;
use crate::error::{Error, Result};
use crate::linalg::{framing_constants, SpectralGramian};
use crate::measures::FeatureGrid;

/// Suboptimality factor `C / c` of `h` against `g_true`; `+inf` whenever
/// framing fails.
pub fn suboptimality(h: &SpectralGramian, g_true: &SpectralGramian) -> f64 {
    framing_constants(h, g_true)
        .map(|f| f.gamma)
        .unwrap_or(f64::INFINITY)
}

/// Total variation distance between the normalized densities `K_h / z_h`
/// and `K_g / z_g`, both by quadrature over the grid.
pub fn tv_distance(h: &SpectralGramian, g_true: &SpectralGramian, grid: &FeatureGrid) -> Result<f64> {
    let kh = grid.quadratic_values(ChristoffelFunction::new(h).precision());
    let kg = grid.quadratic_values(ChristoffelFunction::new(g_true).precision());
    let masses = grid.measure().cell_masses();
    let zh: f64 = kh.iter().zip(masses).map(|(k, m)| k * m).sum();
    let zg: f64 = kg.iter().zip(masses).map(|(k, m)| k * m).sum();
    if !(zh > 0.0 && zh.is_finite() && zg > 0.0 && zg.is_finite()) {
        return Err(Error::DegenerateDensity(format!("normalizations {zh} and {zg}")));
    }
    let total: f64 = kh
        .iter()
        .zip(&kg)
        .zip(masses)
        .map(|((a, b), m)| (a / zh - b / zg).abs() * m)
        .sum();
    Ok(0.5 * total)
}

/// Reference curve `(sqrt(kn) + a) / (sqrt(kn) - a)` with
/// `a = sqrt(d - 1) / sqrt(1 - p)`; `+inf` while `sqrt(kn) <= a`.
pub fn gamma_bound(kn: f64, d: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidSpec(format!("probability {p} outside (0, 1)")));
    }
    if !(kn > 0.0) || d == 0 {
        return Err(Error::InvalidSpec(format!("need kn > 0 and d >= 1, got kn = {kn}, d = {d}")));
    }
    let alpha = ((d - 1) as f64).sqrt() / (1.0 - p).sqrt();
    let root = kn.sqrt();
    if root <= alpha {
        return Ok(f64::INFINITY);
    }
    Ok((root + alpha) / (root - alpha))
}

/// `count` equispaced quantile levels from 0 to 1.
pub fn default_levels(count: usize) -> Vec<f64> {
    crate::cd_approx::linspace(0.0, 1.0, count)
}

/// Per-step quantiles of a scalar over repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTrace {
    pub experiment: String,
    pub method: String,
    pub steps: Vec<u64>,
    /// Cumulative sample counts aligned with `steps`.
    pub kn: Vec<u64>,
    pub levels: Vec<f64>,
    /// `values[i][j]`: quantile `levels[j]` at `steps[i]`.
    pub values: Vec<Vec<f64>>,
}

impl QuantileTrace {
    /// The quantile at `level` for step `step`, if both were recorded.
    pub fn at(&self, step: u64, level: f64) -> Option<f64> {
        let i = self.steps.iter().position(|&s| s == step)?;
        let j = self.levels.iter().position(|&l| l == level)?;
        Some(self.values[i][j])
    }

    /// Median row, interpolated from the stored values when 0.5 is not a level.
    pub fn median(&self) -> Vec<f64> {
        match self.levels.iter().position(|&l| l == 0.5) {
            Some(j) => self.values.iter().map(|row| row[j]).collect(),
            None => self
                .values
                .iter()
                .map(|row| interpolate(&self.levels, row, 0.5))
                .collect(),
        }
    }
}

fn interpolate(levels: &[f64], row: &[f64], level: f64) -> f64 {
    let j = levels.partition_point(|&l| l < level).min(levels.len() - 1);
    if j == 0 || levels[j] == level {
        return row[j];
    }
    let t = (level - levels[j - 1]) / (levels[j] - levels[j - 1]);
    lerp(row[j - 1], row[j], t)
}

/// Linear interpolation that keeps `inf` exact and avoids `inf * 0`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else if t == 1.0 || a == b {
        b
    } else if a.is_infinite() || b.is_infinite() {
        f64::INFINITY
    } else {
        a + (b - a) * t
    }
}

/// Empirical quantile with linear interpolation between order statistics;
/// `+inf` sorts last. `sorted` must be sorted ascending.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let position = level.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = position.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    lerp(sorted[lo], sorted[hi], position - lo as f64)
}

/// Reduce `traces[rep][step]` to per-step quantiles.
pub fn reduce_quantiles(
    experiment: &str,
    method: &str,
    steps: &[u64],
    kn: &[u64],
    traces: &[Vec<f64>],
    levels: &[f64],
) -> Result<QuantileTrace> {
    if traces.is_empty() {
        return Err(Error::InvalidSpec("no repetitions to reduce".into()));
    }
    if levels.is_empty() || levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidSpec("levels must be nonempty and sorted".into()));
    }
    if kn.len() != steps.len() || traces.iter().any(|t| t.len() != steps.len()) {
        return Err(Error::InvalidShape("traces do not match the step list".into()));
    }
    let mut values = Vec::with_capacity(steps.len());
    let mut column = Vec::with_capacity(traces.len());
    for i in 0..steps.len() {
        column.clear();
        column.extend(traces.iter().map(|t| t[i]));
        if column.iter().any(|v| v.is_nan()) {
            return Err(Error::NumericalError(format!("NaN in trace at step {}", steps[i])));
        }
        column.sort_by(f64::total_cmp);
        values.push(levels.iter().map(|&l| quantile_sorted(&column, l)).collect());
    }
    Ok(QuantileTrace {
        experiment: experiment.to_string(),
        method: method.to_string(),
        steps: steps.to_vec(),
        kn: kn.to_vec(),
        levels: levels.to_vec(),
        values,
    })
}

/// Median of a sample, `+inf` sorting last.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}
