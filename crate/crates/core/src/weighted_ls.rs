//! Weighted least-squares regression in a Legendre basis and the weights
//! that maximize `lambda_min(G_w)` under a cap on `lambda_max(G_w)`, used to
//! show how little reweighting a fixed sample can buy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionaries::{DictionarySpec, FeatureDictionary, Point};
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::measures::{build_measure, FeatureGrid, MeasureKind};
use crate::metrics::{reduce_quantiles, QuantileTrace};

/// Regression targets on `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// `sin(2 pi x)`.
    Sine,
    /// `1 / (1 + 25 x^2)`.
    Runge,
    /// `min(x^-2, 1000)`, equal to 1000 at the origin.
    CappedInverseSquare,
    /// Indicator of `[0, 1]`.
    Indicator,
    /// The normalized Legendre polynomial of degree 3 (lies in the span).
    Legendre3,
}

impl Target {
    pub const STUDY: [Target; 4] = [
        Target::Sine,
        Target::Runge,
        Target::CappedInverseSquare,
        Target::Indicator,
    ];

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Target::Sine => (2.0 * std::f64::consts::PI * x).sin(),
            Target::Runge => 1.0 / (1.0 + 25.0 * x * x),
            Target::CappedInverseSquare => {
                if x == 0.0 {
                    1e3
                } else {
                    (1.0 / (x * x)).min(1e3)
                }
            }
            Target::Indicator => {
                if (0.0..=1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Target::Legendre3 => 7f64.sqrt() * 0.5 * (5.0 * x * x * x - 3.0 * x),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Target::Sine => "sine",
            Target::Runge => "runge",
            Target::CappedInverseSquare => "capped-inverse-square",
            Target::Indicator => "indicator",
            Target::Legendre3 => "legendre3",
        }
    }
}

/// Rows `b(x_i)^T`.
pub fn design_matrix(dict: &FeatureDictionary, points: &[f64]) -> Result<DMatrix<f64>> {
    let d = dict.dimension();
    let mut m = DMatrix::zeros(points.len(), d);
    let mut row = vec![0.0; d];
    for (i, &x) in points.iter().enumerate() {
        dict.eval_into(&Point::scalar(x), &mut row)?;
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// `G_w = M^T diag(w) M`.
pub fn weighted_gramian(design: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut scaled = design.clone();
    for (mut row, &w) in scaled.row_iter_mut().zip(weights) {
        row *= w;
    }
    symmetrize(&(design.transpose() * scaled))
}

fn extreme_eigen(g: &DMatrix<f64>) -> (f64, DVector<f64>, f64, DVector<f64>) {
    let eig = SymmetricEigen::new(g.clone());
    let (mut lo, mut hi) = (0, 0);
    for i in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[lo] {
            lo = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[hi] {
            hi = i;
        }
    }
    (
        eig.eigenvalues[lo],
        eig.eigenvectors.column(lo).into_owned(),
        eig.eigenvalues[hi],
        eig.eigenvectors.column(hi).into_owned(),
    )
}

/// `(lambda_min, lambda_max)` of `G_w`.
pub fn weighted_extremes(design: &DMatrix<f64>, weights: &[f64]) -> (f64, f64) {
    let (lo, _, hi, _) = extreme_eigen(&weighted_gramian(design, weights));
    (lo, hi)
}

/// Coefficients of a weighted least-squares fit.
#[derive(Clone, Debug)]
pub struct LsFit {
    pub coefficients: DVector<f64>,
}

/// `argmin_c sum_i w_i (u_i - b(x_i)^T c)^2` by SVD of the row-scaled design.
pub fn weighted_lsq(design: &DMatrix<f64>, values: &[f64], weights: &[f64]) -> Result<LsFit> {
    let n = design.nrows();
    if values.len() != n || weights.len() != n {
        return Err(Error::InvalidShape(format!(
            "{n} rows, {} values, {} weights",
            values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidSpec("weights must be finite and nonnegative".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateDensity("all weights vanish".into()));
    }
    let mut a = design.clone();
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        let s = weights[i].sqrt();
        a.row_mut(i).scale_mut(s);
        rhs[i] = s * values[i];
    }
    let svd = a.svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max();
    let coefficients = svd
        .solve(&rhs, cutoff)
        .map_err(|e| Error::NumericalError(e.to_string()))?;
    Ok(LsFit { coefficients })
}

/// Reference quadrature on `[-1, 1]` for relative `L^2` errors.
#[derive(Clone, Debug)]
pub struct ErrorQuadrature {
    grid: FeatureGrid,
}

impl ErrorQuadrature {
    pub fn new(dict: &FeatureDictionary, cells: usize) -> Result<Self> {
        let measure = build_measure(MeasureKind::UniformSym, cells)?;
        Ok(Self {
            grid: FeatureGrid::new(measure, dict)?,
        })
    }

    /// Target values at the quadrature nodes.
    pub fn sample_target(&self, target: Target) -> Vec<f64> {
        self.grid.measure().nodes().iter().map(|&x| target.eval(x)).collect()
    }

    /// `||u - b^T c|| / ||u||` in `L^2` of the uniform probability measure.
    pub fn relative_error(&self, target_values: &[f64], coefficients: &DVector<f64>) -> f64 {
        let masses = self.grid.measure().cell_masses();
        let (mut residual, mut norm) = (0.0, 0.0);
        for (i, (&u, &mass)) in target_values.iter().zip(masses).enumerate() {
            let v: f64 = self
                .grid
                .features(i)
                .iter()
                .zip(coefficients.iter())
                .map(|(b, c)| b * c)
                .sum();
            residual += mass * (u - v) * (u - v);
            norm += mass * u * u;
        }
        (residual / norm).sqrt()
    }

    /// Coefficients of the `L^2` projection of the target.
    pub fn projection(&self, target_values: &[f64]) -> DVector<f64> {
        let d = self.grid.dimension();
        let masses = self.grid.measure().cell_masses();
        let mut c = DVector::zeros(d);
        for (i, (&u, &mass)) in target_values.iter().zip(masses).enumerate() {
            for (j, b) in self.grid.features(i).iter().enumerate() {
                c[j] += mass * u * b;
            }
        }
        c
    }
}

/// Settings for [`optimize_weights`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightOptimizer {
    pub cap: f64,
    pub iterations: usize,
    pub stall: f64,
}

impl Default for WeightOptimizer {
    fn default() -> Self {
        Self {
            cap: 2.0,
            iterations: 500,
            stall: 1e-8,
        }
    }
}

fn scale_to_cap(design: &DMatrix<f64>, weights: &mut [f64], cap: f64) -> (f64, f64) {
    let (lo, hi) = weighted_extremes(design, weights);
    if hi > 0.0 {
        let s = cap / hi;
        weights.iter_mut().for_each(|w| *w *= s);
        (lo * s, cap)
    } else {
        (lo, hi)
    }
}

/// Weights maximizing `lambda_min(G_w)` subject to `lambda_max(G_w) <= cap`.
///
/// After rescaling to the cap the objective is `cap / cond(G_w)`, so we
/// ascend `log lambda_min - log lambda_max` in log-weights with backtracking
/// and keep the best iterate, starting from uniform weights.
pub fn optimize_weights(design: &DMatrix<f64>, settings: WeightOptimizer) -> Result<Vec<f64>> {
    let n = design.nrows();
    if n == 0 {
        return Err(Error::InvalidSpec("need at least one point".into()));
    }
    if !(settings.cap > 0.0) {
        return Err(Error::InvalidSpec(format!("cap {} must be positive", settings.cap)));
    }
    let mut weights = vec![1.0 / n as f64; n];
    let (baseline_min, _) = scale_to_cap(design, &mut weights, settings.cap);
    if !(baseline_min > 0.0) {
        // singular for every weighting: the baseline is as good as anything
        return Ok(weights);
    }
    let mut log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut current = baseline_min.ln() - settings.cap.ln();
    let mut step = 1.0;
    let mut since_improvement = 0usize;

    for _ in 0..settings.iterations {
        let w: Vec<f64> = log_w.iter().map(|v| v.exp()).collect();
        let (lo, v_lo, hi, v_hi) = extreme_eigen(&weighted_gramian(design, &w));
        let direction: Vec<f64> = design
            .row_iter()
            .zip(&w)
            .map(|(row, wi)| {
                let a = row.dot(&v_lo.transpose());
                let b = row.dot(&v_hi.transpose());
                wi * (a * a / lo - b * b / hi)
            })
            .collect();
        let norm = direction.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            break;
        }
        let mut accepted = false;
        while step > 1e-12 {
            let trial: Vec<f64> = log_w
                .iter()
                .zip(&direction)
                .map(|(l, g)| l + step * g / norm)
                .collect();
            let tw: Vec<f64> = trial.iter().map(|v| v.exp()).collect();
            let (tlo, thi) = weighted_extremes(design, &tw);
            let value = if tlo > 0.0 { tlo.ln() - thi.ln() } else { f64::NEG_INFINITY };
            if value > current {
                let gain = value - current;
                current = value;
                log_w = trial;
                step *= 1.5;
                accepted = true;
                since_improvement = if gain < settings.stall { since_improvement + 1 } else { 0 };
                break;
            }
            step *= 0.5;
        }
        if !accepted || since_improvement >= 10 {
            break;
        }
    }

    // rescale, normalizing the log-weights to avoid overflow
    let shift = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut candidate: Vec<f64> = log_w.iter().map(|v| (v - shift).exp()).collect();
    let (candidate_min, _) = scale_to_cap(design, &mut candidate, settings.cap);
    Ok(if candidate_min > baseline_min { candidate } else { weights })
}

/// One row of the reweighting study.
#[derive(Clone, Debug, PartialEq)]
pub struct WlsRecord {
    pub target: Target,
    pub n: usize,
    pub rep: usize,
    pub method: &'static str,
    pub rel_error: f64,
}

/// Parameters of the reweighting study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WlsStudy {
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_targets")]
    pub targets: Vec<Target>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_cells")]
    pub quadrature_cells: usize,
    #[serde(default = "default_cap")]
    pub cap: f64,
}

fn default_n_grid() -> Vec<usize> {
    vec![10, 14, 20, 28, 40, 57, 80, 113, 160]
}

fn default_targets() -> Vec<Target> {
    Target::STUDY.to_vec()
}

fn default_dimension() -> usize {
    10
}

fn default_cells() -> usize {
    100_000
}

fn default_cap() -> f64 {
    2.0
}

impl Default for WlsStudy {
    fn default() -> Self {
        Self {
            n_grid: default_n_grid(),
            targets: default_targets(),
            dimension: default_dimension(),
            quadrature_cells: default_cells(),
            cap: default_cap(),
        }
    }
}

/// Uniform points on `[-1, 1]` for repetition `rep` at sample size `n`.
pub fn study_points(seed: u64, rep: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ rep as u64);
    rng.set_stream(n as u64);
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Naive (`w = 1/n`) and optimized-weight errors for every target, sample
/// size and repetition. Rows come out ordered by `(n, rep, target, method)`.
pub fn run_study(study: &WlsStudy, repetitions: usize, seed: u64) -> Result<Vec<WlsRecord>> {
    if repetitions == 0 || study.n_grid.is_empty() || study.targets.is_empty() {
        return Err(Error::InvalidSpec("study needs repetitions, sample sizes and targets".into()));
    }
    let dict = FeatureDictionary::build(
        &DictionarySpec::Legendre {
            dimension: study.dimension,
        },
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    let quadrature = ErrorQuadrature::new(&dict, study.quadrature_cells)?;
    let target_values: Vec<Vec<f64>> = study
        .targets
        .iter()
        .map(|&t| quadrature.sample_target(t))
        .collect();
    let cells: Vec<(usize, usize)> = study
        .n_grid
        .iter()
        .flat_map(|&n| (0..repetitions).map(move |rep| (n, rep)))
        .collect();
    let rows: Result<Vec<Vec<WlsRecord>>> = cells
        .par_iter()
        .map(|&(n, rep)| {
            let points = study_points(seed, rep, n);
            let design = design_matrix(&dict, &points)?;
            let naive = vec![1.0 / n as f64; n];
            let optimal = optimize_weights(
                &design,
                WeightOptimizer {
                    cap: study.cap,
                    ..WeightOptimizer::default()
                },
            )?;
            let mut out = Vec::new();
            for (t, &target) in study.targets.iter().enumerate() {
                let values: Vec<f64> = points.iter().map(|&x| target.eval(x)).collect();
                for (method, weights) in [("naive", &naive), ("optimal", &optimal)] {
                    let fit = weighted_lsq(&design, &values, weights)?;
                    out.push(WlsRecord {
                        target,
                        n,
                        rep,
                        method,
                        rel_error: quadrature.relative_error(&target_values[t], &fit.coefficients),
                    });
                }
            }
            Ok(out)
        })
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Quantiles over repetitions, one trace per `(target, method)`, with the
/// sample size in place of the step.
pub fn reduce_study(records: &[WlsRecord], levels: &[f64]) -> Result<Vec<QuantileTrace>> {
    let mut keys: Vec<(Target, &'static str)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.target, r.method)) {
            keys.push((r.target, r.method));
        }
    }
    let mut traces = Vec::new();
    for (target, method) in keys {
        let rows: Vec<&WlsRecord> = records
            .iter()
            .filter(|r| r.target == target && r.method == method)
            .collect();
        let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let reps = rows.iter().map(|r| r.rep).max().unwrap_or(0) + 1;
        let mut per_rep = vec![vec![f64::NAN; ns.len()]; reps];
        for r in &rows {
            let i = ns.binary_search(&r.n).unwrap();
            per_rep[r.rep][i] = r.rel_error;
        }
        let steps: Vec<u64> = ns.iter().map(|&n| n as u64).collect();
        traces.push(reduce_quantiles(target.label(), method, &steps, &steps, &per_rep, levels)?);
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn legendre(d: usize) -> FeatureDictionary {
        FeatureDictionary::build(&DictionarySpec::Legendre { dimension: d }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn uniform_points(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    #[test]
    fn span_member_is_reproduced() {
        let dict = legendre(10);
        let quad = ErrorQuadrature::new(&dict, 20_000).unwrap();
        let points = uniform_points(40, 1);
        let design = design_matrix(&dict, &points).unwrap();
        let values: Vec<f64> = points.iter().map(|&x| Target::Legendre3.eval(x)).collect();
        let fit = weighted_lsq(&design, &values, &vec![1.0 / 40.0; 40]).unwrap();
        let error = quad.relative_error(&quad.sample_target(Target::Legendre3), &fit.coefficients);
        assert!(error <= 1e-8, "{error}");
    }

    #[test]
    fn square_system_interpolates() {
        let dict = legendre(10);
        let points = uniform_points(10, 2);
        let design = design_matrix(&dict, &points).unwrap();
        let values: Vec<f64> = points.iter().map(|&x| Target::Runge.eval(x)).collect();
        let fit = weighted_lsq(&design, &values, &[0.1; 10]).unwrap();
        let residual = (&design * &fit.coefficients - DVector::from_vec(values)).amax();
        assert!(residual <= 1e-8, "{residual}");
    }

    #[test]
    fn sine_error_close_to_projection() {
        let dict = legendre(10);
        let quad = ErrorQuadrature::new(&dict, 20_000).unwrap();
        let target = quad.sample_target(Target::Sine);
        let best = quad.relative_error(&target, &quad.projection(&target));
        let points = uniform_points(200, 3);
        let design = design_matrix(&dict, &points).unwrap();
        let values: Vec<f64> = points.iter().map(|&x| Target::Sine.eval(x)).collect();
        let fit = weighted_lsq(&design, &values, &[1.0 / 200.0; 200]).unwrap();
        let error = quad.relative_error(&target, &fit.coefficients);
        assert!(error >= best * (1.0 - 1e-9) && error <= 2.0 * best, "{error} vs {best}");
    }

    #[test]
    fn zero_weights_are_rejected() {
        let design = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(
            weighted_lsq(&design, &[1.0; 3], &[0.0; 3]),
            Err(Error::DegenerateDensity(_))
        ));
    }

    #[test]
    fn scalar_basis_attains_the_cap() {
        let dict = legendre(1);
        let design = design_matrix(&dict, &uniform_points(7, 4)).unwrap();
        let w = optimize_weights(&design, WeightOptimizer::default()).unwrap();
        let (lo, hi) = weighted_extremes(&design, &w);
        assert!((lo - 2.0).abs() < 1e-12 && (hi - 2.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn symmetric_points_match_parameter_sweep() {
        // basis (1, sqrt(3) x) at +-x0 and an asymmetric third point; sweep
        // the weight split between the symmetric pair on a fine grid
        let dict = legendre(2);
        let points = [-0.6, 0.6, 0.1];
        let design = design_matrix(&dict, &points).unwrap();
        let w = optimize_weights(&design, WeightOptimizer::default()).unwrap();
        let (found, _) = weighted_extremes(&design, &w);
        let mut best: f64 = 0.0;
        for i in 1..400 {
            for j in 0..400 {
                let a = i as f64 / 400.0;
                let c = j as f64 / 400.0;
                let mut trial = vec![a, 1.0 - a, c];
                let (lo, _) = scale_to_cap(&design, &mut trial, 2.0);
                best = best.max(lo);
            }
        }
        assert!(found >= best - 1e-3, "{found} vs sweep {best}");
    }

    #[test]
    fn optimizer_is_feasible_and_beats_uniform() {
        let dict = legendre(10);
        for seed in 0..20 {
            let n = 10 + 3 * seed as usize;
            let design = design_matrix(&dict, &uniform_points(n, 100 + seed)).unwrap();
            let w = optimize_weights(&design, WeightOptimizer::default()).unwrap();
            let (lo, hi) = weighted_extremes(&design, &w);
            let mut uniform = vec![1.0; n];
            let (base, _) = scale_to_cap(&design, &mut uniform, 2.0);
            assert!(hi <= 2.0 + 1e-9);
            assert!(lo >= base * (1.0 - 1e-12), "{lo} < {base}");
        }
    }

    #[test]
    fn error_bound_direction() {
        let dict = legendre(10);
        let quad = ErrorQuadrature::new(&dict, 20_000).unwrap();
        for (seed, target) in Target::STUDY.iter().enumerate() {
            let values_grid = quad.sample_target(*target);
            let best_coeffs = quad.projection(&values_grid);
            let points = uniform_points(30, 50 + seed as u64);
            let design = design_matrix(&dict, &points).unwrap();
            let w = optimize_weights(&design, WeightOptimizer::default()).unwrap();
            let values: Vec<f64> = points.iter().map(|&x| target.eval(x)).collect();
            let fit = weighted_lsq(&design, &values, &w).unwrap();
            let (lo, _) = weighted_extremes(&design, &w);
            let norm2: f64 = {
                let m = quad.grid.measure();
                values_grid.iter().zip(m.cell_masses()).map(|(u, c)| u * u * c).sum()
            };
            let err2 = quad.relative_error(&values_grid, &fit.coefficients).powi(2) * norm2;
            let best2 = quad.relative_error(&values_grid, &best_coeffs).powi(2) * norm2;
            let residual = DVector::from_vec(values) - &design * &best_coeffs;
            let weighted: f64 = residual.iter().zip(&w).map(|(r, wi)| wi * r * r).sum();
            assert!(err2 <= best2 + weighted / lo + 1e-9 * norm2, "{target:?}");
        }
    }

    #[test]
    fn study_is_deterministic() {
        let study = WlsStudy {
            n_grid: vec![10, 20],
            quadrature_cells: 2_000,
            ..WlsStudy::default()
        };
        let a = run_study(&study, 2, 5).unwrap();
        let b = run_study(&study, 2, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * 2 * 4 * 2);
        let traces = reduce_study(&a, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(traces.len(), 8);
    }
}
