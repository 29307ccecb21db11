//! Iterative Gramian refinement.
//!
//! Starting from a plain Monte Carlo estimate, every step draws `n` points
//! from the mixture measure built from the current estimate, forms the
//! importance-weighted outer-product estimate and folds it into a running
//! average. The naive baseline replaces the mixture by the reference measure
//! and the weights by one.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::christoffel::{estimate_z_hat, ChristoffelFunction, MixtureDensity, MixtureWeights};
use crate::dictionaries::{FeatureDictionary, Point};
use crate::error::{Error, Result};
use crate::linalg::{SpectralGramian, SpectralOptions, DEFAULT_FLOOR_EPSILON};
use crate::measures::FeatureGrid;
use crate::metrics::suboptimality;

/// Regularizer `J_k` of the mixture measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JPolicy {
    Zero,
    /// `J_k = I / k`.
    ScaledIdentity,
    /// `J_k = G_k / D`.
    ScaledSelf,
}

impl JPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            JPolicy::Zero => "zero",
            JPolicy::ScaledIdentity => "scaled-identity",
            JPolicy::ScaledSelf => "scaled-self",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Exact normalization, no regularizer.
    ExactWeights,
    /// Monte Carlo normalization from `m` reference draws and a `J` policy.
    EstimatedWeights,
    /// Unweighted reference-measure samples.
    NaiveMc,
}

/// Lower bound `c_k` on the nonzero eigenvalues of the `k`-th estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case")]
pub enum MinEigSchedule {
    /// `scale * (k - 1) / k`.
    RunningAverage { scale: f64 },
    /// `initial / k`.
    Decaying { initial: f64 },
    Constant { value: f64 },
}

impl Default for MinEigSchedule {
    fn default() -> Self {
        Self::RunningAverage { scale: 1.0 }
    }
}

impl MinEigSchedule {
    pub fn value(&self, k: u64) -> f64 {
        let k = k.max(1) as f64;
        match *self {
            Self::RunningAverage { scale } => scale * (k - 1.0) / k,
            Self::Decaying { initial } => initial / k,
            Self::Constant { value } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        let parameter = match *self {
            Self::RunningAverage { scale } => scale,
            Self::Decaying { initial } => initial,
            Self::Constant { value } => value,
        };
        if parameter > 0.0 && parameter.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("eigenvalue schedule parameter {parameter} must be positive")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(default)]
    pub min_eig: Option<MinEigSchedule>,
    /// Rescale so the `(0, 0)` entry is one.
    #[serde(default)]
    pub pin_b1: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_policy")]
    pub j_policy: JPolicy,
    pub mode: Mode,
    pub k_max: u64,
    #[serde(default = "default_floor")]
    pub floor_epsilon: f64,
    #[serde(default)]
    pub constraint: Constraint,
    #[serde(default)]
    pub seed: u64,
}

fn default_m() -> usize {
    1
}

fn default_policy() -> JPolicy {
    JPolicy::Zero
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR_EPSILON
}

impl RefinementConfig {
    pub fn new(mode: Mode, n: usize, k_max: u64) -> Self {
        Self {
            n,
            m: 1,
            j_policy: JPolicy::Zero,
            mode,
            k_max,
            floor_epsilon: DEFAULT_FLOOR_EPSILON,
            constraint: Constraint::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k_max == 0 {
            return Err(Error::InvalidSpec("n, m and k_max must be at least 1".into()));
        }
        if !(self.floor_epsilon >= 0.0) || !self.floor_epsilon.is_finite() {
            return Err(Error::InvalidSpec(format!("floor epsilon {}", self.floor_epsilon)));
        }
        if let Some(schedule) = &self.constraint.min_eig {
            schedule.validate()?;
        }
        Ok(())
    }

    pub fn spectral_options(&self) -> SpectralOptions {
        SpectralOptions::default().with_floor(self.floor_epsilon)
    }
}

/// Step counter, running estimate, sample tally and random stream.
#[derive(Clone, Debug)]
pub struct RefinementState {
    pub k: u64,
    pub g_hat: SpectralGramian,
    pub cumulative_samples: u64,
    pub rng: ChaCha8Rng,
}

impl RefinementState {
    /// Same estimate and counters with a different random stream.
    pub fn fork(&self, rng: ChaCha8Rng) -> Self {
        Self {
            k: self.k,
            g_hat: self.g_hat.clone(),
            cumulative_samples: self.cumulative_samples,
            rng,
        }
    }
}

fn outer_average(
    dict: &FeatureDictionary,
    points: impl IntoIterator<Item = (Point, f64)>,
    count: usize,
) -> Result<DMatrix<f64>> {
    let dim = dict.dimension();
    let mut sum = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for (point, weight) in points {
        dict.eval_into(&point, b.as_mut_slice())?;
        sum.ger(weight, &b, &b, 1.0);
    }
    Ok(sum / count as f64)
}

/// Initial estimate `(1/n) sum B(x_i) B(x_i)^T` from reference draws; `k = 1`.
pub fn init_gramian(
    dict: &FeatureDictionary,
    grid: &FeatureGrid,
    n: usize,
    options: SpectralOptions,
    mut rng: ChaCha8Rng,
) -> Result<RefinementState> {
    if n == 0 {
        return Err(Error::InvalidSpec("n must be at least 1".into()));
    }
    let points: Vec<Point> = (0..n)
        .map(|_| grid.measure().sample_reference(&mut rng))
        .collect();
    init_from_points(dict, &points, options, rng)
}

/// Initial estimate from given points.
pub fn init_from_points(
    dict: &FeatureDictionary,
    points: &[Point],
    options: SpectralOptions,
    rng: ChaCha8Rng,
) -> Result<RefinementState> {
    if points.is_empty() {
        return Err(Error::InvalidSpec("need at least one initial point".into()));
    }
    let g0 = outer_average(dict, points.iter().map(|&p| (p, 1.0)), points.len())?;
    Ok(RefinementState {
        k: 1,
        g_hat: SpectralGramian::with_options(g0, options)?,
        cumulative_samples: points.len() as u64,
        rng,
    })
}

/// Regularizer mass `<P, J_k>` for the floored inverse `P` of `g_hat`.
pub fn regularizer_mass(policy: JPolicy, precision: &DMatrix<f64>, g_hat: &SpectralGramian, k: u64) -> f64 {
    match policy {
        JPolicy::Zero => 0.0,
        JPolicy::ScaledIdentity => precision.trace() / k as f64,
        JPolicy::ScaledSelf => precision.dot(g_hat.matrix()) / g_hat.dim() as f64,
    }
}

/// Importance-weighted half-step estimate drawn from the mixture measure of
/// the current estimate. Consumes the state's random stream.
pub fn half_step(
    state: &mut RefinementState,
    config: &RefinementConfig,
    dict: &FeatureDictionary,
    grid: &FeatureGrid,
) -> Result<DMatrix<f64>> {
    let christoffel = ChristoffelFunction::new(&state.g_hat);
    let weights = match config.mode {
        Mode::ExactWeights => MixtureWeights::exact(christoffel.normalization(grid.quadrature_gramian())?),
        Mode::EstimatedWeights => {
            let zbar = regularizer_mass(config.j_policy, christoffel.precision(), &state.g_hat, state.k);
            let z_hat = estimate_z_hat(&christoffel, grid, config.m, &mut state.rng)?;
            MixtureWeights::estimated(zbar, z_hat, config.m)
        }
        Mode::NaiveMc => return naive_half_step(state, config.n, dict, grid),
    };
    let mixture = MixtureDensity::from_christoffel(christoffel, weights)?;
    let draws = grid.sample_mixture(
        mixture.christoffel().precision(),
        weights.zbar,
        config.n,
        &mut state.rng,
    )?;
    // the sampling density is constant on cells, so the weights are too
    let weighted = draws.iter().map(|draw| {
        let k_value = mixture.christoffel().eval_features(grid.features(draw.cell));
        (draw.point, mixture.weight_from(k_value))
    });
    outer_average(dict, weighted, config.n)
}

fn naive_half_step(
    state: &mut RefinementState,
    n: usize,
    dict: &FeatureDictionary,
    grid: &FeatureGrid,
) -> Result<DMatrix<f64>> {
    let points: Vec<Point> = (0..n)
        .map(|_| grid.measure().sample_reference(&mut state.rng))
        .collect();
    outer_average(dict, points.into_iter().map(|p| (p, 1.0)), n)
}

/// Fold a half-step estimate into the running average, advance `k` and apply
/// the constraints.
pub fn apply_half_step(
    state: &mut RefinementState,
    config: &RefinementConfig,
    half: &DMatrix<f64>,
) -> Result<()> {
    let k = state.k as f64;
    let mut next = state.g_hat.matrix() * (k / (k + 1.0)) + half * (1.0 / (k + 1.0));
    state.k += 1;
    state.cumulative_samples += config.n as u64;
    let options = config.spectral_options();
    if let Some(schedule) = &config.constraint.min_eig {
        let c = schedule.value(state.k);
        if c > 0.0 {
            let current = SpectralGramian::with_options(next, options)?;
            let threshold = options.rank_tolerance * current.lambda_max();
            next = current.map_spectrum(|v| if v > threshold { v.max(c) } else { v });
        }
    }
    if config.constraint.pin_b1 {
        let corner = next[(0, 0)];
        if corner > 0.0 {
            next /= corner;
        }
    }
    state.g_hat = SpectralGramian::with_options(next, options)?;
    Ok(())
}

/// One refinement step; returns the half-step estimate that was folded in.
pub fn refine_step(
    state: &mut RefinementState,
    config: &RefinementConfig,
    dict: &FeatureDictionary,
    grid: &FeatureGrid,
) -> Result<DMatrix<f64>> {
    let half = half_step(state, config, dict, grid)?;
    apply_half_step(state, config, &half)?;
    Ok(half)
}

/// One step of the unweighted reference-sampling baseline.
pub fn naive_mc_step(
    state: &mut RefinementState,
    config: &RefinementConfig,
    dict: &FeatureDictionary,
    grid: &FeatureGrid,
) -> Result<DMatrix<f64>> {
    let half = naive_half_step(state, config.n, dict, grid)?;
    apply_half_step(state, config, &half)?;
    Ok(half)
}

/// Which steps end up in a trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RecordSchedule {
    /// `1, ..., 9, 10, 20, ..., 90, 100, 200, ...` plus the last step.
    LogSpaced,
    /// Step 1, every multiple of `stride`, and the last step.
    Every { stride: u64 },
}

impl RecordSchedule {
    pub fn from_stride(stride: Option<u64>) -> Self {
        match stride {
            Some(stride) => Self::Every { stride: stride.max(1) },
            None => Self::LogSpaced,
        }
    }

    pub fn includes(&self, k: u64, k_max: u64) -> bool {
        if k == 1 || k == k_max {
            return true;
        }
        match *self {
            Self::LogSpaced => {
                let mut scale = 1;
                while k / scale >= 10 {
                    scale *= 10;
                }
                k % scale == 0
            }
            Self::Every { stride } => k % stride == 0,
        }
    }

    pub fn steps(&self, k_max: u64) -> Vec<u64> {
        (1..=k_max).filter(|&k| self.includes(k, k_max)).collect()
    }
}

/// A recorded diagnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub step: u64,
    pub kn: u64,
    pub gamma: f64,
}

/// Advance `state` up to `config.k_max`, recording the suboptimality factor
/// against `g_true` on scheduled steps (including the starting one).
/// `on_record` sees the state at every recorded step.
pub fn run_refinement(
    config: &RefinementConfig,
    dict: &FeatureDictionary,
    grid: &FeatureGrid,
    g_true: &SpectralGramian,
    schedule: RecordSchedule,
    mut state: RefinementState,
    mut on_record: impl FnMut(&RefinementState),
) -> Result<Vec<TracePoint>> {
    config.validate()?;
    let mut trace = Vec::new();
    loop {
        if schedule.includes(state.k, config.k_max) {
            trace.push(TracePoint {
                step: state.k,
                kn: state.cumulative_samples,
                gamma: suboptimality(&state.g_hat, g_true),
            });
            on_record(&state);
        }
        if state.k >= config.k_max {
            break;
        }
        match config.mode {
            Mode::NaiveMc => naive_mc_step(&mut state, config, dict, grid)?,
            _ => refine_step(&mut state, config, dict, grid)?,
        };
    }
    Ok(trace)
}
