//! Feature dictionaries `B : X -> R^D` and, where they are known in closed
//! form, their Gramians.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpectralGramian;
use crate::measures::MeasureKind;

/// A point of the sample space: a scalar or a planar point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    coords: [f64; 2],
    dim: usize,
}

impl Point {
    pub fn scalar(x: f64) -> Self {
        Self {
            coords: [x, 0.0],
            dim: 1,
        }
    }

    pub fn planar(x: f64, y: f64) -> Self {
        Self {
            coords: [x, y],
            dim: 2,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    /// Second coordinate; 0 for scalar points.
    pub fn y(&self) -> f64 {
        self.coords[1]
    }
}

/// Declarative description of a dictionary, as stored in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DictionarySpec {
    /// Probabilists' Hermite polynomials of degree `0..dimension`, orthonormal
    /// under the standard Gaussian.
    Hermite { dimension: usize },
    /// Monomials `x^j`, `j = 0..dimension`.
    Monomial { dimension: usize },
    /// `S b` for monomials `b` of degree `0..degree` and a Gaussian
    /// `features x degree` mixing matrix `S` of full column rank.
    RandomMixed { degree: usize, features: usize },
    /// Indicators of the intervals between consecutive breakpoints.
    Step { breakpoints: Vec<f64> },
    /// `x^j y^k` for `j, k = 0..degree`, flattened as `j * degree + k`.
    BivariateMonomial { degree: usize },
    /// Legendre polynomials of degree `0..dimension`, orthonormal under the
    /// uniform probability measure on `[-1, 1]`.
    Legendre { dimension: usize },
}

impl DictionarySpec {
    pub fn hermite(dimension: usize) -> Self {
        Self::Hermite { dimension }
    }

    /// 16 random mixtures of the monomials of degree 0..7.
    pub fn random_mixed_default() -> Self {
        Self::RandomMixed {
            degree: 8,
            features: 16,
        }
    }

    /// Indicators of `[0, 2^-levels], [2^-levels, 2^-(levels-1)], ..., [1/2, 1]`.
    pub fn dyadic_step(levels: u32) -> Self {
        Self::Step {
            breakpoints: dyadic_breakpoints(levels),
        }
    }
}

/// `(0, 2^-levels, 2^-(levels-1), ..., 1)`.
pub fn dyadic_breakpoints(levels: u32) -> Vec<f64> {
    let mut breakpoints = vec![0.0];
    breakpoints.extend((0..=levels).rev().map(|j| 0.5f64.powi(j as i32)));
    breakpoints
}

#[derive(Clone, Debug)]
enum Family {
    Hermite(usize),
    Monomial(usize),
    RandomMixed { mixing: DMatrix<f64> },
    Step { breakpoints: Vec<f64> },
    BivariateMonomial(usize),
    Legendre(usize),
}

/// An evaluatable dictionary.
#[derive(Clone, Debug)]
pub struct FeatureDictionary {
    spec: DictionarySpec,
    family: Family,
}

impl FeatureDictionary {
    /// Build a dictionary; `rng` is only consumed by the random mixture.
    pub fn build<R: Rng + ?Sized>(spec: &DictionarySpec, rng: &mut R) -> Result<Self> {
        let family = match spec {
            DictionarySpec::Hermite { dimension } => Family::Hermite(positive(*dimension)?),
            DictionarySpec::Monomial { dimension } => Family::Monomial(positive(*dimension)?),
            DictionarySpec::Legendre { dimension } => Family::Legendre(positive(*dimension)?),
            DictionarySpec::BivariateMonomial { degree } => {
                Family::BivariateMonomial(positive(*degree)?)
            }
            DictionarySpec::RandomMixed { degree, features } => {
                let degree = positive(*degree)?;
                let features = positive(*features)?;
                if features < degree {
                    return Err(Error::InvalidSpec(format!(
                        "random mixture needs at least {degree} features, got {features}"
                    )));
                }
                Family::RandomMixed {
                    mixing: full_rank_gaussian(features, degree, rng),
                }
            }
            DictionarySpec::Step { breakpoints } => {
                if breakpoints.len() < 2 {
                    return Err(Error::InvalidSpec("step dictionary needs two breakpoints".into()));
                }
                if breakpoints.iter().any(|b| !b.is_finite())
                    || breakpoints.windows(2).any(|w| w[1] <= w[0])
                {
                    return Err(Error::InvalidSpec(
                        "breakpoints must be finite and strictly increasing".into(),
                    ));
                }
                Family::Step {
                    breakpoints: breakpoints.clone(),
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            family,
        })
    }

    /// Random mixture with a caller-supplied mixing matrix (`features x degree`).
    pub fn random_mixed_with(mixing: DMatrix<f64>) -> Result<Self> {
        let (features, degree) = mixing.shape();
        if degree == 0 || features < degree || numerical_rank(&mixing) < degree {
            return Err(Error::InvalidSpec("mixing matrix must have full column rank".into()));
        }
        Ok(Self {
            spec: DictionarySpec::RandomMixed { degree, features },
            family: Family::RandomMixed { mixing },
        })
    }

    pub fn spec(&self) -> &DictionarySpec {
        &self.spec
    }

    /// Number of features `D`.
    pub fn dimension(&self) -> usize {
        match &self.family {
            Family::Hermite(d) | Family::Monomial(d) | Family::Legendre(d) => *d,
            Family::RandomMixed { mixing } => mixing.nrows(),
            Family::Step { breakpoints } => breakpoints.len() - 1,
            Family::BivariateMonomial(d) => d * d,
        }
    }

    /// Number of coordinates of an input point.
    pub fn input_dim(&self) -> usize {
        match self.family {
            Family::BivariateMonomial(_) => 2,
            _ => 1,
        }
    }

    pub fn mixing_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.family {
            Family::RandomMixed { mixing } => Some(mixing),
            _ => None,
        }
    }

    /// Evaluate `B(x)` into `out` (length `dimension()`).
    pub fn eval_into(&self, point: &Point, out: &mut [f64]) -> Result<()> {
        if point.dim() != self.input_dim() {
            return Err(Error::DomainError(format!(
                "expected a {}-dimensional point, got {}",
                self.input_dim(),
                point.dim()
            )));
        }
        if point.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("non-finite coordinate".into()));
        }
        debug_assert_eq!(out.len(), self.dimension());
        let x = point.x();
        match &self.family {
            Family::Hermite(_) => hermite_normalized(x, out),
            Family::Monomial(_) => powers(x, out),
            Family::Legendre(_) => {
                if !(-1.0..=1.0).contains(&x) {
                    return Err(Error::DomainError(format!("{x} outside [-1, 1]")));
                }
                legendre_normalized(x, out);
            }
            Family::RandomMixed { mixing } => {
                let mut monomials = vec![0.0; mixing.ncols()];
                powers(x, &mut monomials);
                for (i, slot) in out.iter_mut().enumerate() {
                    *slot = mixing
                        .row(i)
                        .iter()
                        .zip(&monomials)
                        .map(|(s, b)| s * b)
                        .sum();
                }
            }
            Family::Step { breakpoints } => {
                let first = breakpoints[0];
                let last = breakpoints[breakpoints.len() - 1];
                if x < first || x > last {
                    return Err(Error::DomainError(format!("{x} outside [{first}, {last}]")));
                }
                out.fill(0.0);
                let index = breakpoints
                    .partition_point(|&b| b <= x)
                    .saturating_sub(1)
                    .min(out.len() - 1);
                out[index] = 1.0;
            }
            Family::BivariateMonomial(degree) => {
                let mut xs = vec![0.0; *degree];
                let mut ys = vec![0.0; *degree];
                powers(x, &mut xs);
                powers(point.y(), &mut ys);
                for (j, xj) in xs.iter().enumerate() {
                    for (k, yk) in ys.iter().enumerate() {
                        out[j * degree + k] = xj * yk;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, point: &Point) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dimension());
        self.eval_into(point, out.as_mut_slice())?;
        Ok(out)
    }

    /// Closed-form Gramian under `measure`, when one is known.
    pub fn exact_gramian(&self, measure: &MeasureKind) -> Option<SpectralGramian> {
        let matrix = match (&self.family, measure) {
            (Family::Hermite(d), MeasureKind::GaussianTruncated { .. }) => {
                return Some(SpectralGramian::identity(*d))
            }
            (Family::Legendre(d), MeasureKind::UniformSym) => {
                return Some(SpectralGramian::identity(*d))
            }
            (Family::Monomial(d), MeasureKind::GaussianTruncated { .. }) => gaussian_hankel(*d),
            (Family::RandomMixed { mixing }, MeasureKind::GaussianTruncated { .. }) => {
                mixing * gaussian_hankel(mixing.ncols()) * mixing.transpose()
            }
            (Family::Step { breakpoints }, MeasureKind::Uniform01)
                if breakpoints[0] >= 0.0 && breakpoints[breakpoints.len() - 1] <= 1.0 =>
            {
                let lengths: Vec<f64> = breakpoints.windows(2).map(|w| w[1] - w[0]).collect();
                DMatrix::from_diagonal(&DVector::from_vec(lengths))
            }
            _ => return None,
        };
        SpectralGramian::new(matrix).ok()
    }
}

fn positive(value: usize) -> Result<usize> {
    if value == 0 {
        Err(Error::InvalidSpec("dimension must be positive".into()))
    } else {
        Ok(value)
    }
}

fn powers(x: f64, out: &mut [f64]) {
    let mut p = 1.0;
    for slot in out.iter_mut() {
        *slot = p;
        p *= x;
    }
}

/// `He_j(x) / sqrt(j!)` through the normalized three-term recurrence.
fn hermite_normalized(x: f64, out: &mut [f64]) {
    let n = out.len();
    out[0] = 1.0;
    if n > 1 {
        out[1] = x;
    }
    for j in 1..n.saturating_sub(1) {
        let jf = j as f64;
        out[j + 1] = (x * out[j] - jf.sqrt() * out[j - 1]) / (jf + 1.0).sqrt();
    }
}

/// `sqrt(2j + 1) P_j(x)`.
fn legendre_normalized(x: f64, out: &mut [f64]) {
    let n = out.len();
    let mut prev = 1.0;
    let mut cur = x;
    out[0] = 1.0;
    if n > 1 {
        out[1] = 3f64.sqrt() * x;
    }
    for j in 1..n.saturating_sub(1) {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0) * x * cur - jf * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
        out[j + 1] = (2.0 * jf + 3.0).sqrt() * next;
    }
}

/// `E[x^(i+j)]` under the standard Gaussian: `(i+j-1)!!` for even `i+j`.
fn gaussian_hankel(d: usize) -> DMatrix<f64> {
    let moments: Vec<f64> = (0..2 * d - 1)
        .map(|p| {
            if p % 2 == 1 {
                0.0
            } else {
                (1..p).step_by(2).map(|k| k as f64).product()
            }
        })
        .collect();
    DMatrix::from_fn(d, d, |i, j| moments[i + j])
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let singular = m.clone().svd(false, false).singular_values;
    let max = singular.max();
    singular.iter().filter(|&&s| s > 1e-10 * max).count()
}

fn full_rank_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    loop {
        let candidate = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        if numerical_rank(&candidate) == cols {
            return candidate;
        }
    }
}
