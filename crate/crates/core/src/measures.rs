//! Discretized reference measures.
//!
//! A [`DiscretizedMeasure`] splits the support into cells, stores the exact
//! mass of every cell (from the analytic CDF) and samples by picking a cell
//! from a categorical distribution and drawing uniformly inside it. The
//! [`FeatureGrid`] caches dictionary features at the cell midpoints so that
//! densities of the form `zbar + B(x)^T P B(x)` can be integrated and sampled
//! without touching every cell per draw.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::{erf, erfc};

use crate::cd_approx::target_f;
use crate::dictionaries::{FeatureDictionary, Point};
use crate::error::{Error, Result};
use crate::linalg::{quadratic_form, SpectralGramian, SpectralOptions};

/// Reference measure families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeasureKind {
    /// Standard Gaussian restricted to `[-radius, radius]`.
    GaussianTruncated { radius: f64 },
    /// Uniform on `[0, 1]`.
    Uniform01,
    /// Uniform on `[-1, 1]`.
    UniformSym,
    /// Lebesgue measure in `x` on `[0, 1]` lifted to the graph `(x, f_eps(x))`.
    GraphOfF { epsilon: f64 },
}

impl MeasureKind {
    pub fn gaussian() -> Self {
        Self::GaussianTruncated { radius: 10.0 }
    }

    /// Grid size used when a config does not specify one.
    pub fn default_cells(&self) -> usize {
        match self {
            Self::GaussianTruncated { .. } => 100_000,
            Self::Uniform01 => 1 << 17,
            Self::UniformSym => 100_000,
            Self::GraphOfF { .. } => 10_000,
        }
    }
}

/// Measure kind plus grid resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    #[serde(flatten)]
    pub kind: MeasureKind,
    #[serde(default)]
    pub cells: Option<usize>,
}

impl MeasureSpec {
    pub fn new(kind: MeasureKind) -> Self {
        Self { kind, cells: None }
    }

    pub fn build(&self) -> Result<DiscretizedMeasure> {
        let cells = self.cells.unwrap_or_else(|| self.kind.default_cells());
        build_measure(self.kind.clone(), cells)
    }
}

/// Cell-wise representation of a probability measure.
#[derive(Clone, Debug)]
pub struct DiscretizedMeasure {
    kind: MeasureKind,
    edges: Vec<f64>,
    nodes: Vec<f64>,
    cell_masses: Vec<f64>,
    reference: CategoricalTable,
}

/// Discretize `kind` into `cells` equal-width cells.
pub fn build_measure(kind: MeasureKind, cells: usize) -> Result<DiscretizedMeasure> {
    if cells < 2 {
        return Err(Error::InvalidSpec("a measure needs at least 2 cells".into()));
    }
    let (lo, hi) = match &kind {
        MeasureKind::GaussianTruncated { radius } => {
            if !radius.is_finite() || erfc(radius / std::f64::consts::SQRT_2) >= 1e-10 {
                return Err(Error::InvalidSpec(format!(
                    "truncation radius {radius} leaves a Gaussian tail mass above 1e-10"
                )));
            }
            (-radius, *radius)
        }
        MeasureKind::Uniform01 => (0.0, 1.0),
        MeasureKind::UniformSym => (-1.0, 1.0),
        MeasureKind::GraphOfF { epsilon } => {
            if !(*epsilon > 0.0 && *epsilon < 0.5) {
                return Err(Error::InvalidSpec(format!("epsilon {epsilon} outside (0, 0.5)")));
            }
            (0.0, 1.0)
        }
    };
    let width = hi - lo;
    let edges: Vec<f64> = (0..=cells)
        .map(|i| {
            if i == cells {
                hi
            } else {
                lo + width * (i as f64) / (cells as f64)
            }
        })
        .collect();
    let nodes: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut cell_masses: Vec<f64> = match &kind {
        MeasureKind::GaussianTruncated { .. } => {
            edges.windows(2).map(|w| gaussian_mass(w[0], w[1])).collect()
        }
        _ => edges.windows(2).map(|w| (w[1] - w[0]) / width).collect(),
    };
    let total: f64 = cell_masses.iter().sum();
    cell_masses.iter_mut().for_each(|m| *m /= total);
    let reference = CategoricalTable::new(cell_masses.iter().copied())?;
    Ok(DiscretizedMeasure {
        kind,
        edges,
        nodes,
        cell_masses,
        reference,
    })
}

fn gaussian_mass(a: f64, b: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if b <= 0.0 {
        0.5 * (erfc(-b * s) - erfc(-a * s))
    } else if a >= 0.0 {
        0.5 * (erfc(a * s) - erfc(b * s))
    } else {
        0.5 * (erf(b * s) - erf(a * s))
    }
}

impl DiscretizedMeasure {
    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cell midpoints.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Cell boundaries (one more than the number of cells).
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn cell_masses(&self) -> &[f64] {
        &self.cell_masses
    }

    /// Map a grid coordinate to a point of the sample space.
    pub fn lift(&self, x: f64) -> Point {
        match &self.kind {
            MeasureKind::GraphOfF { epsilon } => Point::planar(x, target_f(*epsilon, x)),
            _ => Point::scalar(x),
        }
    }

    /// Midpoint rule `sum_i f(node_i) mass_i`.
    pub fn quadrature(&self, f: impl Fn(&Point) -> f64) -> Result<f64> {
        let mut total = 0.0;
        for (&x, &mass) in self.nodes.iter().zip(&self.cell_masses) {
            let value = f(&self.lift(x));
            if !value.is_finite() {
                return Err(Error::NumericalError(format!(
                    "integrand is not finite at {x}: {value}"
                )));
            }
            total += value * mass;
        }
        Ok(total)
    }

    /// Uniform draw inside cell `cell`, lifted.
    pub fn jitter<R: Rng + ?Sized>(&self, cell: usize, rng: &mut R) -> Point {
        let (a, b) = (self.edges[cell], self.edges[cell + 1]);
        let u: f64 = rng.random();
        self.lift((a + u * (b - a)).min(b))
    }

    /// One draw from the measure itself.
    pub fn sample_reference<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        self.draw_reference(rng).point
    }

    /// One draw from the measure, keeping the cell it fell in.
    pub fn draw_reference<R: Rng + ?Sized>(&self, rng: &mut R) -> GridDraw {
        let cell = self.reference.sample(rng);
        GridDraw {
            cell,
            point: self.jitter(cell, rng),
        }
    }

    /// Cells drawn with probability proportional to `density_values[i] * mass_i`.
    pub fn sample_cells<R: Rng + ?Sized>(
        &self,
        density_values: &[f64],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if density_values.len() != self.len() {
            return Err(Error::InvalidShape(format!(
                "{} density values for {} cells",
                density_values.len(),
                self.len()
            )));
        }
        let table = CategoricalTable::new(
            density_values
                .iter()
                .zip(&self.cell_masses)
                .map(|(d, m)| d * m),
        )?;
        Ok((0..count).map(|_| table.sample(rng)).collect())
    }

    /// `count` points from the density `density_values` (w.r.t. this measure),
    /// cell by categorical draw then uniformly within the cell.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        density_values: &[f64],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<Point>> {
        let cells = self.sample_cells(density_values, count, rng)?;
        Ok(cells.into_iter().map(|c| self.jitter(c, rng)).collect())
    }
}

/// A sampled point together with the grid cell it was drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridDraw {
    pub cell: usize,
    pub point: Point,
}

/// Cumulative table for categorical sampling by binary search.
#[derive(Clone, Debug)]
pub struct CategoricalTable {
    cumulative: Vec<f64>,
}

impl CategoricalTable {
    pub fn new(weights: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for w in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::DegenerateDensity(format!("invalid weight {w}")));
            }
            total += w;
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::DegenerateDensity("all weights vanish".into()));
        }
        Ok(Self { cumulative })
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.total();
        let index = self.cumulative.partition_point(|&c| c <= u);
        // u can round up to the total
        index.min(self.cumulative.len() - 1)
    }
}

/// Dictionary features cached at the cell midpoints of a measure, grouped in
/// blocks with their partial Gramians.
#[derive(Clone, Debug)]
pub struct FeatureGrid {
    measure: DiscretizedMeasure,
    dimension: usize,
    features: Vec<f64>,
    block_size: usize,
    block_masses: Vec<f64>,
    block_gramians: Vec<DMatrix<f64>>,
    gramian: DMatrix<f64>,
}

impl FeatureGrid {
    pub fn new(measure: DiscretizedMeasure, dict: &FeatureDictionary) -> Result<Self> {
        let dimension = dict.dimension();
        let cells = measure.len();
        let mut features = vec![0.0; cells * dimension];
        for (i, &x) in measure.nodes().iter().enumerate() {
            let point = measure.lift(x);
            dict.eval_into(&point, &mut features[i * dimension..(i + 1) * dimension])?;
        }
        let block_size = ((cells as f64).sqrt().ceil() as usize).max(1);
        let mut block_masses = Vec::new();
        let mut block_gramians = Vec::new();
        let mut gramian = DMatrix::zeros(dimension, dimension);
        for start in (0..cells).step_by(block_size) {
            let end = (start + block_size).min(cells);
            let mut block = DMatrix::zeros(dimension, dimension);
            let mut mass = 0.0;
            for i in start..end {
                let m = measure.cell_masses()[i];
                mass += m;
                let b = &features[i * dimension..(i + 1) * dimension];
                for col in 0..dimension {
                    let scaled = m * b[col];
                    if scaled == 0.0 {
                        continue;
                    }
                    for row in 0..dimension {
                        block[(row, col)] += scaled * b[row];
                    }
                }
            }
            gramian += &block;
            block_masses.push(mass);
            block_gramians.push(block);
        }
        Ok(Self {
            measure,
            dimension,
            features,
            block_size,
            block_masses,
            block_gramians,
            gramian,
        })
    }

    pub fn measure(&self) -> &DiscretizedMeasure {
        &self.measure
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Features at cell midpoint `cell`.
    pub fn features(&self, cell: usize) -> &[f64] {
        &self.features[cell * self.dimension..(cell + 1) * self.dimension]
    }

    /// Midpoint-rule Gramian `sum_i mass_i B(node_i) B(node_i)^T`.
    pub fn quadrature_gramian(&self) -> &DMatrix<f64> {
        &self.gramian
    }

    pub fn quadrature_gramian_spectral(&self, options: SpectralOptions) -> Result<SpectralGramian> {
        SpectralGramian::with_options(self.gramian.clone(), options)
    }

    /// `B(node_i)^T P B(node_i)` for every cell.
    pub fn quadratic_values(&self, precision: &DMatrix<f64>) -> Vec<f64> {
        (0..self.measure.len())
            .map(|i| quadratic_form(precision, self.features(i)).max(0.0))
            .collect()
    }

    /// `int (zbar + B^T P B) d rho` under the midpoint rule.
    pub fn mixture_mass(&self, precision: &DMatrix<f64>, zbar: f64) -> f64 {
        zbar + precision.dot(&self.gramian)
    }

    /// Draw `count` points from the density proportional to
    /// `zbar + B(x)^T P B(x)` (evaluated at cell midpoints).
    pub fn sample_mixture<R: Rng + ?Sized>(
        &self,
        precision: &DMatrix<f64>,
        zbar: f64,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<GridDraw>> {
        if precision.shape() != (self.dimension, self.dimension) {
            return Err(Error::InvalidShape(format!(
                "precision {:?} for {} features",
                precision.shape(),
                self.dimension
            )));
        }
        if !(zbar >= 0.0) || !zbar.is_finite() {
            return Err(Error::DegenerateDensity(format!("mixture weight {zbar}")));
        }
        let blocks = CategoricalTable::new(
            self.block_gramians
                .iter()
                .zip(&self.block_masses)
                .map(|(g, &m)| (zbar * m + precision.dot(g)).max(0.0)),
        )?;
        let block_choices: Vec<usize> = (0..count).map(|_| blocks.sample(rng)).collect();
        let cells = self.measure.len();
        let mut points = Vec::with_capacity(count);
        for block in block_choices {
            let start = block * self.block_size;
            let end = (start + self.block_size).min(cells);
            let table = CategoricalTable::new((start..end).map(|i| {
                self.measure.cell_masses()[i]
                    * (zbar + quadratic_form(precision, self.features(i)).max(0.0))
            }))?;
            let cell = start + table.sample(rng);
            points.push(GridDraw {
                cell,
                point: self.measure.jitter(cell, rng),
            });
        }
        Ok(points)
    }
}

/// Midpoint-rule Gramian of `dict` under `measure`.
pub fn quadrature_gramian(dict: &FeatureDictionary, measure: &DiscretizedMeasure) -> Result<DMatrix<f64>> {
    let dimension = dict.dimension();
    let mut gramian = DMatrix::zeros(dimension, dimension);
    let mut b = DVector::zeros(dimension);
    for (&x, &mass) in measure.nodes().iter().zip(measure.cell_masses()) {
        dict.eval_into(&measure.lift(x), b.as_mut_slice())?;
        gramian.ger(mass, &b, &b, 1.0);
    }
    Ok(gramian)
}
