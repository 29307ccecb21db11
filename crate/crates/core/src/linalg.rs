//! Dense symmetric spectral toolkit.
//!
//! Every Gramian-like matrix in the crate (true Gramians, running estimates,
//! half-step estimates) is wrapped in a [`SpectralGramian`], which carries a
//! sorted eigen-decomposition next to the matrix. From it we derive the
//! floored pseudo-inverse used by the inverse Christoffel function and the
//! generalized-eigenvalue framing constants that define the suboptimality
//! factor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative threshold below which an eigenvalue counts as zero.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-12;
/// Default relative eigenvalue floor used by [`SpectralGramian::pinv_floored`].
pub const DEFAULT_FLOOR_EPSILON: f64 = 1e-12;

/// Relative tolerances attached to a [`SpectralGramian`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralOptions {
    /// Eigenvalues at or below `rank_tolerance * lambda_max` are treated as zero.
    pub rank_tolerance: f64,
    /// Eigenvalues below `floor_epsilon * lambda_max` are raised to that value
    /// before inversion.
    pub floor_epsilon: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            floor_epsilon: DEFAULT_FLOOR_EPSILON,
        }
    }
}

impl SpectralOptions {
    pub fn with_floor(mut self, floor_epsilon: f64) -> Self {
        self.floor_epsilon = floor_epsilon;
        self
    }
}

/// Symmetric positive semi-definite matrix with a cached eigen-decomposition.
///
/// Eigenvalues are sorted nonincreasing and small negative eigenvalues (within
/// the rank tolerance) are clamped to zero.
#[derive(Clone, Debug)]
pub struct SpectralGramian {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    options: SpectralOptions,
}

/// Decompose a symmetric PSD matrix with the default tolerances.
pub fn sym_eig(matrix: DMatrix<f64>) -> Result<SpectralGramian> {
    SpectralGramian::with_options(matrix, SpectralOptions::default())
}

impl SpectralGramian {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        Self::with_options(matrix, SpectralOptions::default())
    }

    pub fn with_options(matrix: DMatrix<f64>, options: SpectralOptions) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidShape(format!(
                "expected a square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !(options.rank_tolerance >= 0.0 && options.floor_epsilon >= 0.0) {
            return Err(Error::InvalidSpec(
                "rank tolerance and floor epsilon must be nonnegative".into(),
            ));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("matrix has non-finite entries".into()));
        }
        let matrix = symmetrize(&matrix);
        let dim = matrix.nrows();
        if dim == 0 {
            return Ok(Self {
                matrix,
                eigenvalues: DVector::zeros(0),
                eigenvectors: DMatrix::zeros(0, 0),
                options,
            });
        }

        let eig = SymmetricEigen::new(matrix.clone());
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut eigenvalues = DVector::zeros(dim);
        let mut eigenvectors = DMatrix::zeros(dim, dim);
        for (dst, &src) in order.iter().enumerate() {
            eigenvalues[dst] = eig.eigenvalues[src];
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }

        let scale = eigenvalues[0].max(0.0);
        let threshold = options.rank_tolerance * scale;
        for value in eigenvalues.iter_mut() {
            if *value < -threshold {
                return Err(Error::NotPsd {
                    eigenvalue: *value,
                    threshold,
                });
            }
            if *value < 0.0 {
                *value = 0.0;
            }
        }

        Ok(Self {
            matrix,
            eigenvalues,
            eigenvectors,
            options,
        })
    }

    /// Decompose the zero matrix of the given size.
    pub fn zeros(dim: usize, options: SpectralOptions) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
            eigenvalues: DVector::zeros(dim),
            eigenvectors: DMatrix::identity(dim, dim),
            options,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            eigenvalues: DVector::from_element(dim, 1.0),
            eigenvectors: DMatrix::identity(dim, dim),
            options: SpectralOptions::default(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Eigenvalues in nonincreasing order.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, column `i` belonging to `eigenvalues()[i]`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn options(&self) -> SpectralOptions {
        self.options
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn lambda_max(&self) -> f64 {
        if self.dim() == 0 {
            0.0
        } else {
            self.eigenvalues[0]
        }
    }

    fn zero_threshold(&self) -> f64 {
        self.options.rank_tolerance * self.lambda_max()
    }

    pub fn rank(&self) -> usize {
        if self.lambda_max() <= 0.0 {
            return 0;
        }
        let threshold = self.zero_threshold();
        self.eigenvalues.iter().filter(|&&v| v > threshold).count()
    }

    /// Smallest eigenvalue above the rank threshold, or 0 for the zero matrix.
    pub fn lambda_min_positive(&self) -> f64 {
        match self.rank() {
            0 => 0.0,
            r => self.eigenvalues[r - 1],
        }
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Absolute eigenvalue floor `floor_epsilon * lambda_max`.
    pub fn floor_absolute(&self) -> f64 {
        self.options.floor_epsilon * self.lambda_max()
    }

    /// `U diag(1 / max(lambda_i, eps)) U^T` with `eps = floor_epsilon * lambda_max`.
    ///
    /// The zero matrix maps to the zero matrix. With a zero floor this is the
    /// Moore-Penrose pseudo-inverse at the rank tolerance.
    pub fn pinv_floored(&self) -> DMatrix<f64> {
        let dim = self.dim();
        if self.lambda_max() <= 0.0 {
            return DMatrix::zeros(dim, dim);
        }
        let eps = self.floor_absolute();
        let threshold = self.zero_threshold();
        let inverted = self.eigenvalues.map(|v| {
            if eps > 0.0 {
                1.0 / v.max(eps)
            } else if v > threshold {
                1.0 / v
            } else {
                0.0
            }
        });
        self.reassemble(&inverted)
    }

    /// Moore-Penrose pseudo-inverse at the rank tolerance (no flooring).
    pub fn pinv(&self) -> DMatrix<f64> {
        let dim = self.dim();
        if self.lambda_max() <= 0.0 {
            return DMatrix::zeros(dim, dim);
        }
        let threshold = self.zero_threshold();
        let inverted = self
            .eigenvalues
            .map(|v| if v > threshold { 1.0 / v } else { 0.0 });
        self.reassemble(&inverted)
    }

    /// Apply `f` to the eigenvalues and rebuild a symmetric matrix.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mapped = self.eigenvalues.map(f);
        self.reassemble(&mapped)
    }

    fn reassemble(&self, diag: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (mut column, &d) in scaled.column_iter_mut().zip(diag.iter()) {
            column *= d;
        }
        symmetrize(&(scaled * self.eigenvectors.transpose()))
    }

    /// Orthonormal basis of the numerical range (first `rank` eigenvectors).
    pub fn range_basis(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.rank()).into_owned()
    }
}

/// Tightest constants of the matrix framing `C^{-1} G <= H <= c^{-1} G`
/// restricted to `range(G)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Framing {
    /// `1 / lambda_min` of the whitened pencil (infinite when it vanishes).
    pub upper: f64,
    /// `1 / lambda_max` of the whitened pencil.
    pub lower: f64,
    /// `upper / lower`, the suboptimality factor.
    pub gamma: f64,
}

/// Framing constants of `h` relative to the reference `g`.
///
/// Forms `M = L^{-1/2} U^T h U L^{-1/2}` on the range of `g`; `gamma` is the
/// condition number of `M` and is `+inf` once `lambda_min(M)` drops to the
/// rank tolerance of `lambda_max(M)`.
pub fn framing_constants(h: &SpectralGramian, g: &SpectralGramian) -> Result<Framing> {
    if h.dim() != g.dim() {
        return Err(Error::InvalidShape(format!(
            "framing of {}x{} against {}x{}",
            h.dim(),
            h.dim(),
            g.dim(),
            g.dim()
        )));
    }
    let rank = g.rank();
    if rank == 0 {
        return Err(Error::DegenerateReference("reference has rank zero".into()));
    }
    let mut whitening = g.range_basis();
    for (mut column, &lambda) in whitening
        .column_iter_mut()
        .zip(g.eigenvalues().iter().take(rank))
    {
        column /= lambda.sqrt();
    }
    let pencil = whitening.transpose() * h.matrix() * &whitening;
    let eig = SymmetricEigen::new(symmetrize(&pencil));
    let lambda_max = eig.eigenvalues.max();
    let lambda_min = eig.eigenvalues.min();

    if !(lambda_max > 0.0) {
        return Ok(Framing {
            upper: f64::INFINITY,
            lower: f64::INFINITY,
            gamma: f64::INFINITY,
        });
    }
    let lower = 1.0 / lambda_max;
    if lambda_min <= h.options().rank_tolerance * lambda_max {
        return Ok(Framing {
            upper: f64::INFINITY,
            lower,
            gamma: f64::INFINITY,
        });
    }
    Ok(Framing {
        upper: 1.0 / lambda_min,
        lower,
        gamma: lambda_max / lambda_min,
    })
}

/// `sum_ij x_ij y_ij`.
pub fn frobenius_inner(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::InvalidShape(format!(
            "Frobenius product of {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(x.dot(y))
}

/// `(a + a^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `m += weight * v v^T`.
pub fn rank_one_update(m: &mut DMatrix<f64>, v: &DVector<f64>, weight: f64) {
    m.ger(weight, v, v, 1.0);
}

/// Quadratic form `v^T p v`.
pub fn quadratic_form(p: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut total = 0.0;
    for j in 0..n {
        let column = p.column(j);
        let mut acc = 0.0;
        for i in 0..n {
            acc += column[i] * v[i];
        }
        total += acc * v[j];
    }
    total
}

/// Matrix absolute value `(x^T x)^{1/2}` of a symmetric matrix.
pub fn abs_sym(x: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(x));
    let abs = eig.eigenvalues.map(f64::abs);
    let mut scaled = eig.eigenvectors.clone();
    for (mut column, &d) in scaled.column_iter_mut().zip(abs.iter()) {
        column *= d;
    }
    symmetrize(&(scaled * eig.eigenvectors.transpose()))
}

/// Loewner order test `x <= a`, i.e. `lambda_min(a - x) >= -tol`.
pub fn loewner_le(x: &DMatrix<f64>, a: &DMatrix<f64>, tol: f64) -> bool {
    let diff = symmetrize(&(a - x));
    SymmetricEigen::new(diff).eigenvalues.min() >= -tol
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm_sym(x: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(x)).eigenvalues.amax()
}
