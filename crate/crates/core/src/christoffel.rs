//! Inverse Christoffel functions, their normalizations, and the mixture
//! sampling densities and weights built from them.

use nalgebra::DMatrix;
use rand::Rng;

use crate::dictionaries::{FeatureDictionary, Point};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_inner, quadratic_form, SpectralGramian};
use crate::measures::FeatureGrid;

/// `x -> B(x)^T P B(x)` for the floored pseudo-inverse `P` of a Gramian.
#[derive(Clone, Debug)]
pub struct ChristoffelFunction {
    precision: DMatrix<f64>,
}

impl ChristoffelFunction {
    pub fn new(h: &SpectralGramian) -> Self {
        Self {
            precision: h.pinv_floored(),
        }
    }

    /// The floored pseudo-inverse.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn dimension(&self) -> usize {
        self.precision.nrows()
    }

    pub fn eval(&self, dict: &FeatureDictionary, point: &Point) -> Result<f64> {
        if dict.dimension() != self.dimension() {
            return Err(Error::InvalidShape(format!(
                "{} features against a {}x{} Gramian",
                dict.dimension(),
                self.dimension(),
                self.dimension()
            )));
        }
        let b = dict.eval(point)?;
        Ok(self.eval_features(b.as_slice()))
    }

    /// Evaluate on precomputed features `B(x)`.
    pub fn eval_features(&self, features: &[f64]) -> f64 {
        quadratic_form(&self.precision, features).max(0.0)
    }

    /// `<P, G>`, the integral of the function against the measure with Gramian `G`.
    pub fn normalization(&self, g: &DMatrix<f64>) -> Result<f64> {
        frobenius_inner(&self.precision, g)
    }
}

/// `B(x)^T h^+ B(x)` with the floored pseudo-inverse.
pub fn inverse_christoffel(h: &SpectralGramian, dict: &FeatureDictionary, x: &Point) -> Result<f64> {
    ChristoffelFunction::new(h).eval(dict, x)
}

/// `z_h = <h^+, g>`.
pub fn normalization_z(h: &SpectralGramian, g_true: &SpectralGramian) -> Result<f64> {
    frobenius_inner(&h.pinv_floored(), g_true.matrix())
}

/// Constants of a mixture density `(zbar + K) / (zbar + z)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureWeights {
    /// Mass of the reference component.
    pub zbar: f64,
    /// Exact normalization of `K`.
    pub z_exact: Option<f64>,
    /// Monte Carlo estimate of the normalization.
    pub z_hat: Option<f64>,
    /// Number of draws behind `z_hat`.
    pub m: usize,
}

impl MixtureWeights {
    pub fn exact(z: f64) -> Self {
        Self {
            zbar: 0.0,
            z_exact: Some(z),
            z_hat: None,
            m: 0,
        }
    }

    pub fn estimated(zbar: f64, z_hat: f64, m: usize) -> Self {
        Self {
            zbar,
            z_exact: None,
            z_hat: Some(z_hat),
            m,
        }
    }

    /// The normalization used by the weights: the estimate when present.
    pub fn z_star(&self) -> Result<f64> {
        self.z_hat
            .or(self.z_exact)
            .ok_or_else(|| Error::InvalidSpec("mixture weights need z_exact or z_hat".into()))
    }

    fn validate(&self) -> Result<()> {
        if !(self.zbar >= 0.0) || !self.zbar.is_finite() {
            return Err(Error::InvalidSpec(format!("zbar must be finite and nonnegative, got {}", self.zbar)));
        }
        let z = self.z_star()?;
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::NumericalError(format!("normalization {z}")));
        }
        Ok(())
    }
}

/// Density `zbar + K_h` with respect to the reference measure, together with
/// the importance weight `(zbar + z*) / (zbar + K_h)`.
#[derive(Clone, Debug)]
pub struct MixtureDensity {
    christoffel: ChristoffelFunction,
    weights: MixtureWeights,
}

impl MixtureDensity {
    pub fn new(h: &SpectralGramian, weights: MixtureWeights) -> Result<Self> {
        Self::from_christoffel(ChristoffelFunction::new(h), weights)
    }

    pub fn from_christoffel(christoffel: ChristoffelFunction, weights: MixtureWeights) -> Result<Self> {
        weights.validate()?;
        if weights.zbar == 0.0 && christoffel.precision.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateDensity(
                "inverse Christoffel function vanishes and zbar = 0".into(),
            ));
        }
        Ok(Self {
            christoffel,
            weights,
        })
    }

    pub fn christoffel(&self) -> &ChristoffelFunction {
        &self.christoffel
    }

    pub fn weights(&self) -> &MixtureWeights {
        &self.weights
    }

    /// Unnormalized density from the value of `K` at a point.
    pub fn density_from(&self, k_value: f64) -> f64 {
        self.weights.zbar + k_value
    }

    /// Weight from the value of `K` at a point; infinite where the density vanishes.
    pub fn weight_from(&self, k_value: f64) -> f64 {
        let z = self.weights.z_hat.or(self.weights.z_exact).unwrap_or(0.0);
        (self.weights.zbar + z) / (self.weights.zbar + k_value)
    }

    pub fn density(&self, dict: &FeatureDictionary, x: &Point) -> Result<f64> {
        Ok(self.density_from(self.christoffel.eval(dict, x)?))
    }

    pub fn weight(&self, dict: &FeatureDictionary, x: &Point) -> Result<f64> {
        Ok(self.weight_from(self.christoffel.eval(dict, x)?))
    }

    /// Unnormalized density at every cell midpoint of `grid`.
    pub fn node_density(&self, grid: &FeatureGrid) -> Vec<f64> {
        grid.quadratic_values(self.christoffel.precision())
            .into_iter()
            .map(|k| self.density_from(k))
            .collect()
    }
}

/// Mean of `K_h` at the midpoints of `m` cells drawn from the reference
/// measure of `grid`.
pub fn estimate_z_hat<R: Rng + ?Sized>(
    christoffel: &ChristoffelFunction,
    grid: &FeatureGrid,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidSpec("z estimate needs m >= 1".into()));
    }
    let mut total = 0.0;
    for _ in 0..m {
        let draw = grid.measure().draw_reference(rng);
        total += christoffel.eval_features(grid.features(draw.cell));
    }
    Ok(total / m as f64)
}

/// Mean of `K_h` at `m` reference draws, evaluated at the drawn points.
pub fn estimate_z_hat_pointwise<R: Rng + ?Sized>(
    h: &SpectralGramian,
    dict: &FeatureDictionary,
    grid: &FeatureGrid,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidSpec("z estimate needs m >= 1".into()));
    }
    let christoffel = ChristoffelFunction::new(h);
    let mut total = 0.0;
    for _ in 0..m {
        let point = grid.measure().sample_reference(rng);
        total += christoffel.eval(dict, &point)?;
    }
    Ok(total / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionaries::DictionarySpec;
    use crate::measures::{build_measure, MeasureKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dict(spec: DictionarySpec) -> FeatureDictionary {
        FeatureDictionary::build(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn hermite_identity_at_zero() {
        let d = dict(DictionarySpec::hermite(8));
        let h = SpectralGramian::identity(8);
        let k = inverse_christoffel(&h, &d, &Point::scalar(0.0)).unwrap();
        assert!((k - (1.0 + 0.5 + 3.0 / 8.0 + 5.0 / 16.0)).abs() < 1e-14);
    }

    #[test]
    fn step_exact_gramian_at_three_quarters() {
        let d = dict(DictionarySpec::dyadic_step(17));
        let g = d.exact_gramian(&MeasureKind::Uniform01).unwrap();
        let k = inverse_christoffel(&g, &d, &Point::scalar(0.75)).unwrap();
        assert!((k - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_gives_squared_norm() {
        let d = dict(DictionarySpec::random_mixed_default());
        let h = SpectralGramian::identity(16);
        for x in [-1.3, 0.0, 0.4, 2.0] {
            let b = d.eval(&Point::scalar(x)).unwrap();
            let k = inverse_christoffel(&h, &d, &Point::scalar(x)).unwrap();
            assert!((k - b.norm_squared()).abs() <= 1e-12 * b.norm_squared());
        }
    }

    #[test]
    fn normalization_examples() {
        let g = SpectralGramian::identity(8);
        assert!((normalization_z(&g, &g).unwrap() - 8.0).abs() < 1e-12);
        let h = SpectralGramian::new(DMatrix::identity(3, 3) * 2.0).unwrap();
        let g = SpectralGramian::identity(3);
        assert!((normalization_z(&h, &g).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn floored_single_sample_matches_quadrature() {
        let d = dict(DictionarySpec::hermite(8));
        let b = d.eval(&Point::scalar(0.0)).unwrap();
        let h = SpectralGramian::new(&b * b.transpose()).unwrap();
        let g = SpectralGramian::identity(8);
        let z = normalization_z(&h, &g).unwrap();
        let measure = build_measure(MeasureKind::gaussian(), 100_000).unwrap();
        let k = ChristoffelFunction::new(&h);
        let quad = measure
            .quadrature(|p| k.eval(&d, p).unwrap())
            .unwrap();
        assert!((quad - z).abs() <= 1e-6 * z, "{quad} vs {z}");
    }

    #[test]
    fn optimal_weight_identity() {
        let d = dict(DictionarySpec::hermite(8));
        let g = SpectralGramian::identity(8);
        let mix = MixtureDensity::new(&g, MixtureWeights::exact(normalization_z(&g, &g).unwrap())).unwrap();
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            let p = Point::scalar(x);
            let product = mix.weight(&d, &p).unwrap() * mix.density(&d, &p).unwrap();
            assert!((product - 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_identity_regularizer_bounds_weights() {
        // J = I / k with G = I: zbar = tr(P) / k and the weight stays below 1 + k
        let d = dict(DictionarySpec::hermite(8));
        let measure = build_measure(MeasureKind::gaussian(), 20_000).unwrap();
        let grid = FeatureGrid::new(measure, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in [1.0, 4.0, 50.0] {
            let x = Point::scalar(0.3);
            let b = d.eval(&x).unwrap();
            let h = SpectralGramian::new(&b * b.transpose() + DMatrix::identity(8, 8)).unwrap();
            let christoffel = ChristoffelFunction::new(&h);
            let zbar = christoffel.precision().trace() / k;
            let z_hat = estimate_z_hat(&christoffel, &grid, 100, &mut rng).unwrap();
            let mix = MixtureDensity::from_christoffel(christoffel, MixtureWeights::estimated(zbar, z_hat, 100)).unwrap();
            let z_exact = mix.christoffel().normalization(grid.quadrature_gramian()).unwrap();
            // the bound holds for the exact normalization
            let exact = MixtureDensity::from_christoffel(
                mix.christoffel().clone(),
                MixtureWeights { zbar, z_exact: Some(z_exact), z_hat: None, m: 0 },
            )
            .unwrap();
            let sup = grid
                .quadratic_values(exact.christoffel().precision())
                .into_iter()
                .map(|v| exact.weight_from(v))
                .fold(0.0, f64::max);
            assert!(sup <= 1.0 + k + 1e-9, "{sup} > {}", 1.0 + k);
        }
    }

    #[test]
    fn huge_regularizer_is_flat() {
        let d = dict(DictionarySpec::hermite(4));
        let g = SpectralGramian::identity(4);
        let mix = MixtureDensity::new(&g, MixtureWeights::estimated(1e12, 4.0, 1)).unwrap();
        let a = mix.density(&d, &Point::scalar(0.0)).unwrap();
        let b = mix.density(&d, &Point::scalar(3.0)).unwrap();
        assert!((a / b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gramian_is_degenerate() {
        let h = SpectralGramian::zeros(3, Default::default());
        assert!(matches!(
            MixtureDensity::new(&h, MixtureWeights::exact(0.0)),
            Err(Error::DegenerateDensity(_))
        ));
    }

    #[test]
    fn z_hat_examples() {
        let d = dict(DictionarySpec::dyadic_step(3));
        let measure = build_measure(MeasureKind::Uniform01, 64).unwrap();
        let grid = FeatureGrid::new(measure, &d).unwrap();
        // indicators with the identity Gramian give K = 1 everywhere
        let christoffel = ChristoffelFunction::new(&SpectralGramian::identity(4));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in [1, 7, 100] {
            assert_eq!(estimate_z_hat(&christoffel, &grid, m, &mut rng).unwrap(), 1.0);
        }

        let g = d.exact_gramian(&MeasureKind::Uniform01).unwrap();
        let christoffel = ChristoffelFunction::new(&g);
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = a.clone();
        let single = estimate_z_hat(&christoffel, &grid, 1, &mut a).unwrap();
        let draw = grid.measure().draw_reference(&mut b);
        assert_eq!(single, christoffel.eval_features(grid.features(draw.cell)));
    }
}
