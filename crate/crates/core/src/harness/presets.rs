use crate::cd_approx::CdProblem;
use crate::dictionaries::DictionarySpec;
use crate::measures::{MeasureKind, MeasureSpec};
use crate::refinement::{JPolicy, Mode};
use crate::weighted_ls::WlsStudy;

use super::{ExperimentSpec, Study, VariantSpec};

/// Built-in experiments with a one-line description each.
pub const PRESETS: [(&str, &str); 8] = [
    ("hermite", "Gaussian measure, 8 Hermite polynomials, exact weights vs naive MC"),
    ("random-poly", "Gaussian measure, 16 random mixtures of monomials, exact weights vs naive MC"),
    ("step", "uniform measure, 18 dyadic step functions, exact weights vs naive MC"),
    ("hermite-estimated", "Hermite dictionary with estimated normalization, m in {1, 100}, all J policies"),
    ("random-estimated", "random polynomials with estimated normalization, m in {1, 100}, all J policies"),
    ("step-estimated", "step functions with estimated normalization, m in {1, 100}, all J policies"),
    ("cd", "Christoffel-Darboux approximation of a steep sigmoid from refined moments"),
    ("weighted-ls", "naive vs optimized weights for weighted least squares on Legendre polynomials"),
];

const REPETITIONS: usize = 10;
const K_MAX: u64 = 10_000;

/// `ceil(4 d ln(4 d))` samples per step.
pub fn oversampled_n(dimension: usize) -> usize {
    let d = 4.0 * dimension as f64;
    (d * d.ln()).ceil() as usize
}

fn base(id: &str, study: Study) -> ExperimentSpec {
    ExperimentSpec {
        id: id.to_string(),
        seed: 0,
        repetitions: REPETITIONS,
        record_every: None,
        quantile_levels: 11,
        outputs: None,
        study,
    }
}

fn exact_vs_naive(id: &str, prefix: &str, dictionary: DictionarySpec, kind: MeasureKind, dimension: usize) -> ExperimentSpec {
    let mut variants = Vec::new();
    for n in [1, oversampled_n(dimension)] {
        variants.push(VariantSpec::new(format!("{prefix}-n{n}-exact"), Mode::ExactWeights, n, K_MAX));
        variants.push(VariantSpec::new(format!("{prefix}-n{n}-naive"), Mode::NaiveMc, n, K_MAX));
    }
    base(
        id,
        Study::Refinement {
            dictionary,
            measure: MeasureSpec::new(kind),
            variants,
        },
    )
}

fn estimated(id: &str, prefix: &str, dictionary: DictionarySpec, kind: MeasureKind) -> ExperimentSpec {
    let mut variants = Vec::new();
    for m in [1, 100] {
        for policy in [JPolicy::Zero, JPolicy::ScaledIdentity, JPolicy::ScaledSelf] {
            let mut v = VariantSpec::new(
                format!("{prefix}-m{m}-{}", policy.label()),
                Mode::EstimatedWeights,
                1,
                K_MAX,
            );
            v.m = m;
            v.j_policy = policy;
            variants.push(v);
        }
    }
    variants.push(VariantSpec::new(format!("{prefix}-naive"), Mode::NaiveMc, 1, K_MAX));
    base(
        id,
        Study::Refinement {
            dictionary,
            measure: MeasureSpec::new(kind),
            variants,
        },
    )
}

/// The named preset, if it exists.
pub fn preset(name: &str) -> Option<ExperimentSpec> {
    let hermite = || DictionarySpec::hermite(8);
    let random = DictionarySpec::random_mixed_default;
    let step = || DictionarySpec::dyadic_step(17);
    Some(match name {
        "hermite" => exact_vs_naive(name, "hermite", hermite(), MeasureKind::gaussian(), 8),
        "random-poly" => exact_vs_naive(name, "random", random(), MeasureKind::gaussian(), 16),
        "step" => exact_vs_naive(name, "step", step(), MeasureKind::Uniform01, 18),
        "hermite-estimated" => estimated(name, "hermite", hermite(), MeasureKind::gaussian()),
        "random-estimated" => estimated(name, "random", random(), MeasureKind::gaussian()),
        "step-estimated" => estimated(name, "step", step(), MeasureKind::Uniform01),
        "cd" => base(
            name,
            Study::Cd {
                problem: CdProblem::default(),
                cells: None,
                refined: VariantSpec::new("refined", Mode::ExactWeights, 1, 10),
            },
        ),
        "weighted-ls" => base(
            name,
            Study::WeightedLs {
                settings: WlsStudy::default(),
            },
        ),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_preset_resolves_and_validates() {
        for (name, _) in PRESETS {
            let spec = preset(name).unwrap();
            assert_eq!(spec.id, name);
            spec.validate().unwrap();
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn oversampling_sizes() {
        assert_eq!(oversampled_n(8), 111);
        assert_eq!(oversampled_n(16), 267);
        assert_eq!(oversampled_n(18), 308);
    }

    #[test]
    fn estimated_presets_cover_all_policies() {
        let spec = preset("step-estimated").unwrap();
        let Study::Refinement { variants, .. } = spec.study else { panic!() };
        assert_eq!(variants.len(), 7);
        assert!(variants.iter().all(|v| v.n == 1));
        assert!(variants.iter().any(|v| v.m == 100 && v.j_policy == JPolicy::ScaledSelf));
    }
}
