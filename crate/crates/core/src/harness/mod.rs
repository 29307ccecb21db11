//! Declarative experiments: specs, presets, execution and CSV output.

mod io;
mod presets;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cd_approx::CdProblem;
use crate::dictionaries::DictionarySpec;
use crate::error::{Error, Result};
use crate::linalg::DEFAULT_FLOOR_EPSILON;
use crate::measures::MeasureSpec;
use crate::refinement::{Constraint, JPolicy, Mode, RecordSchedule, RefinementConfig};
use crate::weighted_ls::WlsStudy;

pub use io::{
    cd_csv, format_float, parse_float, read_refinement_csv, refinement_csv, repetitions_csv, wls_quantiles_csv,
    wls_records_csv, write_levels_csv, RefinementRow,
};
pub use presets::{oversampled_n, preset, PRESETS};
pub use run::{compute_experiment, run_experiment, CdOutcome, RunOutcome, VariantOutcome, CD_ERROR_WINDOW};

/// Library version recorded in manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One refinement run within an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub label: String,
    pub mode: Mode,
    pub n: usize,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "zero_policy")]
    pub j_policy: JPolicy,
    pub k_max: u64,
    #[serde(default = "default_floor")]
    pub floor_epsilon: f64,
    #[serde(default)]
    pub constraint: Constraint,
}

fn one() -> usize {
    1
}

fn zero_policy() -> JPolicy {
    JPolicy::Zero
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR_EPSILON
}

fn default_level_count() -> usize {
    11
}

impl VariantSpec {
    pub fn new(label: impl Into<String>, mode: Mode, n: usize, k_max: u64) -> Self {
        Self {
            label: label.into(),
            mode,
            n,
            m: 1,
            j_policy: JPolicy::Zero,
            k_max,
            floor_epsilon: DEFAULT_FLOOR_EPSILON,
            constraint: Constraint::default(),
        }
    }

    pub fn config(&self, seed: u64) -> RefinementConfig {
        RefinementConfig {
            n: self.n,
            m: self.m,
            j_policy: self.j_policy,
            mode: self.mode,
            k_max: self.k_max,
            floor_epsilon: self.floor_epsilon,
            constraint: self.constraint,
            seed,
        }
    }
}

/// What an experiment computes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "kebab-case")]
pub enum Study {
    /// Suboptimality traces of several refinement variants.
    Refinement {
        dictionary: DictionarySpec,
        measure: MeasureSpec,
        variants: Vec<VariantSpec>,
    },
    /// Christoffel-Darboux approximation from exact and refined moment matrices.
    Cd {
        #[serde(default)]
        problem: CdProblem,
        /// Cells of the graph measure; the measure default when absent.
        #[serde(default)]
        cells: Option<usize>,
        refined: VariantSpec,
    },
    /// Naive versus optimized weights in weighted least squares.
    WeightedLs {
        #[serde(default)]
        settings: WlsStudy,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Record every `record_every` steps instead of log-spaced steps.
    #[serde(default)]
    pub record_every: Option<u64>,
    /// Number of equispaced quantile levels in reduced outputs.
    #[serde(default = "default_level_count")]
    pub quantile_levels: usize,
    /// Output directory; the caller's default when absent.
    #[serde(default)]
    pub outputs: Option<PathBuf>,
    #[serde(flatten)]
    pub study: Study,
}

/// Command-line overrides applied on top of a spec.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub k_max: Option<u64>,
    pub outputs: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let safe = |s: &str| {
            !s.is_empty()
                && s != "."
                && s != ".."
                && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        };
        if !safe(&self.id) {
            return Err(Error::Config(format!("experiment id {:?} is not filesystem-safe", self.id)));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.quantile_levels < 2 {
            return Err(Error::Config("need at least two quantile levels".into()));
        }
        if self.record_every == Some(0) {
            return Err(Error::Config("record_every must be positive".into()));
        }
        let check = |v: &VariantSpec| -> Result<()> {
            if !safe(&v.label) {
                return Err(Error::Config(format!("variant label {:?} is not filesystem-safe", v.label)));
            }
            v.config(self.seed).validate().map_err(|e| Error::Config(e.to_string()))
        };
        match &self.study {
            Study::Refinement { variants, .. } => {
                if variants.is_empty() {
                    return Err(Error::Config("no variants".into()));
                }
                for (i, v) in variants.iter().enumerate() {
                    check(v)?;
                    if variants[..i].iter().any(|w| w.label == v.label) {
                        return Err(Error::Config(format!("duplicate variant label {:?}", v.label)));
                    }
                }
            }
            Study::Cd { problem, refined, .. } => {
                problem.validate().map_err(|e| Error::Config(e.to_string()))?;
                check(refined)?;
            }
            Study::WeightedLs { settings } => {
                if settings.n_grid.is_empty() || settings.targets.is_empty() || settings.dimension == 0 {
                    return Err(Error::Config("weighted least squares study is empty".into()));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(reps) = overrides.repetitions {
            self.repetitions = reps;
        }
        if let Some(dir) = &overrides.outputs {
            self.outputs = Some(dir.clone());
        }
        if let Some(k_max) = overrides.k_max {
            match &mut self.study {
                Study::Refinement { variants, .. } => variants.iter_mut().for_each(|v| v.k_max = k_max),
                Study::Cd { refined, .. } => refined.k_max = k_max,
                Study::WeightedLs { .. } => {}
            }
        }
    }

    pub fn schedule(&self) -> RecordSchedule {
        RecordSchedule::from_stride(self.record_every)
    }
}
