use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::cd_approx::{cd_approximation, christoffel_levels, max_error};
use crate::dictionaries::{DictionarySpec, FeatureDictionary};
use crate::error::{Error, Result};
use crate::linalg::{SpectralGramian, SpectralOptions};
use crate::measures::{FeatureGrid, MeasureKind, MeasureSpec};
use crate::metrics::{default_levels, median, reduce_quantiles, QuantileTrace};
use crate::refinement::{init_gramian, run_refinement, Mode, RecordSchedule, TracePoint};
use crate::weighted_ls::{reduce_study, run_study, WlsRecord};

use super::io::{
    cd_csv, cd_repetitions_csv, format_float, refinement_csv, repetitions_csv, wls_quantiles_csv,
    wls_records_csv, write_levels_csv,
};
use super::{ExperimentSpec, Study, VariantSpec, VERSION};

/// Window of x values over which the CD approximation error is measured.
pub const CD_ERROR_WINDOW: (f64, f64) = (0.1, 0.9);

/// Probability used for the reference bound curve recorded in manifests.
const BOUND_PROBABILITY: f64 = 0.75;

const MANIFEST: &str = "manifest.json";

/// Traces of one refinement variant.
#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub label: String,
    pub repetitions: Vec<Vec<TracePoint>>,
    pub quantiles: QuantileTrace,
}

#[derive(Clone, Debug)]
pub struct CdOutcome {
    pub exact_error: f64,
    /// Per repetition, at the final step.
    pub refined_errors: Vec<f64>,
    pub refined_gammas: Vec<f64>,
    pub refined: VariantOutcome,
}

/// Everything an experiment produced, with the file contents it writes.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub directory: PathBuf,
    /// `(file name, contents)` in write order; the manifest is last.
    pub files: Vec<(String, String)>,
    pub summary: Vec<String>,
    pub variants: Vec<VariantOutcome>,
    pub cd: Option<CdOutcome>,
    pub weighted_ls: Option<Vec<WlsRecord>>,
}

fn repetition_rng(seed: u64, rep: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ rep as u64);
    rng.set_stream(stream);
    rng
}

/// The dictionary of an experiment. Random mixing matrices depend only on
/// the experiment seed, so every repetition sees the same dictionary.
fn build_dictionary(spec: &DictionarySpec, seed: u64) -> Result<FeatureDictionary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    FeatureDictionary::build(spec, &mut rng)
}

fn reference_gramian(dict: &FeatureDictionary, kind: &MeasureKind, grid: &FeatureGrid) -> Result<SpectralGramian> {
    match dict.exact_gramian(kind) {
        Some(g) => Ok(g),
        None => grid.quadrature_gramian_spectral(SpectralOptions::default()),
    }
}

/// Runs every repetition of `variant`, optionally keeping the estimates at
/// the first and last recorded steps.
fn run_variant(
    spec: &ExperimentSpec,
    variant: &VariantSpec,
    dict: &FeatureDictionary,
    grid: &FeatureGrid,
    g_true: &SpectralGramian,
    keep_estimates: bool,
) -> Result<(VariantOutcome, Vec<Option<(SpectralGramian, SpectralGramian)>>)> {
    let config = variant.config(spec.seed);
    let schedule: RecordSchedule = spec.schedule();
    let runs: Result<Vec<_>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| {
            let state = init_gramian(dict, grid, variant.n, config.spectral_options(), repetition_rng(spec.seed, rep, 0))?;
            // the baseline shares the initial estimate but not the stream
            let state = match variant.mode {
                Mode::NaiveMc => state.fork(repetition_rng(spec.seed, rep, 1)),
                _ => state,
            };
            let mut first = None;
            let mut last = None;
            let trace = run_refinement(&config, dict, grid, g_true, schedule, state, |s| {
                if keep_estimates {
                    if first.is_none() {
                        first = Some(s.g_hat.clone());
                    }
                    last = Some(s.g_hat.clone());
                }
            })?;
            Ok((trace, first.zip(last)))
        })
        .collect();
    let (repetitions, estimates): (Vec<_>, Vec<_>) = runs?.into_iter().unzip();
    let steps: Vec<u64> = repetitions[0].iter().map(|p| p.step).collect();
    let kn: Vec<u64> = repetitions[0].iter().map(|p| p.kn).collect();
    let gammas: Vec<Vec<f64>> = repetitions
        .iter()
        .map(|t| t.iter().map(|p| p.gamma).collect())
        .collect();
    let quantiles = reduce_quantiles(
        &spec.id,
        &variant.label,
        &steps,
        &kn,
        &gammas,
        &default_levels(spec.quantile_levels),
    )?;
    Ok((
        VariantOutcome {
            label: variant.label.clone(),
            repetitions,
            quantiles,
        },
        estimates,
    ))
}

fn final_summary(outcome: &VariantOutcome) -> String {
    let q = &outcome.quantiles;
    let last = q.steps.len() - 1;
    format!(
        "{}: median gamma {} at k = {} (kn = {})",
        outcome.label,
        format_float(q.median()[last]),
        q.steps[last],
        q.kn[last]
    )
}

fn refinement_files(outcome: &VariantOutcome, prefix: &str, files: &mut Vec<(String, String)>) -> Result<()> {
    files.push((format!("{prefix}.csv"), refinement_csv(&outcome.quantiles)?));
    files.push((format!("{prefix}_repetitions.csv"), repetitions_csv(&outcome.repetitions)?));
    Ok(())
}

/// Computes an experiment without touching the filesystem.
pub fn compute_experiment(spec: &ExperimentSpec, default_dir: &Path) -> Result<RunOutcome> {
    spec.validate()?;
    let directory = spec.outputs.clone().unwrap_or_else(|| default_dir.to_path_buf()).join(&spec.id);
    let mut files = Vec::new();
    let mut summary = Vec::new();
    let mut variants = Vec::new();
    let mut cd = None;
    let mut weighted_ls = None;
    let mut results = serde_json::Map::new();

    match &spec.study {
        Study::Refinement {
            dictionary,
            measure,
            variants: variant_specs,
        } => {
            let dict = build_dictionary(dictionary, spec.seed)?;
            let grid = FeatureGrid::new(measure.build()?, &dict)?;
            let g_true = reference_gramian(&dict, &measure.kind, &grid)?;
            for v in variant_specs {
                let (outcome, _) = run_variant(spec, v, &dict, &grid, &g_true, false)?;
                refinement_files(&outcome, &v.label, &mut files)?;
                summary.push(final_summary(&outcome));
                variants.push(outcome);
            }
            results.insert(
                "bound".into(),
                json!({ "dimension": dict.dimension(), "probability": BOUND_PROBABILITY }),
            );
        }
        Study::Cd {
            problem,
            cells,
            refined,
        } => {
            let dict = build_dictionary(&DictionarySpec::BivariateMonomial { degree: problem.degree }, spec.seed)?;
            let measure = MeasureSpec {
                kind: MeasureKind::GraphOfF {
                    epsilon: problem.epsilon,
                },
                cells: *cells,
            };
            let grid = FeatureGrid::new(measure.build()?, &dict)?;
            let g_exact = grid.quadrature_gramian_spectral(refined.config(spec.seed).spectral_options())?;
            let exact_fd = cd_approximation(&g_exact, problem)?;
            let (lo, hi) = CD_ERROR_WINDOW;
            let exact_error = max_error(problem, &exact_fd, lo, hi);

            let (outcome, estimates) = run_variant(spec, refined, &dict, &grid, &g_exact, true)?;
            let finals: Vec<(SpectralGramian, SpectralGramian)> = estimates
                .into_iter()
                .map(|e| e.ok_or_else(|| Error::NumericalError("no recorded estimate".into())))
                .collect::<Result<_>>()?;
            let refined_fd: Vec<Vec<f64>> = finals
                .par_iter()
                .map(|(_, last)| cd_approximation(last, problem))
                .collect::<Result<_>>()?;
            let refined_errors: Vec<f64> = refined_fd.iter().map(|fd| max_error(problem, fd, lo, hi)).collect();
            let refined_gammas: Vec<f64> = outcome
                .repetitions
                .iter()
                .map(|t| t.last().map_or(f64::INFINITY, |p| p.gamma))
                .collect();

            files.push((
                "cd.csv".into(),
                cd_csv(&problem.x_grid, &problem.truth(), &exact_fd, &refined_fd[0])?,
            ));
            let rows: Vec<(u64, u64, f64, f64)> = outcome
                .repetitions
                .iter()
                .zip(refined_errors.iter().zip(&refined_gammas))
                .map(|(t, (&e, &g))| {
                    let p = t.last().copied().unwrap_or(TracePoint { step: 0, kn: 0, gamma: g });
                    (p.step, p.kn, e, g)
                })
                .collect();
            files.push(("cd_repetitions.csv".into(), cd_repetitions_csv(&rows)?));
            refinement_files(&outcome, &refined.label, &mut files)?;
            for (name, h) in [("exact", &g_exact), ("initial", &finals[0].0), ("refined", &finals[0].1)] {
                let levels = christoffel_levels(h, problem)?;
                files.push((
                    format!("levels_{name}.csv"),
                    write_levels_csv(&problem.x_grid, &problem.y_grid, &levels)?,
                ));
            }
            summary.push(format!("exact moments: max error {}", format_float(exact_error)));
            summary.push(format!(
                "refined moments at k = {}: median max error {}, median gamma {}",
                refined.k_max,
                format_float(median(&refined_errors)),
                format_float(median(&refined_gammas))
            ));
            results.insert(
                "cd".into(),
                json!({
                    "exact_max_error": format_float(exact_error),
                    "refined_median_max_error": format_float(median(&refined_errors)),
                    "refined_median_gamma": format_float(median(&refined_gammas)),
                    "error_window": [CD_ERROR_WINDOW.0, CD_ERROR_WINDOW.1],
                }),
            );
            cd = Some(CdOutcome {
                exact_error,
                refined_errors,
                refined_gammas,
                refined: outcome,
            });
        }
        Study::WeightedLs { settings } => {
            let records = run_study(settings, spec.repetitions, spec.seed)?;
            let traces = reduce_study(&records, &default_levels(spec.quantile_levels))?;
            files.push(("weighted_ls.csv".into(), wls_records_csv(&records)?));
            files.push(("weighted_ls_quantiles.csv".into(), wls_quantiles_csv(&traces)?));
            for pair in traces.chunks(2) {
                if let [naive, optimal] = pair {
                    let ratios: Vec<String> = naive
                        .median()
                        .iter()
                        .zip(optimal.median())
                        .map(|(a, b)| format!("{:.3}", b / a))
                        .collect();
                    summary.push(format!(
                        "{}: median error ratio {} / {} per n: {}",
                        naive.experiment,
                        optimal.method,
                        naive.method,
                        ratios.join(" ")
                    ));
                }
            }
            weighted_ls = Some(records);
        }
    }

    let names: Vec<&str> = files.iter().map(|(name, _)| name.as_str()).collect();
    let manifest = json!({
        "id": spec.id,
        "version": VERSION,
        "seed": spec.seed,
        "repetitions": spec.repetitions,
        "spec": spec,
        "files": names,
        "results": results,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    files.push((MANIFEST.into(), text));

    Ok(RunOutcome {
        directory,
        files,
        summary,
        variants,
        cd,
        weighted_ls,
    })
}

/// Computes an experiment on a pool of `jobs` workers (rayon's default when
/// absent) and writes its files into `<outputs>/<id>/`.
pub fn run_experiment(spec: &ExperimentSpec, default_dir: &Path, jobs: Option<usize>) -> Result<RunOutcome> {
    let outcome = match jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(|| compute_experiment(spec, default_dir))?,
        None => compute_experiment(spec, default_dir)?,
    };
    fs::create_dir_all(&outcome.directory)?;
    for (name, contents) in &outcome.files {
        fs::write(outcome.directory.join(name), contents)?;
    }
    Ok(outcome)
}
