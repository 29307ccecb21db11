use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use christoffel_refine::harness::{preset, run_experiment, ExperimentSpec, Overrides, PRESETS};
use christoffel_refine::metrics::gamma_bound;
use christoffel_refine::Error;

#[derive(Parser)]
#[command(name = "christoffel-refine", version, about = "Refine Christoffel sampling measures and reproduce convergence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        options: RunOptions,
    },
    /// Run a built-in experiment.
    Preset {
        name: String,
        #[command(flatten)]
        options: RunOptions,
    },
    /// Print the reference bound on the suboptimality factor.
    Bound {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        kn: f64,
    },
    /// List the built-in experiments.
    ListPresets,
}

#[derive(Args)]
struct RunOptions {
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; files go to `<out>/<id>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    /// Override the number of steps of every refinement run.
    #[arg(long)]
    k_max: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "CHRISTOFFEL_JOBS")]
    jobs: Option<usize>,
}

fn execute(mut spec: ExperimentSpec, options: RunOptions) -> Result<(), Error> {
    spec.apply(&Overrides {
        seed: options.seed,
        repetitions: options.reps,
        k_max: options.k_max,
        outputs: options.out,
    });
    spec.validate()?;
    if options.jobs == Some(0) {
        return Err(Error::Config("--jobs must be positive".into()));
    }
    let outcome = run_experiment(&spec, &PathBuf::from("results"), options.jobs)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    println!("wrote {} files to {}", outcome.files.len(), outcome.directory.display());
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, options } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            execute(ExperimentSpec::from_json(&text)?, options)
        }
        Command::Preset { name, options } => {
            let spec = preset(&name).ok_or_else(|| {
                Error::Config(format!("unknown preset {name:?}; try `list-presets`"))
            })?;
            execute(spec, options)
        }
        Command::Bound { d, p, kn } => {
            let value = gamma_bound(kn, d, p).map_err(|e| Error::Config(e.to_string()))?;
            println!("{value:?}");
            Ok(())
        }
        Command::ListPresets => {
            for (name, description) in PRESETS {
                println!("{name:<18} {description}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
