use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use controlvae_core::harness::{
    emit_plots, measure_reference_kl, run_experiment, ExperimentConfig, Mode, Series,
};
use controlvae_core::{
    advise_set_point, generate_gauss_mixture, generate_mini_shapes, mig, validate_gains, Dataset,
    VaeModel,
};

#[derive(Parser)]
#[command(name = "controlvae", version, about = "PI control of the KL weight in VAE training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment and write its trace, summary and checkpoint.
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set controller.kp=0.02`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train a plain VAE to convergence and report its KL.
    ReferenceKl {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recommend a set-point range from a reference KL.
    Advise { kl_vae: f64 },
    /// Check PI gains against the smoothness and stability guidelines.
    Gains {
        kp: f64,
        ki: f64,
        set_point: f64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
    },
    /// Run the controller against the first-order surrogate plant.
    PlantDemo {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint's encoder means with the mutual information gap.
    Mig {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = controlvae_core::metrics::DEFAULT_BINS)]
        bins: usize,
    },
    /// Render SVG panels (KL, TC, recon, ELBO, β) overlaying the given traces.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
        #[arg(long, default_value = "trace")]
        prefix: String,
    },
    /// Write a synthetic dataset file.
    GenData {
        #[command(subcommand)]
        kind: DataKind,
    },
}

#[derive(Subcommand)]
enum DataKind {
    MiniShapes {
        #[arg(long)]
        out: PathBuf,
    },
    GaussMixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long)]
        seed: u64,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_config(path: &PathBuf, overrides: &[String]) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path, overrides)
        .with_context(|| format!("loading config {}", path.display()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let out = run_experiment(&cfg)?;
            print_json(&out.summary)
        }
        Command::ReferenceKl { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let r = measure_reference_kl(&cfg)?;
            if !r.converged {
                eprintln!(
                    "warning: ELBO did not converge within {} steps; kl_vae is a best estimate",
                    r.steps
                );
            }
            print_json(&r)
        }
        Command::Advise { kl_vae } => print_json(&advise_set_point(kl_vae)?),
        Command::Gains {
            kp,
            ki,
            set_point,
            epsilon,
        } => {
            let report = validate_gains(kp, ki, set_point, epsilon);
            print_json(&report)?;
            if !report.passed() {
                bail!("gains fall outside the recommended ranges");
            }
            Ok(())
        }
        Command::PlantDemo { config, overrides } => {
            let mut cfg = load_config(&config, &overrides)?;
            cfg.mode = Mode::PlantOnly;
            let out = run_experiment(&cfg)?;
            print_json(&out.summary)
        }
        Command::Mig {
            checkpoint,
            dataset,
            bins,
        } => {
            let model = VaeModel::load(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let data = Dataset::load(&dataset)
                .with_context(|| format!("loading dataset {}", dataset.display()))?;
            let Some(factors) = &data.factors else {
                bail!("dataset {} carries no factor labels", dataset.display());
            };
            let means = model.encode(&data.data)?.mu;
            print_json(&mig(&means, factors, bins)?)
        }
        Command::Plot {
            traces,
            out,
            prefix,
        } => {
            let series = traces
                .iter()
                .map(|p| {
                    let records = controlvae_core::trace::read_trace(p)
                        .with_context(|| format!("reading trace {}", p.display()))?;
                    let label = p
                        .parent()
                        .and_then(|d| d.file_name())
                        .or_else(|| p.file_stem())
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.display().to_string());
                    Ok(Series { label, records })
                })
                .collect::<Result<Vec<_>>>()?;
            for path in emit_plots(&series, &out, &prefix)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::GenData { kind } => {
            let (dataset, out): (Dataset, PathBuf) = match kind {
                DataKind::MiniShapes { out } => (generate_mini_shapes().into(), out),
                DataKind::GaussMixture {
                    out,
                    k,
                    dim,
                    n,
                    seed,
                } => (generate_gauss_mixture(k, dim, n, seed)?.into(), out),
            };
            dataset.save(&out)?;
            println!("{} samples x {} -> {}", dataset.len(), dataset.dim(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
