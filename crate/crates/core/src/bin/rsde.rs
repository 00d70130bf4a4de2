use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use risk_sde::baselines::Method;
use risk_sde::checkpoint::Checkpoint;
use risk_sde::config::ExperimentConfig;
use risk_sde::datagen::{
    knn_impute_with_risk, mask_table, read_samples_csv, read_table_csv, stack_x, write_points_csv, write_samples_csv,
    TabularPipelineSpec,
};
use risk_sde::experiment::{
    generate, instability_scan, load_data, run_experiment, sample_checkpoint, stability_report, stream, train_method,
    write_scan_csv, write_trace_csv, RunOptions,
};
use risk_sde::metrics::evaluate;
use risk_sde::sampling::SamplerConfig;
use risk_sde::{Error, Result};

#[derive(Parser)]
#[command(name = "rsde", version, about = "Diffusion models trained on samples with per-entry risk")]
struct Cli {
    /// Single worker thread. Results never depend on the thread count, so
    /// this only matters for profiling.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment TOML file.
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a corrupted mixture data set with risk columns.
    GenerateData {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(short, long)]
        out: PathBuf,
        /// Overrides `[data] n`.
        #[arg(short)]
        n: Option<usize>,
    },
    /// Fill missing cells by KNN and attach median-deviation risk.
    Impute {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Mask this fraction of cells before imputing.
        #[arg(long)]
        mask_fraction: Option<f64>,
        #[arg(long, default_value_t = TabularPipelineSpec::default().neighbors)]
        neighbors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one method and write a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(short, long, default_value = "risk-sensitive")]
        method: Method,
        #[arg(short, long)]
        out: PathBuf,
        /// Training CSV instead of the configured data source.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Per-step losses.
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(short, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Guidance scale for guided baselines.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Frechet distance, PRD and, given a config, mixture metrics.
    Evaluate {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Empirical instability against the bootstrap threshold over t.
    InstabilityScan {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Stability intervals over the risk grid plus the instability scan.
    StabilityReport {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Full pipeline into one output directory.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Overrides `output_dir`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { 1 } else { 0 };
    match cli.command {
        Command::GenerateData { cfg, out, n } => {
            let cfg = ExperimentConfig::load(&cfg.config)?;
            let mix = cfg
                .mixture()
                .ok_or_else(|| Error::Configuration("generate-data needs a mixture, not a csv source".into()))?;
            let data = generate(&mix, n.unwrap_or(cfg.data.n), cfg.seed)?;
            write_samples_csv(&out, &data)?;
            eprintln!("wrote {} rows to {}", data.len(), out.display());
        }
        Command::Impute {
            input,
            out,
            mask_fraction,
            neighbors,
            seed,
        } => {
            let mut table = read_table_csv(&input)?;
            let spec = TabularPipelineSpec {
                mask_fraction: mask_fraction.unwrap_or(TabularPipelineSpec::default().mask_fraction),
                neighbors,
            };
            if mask_fraction.is_some() {
                table = mask_table(&table, spec.mask_fraction, &mut stream(seed, 0))?;
            }
            let missing = table.missing_count();
            let data = knn_impute_with_risk(&table, &spec)?;
            write_samples_csv(&out, &data)?;
            eprintln!("imputed {missing} cells; wrote {}", out.display());
        }
        Command::Train {
            cfg,
            method,
            out,
            data,
            losses,
        } => {
            let mut cfg = ExperimentConfig::load(&cfg.config)?;
            if let Some(d) = data {
                cfg.data.csv = Some(d);
                cfg.data.impute = None;
            }
            let data = load_data(&cfg)?;
            let (ckpt, trace) = train_method(&cfg, method, &data)?;
            ckpt.save(&out)?;
            if let Some(l) = losses {
                write_trace_csv(&l, &trace)?;
            }
            eprintln!("trained {method} for {} steps; final loss {:?}", trace.losses.len(), ckpt.final_loss);
        }
        Command::Sample {
            checkpoint,
            out,
            n,
            steps,
            seed,
            gamma,
        } => {
            let mut ckpt = Checkpoint::load(&checkpoint)?;
            if let Some(g) = gamma {
                ckpt.model = ckpt.model.with_gamma(g)?;
            }
            let config = SamplerConfig {
                steps,
                seed,
                threads,
                ..Default::default()
            };
            let x = sample_checkpoint(&ckpt, &config, n)?;
            write_points_csv(&out, &x)?;
        }
        Command::Evaluate {
            samples,
            reference,
            config,
            out,
        } => {
            let gen = stack_x(&read_samples_csv(&samples)?)?;
            let refs = stack_x(&read_samples_csv(&reference)?)?;
            let cfg = config.map(|p| ExperimentConfig::load(&p)).transpose()?;
            let mix = cfg.as_ref().and_then(|c| c.mixture());
            let prd = cfg.map(|c| c.eval.prd).unwrap_or_default();
            write_json(&evaluate(&gen, &refs, mix.as_ref(), &prd)?, out.as_deref())?;
        }
        Command::InstabilityScan { cfg, out } => {
            let cfg = ExperimentConfig::load(&cfg.config)?;
            write_scan_csv(&out, &instability_scan(&cfg)?)?;
        }
        Command::StabilityReport { cfg, out } => {
            let cfg = ExperimentConfig::load(&cfg.config)?;
            let (table, _) = stability_report(&cfg, &out)?;
            for row in table {
                match row.t_star {
                    Some(t) => println!("r = {}: stable on [{t:.4}, {}]", row.risk, cfg.sde.horizon),
                    None => println!("r = {}: empty stability interval", row.risk),
                }
            }
        }
        Command::Run { cfg, out } => {
            let cfg = ExperimentConfig::load(&cfg.config)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let reports = run_experiment(&cfg, &dir, RunOptions { threads })?;
            for (name, r) in &reports {
                let cov = r.mixture.as_ref().map(|m| m.three_sigma_coverage);
                println!("{name:>16}  frechet {:.4}  coverage {}", r.frechet, cov.map_or("-".into(), |c| format!("{c:.4}")));
            }
            eprintln!("artifacts in {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
