//! `ups`: tune, estimate and export figure data for the bundled
//! experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ups::experiments::{
    emit_figure_data, output, read_tuning, run_estimate, run_tune, write_estimates, write_tuning,
    ExperimentConfig,
};
use ups::{Result, UpsError};

#[derive(Parser)]
#[command(name = "ups", version, about = "Unbiased path sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the config keys one-to-one; unset flags fall back to
/// the config file and then the experiment preset.
#[derive(Args)]
struct ConfigFlags {
    /// Experiment name (normal | doublewell | logistic-evidence |
    /// logistic-cv | leukemia | mammal-mse | mammal-logscore | stackloss).
    #[arg(long)]
    experiment: Option<String>,
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid kind: equispaced | log.
    #[arg(long)]
    grid: Option<String>,
    /// Number of grid intervals L.
    #[arg(long = "L", visible_alias = "grid-size")]
    grid_size: Option<usize>,
    #[arg(long)]
    survey_replicates: Option<usize>,
    #[arg(long)]
    m2_replicates: Option<usize>,
    /// Estimation replicate count M.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    k_quantile: Option<f64>,
    #[arg(long)]
    k_multiplier: Option<f64>,
    /// Fixed burn-in override ("none" to clear).
    #[arg(long)]
    fixed_k: Option<String>,
    /// Fixed horizon override ("none" to clear).
    #[arg(long)]
    fixed_m: Option<String>,
    /// Path variant: default | covariate | laplace | tempering.
    #[arg(long)]
    path: Option<String>,
    /// Adaptive second tuning pass (normal experiment).
    #[arg(long)]
    adapt: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigFlags {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UpsError::Io(format!("reading {}: {e}", path.display())))?;
                ExperimentConfig::from_key_values(&text)?
            }
            None => {
                let name = self.experiment.as_deref().ok_or_else(|| {
                    UpsError::Config("--experiment (or --config) is required".into())
                })?;
                ExperimentConfig::preset(name.parse()?)
            }
        };
        let overrides: [(&str, Option<String>); 15] = [
            ("experiment", self.experiment.clone()),
            ("grid", self.grid.clone()),
            ("grid_size", self.grid_size.map(|v| v.to_string())),
            (
                "survey_replicates",
                self.survey_replicates.map(|v| v.to_string()),
            ),
            ("m2_replicates", self.m2_replicates.map(|v| v.to_string())),
            ("replicates", self.replicates.map(|v| v.to_string())),
            ("k_quantile", self.k_quantile.map(|v| v.to_string())),
            ("k_multiplier", self.k_multiplier.map(|v| v.to_string())),
            ("fixed_k", self.fixed_k.clone()),
            ("fixed_m", self.fixed_m.clone()),
            ("path", self.path.clone()),
            ("adapt", self.adapt.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("max_iterations", self.max_iterations.map(|v| v.to_string())),
            (
                "out",
                self.out.as_ref().map(|p| p.display().to_string()),
            ),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the tuning pipeline and persist the tuning report.
    Tune(ConfigFlags),
    /// Generate replicates from a tuning report; write CSV and summary.
    Estimate {
        /// Tuning report produced by `ups tune`.
        #[arg(long)]
        tuning: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Export per-figure CSVs from a completed estimate directory.
    Figures {
        /// Directory holding config.json, tuning.json and estimates.csv.
        #[arg(long)]
        from: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Tune(flags) => {
            let cfg = flags.resolve()?;
            let artifact = run_tune(&cfg)?;
            let path = write_tuning(&cfg, &artifact)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Estimate { tuning, flags } => {
            let cfg = flags.resolve()?;
            let artifact = read_tuning(&tuning)?;
            let (estimates, summary) = run_estimate(&cfg, &artifact)?;
            // Persist the artifact alongside the estimates so `figures`
            // has everything in one directory.
            write_tuning(&cfg, &artifact)?;
            let path = write_estimates(&cfg, &estimates, &summary)?;
            println!("wrote {}", path.display());
            println!(
                "{}: mean {:.6}, 95% CI [{:.6}, {:.6}], sd {:.6}, total cost {}",
                cfg.experiment.estimand(),
                summary.mean,
                summary.ci_low,
                summary.ci_high,
                summary.sample_sd,
                summary.total_cost
            );
            Ok(())
        }
        Command::Figures { from } => {
            let cfg_text = std::fs::read_to_string(from.join("config.json"))
                .map_err(|e| UpsError::Io(format!("reading config.json: {e}")))?;
            let cfg: ExperimentConfig = serde_json::from_str(&cfg_text)?;
            let artifact = read_tuning(&from.join("tuning.json"))?;
            let estimates_text = std::fs::read_to_string(from.join("estimates.csv"))
                .map_err(|e| UpsError::Io(format!("reading estimates.csv: {e}")))?;
            let estimates = output::estimates_from_csv(&estimates_text)?;
            let written = emit_figure_data(&cfg, &artifact, &estimates, &from)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                UpsError::Config(_)
                | UpsError::Dimension(_)
                | UpsError::Io(_)
                | UpsError::Serde(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
