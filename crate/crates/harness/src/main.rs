use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use steinlab::config::{ExperimentConfig, ExperimentKind};
use steinlab::data::resolve_data_path;
use steinlab::experiments::run_experiment;
use steinlab::{HarnessError, Result};
use steinlearn::procedures::hash_bytes;
use steinlearn::samplers::{sgld_sample, write_matrix, SampleManifest, SgldInit};
use steinlearn::scorezoo::SavedModel;

/// Learned Stein discrepancy experiments.
///
/// Without `--config` each subcommand starts from its built-in preset. Use
/// `--print-config` to see the effective TOML, and `--override key=value`
/// (dotted keys, repeatable) to change single fields. Relative data paths are
/// resolved against $STEINLAB_DATA_DIR when it is set.
#[derive(Parser)]
#[command(name = "steinlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; its `kind` must match the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single base seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` override, e.g. `train.iterations=200`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Critic fit against the closed-form Gaussian optimum.
    GaussOracle(Common),
    /// Goodness-of-fit rejection rates on perturbed RBMs.
    RbmGof(Common),
    /// LSD and KSD along an RBM perturbation ladder.
    RbmEval(Common),
    /// ICA trained by ML, sliced score matching and LSD.
    IcaBench(Common),
    /// Deep EBMs on 2-D toy data.
    Toy2d(Common),
    /// Deep EBM on IDX images plus SGLD samples.
    EbmTrain(Common),
    /// Null distribution of the test statistic with a QQ/KS report.
    Calibrate(Common),
    /// SGLD samples from a saved model.
    Sample {
        /// Model file written by one of the experiments.
        #[arg(long)]
        model: PathBuf,
        /// Number of chains.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output sample file; a `.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Config whose `[ebm.sgld]` table sets the sampler.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load_config(kind: ExperimentKind, common: &Common) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.clone(),
            source: e,
        })?,
        None => ExperimentConfig::preset(kind).to_toml()?,
    };
    let mut cfg = ExperimentConfig::from_toml_with_overrides(&text, &common.overrides)?;
    if common.config.is_some() && cfg.kind != kind {
        return Err(HarnessError::Config(format!(
            "config kind `{}` does not match subcommand `{}`",
            cfg.kind.as_str(),
            kind.as_str()
        )));
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(kind: ExperimentKind, common: &Common) -> Result<()> {
    let cfg = load_config(kind, common)?;
    if common.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let out = run_experiment(&cfg)?;
    print!("{}", String::from_utf8_lossy(&out.summary.to_bytes()?));
    for f in &out.failures {
        eprintln!("failed run: {f}");
    }
    eprintln!("outputs written to {}", cfg.out_dir.display());
    Ok(())
}

fn sample(model: &Path, n: usize, seed: u64, out: &Path, config: &Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let text = match config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.clone(),
            source: e,
        })?,
        None => String::new(),
    };
    let cfg = ExperimentConfig::from_toml_with_overrides(&text, overrides)?;
    cfg.ebm.sgld.validate()?;
    if matches!(cfg.ebm.sgld.init, SgldInit::Data) {
        return Err(HarnessError::Config("the sample command cannot use data initialization".into()));
    }
    let path = resolve_data_path(model);
    let bytes = std::fs::read(&path).map_err(|e| HarnessError::Io { path: path.clone(), source: e })?;
    let saved = SavedModel::<f64>::from_bytes(&bytes)?;
    let batch = sgld_sample(&saved, &cfg.ebm.sgld, n, seed, None)?;
    let manifest = SampleManifest {
        model_hash: Some(hash_bytes(&bytes)),
        sampler: serde_json::to_value(batch.config())?,
        seed,
        rows: batch.samples().nrows(),
        cols: batch.samples().ncols(),
    };
    write_matrix(out, batch.samples(), &manifest)?;
    eprintln!("wrote {} samples to {}", n, out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GaussOracle(c) => run(ExperimentKind::GaussOracle, c),
        Command::RbmGof(c) => run(ExperimentKind::RbmGof, c),
        Command::RbmEval(c) => run(ExperimentKind::RbmEval, c),
        Command::IcaBench(c) => run(ExperimentKind::IcaBench, c),
        Command::Toy2d(c) => run(ExperimentKind::Toy2dTrain, c),
        Command::EbmTrain(c) => run(ExperimentKind::EbmImageTrain, c),
        Command::Calibrate(c) => run(ExperimentKind::Calibration, c),
        Command::Sample {
            model,
            n,
            seed,
            out,
            config,
            overrides,
        } => sample(model, *n, *seed, out, config, overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
