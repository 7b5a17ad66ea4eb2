//! `mmea`: generate data, train, evaluate and sweep alignment experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use mmea_core::encoder::EncoderParams;
use mmea_core::encoder::{load_checkpoint, save_checkpoint};
use mmea_core::energy::write_energy_csv_file;
use mmea_core::experiment::{
    check_architecture, evaluate, load_raw, prepare, sweep, train_prepared, write_dataset_dir, write_metrics,
    write_sweep_csv, DatasetSpec, PreparedData, SweepAxis,
};
use mmea_core::training::write_history_csv_file;
use mmea_core::{DenseMatrix, Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mmea", version, about = "Multi-modal entity alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Propagation iterations.
    #[arg(long)]
    np: Option<usize>,
    /// Comma-separated ablation tokens, e.g. `drop-v,no-prop`.
    #[arg(long)]
    ablate: Option<String>,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic graph pair and its seed split.
    Synth(Common),
    /// Train the encoder; writes a checkpoint, history and energy trace.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path (default `<out>/checkpoint.txt`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Propagate and rank with a trained checkpoint; writes metrics JSON and CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Re-run the pipeline over one axis; writes one CSV row per value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of r_seed, r_img, r_tex, np.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Dirichlet energies and interpolation bounds of a checkpoint's embeddings.
    EnergyReport {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(np) = self.np {
            cfg.n_p = np;
        }
        if let Some(list) = &self.ablate {
            cfg.set("ablate", list)?;
        }
        cfg.validate()?;
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        fs::write(self.out.join("config.txt"), cfg.to_kv())?;
        Ok(cfg)
    }

    fn checkpoint(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join("checkpoint.txt"))
    }
}

fn synth(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    if let DatasetSpec::Directory(d) = &cfg.dataset {
        bail!(Error::Config(format!(
            "synth needs a synthetic dataset, not {}",
            d.display()
        )));
    }
    let (source, target, seeds) = load_raw(&cfg)?;
    let dir = common.out.join("data");
    write_dataset_dir(&dir, &source, &target, &seeds)?;
    info!(
        "wrote {} + {} entities to {}",
        source.entity_count(),
        target.entity_count(),
        dir.display()
    );
    Ok(())
}

fn train(common: &Common, checkpoint: &Option<PathBuf>) -> Result<()> {
    let cfg = common.load()?;
    let data = prepare(&cfg)?;
    let result = train_prepared(&data, &cfg)?;
    write_history_csv_file(&common.out.join("history.csv"), &result.history)?;
    let energy: Vec<_> = result.history.iter().map(|r| r.energy.clone()).collect();
    write_energy_csv_file(&common.out.join("energy.csv"), &energy)?;
    if let Some(reason) = &result.diverged {
        bail!(Error::Numerical(format!("training diverged: {reason}")));
    }
    let path = common.checkpoint(checkpoint);
    save_checkpoint(&path, &result.architecture, &result.params)?;
    info!(
        "trained {} epochs on {} seeds; checkpoint {}",
        result.history.len(),
        result.train_pairs.len(),
        path.display()
    );
    Ok(())
}

fn load_checked(path: &Path, cfg: &ExperimentConfig) -> Result<(PreparedData, EncoderParams<DenseMatrix>)> {
    if !path.exists() {
        bail!("checkpoint {} does not exist; run `mmea train` first", path.display());
    }
    let (arch, params) = load_checkpoint(path)?;
    let data = prepare(cfg)?;
    check_architecture(&arch, &data, cfg)?;
    Ok((data, params))
}

fn eval(common: &Common, checkpoint: &Option<PathBuf>) -> Result<()> {
    let cfg = common.load()?;
    let (data, params) = load_checked(&common.checkpoint(checkpoint), &cfg)?;
    let e = evaluate(&data, &params, &cfg)?;
    write_metrics(&common.out, &cfg, &data, &e)?;
    println!(
        "hits@1 {:.4}  hits@10 {:.4}  mrr {:.4}  ({} pairs, {} propagation steps)",
        e.metrics.hits_at_1, e.metrics.hits_at_10, e.metrics.mrr, e.metrics.pairs, e.propagation_steps
    );
    Ok(())
}

fn energy_report(common: &Common, checkpoint: &Option<PathBuf>) -> Result<()> {
    let cfg = common.load()?;
    let (data, params) = load_checked(&common.checkpoint(checkpoint), &cfg)?;
    let e = evaluate(&data, &params, &cfg)?;
    let mut json = serde_json::to_string_pretty(&e)?;
    json.push('\n');
    fs::write(common.out.join("energy_report.json"), json)?;
    println!(
        "energy before {:.6e} / {:.6e}, after {:.6e} / {:.6e}",
        e.energy_before.0, e.energy_before.1, e.energy_after.0, e.energy_after.1
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(c) => synth(c),
        Command::Train { common, checkpoint } => train(common, checkpoint),
        Command::Eval { common, checkpoint } => eval(common, checkpoint),
        Command::EnergyReport { common, checkpoint } => energy_report(common, checkpoint),
        Command::Sweep { common, axis, values } => {
            let cfg = common.load()?;
            let rows = sweep(&cfg, *axis, values)?;
            write_sweep_csv(&common.out.join("sweep.csv"), &rows)?;
            for r in &rows {
                println!("{} = {}: hits@1 {:.4}  mrr {:.4}", r.axis, r.value, r.hits_at_1, r.mrr);
            }
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::Numerical(_) | Error::NotPositiveDefinite { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
