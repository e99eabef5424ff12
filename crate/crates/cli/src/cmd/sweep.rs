//! Window-count ablation: train the full model once per window count in
//! {1, 2, 4, 8, 16} and tabulate enhancement size against final error.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use cegnn_core::model::{count_parameters, init_params, save_checkpoint};
use cegnn_core::train::{train, TrainConfig};
use clap::Args;
use serde::Serialize;

use super::train::model_config;
use super::Ablate;
use crate::dataset::{check_consistent, mesh_for, pooled_pairs, read_split};
use crate::error::CliError;
use crate::manifest::RunScope;
use crate::metrics::MetricsWriter;

const WINDOW_COUNTS: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Args, Serialize)]
pub struct SweepArgs {
    /// Dataset directory holding train_* (and optionally val_*) files.
    #[arg(long)]
    data: PathBuf,
    /// Processor depth.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Latent width; must be divisible by every swept window count.
    #[arg(long, default_value_t = 128)]
    latent_dim: usize,
    /// Bernoulli keep probability of the frozen enhancement masks.
    #[arg(long, default_value_t = 0.5)]
    mask_keep: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// One-step pairs per optimizer update.
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Standard deviation of Gaussian noise added to training inputs.
    #[arg(long, default_value_t = 1e-4)]
    noise_std: f64,
    /// Passes over the pooled training pairs, per variant.
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Seed shared by every variant.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Connect opposite boundary nodes when building the graph.
    #[arg(long, default_value_t = false)]
    periodic_wrap: bool,
    /// Output directory; must not already contain a run manifest.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: SweepArgs) -> Result<(), CliError> {
    let max_windows = WINDOW_COUNTS[WINDOW_COUNTS.len() - 1];
    if args.latent_dim % max_windows != 0 {
        return Err(CliError::Usage(format!(
            "--latent-dim {} must be divisible by {max_windows} to sweep window counts",
            args.latent_dim
        )));
    }
    let train_files = read_split(&args.data, "train")?;
    if train_files.is_empty() {
        return Err(CliError::Usage(format!(
            "no train_*.traj files in {}",
            args.data.display()
        )));
    }
    let val_files = read_split(&args.data, "val")?;
    let all: Vec<_> = train_files
        .iter()
        .chain(val_files.iter())
        .map(|(_, t)| t)
        .collect();
    check_consistent(&all)?;
    let first = &train_files[0].1;
    let mesh = mesh_for(first, args.periodic_wrap)?;
    let train_refs: Vec<_> = train_files.iter().map(|(_, t)| t).collect();
    let val_refs: Vec<_> = val_files.iter().map(|(_, t)| t).collect();
    let train_pairs = pooled_pairs(&train_refs)?;
    let val_pairs = pooled_pairs(&val_refs)?;
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        noise_std: args.noise_std,
        seed: args.seed,
    };

    let mut scope = RunScope::begin(&args.out, "sweep", &args, args.seed)?;
    let mut table = MetricsTable::create(&scope.artifact("sweep.csv"))?;
    for windows in WINDOW_COUNTS {
        let cfg = model_config(
            first.dim(),
            first.channels(),
            args.latent_dim,
            args.layers,
            windows,
            args.mask_keep,
            Ablate::None,
        );
        cfg.validate()?;
        let counts = count_parameters(&cfg)?;
        let mut params = init_params(&cfg, args.seed)?;
        let report = train(&mesh, &cfg, &mut params, &train_pairs, &val_pairs, &train_cfg)?;

        let mut metrics =
            MetricsWriter::create(&scope.artifact(&format!("metrics_w{windows:02}.csv")))?;
        metrics.records(&report.records)?;
        metrics.finish()?;
        let ckpt = File::create(scope.artifact(&format!("checkpoint_w{windows:02}.ckpt")))?;
        let mut w = BufWriter::new(ckpt);
        save_checkpoint(&mut w, &cfg, &params)?;

        let final_rmse = report.best_val_rmse.unwrap_or(report.final_train_rmse);
        table.row(
            windows,
            cfg.window_dim(),
            counts.fe_total,
            counts.total,
            final_rmse,
        )?;
        println!(
            "windows {windows:>2}: window_dim {:>3}, fe params {:>9}, total {:>9}, rmse {final_rmse:.6e}",
            cfg.window_dim(),
            counts.fe_total,
            counts.total
        );
    }
    table.finish()?;
    scope.finish()?;
    Ok(())
}

/// CSV with one row per swept window count; column order is frozen.
struct MetricsTable {
    writer: csv::Writer<File>,
}

impl MetricsTable {
    fn create(path: &std::path::Path) -> Result<MetricsTable, CliError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record([
            "n_windows",
            "window_dim",
            "fe_parameters",
            "total_parameters",
            "final_rmse",
        ])?;
        Ok(MetricsTable { writer })
    }

    fn row(
        &mut self,
        n_windows: usize,
        window_dim: usize,
        fe_parameters: usize,
        total_parameters: usize,
        final_rmse: f64,
    ) -> Result<(), CliError> {
        self.writer.write_record([
            n_windows.to_string(),
            window_dim.to_string(),
            fe_parameters.to_string(),
            total_parameters.to_string(),
            final_rmse.to_string(),
        ])?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush()?;
        Ok(())
    }
}
