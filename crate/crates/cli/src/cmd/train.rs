//! Surrogate training: pool one-step pairs from the train split, optimize,
//! and write the checkpoint plus a per-epoch metrics table.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use cegnn_core::model::{init_params, save_checkpoint, ModelConfig};
use cegnn_core::train::{train, TrainConfig};
use clap::Args;
use serde::Serialize;

use super::Ablate;
use crate::dataset::{check_consistent, mesh_for, pooled_pairs, read_split};
use crate::error::CliError;
use crate::manifest::RunScope;
use crate::metrics::MetricsWriter;

#[derive(Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory holding train_* (and optionally val_*) files.
    #[arg(long)]
    data: PathBuf,
    /// Processor depth.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Latent width shared by node, edge, and cell streams.
    #[arg(long, default_value_t = 128)]
    latent_dim: usize,
    /// Feature-enhancement window count; must divide the latent width.
    #[arg(long, default_value_t = 4)]
    windows: usize,
    /// Bernoulli keep probability of the frozen enhancement masks.
    #[arg(long, default_value_t = 0.5)]
    mask_keep: f64,
    /// Component ablation.
    #[arg(long, value_enum, default_value_t = Ablate::None)]
    ablate: Ablate,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// One-step pairs per optimizer update.
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Standard deviation of Gaussian noise added to training inputs.
    #[arg(long, default_value_t = 1e-4)]
    noise_std: f64,
    /// Passes over the pooled training pairs.
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Seed for parameter init, shuffling, and the noise stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Connect opposite boundary nodes when building the graph.
    #[arg(long, default_value_t = false)]
    periodic_wrap: bool,
    /// Output directory; must not already contain a run manifest.
    #[arg(long)]
    out: PathBuf,
}

/// Derives the model shape from the CLI flags and the dataset geometry.
pub fn model_config(
    spatial_dim: usize,
    field_channels: usize,
    latent_dim: usize,
    layers: usize,
    windows: usize,
    mask_keep: f64,
    ablate: Ablate,
) -> ModelConfig {
    ModelConfig {
        spatial_dim,
        field_channels,
        latent_dim,
        layers,
        mlp_hidden: latent_dim,
        mlp_depth: 2,
        n_windows: windows,
        mask_keep_prob: mask_keep,
        fe_enabled: ablate.fe_enabled(),
        cell_enabled: ablate.cell_enabled(),
        residual_enabled: true,
    }
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
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

    let cfg = model_config(
        first.dim(),
        first.channels(),
        args.latent_dim,
        args.layers,
        args.windows,
        args.mask_keep,
        args.ablate,
    );
    cfg.validate()?;
    let mut params = init_params(&cfg, args.seed)?;

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

    let mut scope = RunScope::begin(&args.out, "train", &args, args.seed)?;
    let report = train(&mesh, &cfg, &mut params, &train_pairs, &val_pairs, &train_cfg)?;

    let mut metrics = MetricsWriter::create(&scope.artifact("metrics.csv"))?;
    metrics.records(&report.records)?;
    metrics.finish()?;

    let ckpt = File::create(scope.artifact("checkpoint.ckpt"))?;
    let mut w = BufWriter::new(ckpt);
    save_checkpoint(&mut w, &cfg, &params)?;

    scope.finish()?;
    match report.best_val_rmse {
        Some(v) => println!(
            "trained {} epochs; best val rmse {v:.6e} at epoch {}; final train rmse {:.6e}",
            args.epochs, report.best_epoch, report.final_train_rmse
        ),
        None => println!(
            "trained {} epochs; final train rmse {:.6e}",
            args.epochs, report.final_train_rmse
        ),
    }
    Ok(())
}
