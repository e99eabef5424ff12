//! Checkpoint evaluation: one-step error over every consecutive test pair and
//! closed-loop rollout error over a fixed horizon, per file and averaged.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use cegnn_core::model::load_checkpoint;
use cegnn_core::pde::{write_trajectory, Trajectory};
use cegnn_core::train::{evaluate_pairs, make_pairs, rollout};
use clap::Args;
use serde::Serialize;

use crate::dataset::{check_consistent, frame_tensors, mesh_for, read_split};
use crate::error::CliError;
use crate::manifest::RunScope;
use crate::metrics::MetricsWriter;

#[derive(Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoint file written by the train subcommand.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory holding test_* trajectory files.
    #[arg(long)]
    data: PathBuf,
    /// Closed-loop rollout length in model steps; 0 skips the rollout.
    #[arg(long, default_value_t = 10)]
    horizon: usize,
    /// Connect opposite boundary nodes when building the graph.
    #[arg(long, default_value_t = false)]
    periodic_wrap: bool,
    /// Also write each predicted rollout as a trajectory file.
    #[arg(long, default_value_t = false)]
    export_frames: bool,
    /// Output directory; must not already contain a run manifest.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let ckpt = File::open(&args.checkpoint)?;
    let mut r = BufReader::new(ckpt);
    let (cfg, params) = load_checkpoint(&mut r)?;

    let test_files = read_split(&args.data, "test")?;
    if test_files.is_empty() {
        return Err(CliError::Usage(format!(
            "no test_*.traj files in {}",
            args.data.display()
        )));
    }
    let refs: Vec<_> = test_files.iter().map(|(_, t)| t).collect();
    check_consistent(&refs)?;
    let first = refs[0];
    if first.dim() != cfg.spatial_dim || first.channels() != cfg.field_channels {
        return Err(CliError::Usage(format!(
            "checkpoint expects dim {} with {} channels but the dataset has dim {} with {}",
            cfg.spatial_dim,
            cfg.field_channels,
            first.dim(),
            first.channels()
        )));
    }
    let mesh = mesh_for(first, args.periodic_wrap)?;

    let mut scope = RunScope::begin(&args.out, "eval", &args, 0)?;
    let mut metrics = MetricsWriter::create(&scope.artifact("metrics.csv"))?;
    let mut one_step = Vec::with_capacity(refs.len());
    let mut rollout_means = Vec::with_capacity(refs.len());
    for (index, traj) in refs.iter().enumerate() {
        let pairs = make_pairs(traj)?;
        let rmse = evaluate_pairs(&mesh, &cfg, &params, &pairs)?;
        metrics.row(0, "test", &format!("one_step_rmse_{index:03}"), rmse)?;
        one_step.push(rmse);

        if args.horizon == 0 {
            continue;
        }
        let frames = frame_tensors(traj)?;
        if args.horizon > frames.len() - 1 {
            return Err(CliError::Usage(format!(
                "--horizon {} exceeds the {} transitions in {}",
                args.horizon,
                frames.len() - 1,
                test_files[index].0.display()
            )));
        }
        let targets = &frames[1..=args.horizon];
        let result = rollout(&mesh, &cfg, &params, &frames[0], args.horizon, Some(targets))?;
        for (step, value) in result.per_step_rmse.iter().enumerate() {
            metrics.row(step + 1, "test", &format!("rollout_rmse_{index:03}"), *value)?;
        }
        rollout_means.push(result.mean_rmse.expect("targets were provided"));

        if args.export_frames {
            let mut predicted = vec![frames[0].values().to_vec()];
            predicted.extend(result.frames.iter().map(|t| t.values().to_vec()));
            let out_traj = Trajectory {
                kind: traj.kind,
                grid: traj.grid.clone(),
                dx: traj.dx,
                dt: traj.dt,
                steps: args.horizon + 1,
                seed: traj.seed,
                ic_kind: traj.ic_kind,
                coefficients: traj.coefficients,
                frames: predicted,
            };
            let path = scope.artifact(&format!("predicted_{index:03}.traj"));
            write_trajectory(&path, &out_traj)?;
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    metrics.row(0, "test", "one_step_rmse_mean", mean(&one_step))?;
    if !rollout_means.is_empty() {
        metrics.row(0, "test", "rollout_rmse_mean", mean(&rollout_means))?;
    }
    metrics.finish()?;
    scope.finish()?;

    print!(
        "evaluated {} test trajectories: one-step rmse {:.6e}",
        refs.len(),
        mean(&one_step)
    );
    if rollout_means.is_empty() {
        println!();
    } else {
        println!(
            ", {}-step rollout rmse {:.6e}",
            args.horizon,
            mean(&rollout_means)
        );
    }
    Ok(())
}
