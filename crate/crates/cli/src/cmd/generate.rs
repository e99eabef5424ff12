//! Trajectory generation: run the reference solver and write one file per
//! trajectory, named `{split}_{index:03}.traj`.

use std::path::PathBuf;

use cegnn_core::pde::{generate_trajectory, write_trajectory, IcKind, PdeKind, PdeSpec};
use clap::Args;
use serde::Serialize;

use super::{IcName, PdeName};
use crate::error::CliError;
use crate::manifest::RunScope;

/// Seed offsets keep split seeds disjoint for any plausible trajectory count.
const VAL_SEED_OFFSET: u64 = 1000;
const TEST_SEED_OFFSET: u64 = 2000;

#[derive(Args, Serialize)]
pub struct GenerateArgs {
    /// PDE family to simulate.
    #[arg(long, value_enum)]
    pde: PdeName,
    /// Spatial dimension of the domain.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Points per axis, overriding the family preset.
    #[arg(long)]
    grid: Option<usize>,
    /// Grid spacing, overriding the family preset.
    #[arg(long)]
    dx: Option<f64>,
    /// Integration step, overriding the family preset.
    #[arg(long)]
    dt: Option<f64>,
    /// Integration step count, overriding the family preset.
    #[arg(long)]
    steps: Option<usize>,
    /// Store every k-th frame; the written dt absorbs the factor.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Initial-condition family, overriding the family default.
    #[arg(long, value_enum)]
    ic: Option<IcName>,
    /// Mean of the Gaussian initial condition.
    #[arg(long, default_value_t = 0.0)]
    ic_mean: f64,
    /// Standard deviation of the Gaussian initial condition.
    #[arg(long, default_value_t = 0.3)]
    ic_std: f64,
    /// Base seed; per-trajectory seeds are base + split offset + index.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of training trajectories.
    #[arg(long, default_value_t = 1)]
    train: usize,
    /// Number of validation trajectories.
    #[arg(long, default_value_t = 1)]
    val: usize,
    /// Number of test trajectories.
    #[arg(long, default_value_t = 1)]
    test: usize,
    /// Output directory; must not already contain a run manifest.
    #[arg(long)]
    out: PathBuf,
}

fn preset(pde: PdeName, dim: usize) -> Result<PdeSpec, CliError> {
    match (pde, dim) {
        (PdeName::Burgers, 2) => Ok(PdeSpec::burgers_2d()),
        (PdeName::Fn, 2) => Ok(PdeSpec::fitzhugh_nagumo_2d()),
        (PdeName::Gs, 2) => Ok(PdeSpec::gray_scott_2d()),
        (PdeName::Gs, 3) => Ok(PdeSpec::gray_scott_3d()),
        (pde, dim) => Err(CliError::Usage(format!(
            "no preset for --pde {} --dim {dim}",
            match pde {
                PdeName::Burgers => "burgers",
                PdeName::Fn => "fn",
                PdeName::Gs => "gs",
            }
        ))),
    }
}

pub fn run(args: GenerateArgs) -> Result<(), CliError> {
    let mut spec = preset(args.pde, args.dim)?;
    if let Some(extent) = args.grid {
        spec.grid = vec![extent; args.dim];
    }
    if let Some(dx) = args.dx {
        spec.dx = dx;
    }
    if let Some(dt) = args.dt {
        spec.dt = dt;
    }
    if let Some(steps) = args.steps {
        spec.steps = steps;
    }
    spec.validate()?;
    if args.stride == 0 || spec.steps % args.stride != 0 {
        return Err(CliError::Usage(format!(
            "--stride {} must be a nonzero divisor of --steps {}",
            args.stride, spec.steps
        )));
    }
    let ic_kind = match args.ic {
        None => IcKind::default_for(spec.kind),
        Some(IcName::Gaussian) => IcKind::Gaussian {
            mean: args.ic_mean,
            std: args.ic_std,
        },
        Some(IcName::Blocks) => IcKind::Blocks,
    };
    if matches!(ic_kind, IcKind::Gaussian { std, .. } if std <= 0.0) {
        return Err(CliError::Usage(format!(
            "--ic-std must be positive, got {}",
            args.ic_std
        )));
    }
    if matches!(ic_kind, IcKind::Blocks) && spec.kind != PdeKind::GrayScott {
        return Err(CliError::Usage(
            "--ic blocks is only meaningful for --pde gs".to_string(),
        ));
    }

    let base = args.seed;
    let splits: [(&str, usize, u64); 3] = [
        ("train", args.train, base),
        ("val", args.val, base + VAL_SEED_OFFSET),
        ("test", args.test, base + TEST_SEED_OFFSET),
    ];
    let mut scope = RunScope::begin(&args.out, "generate", &args, args.seed)?;
    let mut written = 0usize;
    for (split, count, split_base) in splits {
        for index in 0..count {
            let seed = split_base + index as u64;
            let traj = generate_trajectory(&spec, ic_kind, seed, args.stride)?;
            let path = scope.artifact(&format!("{split}_{index:03}.traj"));
            write_trajectory(&path, &traj)?;
            written += 1;
        }
    }
    scope.finish()?;
    println!(
        "generated {written} trajectories ({} train, {} val, {} test) in {}",
        args.train,
        args.val,
        args.test,
        args.out.display()
    );
    Ok(())
}
