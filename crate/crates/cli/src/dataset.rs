//! Dataset directory conventions: a generated run holds `train_NNN.traj`,
//! `val_NNN.traj`, and `test_NNN.traj` files that all share one system,
//! grid, and spacing. Meshes for training are rebuilt from those headers.

use std::path::{Path, PathBuf};

use cegnn_core::mesh::{grid_to_mesh, MeshGraph};
use cegnn_core::pde::{read_trajectory, Trajectory};
use cegnn_core::tensor::Tensor;
use cegnn_core::train::make_pairs;

use crate::error::CliError;

/// Reads every `<prefix>_*.traj` file in `dir`, sorted by file name.
pub fn read_split(dir: &Path, prefix: &str) -> Result<Vec<(PathBuf, Trajectory)>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|e| e == "traj")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| s.starts_with(&format!("{prefix}_")))
        })
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let traj = read_trajectory(&p)?;
        out.push((p, traj));
    }
    Ok(out)
}

/// Verifies that all trajectories share one (system, grid, dx) tuple.
pub fn check_consistent(trajs: &[&Trajectory]) -> Result<(), CliError> {
    let Some(first) = trajs.first() else {
        return Ok(());
    };
    for t in &trajs[1..] {
        if t.kind != first.kind || t.grid != first.grid || t.dx != first.dx {
            return Err(CliError::Usage(format!(
                "trajectories disagree: {:?} grid {:?} dx {} vs {:?} grid {:?} dx {}",
                first.kind, first.grid, first.dx, t.kind, t.grid, t.dx
            )));
        }
    }
    Ok(())
}

/// Builds the training mesh described by a trajectory header.
pub fn mesh_for(traj: &Trajectory, periodic_wrap: bool) -> Result<MeshGraph, CliError> {
    Ok(grid_to_mesh(&traj.grid, traj.dx, periodic_wrap)?)
}

/// Consecutive-frame pairs pooled over several trajectories.
pub fn pooled_pairs(trajs: &[&Trajectory]) -> Result<Vec<(Tensor, Tensor)>, CliError> {
    let mut pairs = Vec::new();
    for t in trajs {
        pairs.extend(make_pairs(t).map_err(CliError::from)?);
    }
    Ok(pairs)
}

/// All frames of a trajectory as `[N x 2]` tensors.
pub fn frame_tensors(traj: &Trajectory) -> Result<Vec<Tensor>, CliError> {
    let n = traj.n_nodes();
    let ch = traj.channels();
    traj.frames
        .iter()
        .map(|f| Tensor::new(&[n, ch], f.clone()).map_err(CliError::from))
        .collect()
}
