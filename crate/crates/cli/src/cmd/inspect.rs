//! File summaries. The three on-disk formats all start with a one-line JSON
//! header, so dispatch reads that line and branches on its fields.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use cegnn_core::mesh::{read_mesh, MESH_FORMAT};
use cegnn_core::model::{load_checkpoint, CHECKPOINT_FORMAT};
use cegnn_core::pde::read_trajectory;
use clap::Args;
use serde::Serialize;

use crate::error::CliError;

#[derive(Args, Serialize)]
pub struct InspectArgs {
    /// Mesh, trajectory, or checkpoint file to summarize.
    path: PathBuf,
}

pub fn run(args: InspectArgs) -> Result<(), CliError> {
    let file = File::open(&args.path)?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: serde_json::Value = serde_json::from_str(line.trim_end()).map_err(|_| {
        CliError::Usage(format!("{} is not a recognized file", args.path.display()))
    })?;
    let report = match header.get("format").and_then(|f| f.as_str()) {
        Some(f) if f == MESH_FORMAT => inspect_mesh(&args.path)?,
        Some(f) if f == CHECKPOINT_FORMAT => inspect_checkpoint(&args.path)?,
        Some(f) => return Err(CliError::Usage(format!("unknown file format {f:?}"))),
        None if header.get("name").is_some() => inspect_trajectory(&args.path)?,
        None => {
            return Err(CliError::Usage(format!(
                "{} is not a recognized file",
                args.path.display()
            )))
        }
    };
    // Tolerate a closed pipe (e.g. `inspect ... | head`) instead of failing.
    let mut out = std::io::stdout().lock();
    match out.write_all(report.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn inspect_mesh(path: &Path) -> Result<String, CliError> {
    let mesh = read_mesh(path)?;
    let mut s = String::new();
    let _ = writeln!(s, "mesh {}", path.display());
    let _ = writeln!(s, "  dim            {}", mesh.dim);
    let _ = writeln!(s, "  periodic       {}", mesh.periodic);
    let domain = mesh
        .domain
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" x ");
    let _ = writeln!(s, "  domain         {domain}");
    let _ = writeln!(s, "  nodes          {}", mesh.node_count());
    let _ = writeln!(s, "  edges          {}", mesh.edge_count());
    let _ = writeln!(
        s,
        "  cells          {} ({} vertices each)",
        mesh.cell_count(),
        mesh.vertices_per_cell()
    );
    Ok(s)
}

fn inspect_checkpoint(path: &Path) -> Result<String, CliError> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let (cfg, params) = load_checkpoint(&mut r)?;
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint {}", path.display());
    let _ = writeln!(s, "  config         {}", serde_json::to_string(&cfg)?);
    let _ = writeln!(s, "  parameters     {}", params.total_parameters());
    for (name, tensor) in params.named() {
        let _ = writeln!(s, "    {name:<28} {:?}", tensor.shape());
    }
    let masks = params.named_masks();
    if !masks.is_empty() {
        let frozen: usize = masks.iter().map(|(_, t)| t.len()).sum();
        let _ = writeln!(s, "  frozen masks   {frozen}");
        for (name, tensor) in masks {
            let _ = writeln!(s, "    {name:<28} {:?}", tensor.shape());
        }
    }
    Ok(s)
}

fn inspect_trajectory(path: &Path) -> Result<String, CliError> {
    let traj = read_trajectory(path)?;
    let mut s = String::new();
    let _ = writeln!(s, "trajectory {}", path.display());
    let _ = writeln!(s, "  system         {}", traj.kind.name());
    let mut shape = vec![traj.steps];
    shape.extend(traj.grid.iter().copied());
    shape.push(traj.channels());
    let _ = writeln!(
        s,
        "  shape          ({})",
        shape
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    let _ = writeln!(s, "  dx             {}", traj.dx);
    let _ = writeln!(s, "  dt             {}", traj.dt);
    let _ = writeln!(s, "  seed           {}", traj.seed);
    let _ = writeln!(s, "  ic             {:?}", traj.ic_kind);
    let _ = writeln!(
        s,
        "  coefficients   {}",
        serde_json::to_string(&traj.coefficients)?
    );
    let ch = traj.channels();
    for c in 0..ch {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for frame in &traj.frames {
            for v in frame.iter().skip(c).step_by(ch) {
                min = min.min(*v);
                max = max.max(*v);
                sum += *v;
                count += 1;
            }
        }
        let _ = writeln!(
            s,
            "  channel {c}      min {min:.6e}  max {max:.6e}  mean {:.6e}",
            sum / count as f64
        );
    }
    Ok(s)
}
