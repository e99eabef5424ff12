//! Trajectory file format: one-line JSON manifest, sentinel line, then the
//! frames as little-endian f64, frame-major / node-major / channels-last.
//! The manifest fully determines the payload length, and writing a read-back
//! trajectory reproduces the original file byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Coefficients, IcKind, PdeError, PdeKind, Trajectory};
use crate::tensor::BLOB_SENTINEL;

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryHeader {
    name: String,
    dim: usize,
    grid: Vec<usize>,
    dx: f64,
    dt: f64,
    steps: usize,
    seed: u64,
    ic_kind: IcKind,
    coefficients: Coefficients,
}

fn kind_from_name(name: &str) -> Result<PdeKind, PdeError> {
    match name {
        "burgers" => Ok(PdeKind::Burgers),
        "fitzhugh_nagumo" => Ok(PdeKind::FitzhughNagumo),
        "gray_scott" => Ok(PdeKind::GrayScott),
        other => Err(PdeError::Io(format!("unknown system name {other:?}"))),
    }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), PdeError> {
    let header = TrajectoryHeader {
        name: traj.kind.name().to_string(),
        dim: traj.dim(),
        grid: traj.grid.clone(),
        dx: traj.dx,
        dt: traj.dt,
        steps: traj.steps,
        seed: traj.seed,
        ic_kind: traj.ic_kind,
        coefficients: traj.coefficients,
    };
    if traj.frames.len() != traj.steps {
        return Err(PdeError::Io(format!(
            "trajectory holds {} frames but declares {} steps",
            traj.frames.len(),
            traj.steps
        )));
    }
    let frame_len = traj.n_nodes() * traj.channels();
    let line = serde_json::to_string(&header).map_err(|e| PdeError::Io(e.to_string()))?;
    let file = File::create(path).map_err(|e| PdeError::Io(e.to_string()))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "{line}")?;
        writeln!(w, "{BLOB_SENTINEL}")?;
        for frame in &traj.frames {
            assert_eq!(frame.len(), frame_len, "frame length invariant");
            for v in frame {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(|e| PdeError::Io(e.to_string()))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, PdeError> {
    let file = File::open(path).map_err(|e| PdeError::Io(e.to_string()))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| PdeError::Io(e.to_string()))?;
    let header: TrajectoryHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| PdeError::Io(format!("header: {e}")))?;
    let mut sentinel = String::new();
    r.read_line(&mut sentinel).map_err(|e| PdeError::Io(e.to_string()))?;
    if sentinel.trim_end() != BLOB_SENTINEL {
        return Err(PdeError::Io("missing sentinel".to_string()));
    }
    let kind = kind_from_name(&header.name)?;
    if header.dim != header.grid.len() {
        return Err(PdeError::Io(format!(
            "dim {} does not match grid rank {}",
            header.dim,
            header.grid.len()
        )));
    }
    let n: usize = header.grid.iter().product();
    let frame_len = n * 2;
    let mut frames = Vec::with_capacity(header.steps);
    let mut bytes = vec![0u8; frame_len * 8];
    for f in 0..header.steps {
        r.read_exact(&mut bytes)
            .map_err(|_| PdeError::Io(format!("payload truncated at frame {f}")))?;
        let frame: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect();
        if !frame.iter().all(|v| v.is_finite()) {
            return Err(PdeError::Io(format!("non-finite value in frame {f}")));
        }
        frames.push(frame);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| PdeError::Io(e.to_string()))? != 0 {
        return Err(PdeError::Io("trailing bytes after payload".to_string()));
    }
    Ok(Trajectory {
        kind,
        grid: header.grid,
        dx: header.dx,
        dt: header.dt,
        steps: header.steps,
        seed: header.seed,
        ic_kind: header.ic_kind,
        coefficients: header.coefficients,
        frames,
    })
}
