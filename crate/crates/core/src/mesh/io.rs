//! Mesh file format: one-line JSON header, sentinel line, then little-endian
//! payload arrays in a fixed order (positions f64, node types u64, edges u64,
//! cells u64). Centroids and measures are recomputed on load, so write ->
//! read -> write reproduces files byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cell_geometry, MeshError, MeshGraph, NodeType};
use crate::tensor::BLOB_SENTINEL;

#[derive(Debug, Serialize, Deserialize)]
struct MeshHeader {
    format: String,
    dim: usize,
    periodic: bool,
    domain: Vec<f64>,
    node_count: usize,
    edge_count: usize,
    cell_count: usize,
    vertices_per_cell: usize,
}

/// Magic string identifying mesh files.
pub const MESH_FORMAT: &str = "cegnn-mesh-v1";

pub fn write_mesh(path: &Path, mesh: &MeshGraph) -> Result<(), MeshError> {
    let file = File::create(path).map_err(|e| MeshError::Io(e.to_string()))?;
    let mut w = BufWriter::new(file);
    let header = MeshHeader {
        format: MESH_FORMAT.to_string(),
        dim: mesh.dim,
        periodic: mesh.periodic,
        domain: mesh.domain.clone(),
        node_count: mesh.node_count(),
        edge_count: mesh.edge_count(),
        cell_count: mesh.cell_count(),
        vertices_per_cell: mesh.vertices_per_cell(),
    };
    let line = serde_json::to_string(&header).map_err(|e| MeshError::Io(e.to_string()))?;
    (|| -> std::io::Result<()> {
        writeln!(w, "{line}")?;
        writeln!(w, "{BLOB_SENTINEL}")?;
        for v in &mesh.positions {
            w.write_all(&v.to_le_bytes())?;
        }
        for t in &mesh.node_types {
            let code: u64 = match t {
                NodeType::Interior => 0,
                NodeType::Boundary => 1,
            };
            w.write_all(&code.to_le_bytes())?;
        }
        for &[a, b] in &mesh.edges {
            w.write_all(&(a as u64).to_le_bytes())?;
            w.write_all(&(b as u64).to_le_bytes())?;
        }
        for &v in &mesh.cells {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.flush()
    })()
    .map_err(|e| MeshError::Io(e.to_string()))
}

pub fn read_mesh(path: &Path) -> Result<MeshGraph, MeshError> {
    let file = File::open(path).map_err(|e| MeshError::Io(e.to_string()))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| MeshError::Io(e.to_string()))?;
    let header: MeshHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| MeshError::Io(format!("header: {e}")))?;
    if header.format != MESH_FORMAT {
        return Err(MeshError::Io(format!("unknown format {:?}", header.format)));
    }
    if header.dim != header.domain.len() || header.vertices_per_cell != header.dim + 1 {
        return Err(MeshError::Io("inconsistent header".to_string()));
    }
    let mut sentinel = String::new();
    r.read_line(&mut sentinel).map_err(|e| MeshError::Io(e.to_string()))?;
    if sentinel.trim_end() != BLOB_SENTINEL {
        return Err(MeshError::Io("missing sentinel".to_string()));
    }

    let read_f64 = |r: &mut BufReader<File>, count: usize| -> Result<Vec<f64>, MeshError> {
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| MeshError::Io("payload truncated".to_string()))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect())
    };
    let read_u64 = |r: &mut BufReader<File>, count: usize| -> Result<Vec<u64>, MeshError> {
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| MeshError::Io("payload truncated".to_string()))?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
            .collect())
    };

    let positions = read_f64(&mut r, header.node_count * header.dim)?;
    let node_types: Vec<NodeType> = read_u64(&mut r, header.node_count)?
        .into_iter()
        .map(|c| {
            if c == 0 {
                Ok(NodeType::Interior)
            } else if c == 1 {
                Ok(NodeType::Boundary)
            } else {
                Err(MeshError::Io(format!("bad node type code {c}")))
            }
        })
        .collect::<Result<_, _>>()?;
    let edge_flat = read_u64(&mut r, header.edge_count * 2)?;
    let edges: Vec<[usize; 2]> = edge_flat
        .chunks_exact(2)
        .map(|p| [p[0] as usize, p[1] as usize])
        .collect();
    let cells: Vec<usize> = read_u64(&mut r, header.cell_count * header.vertices_per_cell)?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| MeshError::Io(e.to_string()))? != 0 {
        return Err(MeshError::Io("trailing bytes after payload".to_string()));
    }

    let n = header.node_count;
    for &[a, b] in &edges {
        if a >= n || b >= n {
            return Err(MeshError::Io(format!("edge endpoint {} out of range", a.max(b))));
        }
    }
    for &v in &cells {
        if v >= n {
            return Err(MeshError::Io(format!("cell vertex {v} out of range")));
        }
    }

    let mut mesh = MeshGraph {
        dim: header.dim,
        periodic: header.periodic,
        domain: header.domain,
        positions,
        node_types,
        edges,
        cells,
        centroids: Vec::new(),
        measures: Vec::new(),
    };
    cell_geometry(&mut mesh)?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::grid_to_mesh;

    #[test]
    fn roundtrip_preserves_mesh_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        for (extents, periodic) in [
            (vec![3usize, 4], false),
            (vec![4, 4], true),
            (vec![2, 3, 2], false),
        ] {
            let mesh = grid_to_mesh(&extents, 0.5, periodic).unwrap();
            let p1 = dir.path().join("a.mesh");
            let p2 = dir.path().join("b.mesh");
            write_mesh(&p1, &mesh).unwrap();
            let back = read_mesh(&p1).unwrap();
            assert_eq!(back.positions, mesh.positions);
            assert_eq!(back.edges, mesh.edges);
            assert_eq!(back.cells, mesh.cells);
            assert_eq!(back.measures, mesh.measures);
            write_mesh(&p2, &back).unwrap();
            assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
        }
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.mesh");
        std::fs::write(&p, b"not json\n---\n").unwrap();
        assert!(read_mesh(&p).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = grid_to_mesh(&[3, 3], 1.0, false).unwrap();
        let p = dir.path().join("t.mesh");
        write_mesh(&p, &mesh).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(read_mesh(&p).is_err());
    }
}
