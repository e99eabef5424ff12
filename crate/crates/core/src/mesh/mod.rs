//! Simplicial meshes over structured grids.
//!
//! A [`MeshGraph`] holds nodes with positions and types, directed edges
//! derived from cell connectivity, and simplicial cells (triangles in 2D,
//! tetrahedra in 3D) with precomputed centroids and measures. Node ordering
//! matches the row-major (axis 0 slowest) flattening used by the grid
//! solvers, so solver frames index directly as node features.

mod io;

pub use io::{read_mesh, write_mesh, MESH_FORMAT};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("cell {cell} is degenerate (zero measure)")]
    DegenerateCell { cell: usize },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("field shape {got} does not match mesh with {nodes} nodes")]
    FieldShape { nodes: usize, got: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("mesh file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeType {
    Interior,
    Boundary,
}

/// Raw (pre-encoder) features for one mesh/field pair.
///
/// * node: `[N x (d + 2 + m)]` = field channels, node-type one-hot, position
/// * edge: `[E x (m + 1)]` = receiver-to-sender displacement, distance
/// * cell: `[C x (V*m + m + 1)]` = vertex-to-centroid vectors, centroid, measure
pub struct RawFeatures {
    pub node: Tensor,
    pub edge: Tensor,
    pub cell: Tensor,
}

#[derive(Debug, Clone)]
pub struct MeshGraph {
    /// Spatial dimension m (2 or 3).
    pub dim: usize,
    pub periodic: bool,
    /// Axis lengths used by the minimum-image convention; meaningful only
    /// when periodic.
    pub domain: Vec<f64>,
    /// `[N * dim]`, row-major.
    pub positions: Vec<f64>,
    pub node_types: Vec<NodeType>,
    /// Directed edges, both orientations of every undirected pair, sorted
    /// lexicographically. `edges[k] = [receiver, sender]`: features and
    /// aggregation treat the first endpoint as the receiving node.
    pub edges: Vec<[usize; 2]>,
    /// Flat cell vertex indices, `vertices_per_cell()` per cell.
    pub cells: Vec<usize>,
    /// `[C * dim]` cell centroids (wrapped into the domain when periodic).
    pub centroids: Vec<f64>,
    /// Triangle areas or tetrahedron volumes, strictly positive.
    pub measures: Vec<f64>,
}

impl MeshGraph {
    pub fn node_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices_per_cell(&self) -> usize {
        self.dim + 1
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len() / self.vertices_per_cell()
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let v = self.vertices_per_cell();
        &self.cells[c * v..(c + 1) * v]
    }

    pub fn position(&self, node: usize) -> &[f64] {
        &self.positions[node * self.dim..(node + 1) * self.dim]
    }

    /// Displacement `to - from` under the minimum-image convention when the
    /// mesh is periodic.
    pub fn displacement(&self, from: usize, to: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for a in 0..self.dim {
            let mut da = self.positions[to * self.dim + a] - self.positions[from * self.dim + a];
            if self.periodic {
                let len = self.domain[a];
                da -= len * (da / len).round();
            }
            d[a] = da;
        }
        d
    }

    /// Relabels nodes: node `i` becomes `perm[i]`. Edges are re-sorted into
    /// canonical lexicographic order; cells keep their sequence with
    /// remapped vertices; geometry is recomputed (bitwise identical since
    /// positions are unchanged up to relabeling).
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<MeshGraph, MeshError> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(MeshError::InvalidPermutation(format!(
                "length {} for {} nodes",
                perm.len(),
                n
            )));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(MeshError::InvalidPermutation(
                    "not a bijection on node indices".to_string(),
                ));
            }
            seen[p] = true;
        }
        let mut positions = vec![0.0; n * self.dim];
        let mut node_types = vec![NodeType::Interior; n];
        for i in 0..n {
            let j = perm[i];
            positions[j * self.dim..(j + 1) * self.dim].copy_from_slice(self.position(i));
            node_types[j] = self.node_types[i];
        }
        let mut edges: Vec<[usize; 2]> = self
            .edges
            .iter()
            .map(|&[a, b]| [perm[a], perm[b]])
            .collect();
        edges.sort_unstable();
        let cells: Vec<usize> = self.cells.iter().map(|&v| perm[v]).collect();
        let mut mesh = MeshGraph {
            dim: self.dim,
            periodic: self.periodic,
            domain: self.domain.clone(),
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
}

/// Triangulates a structured grid into a simplicial mesh.
///
/// 2D squares split along the fixed `(i,j)-(i+1,j+1)` diagonal into two
/// triangles. 3D cubes split into five tetrahedra, mirrored on cubes of odd
/// `i+j+k` parity so that face diagonals agree between neighbors; periodic
/// 3D grids therefore need even extents. Periodic grids need at least three
/// nodes per axis to avoid duplicate edges, non-periodic at least two.
pub fn grid_to_mesh(extents: &[usize], dx: f64, periodic: bool) -> Result<MeshGraph, MeshError> {
    let dim = extents.len();
    if dim != 2 && dim != 3 {
        return Err(MeshError::InvalidGrid(format!(
            "need 2 or 3 axes, got {dim}"
        )));
    }
    if !(dx.is_finite() && dx > 0.0) {
        return Err(MeshError::InvalidGrid(format!("spacing must be positive, got {dx}")));
    }
    let min_nodes = if periodic { 3 } else { 2 };
    for (a, &g) in extents.iter().enumerate() {
        if g < min_nodes {
            return Err(MeshError::InvalidGrid(format!(
                "axis {a} has {g} nodes, need at least {min_nodes}"
            )));
        }
    }
    if periodic && dim == 3 && extents.iter().any(|g| g % 2 != 0) {
        return Err(MeshError::InvalidGrid(
            "periodic 3D grids need even extents so mirrored cube faces match".to_string(),
        ));
    }

    let n: usize = extents.iter().product();
    let mut strides = vec![1usize; dim];
    for a in (0..dim - 1).rev() {
        strides[a] = strides[a + 1] * extents[a + 1];
    }

    let mut positions = vec![0.0; n * dim];
    let mut node_types = vec![NodeType::Interior; n];
    for i in 0..n {
        for a in 0..dim {
            let coord = (i / strides[a]) % extents[a];
            positions[i * dim + a] = coord as f64 * dx;
            if !periodic && (coord == 0 || coord == extents[a] - 1) {
                node_types[i] = NodeType::Boundary;
            }
        }
    }

    let cube_range: Vec<usize> = extents
        .iter()
        .map(|&g| if periodic { g } else { g - 1 })
        .collect();
    let node_at = |coords: &[usize]| -> usize {
        let mut idx = 0;
        for a in 0..dim {
            idx += (coords[a] % extents[a]) * strides[a];
        }
        idx
    };

    let mut cells: Vec<usize> = Vec::new();
    if dim == 2 {
        for i in 0..cube_range[0] {
            for j in 0..cube_range[1] {
                let p00 = node_at(&[i, j]);
                let p10 = node_at(&[i + 1, j]);
                let p01 = node_at(&[i, j + 1]);
                let p11 = node_at(&[i + 1, j + 1]);
                cells.extend_from_slice(&[p00, p10, p11]);
                cells.extend_from_slice(&[p00, p11, p01]);
            }
        }
    } else {
        // Local cube corner v{didjdk}, offsets in {0,1}.
        for i in 0..cube_range[0] {
            for j in 0..cube_range[1] {
                for k in 0..cube_range[2] {
                    let v = |di: usize, dj: usize, dk: usize| node_at(&[i + di, j + dj, k + dk]);
                    let tets: [[usize; 4]; 5] = if (i + j + k) % 2 == 0 {
                        [
                            [v(0, 0, 0), v(1, 0, 0), v(0, 1, 0), v(0, 0, 1)],
                            [v(1, 1, 0), v(1, 0, 0), v(0, 1, 0), v(1, 1, 1)],
                            [v(1, 0, 1), v(1, 0, 0), v(0, 0, 1), v(1, 1, 1)],
                            [v(0, 1, 1), v(0, 1, 0), v(0, 0, 1), v(1, 1, 1)],
                            [v(1, 0, 0), v(0, 1, 0), v(0, 0, 1), v(1, 1, 1)],
                        ]
                    } else {
                        [
                            [v(1, 0, 0), v(0, 0, 0), v(1, 1, 0), v(1, 0, 1)],
                            [v(0, 1, 0), v(0, 0, 0), v(1, 1, 0), v(0, 1, 1)],
                            [v(0, 0, 1), v(0, 0, 0), v(1, 0, 1), v(0, 1, 1)],
                            [v(1, 1, 1), v(1, 1, 0), v(1, 0, 1), v(0, 1, 1)],
                            [v(0, 0, 0), v(1, 1, 0), v(1, 0, 1), v(0, 1, 1)],
                        ]
                    };
                    for t in &tets {
                        cells.extend_from_slice(t);
                    }
                }
            }
        }
    }

    let vertices_per_cell = dim + 1;
    let mut undirected = std::collections::BTreeSet::new();
    for cell in cells.chunks_exact(vertices_per_cell) {
        for a in 0..vertices_per_cell {
            for b in a + 1..vertices_per_cell {
                let (lo, hi) = if cell[a] < cell[b] {
                    (cell[a], cell[b])
                } else {
                    (cell[b], cell[a])
                };
                if lo == hi {
                    return Err(MeshError::InvalidGrid(
                        "cell references a node twice".to_string(),
                    ));
                }
                undirected.insert((lo, hi));
            }
        }
    }
    let mut edges: Vec<[usize; 2]> = Vec::with_capacity(undirected.len() * 2);
    for (a, b) in undirected {
        edges.push([a, b]);
        edges.push([b, a]);
    }
    edges.sort_unstable();

    let domain: Vec<f64> = extents
        .iter()
        .map(|&g| if periodic { g as f64 * dx } else { (g - 1) as f64 * dx })
        .collect();

    let mut mesh = MeshGraph {
        dim,
        periodic,
        domain,
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

/// Recomputes centroids and measures from positions and cell connectivity.
/// Rejects zero-measure cells. Under periodic wrap all displacements use the
/// minimum image relative to the cell's first vertex.
pub fn cell_geometry(mesh: &mut MeshGraph) -> Result<(), MeshError> {
    let v = mesh.vertices_per_cell();
    let c_count = mesh.cells.len() / v;
    let dim = mesh.dim;
    let mut centroids = vec![0.0; c_count * dim];
    let mut measures = vec![0.0; c_count];
    for c in 0..c_count {
        let cell = &mesh.cells[c * v..(c + 1) * v];
        let v0 = cell[0];
        // Displacements of each vertex from the first vertex (min image).
        let disp: Vec<Vec<f64>> = cell.iter().map(|&vi| mesh.displacement(v0, vi)).collect();
        for a in 0..dim {
            let mean: f64 = disp.iter().map(|d| d[a]).sum::<f64>() / v as f64;
            let mut coord = mesh.positions[v0 * dim + a] + mean;
            if mesh.periodic {
                coord = coord.rem_euclid(mesh.domain[a]);
            }
            centroids[c * dim + a] = coord;
        }
        let measure = if dim == 2 {
            let (d1, d2) = (&disp[1], &disp[2]);
            (d1[0] * d2[1] - d1[1] * d2[0]).abs() / 2.0
        } else {
            let (d1, d2, d3) = (&disp[1], &disp[2], &disp[3]);
            let det = d1[0] * (d2[1] * d3[2] - d2[2] * d3[1])
                - d1[1] * (d2[0] * d3[2] - d2[2] * d3[0])
                + d1[2] * (d2[0] * d3[1] - d2[1] * d3[0]);
            det.abs() / 6.0
        };
        if !(measure > 0.0) {
            return Err(MeshError::DegenerateCell { cell: c });
        }
        measures[c] = measure;
    }
    mesh.centroids = centroids;
    mesh.measures = measures;
    Ok(())
}

/// Builds raw node/edge/cell features for a field `[N x d]` on the mesh.
pub fn raw_features(mesh: &MeshGraph, field: &Tensor) -> Result<RawFeatures, MeshError> {
    let n = mesh.node_count();
    let fs = field.shape();
    if fs.len() != 2 || fs[0] != n {
        return Err(MeshError::FieldShape {
            nodes: n,
            got: format!("{fs:?}"),
        });
    }
    let d = fs[1];
    let m = mesh.dim;

    let node_w = d + 2 + m;
    let mut node = vec![0.0; n * node_w];
    for i in 0..n {
        let row = &mut node[i * node_w..(i + 1) * node_w];
        row[..d].copy_from_slice(&field.values()[i * d..(i + 1) * d]);
        match mesh.node_types[i] {
            NodeType::Interior => row[d] = 1.0,
            NodeType::Boundary => row[d + 1] = 1.0,
        }
        row[d + 2..].copy_from_slice(mesh.position(i));
    }

    let edge_w = m + 1;
    let mut edge = vec![0.0; mesh.edge_count() * edge_w];
    for (k, &[i, j]) in mesh.edges.iter().enumerate() {
        let disp = mesh.displacement(i, j);
        let row = &mut edge[k * edge_w..(k + 1) * edge_w];
        row[..m].copy_from_slice(&disp);
        row[m] = disp.iter().map(|x| x * x).sum::<f64>().sqrt();
    }

    let v = mesh.vertices_per_cell();
    let c_count = mesh.cell_count();
    let cell_w = v * m + m + 1;
    let mut cell = vec![0.0; c_count * cell_w];
    for c in 0..c_count {
        let row = &mut cell[c * cell_w..(c + 1) * cell_w];
        let centroid = &mesh.centroids[c * m..(c + 1) * m];
        for (vi, &vert) in mesh.cell(c).iter().enumerate() {
            // Vertex-to-centroid vector under the minimum image.
            for a in 0..m {
                let mut da = centroid[a] - mesh.positions[vert * m + a];
                if mesh.periodic {
                    let len = mesh.domain[a];
                    da -= len * (da / len).round();
                }
                row[vi * m + a] = da;
            }
        }
        row[v * m..v * m + m].copy_from_slice(centroid);
        row[v * m + m] = mesh.measures[c];
    }

    Ok(RawFeatures {
        node: Tensor::new(&[n, node_w], node)?,
        edge: Tensor::new(&[mesh.edge_count(), edge_w], edge)?,
        cell: Tensor::new(&[c_count, cell_w], cell)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_2d_nonperiodic_counts() {
        let mesh = grid_to_mesh(&[3, 3], 0.5, false).unwrap();
        assert_eq!(mesh.node_count(), 9);
        assert_eq!(mesh.cell_count(), 8);
        // 4 + 4 axis edges per direction plus 4 diagonals = 16 undirected.
        assert_eq!(mesh.edge_count(), 32);
        let boundary = mesh
            .node_types
            .iter()
            .filter(|t| **t == NodeType::Boundary)
            .count();
        assert_eq!(boundary, 8);
    }

    #[test]
    fn grid_2d_periodic_counts_and_types() {
        let mesh = grid_to_mesh(&[3, 3], 1.0, true).unwrap();
        assert_eq!(mesh.node_count(), 9);
        assert_eq!(mesh.cell_count(), 18);
        // 18 triangles * 3 sides / 2 triangles per side = 27 undirected.
        assert_eq!(mesh.edge_count(), 54);
        assert!(mesh.node_types.iter().all(|t| *t == NodeType::Interior));
    }

    #[test]
    fn grid_3d_counts_and_volume() {
        let mesh = grid_to_mesh(&[2, 2, 2], 1.0, false).unwrap();
        assert_eq!(mesh.node_count(), 8);
        assert_eq!(mesh.cell_count(), 5);
        // 12 cube edges + 6 face diagonals.
        assert_eq!(mesh.edge_count(), 36);
        let vol: f64 = mesh.measures.iter().sum();
        assert!((vol - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measures_tile_the_domain() {
        let mesh = grid_to_mesh(&[4, 5], 0.25, false).unwrap();
        let area: f64 = mesh.measures.iter().sum();
        assert!((area - 3.0 * 4.0 * 0.0625).abs() < 1e-12);

        let mesh = grid_to_mesh(&[4, 4], 0.5, true).unwrap();
        let area: f64 = mesh.measures.iter().sum();
        assert!((area - 16.0 * 0.25).abs() < 1e-12);

        let mesh = grid_to_mesh(&[4, 4, 4], 1.0, true).unwrap();
        let vol: f64 = mesh.measures.iter().sum();
        assert!((vol - 64.0).abs() < 1e-12);
    }

    #[test]
    fn grid_validation_errors() {
        assert!(grid_to_mesh(&[5], 1.0, false).is_err());
        assert!(grid_to_mesh(&[2, 2], 1.0, true).is_err());
        assert!(grid_to_mesh(&[1, 3], 1.0, false).is_err());
        assert!(grid_to_mesh(&[3, 3], 0.0, false).is_err());
        assert!(grid_to_mesh(&[3, 4, 4], 1.0, true).is_err());
        assert!(grid_to_mesh(&[4, 4, 4], 1.0, true).is_ok());
    }

    #[test]
    fn min_image_wraps_edge_displacement() {
        let mesh = grid_to_mesh(&[4, 4], 1.0, true).unwrap();
        // Node 0 = (0,0); node 12 = (3,0): wrapped displacement is -1, not 3.
        let d = mesh.displacement(0, 12);
        assert_eq!(d, vec![-1.0, 0.0]);
    }

    #[test]
    fn first_triangle_geometry_hand_check() {
        let mesh = grid_to_mesh(&[2, 2], 1.0, false).unwrap();
        // Cell 0 = (p00, p10, p11) = (0,0), (1,0), (1,1).
        assert_eq!(mesh.cell(0), &[0, 2, 3]);
        assert!((mesh.measures[0] - 0.5).abs() < 1e-15);
        assert!((mesh.centroids[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((mesh.centroids[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn edges_are_sorted_and_symmetric() {
        let mesh = grid_to_mesh(&[3, 3], 1.0, false).unwrap();
        let mut sorted = mesh.edges.clone();
        sorted.sort_unstable();
        assert_eq!(mesh.edges, sorted);
        for &[a, b] in &mesh.edges {
            assert!(mesh.edges.binary_search(&[b, a]).is_ok());
        }
    }

    #[test]
    fn raw_feature_widths() {
        let mesh = grid_to_mesh(&[3, 3], 1.0, false).unwrap();
        let field = Tensor::zeros(&[9, 2]).unwrap();
        let raw = raw_features(&mesh, &field).unwrap();
        assert_eq!(raw.node.shape(), &[9, 6]);
        assert_eq!(raw.edge.shape(), &[32, 3]);
        assert_eq!(raw.cell.shape(), &[8, 9]);

        let mesh = grid_to_mesh(&[2, 2, 2], 1.0, false).unwrap();
        let field = Tensor::zeros(&[8, 2]).unwrap();
        let raw = raw_features(&mesh, &field).unwrap();
        assert_eq!(raw.node.shape(), &[8, 7]);
        assert_eq!(raw.edge.shape(), &[36, 4]);
        assert_eq!(raw.cell.shape(), &[5, 16]);
    }

    #[test]
    fn raw_node_features_embed_field_type_position() {
        let mesh = grid_to_mesh(&[2, 2], 1.0, false).unwrap();
        let field = Tensor::new(&[4, 1], vec![10.0, 20.0, 30.0, 40.0]).unwrap();
        let raw = raw_features(&mesh, &field).unwrap();
        // Node 3 = (1,1), boundary on a 2x2 grid.
        let row = &raw.node.values()[3 * 5..4 * 5];
        assert_eq!(row, &[40.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn permutation_relabels_consistently() {
        let mesh = grid_to_mesh(&[3, 3], 1.0, false).unwrap();
        let n = mesh.node_count();
        let perm: Vec<usize> = (0..n).map(|i| (i + 3) % n).collect();
        let permuted = mesh.permute_nodes(&perm).unwrap();
        for i in 0..n {
            assert_eq!(permuted.position(perm[i]), mesh.position(i));
            assert_eq!(permuted.node_types[perm[i]], mesh.node_types[i]);
        }
        assert_eq!(permuted.edge_count(), mesh.edge_count());
        let total_old: f64 = mesh.measures.iter().sum();
        let total_new: f64 = permuted.measures.iter().sum();
        assert!((total_old - total_new).abs() < 1e-12);

        assert!(mesh.permute_nodes(&vec![0; n]).is_err());
        assert!(mesh.permute_nodes(&[0, 1]).is_err());
    }

    #[test]
    fn periodic_cell_geometry_wraps() {
        let mesh = grid_to_mesh(&[4, 4], 1.0, true).unwrap();
        // Every triangle has the same area regardless of wrap.
        for (c, &m) in mesh.measures.iter().enumerate() {
            assert!((m - 0.5).abs() < 1e-12, "cell {c} area {m}");
        }
        // Centroids stay inside the domain.
        for &x in &mesh.centroids {
            assert!((0.0..4.0).contains(&x));
        }
    }
}
