//! Desk-scale lab for mesh-based neural PDE surrogates.
//!
//! The crate is organized as a pipeline:
//!
//! * [`tensor`]: dense f64 tensors, a reverse-mode autodiff tape, Adam, and a
//!   named-parameter blob format shared by checkpoints and mesh/trajectory files.
//! * [`mesh`]: structured grids triangulated into simplicial meshes with
//!   per-node/edge/cell raw feature construction.
//! * [`pde`]: reference finite-difference solvers (Burgers, FitzHugh-Nagumo,
//!   Gray-Scott) integrated with RK4 on periodic grids, plus trajectory files.
//! * [`model`]: the cell-embedded message-passing network with
//!   feature-enhancement blocks, parameter initialization and checkpoints.
//! * [`train`]: one-step training with input noise, rollout evaluation, and
//!   deterministic metrics export.

pub mod mesh;
pub mod model;
pub mod pde;
pub mod tensor;
pub mod train;

pub use mesh::{grid_to_mesh, MeshGraph, RawFeatures};
pub use model::{
    count_parameters, forward_step, init_params, load_checkpoint, save_checkpoint, ModelConfig,
    ModelParams, ParamCounts,
};
pub use pde::{generate_trajectory, FieldState, IcKind, PdeKind, PdeSpec, Trajectory};
pub use tensor::{AdamState, Tape, Tensor, TensorError, VarId};
pub use train::{
    evaluate_pairs, make_pairs, rollout, train, MetricRecord, NoiseInjector, RolloutResult,
    TrainConfig, TrainError, TrainReport,
};
