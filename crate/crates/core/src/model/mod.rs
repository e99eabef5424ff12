//! Cell-embedded message-passing network with feature-enhancement blocks.
//!
//! The architecture is encode -> process -> decode over a simplicial mesh:
//! separate MLP encoders lift raw node/edge/cell features into a shared
//! latent width; each processor layer updates cell latents from their
//! vertices, edge latents from their endpoints, and node latents from
//! aggregated edge and cell messages, then applies a feature-enhancement
//! block that forms masked second-order feature products per window; the
//! decoder predicts the state increment, added onto the input field.
//!
//! Parameters live in [`ModelParams`] and are visited in one canonical
//! order shared by initialization, serialization, gradient export, and the
//! optimizer. Feature-enhancement masks are frozen buffers, not parameters.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use forward::{
    accumulate_param_grads, build_forward, cell_update, decode, edge_update, encode, fe_forward,
    forward_step, load_params, node_update, validate_params, LoadedParams,
};

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::MeshError;
use crate::tensor::{Tensor, TensorError};

/// Width of the node-type one-hot block in raw node features.
pub const NODE_TYPE_ONEHOT: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parameter {name}: expected {expected}, got {got}")]
    ParamShape {
        name: String,
        expected: String,
        got: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spatial dimension m (2 or 3); cells have m + 1 vertices.
    pub spatial_dim: usize,
    /// Field channels d carried per node.
    pub field_channels: usize,
    /// Latent width D shared by node, edge, and cell streams.
    pub latent_dim: usize,
    /// Processor layer count L.
    pub layers: usize,
    /// Hidden width of every MLP.
    pub mlp_hidden: usize,
    /// Hidden layer count of every MLP.
    pub mlp_depth: usize,
    /// Feature-enhancement window count; must divide `latent_dim`.
    pub n_windows: usize,
    /// Bernoulli keep probability of the frozen feature-product masks.
    pub mask_keep_prob: f64,
    pub fe_enabled: bool,
    pub cell_enabled: bool,
    /// Residual connections on the cell/edge/node latent updates.
    pub residual_enabled: bool,
}

impl ModelConfig {
    /// Full model defaults for 2D systems: D = 128, L = 4, 4 windows.
    pub fn default_2d() -> ModelConfig {
        ModelConfig {
            spatial_dim: 2,
            field_channels: 2,
            latent_dim: 128,
            layers: 4,
            mlp_hidden: 128,
            mlp_depth: 2,
            n_windows: 4,
            mask_keep_prob: 0.5,
            fe_enabled: true,
            cell_enabled: true,
            residual_enabled: true,
        }
    }

    pub fn default_3d() -> ModelConfig {
        ModelConfig {
            spatial_dim: 3,
            ..ModelConfig::default_2d()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.spatial_dim != 2 && self.spatial_dim != 3 {
            return Err(ModelError::Config(format!(
                "spatial_dim must be 2 or 3, got {}",
                self.spatial_dim
            )));
        }
        for (name, v) in [
            ("field_channels", self.field_channels),
            ("latent_dim", self.latent_dim),
            ("layers", self.layers),
            ("mlp_hidden", self.mlp_hidden),
            ("mlp_depth", self.mlp_depth),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.fe_enabled {
            if self.n_windows == 0 || self.latent_dim % self.n_windows != 0 {
                return Err(ModelError::Config(format!(
                    "n_windows {} must divide latent_dim {}",
                    self.n_windows, self.latent_dim
                )));
            }
            if !(0.0..=1.0).contains(&self.mask_keep_prob) {
                return Err(ModelError::Config(format!(
                    "mask_keep_prob must be in [0, 1], got {}",
                    self.mask_keep_prob
                )));
            }
        }
        Ok(())
    }

    pub fn window_dim(&self) -> usize {
        self.latent_dim / self.n_windows
    }

    pub fn cell_vertices(&self) -> usize {
        self.spatial_dim + 1
    }

    /// Raw node feature width: field channels, type one-hot, position.
    pub fn node_in_width(&self) -> usize {
        self.field_channels + NODE_TYPE_ONEHOT + self.spatial_dim
    }

    /// Raw edge feature width: displacement plus distance.
    pub fn edge_in_width(&self) -> usize {
        self.spatial_dim + 1
    }

    /// Raw cell feature width: vertex-to-centroid vectors, centroid, measure.
    pub fn cell_in_width(&self) -> usize {
        self.cell_vertices() * self.spatial_dim + self.spatial_dim + 1
    }

    /// Input width of the cell update MLP: vertex latents plus cell latent.
    pub fn cell_update_in(&self) -> usize {
        (self.cell_vertices() + 1) * self.latent_dim
    }

    /// Input width of the edge update MLP: two endpoint latents plus edge.
    pub fn edge_update_in(&self) -> usize {
        3 * self.latent_dim
    }

    /// Input width of the node update MLP: node latent, edge aggregate, and
    /// (when the cell stream is enabled) cell aggregate.
    pub fn node_update_in(&self) -> usize {
        if self.cell_enabled {
            3 * self.latent_dim
        } else {
            2 * self.latent_dim
        }
    }
}

// ── parameter containers ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LinearParams {
    /// `[in x out]`.
    pub w: Tensor,
    /// `[out]`.
    pub b: Tensor,
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    /// `mlp_depth` hidden linears followed by the output linear.
    pub linears: Vec<LinearParams>,
}

#[derive(Debug, Clone)]
pub struct NormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct MlpNorm {
    pub mlp: MlpParams,
    pub norm: NormParams,
}

#[derive(Debug, Clone)]
pub struct FeParams {
    /// Per-window contraction weights `[wd x wd x wd]` (trainable).
    pub weights: Vec<Tensor>,
    /// Per-window product masks `[wd x wd]`, frozen at initialization.
    pub masks: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub cell: Option<MlpNorm>,
    pub edge: MlpNorm,
    pub node: MlpNorm,
    pub fe: Option<FeParams>,
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub node_encoder: MlpNorm,
    pub edge_encoder: MlpNorm,
    pub cell_encoder: Option<MlpNorm>,
    pub layers: Vec<LayerParams>,
    pub decoder: MlpParams,
}

enum InitRule {
    /// Uniform Xavier/Glorot over the fan sum.
    Linear { fan_in: usize, fan_out: usize },
    Zero,
    One,
    /// Uniform in +-1/window_dim.
    FeWeight { window_dim: usize },
    /// Bernoulli keep mask in {0, 1}.
    Mask { keep_prob: f64 },
}

type Fill<'a> = &'a mut dyn FnMut(&[usize], InitRule) -> Tensor;

fn fill_linear(fill: Fill, fan_in: usize, fan_out: usize) -> LinearParams {
    let mut w = fill(&[fan_in, fan_out], InitRule::Linear { fan_in, fan_out });
    let mut b = fill(&[fan_out], InitRule::Zero);
    w.track();
    b.track();
    LinearParams { w, b }
}

fn fill_mlp(cfg: &ModelConfig, fill: Fill, in_w: usize, out_w: usize) -> MlpParams {
    let mut linears = Vec::with_capacity(cfg.mlp_depth + 1);
    let mut prev = in_w;
    for _ in 0..cfg.mlp_depth {
        linears.push(fill_linear(fill, prev, cfg.mlp_hidden));
        prev = cfg.mlp_hidden;
    }
    linears.push(fill_linear(fill, prev, out_w));
    MlpParams { linears }
}

fn fill_mlp_norm(cfg: &ModelConfig, fill: Fill, in_w: usize) -> MlpNorm {
    let mlp = fill_mlp(cfg, fill, in_w, cfg.latent_dim);
    let mut gain = fill(&[cfg.latent_dim], InitRule::One);
    let mut bias = fill(&[cfg.latent_dim], InitRule::Zero);
    gain.track();
    bias.track();
    MlpNorm {
        mlp,
        norm: NormParams { gain, bias },
    }
}

fn build_params(cfg: &ModelConfig, fill: Fill) -> ModelParams {
    let node_encoder = fill_mlp_norm(cfg, fill, cfg.node_in_width());
    let edge_encoder = fill_mlp_norm(cfg, fill, cfg.edge_in_width());
    let cell_encoder = if cfg.cell_enabled {
        Some(fill_mlp_norm(cfg, fill, cfg.cell_in_width()))
    } else {
        None
    };

    let mut layers = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        let cell = if cfg.cell_enabled {
            Some(fill_mlp_norm(cfg, fill, cfg.cell_update_in()))
        } else {
            None
        };
        let edge = fill_mlp_norm(cfg, fill, cfg.edge_update_in());
        let node = fill_mlp_norm(cfg, fill, cfg.node_update_in());
        let fe = if cfg.fe_enabled {
            let wd = cfg.window_dim();
            let mut weights = Vec::with_capacity(cfg.n_windows);
            let mut masks = Vec::with_capacity(cfg.n_windows);
            for _ in 0..cfg.n_windows {
                let mut w = fill(&[wd, wd, wd], InitRule::FeWeight { window_dim: wd });
                w.track();
                weights.push(w);
            }
            for _ in 0..cfg.n_windows {
                masks.push(fill(
                    &[wd, wd],
                    InitRule::Mask {
                        keep_prob: cfg.mask_keep_prob,
                    },
                ));
            }
            Some(FeParams { weights, masks })
        } else {
            None
        };
        layers.push(LayerParams {
            cell,
            edge,
            node,
            fe,
        });
    }

    let decoder = fill_mlp(cfg, fill, cfg.latent_dim, cfg.field_channels);

    ModelParams {
        node_encoder,
        edge_encoder,
        cell_encoder,
        layers,
        decoder,
    }
}

/// Draws fresh parameters: Xavier-uniform linear weights, zero biases, unit
/// norm gains, feature weights uniform in +-1/window_dim, and frozen
/// Bernoulli masks. All draws come from one seeded stream in canonical
/// parameter order, so equal `(config, seed)` give identical models.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |shape: &[usize], rule: InitRule| -> Tensor {
        let numel: usize = shape.iter().product();
        let values: Vec<f64> = match rule {
            InitRule::Linear { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-a..a)).collect()
            }
            InitRule::Zero => vec![0.0; numel],
            InitRule::One => vec![1.0; numel],
            InitRule::FeWeight { window_dim } => {
                let a = 1.0 / window_dim as f64;
                (0..numel).map(|_| rng.random_range(-a..a)).collect()
            }
            InitRule::Mask { keep_prob } => (0..numel)
                .map(|_| if rng.random_bool(keep_prob) { 1.0 } else { 0.0 })
                .collect(),
        };
        Tensor::new(shape, values).expect("init values are finite")
    };
    Ok(build_params(cfg, &mut fill))
}

/// Zero-valued parameters in the canonical layout; used for shape listings
/// and as the target structure when loading checkpoints.
pub fn zero_params(cfg: &ModelConfig) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let mut fill = |shape: &[usize], _rule: InitRule| -> Tensor {
        Tensor::zeros(shape).expect("shape extents are positive")
    };
    Ok(build_params(cfg, &mut fill))
}

// ── canonical naming and traversal ───────────────────────────────────────

impl ModelParams {
    /// Visits every trainable tensor in canonical order with its name.
    pub fn for_each_named(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        fn mlp(prefix: &str, m: &MlpParams, f: &mut dyn FnMut(&str, &Tensor)) {
            for (i, lin) in m.linears.iter().enumerate() {
                f(&format!("{prefix}.w{i}"), &lin.w);
                f(&format!("{prefix}.b{i}"), &lin.b);
            }
        }
        fn mlp_norm(prefix: &str, mn: &MlpNorm, f: &mut dyn FnMut(&str, &Tensor)) {
            mlp(&format!("{prefix}.mlp"), &mn.mlp, f);
            f(&format!("{prefix}.norm.gain"), &mn.norm.gain);
            f(&format!("{prefix}.norm.bias"), &mn.norm.bias);
        }
        mlp_norm("encoder.node", &self.node_encoder, f);
        mlp_norm("encoder.edge", &self.edge_encoder, f);
        if let Some(c) = &self.cell_encoder {
            mlp_norm("encoder.cell", c, f);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(c) = &layer.cell {
                mlp_norm(&format!("layer{l}.cell"), c, f);
            }
            mlp_norm(&format!("layer{l}.edge"), &layer.edge, f);
            mlp_norm(&format!("layer{l}.node"), &layer.node, f);
            if let Some(fe) = &layer.fe {
                for (w, t) in fe.weights.iter().enumerate() {
                    f(&format!("layer{l}.fe.window{w}.weight"), t);
                }
            }
        }
        mlp("decoder", &self.decoder, f);
    }

    /// Mutable counterpart of [`ModelParams::for_each_named`]; must visit
    /// the identical sequence.
    pub fn for_each_named_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        fn mlp(prefix: &str, m: &mut MlpParams, f: &mut dyn FnMut(&str, &mut Tensor)) {
            for (i, lin) in m.linears.iter_mut().enumerate() {
                f(&format!("{prefix}.w{i}"), &mut lin.w);
                f(&format!("{prefix}.b{i}"), &mut lin.b);
            }
        }
        fn mlp_norm(prefix: &str, mn: &mut MlpNorm, f: &mut dyn FnMut(&str, &mut Tensor)) {
            mlp(&format!("{prefix}.mlp"), &mut mn.mlp, f);
            f(&format!("{prefix}.norm.gain"), &mut mn.norm.gain);
            f(&format!("{prefix}.norm.bias"), &mut mn.norm.bias);
        }
        mlp_norm("encoder.node", &mut self.node_encoder, f);
        mlp_norm("encoder.edge", &mut self.edge_encoder, f);
        if let Some(c) = &mut self.cell_encoder {
            mlp_norm("encoder.cell", c, f);
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if let Some(c) = &mut layer.cell {
                mlp_norm(&format!("layer{l}.cell"), c, f);
            }
            mlp_norm(&format!("layer{l}.edge"), &mut layer.edge, f);
            mlp_norm(&format!("layer{l}.node"), &mut layer.node, f);
            if let Some(fe) = &mut layer.fe {
                for (w, t) in fe.weights.iter_mut().enumerate() {
                    f(&format!("layer{l}.fe.window{w}.weight"), t);
                }
            }
        }
        mlp("decoder", &mut self.decoder, f);
    }

    /// Frozen buffers (feature-product masks) in canonical order.
    pub fn for_each_mask(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (l, layer) in self.layers.iter().enumerate() {
            if let Some(fe) = &layer.fe {
                for (w, t) in fe.masks.iter().enumerate() {
                    f(&format!("layer{l}.fe.window{w}.mask"), t);
                }
            }
        }
    }

    pub fn for_each_mask_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if let Some(fe) = &mut layer.fe {
                for (w, t) in fe.masks.iter_mut().enumerate() {
                    f(&format!("layer{l}.fe.window{w}.mask"), t);
                }
            }
        }
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each_named(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn named_masks(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each_mask(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn total_parameters(&self) -> usize {
        let mut total = 0;
        self.for_each_named(&mut |_, t| total += t.len());
        total
    }

    pub fn zero_grads(&mut self) {
        self.for_each_named_mut(&mut |_, t| t.zero_grad());
    }
}

// ── parameter counting ───────────────────────────────────────────────────

/// Exact parameter counts per component for a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub encoder: usize,
    /// Message-passing MLPs and norms summed over all layers.
    pub processor: usize,
    pub fe_per_layer: usize,
    pub fe_total: usize,
    pub decoder: usize,
    pub total: usize,
}

fn mlp_count(in_w: usize, hidden: usize, depth: usize, out_w: usize) -> usize {
    (in_w + 1) * hidden + (depth - 1) * (hidden + 1) * hidden + (hidden + 1) * out_w
}

pub fn count_parameters(cfg: &ModelConfig) -> Result<ParamCounts, ModelError> {
    cfg.validate()?;
    let d_lat = cfg.latent_dim;
    let norm = 2 * d_lat;
    let mlp_norm = |in_w: usize| mlp_count(in_w, cfg.mlp_hidden, cfg.mlp_depth, d_lat) + norm;

    let mut encoder = mlp_norm(cfg.node_in_width()) + mlp_norm(cfg.edge_in_width());
    if cfg.cell_enabled {
        encoder += mlp_norm(cfg.cell_in_width());
    }
    let mut per_layer = mlp_norm(cfg.edge_update_in()) + mlp_norm(cfg.node_update_in());
    if cfg.cell_enabled {
        per_layer += mlp_norm(cfg.cell_update_in());
    }
    let processor = per_layer * cfg.layers;
    let fe_per_layer = if cfg.fe_enabled {
        cfg.n_windows * cfg.window_dim().pow(3)
    } else {
        0
    };
    let fe_total = fe_per_layer * cfg.layers;
    let decoder = mlp_count(d_lat, cfg.mlp_hidden, cfg.mlp_depth, cfg.field_channels);
    Ok(ParamCounts {
        encoder,
        processor,
        fe_per_layer,
        fe_total,
        decoder,
        total: encoder + processor + fe_total + decoder,
    })
}
