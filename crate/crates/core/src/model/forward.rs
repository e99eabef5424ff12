//! Forward graph construction on the reverse-mode tape.
//!
//! Parameters are loaded onto the tape once per forward build; the flat
//! load order mirrors [`ModelParams::for_each_named`], which lets
//! [`accumulate_param_grads`] move tape gradients back into the parameter
//! store by position.

use crate::mesh::{raw_features, MeshGraph, RawFeatures};
use crate::tensor::{Tape, Tensor, VarId};

use super::{FeParams, MlpNorm, MlpParams, ModelConfig, ModelError, ModelParams};

// ── parameters on the tape ───────────────────────────────────────────────

struct LMlp {
    linears: Vec<(VarId, VarId)>,
}

struct LNorm {
    gain: VarId,
    bias: VarId,
}

struct LMlpNorm {
    mlp: LMlp,
    norm: LNorm,
}

struct LFe {
    weights: Vec<VarId>,
    masks: Vec<VarId>,
}

struct LLayer {
    cell: Option<LMlpNorm>,
    edge: LMlpNorm,
    node: LMlpNorm,
    fe: Option<LFe>,
}

/// Model parameters materialized as tape variables.
pub struct LoadedParams {
    node_enc: LMlpNorm,
    edge_enc: LMlpNorm,
    cell_enc: Option<LMlpNorm>,
    layers: Vec<LLayer>,
    decoder: LMlp,
    /// Trainable variables in canonical parameter order.
    trainable: Vec<VarId>,
}

impl LoadedParams {
    pub fn trainable_ids(&self) -> &[VarId] {
        &self.trainable
    }
}

/// Copies every parameter onto the tape. The `trainable` listing follows
/// canonical order; masks are loaded but excluded from it.
pub fn load_params(tape: &mut Tape, params: &ModelParams) -> LoadedParams {
    let mut flat = Vec::new();
    let load_mlp = |tape: &mut Tape, flat: &mut Vec<VarId>, m: &MlpParams| -> LMlp {
        LMlp {
            linears: m
                .linears
                .iter()
                .map(|lin| {
                    let w = tape.constant(&lin.w);
                    flat.push(w);
                    let b = tape.constant(&lin.b);
                    flat.push(b);
                    (w, b)
                })
                .collect(),
        }
    };
    let load_mlp_norm = |tape: &mut Tape, flat: &mut Vec<VarId>, mn: &MlpNorm| -> LMlpNorm {
        let mlp = load_mlp(tape, flat, &mn.mlp);
        let gain = tape.constant(&mn.norm.gain);
        flat.push(gain);
        let bias = tape.constant(&mn.norm.bias);
        flat.push(bias);
        LMlpNorm {
            mlp,
            norm: LNorm { gain, bias },
        }
    };
    let load_fe = |tape: &mut Tape, flat: &mut Vec<VarId>, fe: &FeParams| -> LFe {
        let weights = fe
            .weights
            .iter()
            .map(|w| {
                let id = tape.constant(w);
                flat.push(id);
                id
            })
            .collect();
        let masks = fe.masks.iter().map(|m| tape.constant(m)).collect();
        LFe { weights, masks }
    };

    let node_enc = load_mlp_norm(tape, &mut flat, &params.node_encoder);
    let edge_enc = load_mlp_norm(tape, &mut flat, &params.edge_encoder);
    let cell_enc = params
        .cell_encoder
        .as_ref()
        .map(|c| load_mlp_norm(tape, &mut flat, c));
    let layers = params
        .layers
        .iter()
        .map(|layer| LLayer {
            cell: layer
                .cell
                .as_ref()
                .map(|c| load_mlp_norm(tape, &mut flat, c)),
            edge: load_mlp_norm(tape, &mut flat, &layer.edge),
            node: load_mlp_norm(tape, &mut flat, &layer.node),
            fe: layer.fe.as_ref().map(|fe| load_fe(tape, &mut flat, fe)),
        })
        .collect();
    let decoder = load_mlp(tape, &mut flat, &params.decoder);

    LoadedParams {
        node_enc,
        edge_enc,
        cell_enc,
        layers,
        decoder,
        trainable: flat,
    }
}

/// Moves tape gradients for every trainable variable back into the
/// parameter store, accumulating by canonical position.
pub fn accumulate_param_grads(
    tape: &Tape,
    loaded: &LoadedParams,
    params: &mut ModelParams,
) -> Result<(), ModelError> {
    let mut idx = 0usize;
    let mut failure: Option<ModelError> = None;
    params.for_each_named_mut(&mut |name, t| {
        if failure.is_some() {
            return;
        }
        let Some(&id) = loaded.trainable.get(idx) else {
            failure = Some(ModelError::Checkpoint(format!(
                "parameter {name} has no loaded counterpart"
            )));
            return;
        };
        idx += 1;
        if let Some(g) = tape.grad(id) {
            if let Err(e) = t.accumulate_grad(g) {
                failure = Some(e.into());
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if idx != loaded.trainable.len() {
        return Err(ModelError::Checkpoint(format!(
            "loaded {} trainable tensors but store holds {idx}",
            loaded.trainable.len()
        )));
    }
    Ok(())
}

/// Verifies that `params` has exactly the layout `cfg` prescribes.
pub fn validate_params(cfg: &ModelConfig, params: &ModelParams) -> Result<(), ModelError> {
    let reference = super::zero_params(cfg)?;
    let expected = reference.named();
    let got = params.named();
    if expected.len() != got.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameter tensors, got {}",
            expected.len(),
            got.len()
        )));
    }
    for ((en, et), (gn, gt)) in expected.iter().zip(&got) {
        if en != gn || et.shape() != gt.shape() {
            return Err(ModelError::ParamShape {
                name: en.clone(),
                expected: format!("{} {:?}", en, et.shape()),
                got: format!("{} {:?}", gn, gt.shape()),
            });
        }
    }
    let expected_masks = reference.named_masks();
    let got_masks = params.named_masks();
    if expected_masks.len() != got_masks.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} mask tensors, got {}",
            expected_masks.len(),
            got_masks.len()
        )));
    }
    for ((en, et), (gn, gt)) in expected_masks.iter().zip(&got_masks) {
        if en != gn || et.shape() != gt.shape() {
            return Err(ModelError::ParamShape {
                name: en.clone(),
                expected: format!("{} {:?}", en, et.shape()),
                got: format!("{} {:?}", gn, gt.shape()),
            });
        }
    }
    Ok(())
}

// ── mesh index lists ─────────────────────────────────────────────────────

struct MeshIndex {
    recv: Vec<usize>,
    send: Vec<usize>,
    /// One gather list per cell-vertex position, each of cell-count length.
    vertex_cols: Vec<Vec<usize>>,
    /// Cells flattened; the target node of each cell-to-vertex message.
    flat_cells: Vec<usize>,
    /// Each cell id repeated once per vertex; the source of each message.
    cell_rep: Vec<usize>,
}

impl MeshIndex {
    fn new(mesh: &MeshGraph) -> MeshIndex {
        let v = mesh.vertices_per_cell();
        let c = mesh.cell_count();
        let mut vertex_cols = vec![Vec::with_capacity(c); v];
        let mut cell_rep = Vec::with_capacity(c * v);
        for ci in 0..c {
            let verts = mesh.cell(ci);
            for (vi, &node) in verts.iter().enumerate() {
                vertex_cols[vi].push(node);
            }
            cell_rep.extend(std::iter::repeat_n(ci, v));
        }
        MeshIndex {
            recv: mesh.edges.iter().map(|e| e[0]).collect(),
            send: mesh.edges.iter().map(|e| e[1]).collect(),
            vertex_cols,
            flat_cells: mesh.cells.clone(),
            cell_rep,
        }
    }
}

// ── graph stages ─────────────────────────────────────────────────────────

fn mlp_apply(tape: &mut Tape, m: &LMlp, mut x: VarId) -> Result<VarId, ModelError> {
    let last = m.linears.len() - 1;
    for (i, &(w, b)) in m.linears.iter().enumerate() {
        x = tape.matmul(x, w)?;
        x = tape.add_bias(x, b)?;
        if i != last {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

fn mlp_norm_apply(tape: &mut Tape, mn: &LMlpNorm, x: VarId) -> Result<VarId, ModelError> {
    let y = mlp_apply(tape, &mn.mlp, x)?;
    Ok(tape.layer_norm(y, mn.norm.gain, mn.norm.bias)?)
}

/// Encodes raw node, edge, and cell features into latent streams.
pub fn encode(
    tape: &mut Tape,
    raw: &RawFeatures,
    loaded: &LoadedParams,
) -> Result<(VarId, VarId, Option<VarId>), ModelError> {
    let n = tape.constant(&raw.node);
    let e = tape.constant(&raw.edge);
    let h = mlp_norm_apply(tape, &loaded.node_enc, n)?;
    let e_lat = mlp_norm_apply(tape, &loaded.edge_enc, e)?;
    let c_lat = match &loaded.cell_enc {
        Some(enc) => {
            let c = tape.constant(&raw.cell);
            Some(mlp_norm_apply(tape, enc, c)?)
        }
        None => None,
    };
    Ok((h, e_lat, c_lat))
}

fn cell_update_inner(
    tape: &mut Tape,
    mi: &MeshIndex,
    cfg: &ModelConfig,
    layer: &LLayer,
    h: VarId,
    c: VarId,
) -> Result<VarId, ModelError> {
    let mn = layer
        .cell
        .as_ref()
        .expect("cell update requires cell parameters");
    let mut parts = Vec::with_capacity(mi.vertex_cols.len() + 1);
    for col in &mi.vertex_cols {
        parts.push(tape.index_select(h, col)?);
    }
    parts.push(c);
    let x = tape.concat_last(&parts)?;
    let phi = mlp_norm_apply(tape, mn, x)?;
    if cfg.residual_enabled {
        Ok(tape.add(phi, c)?)
    } else {
        Ok(phi)
    }
}

fn edge_update_inner(
    tape: &mut Tape,
    mi: &MeshIndex,
    cfg: &ModelConfig,
    layer: &LLayer,
    h: VarId,
    e: VarId,
) -> Result<VarId, ModelError> {
    let h_recv = tape.index_select(h, &mi.recv)?;
    let h_send = tape.index_select(h, &mi.send)?;
    let x = tape.concat_last(&[h_recv, h_send, e])?;
    let phi = mlp_norm_apply(tape, &layer.edge, x)?;
    if cfg.residual_enabled {
        Ok(tape.add(phi, e)?)
    } else {
        Ok(phi)
    }
}

fn node_update_inner(
    tape: &mut Tape,
    mi: &MeshIndex,
    cfg: &ModelConfig,
    layer: &LLayer,
    num_nodes: usize,
    h: VarId,
    e_new: VarId,
    c_new: Option<VarId>,
) -> Result<VarId, ModelError> {
    let edge_agg = tape.segment_sum(e_new, &mi.recv, num_nodes)?;
    let mut parts = vec![h, edge_agg];
    if let Some(c) = c_new {
        let contrib = tape.index_select(c, &mi.cell_rep)?;
        parts.push(tape.segment_sum(contrib, &mi.flat_cells, num_nodes)?);
    }
    let x = tape.concat_last(&parts)?;
    let phi = mlp_norm_apply(tape, &layer.node, x)?;
    if cfg.residual_enabled {
        Ok(tape.add(phi, h)?)
    } else {
        Ok(phi)
    }
}

fn fe_forward_inner(
    tape: &mut Tape,
    cfg: &ModelConfig,
    fe: &LFe,
    h: VarId,
) -> Result<VarId, ModelError> {
    let wd = cfg.window_dim();
    let mut outs = Vec::with_capacity(cfg.n_windows);
    for w in 0..cfg.n_windows {
        let hw = tape.slice_last(h, w * wd, wd)?;
        let outer = tape.batched_outer(hw)?;
        let masked = tape.mask_mul(outer, fe.masks[w])?;
        let y = tape.contract3(fe.weights[w], masked)?;
        outs.push(tape.relu(y)?);
    }
    let cat = tape.concat_last(&outs)?;
    // The enhancement residual is structural, not toggled by config.
    Ok(tape.add(cat, h)?)
}

/// Updates cell latents from their vertices for processor layer `layer`.
pub fn cell_update(
    tape: &mut Tape,
    mesh: &MeshGraph,
    cfg: &ModelConfig,
    loaded: &LoadedParams,
    layer: usize,
    h: VarId,
    c: VarId,
) -> Result<VarId, ModelError> {
    let mi = MeshIndex::new(mesh);
    cell_update_inner(tape, &mi, cfg, &loaded.layers[layer], h, c)
}

/// Updates edge latents from their endpoints for processor layer `layer`.
pub fn edge_update(
    tape: &mut Tape,
    mesh: &MeshGraph,
    cfg: &ModelConfig,
    loaded: &LoadedParams,
    layer: usize,
    h: VarId,
    e: VarId,
) -> Result<VarId, ModelError> {
    let mi = MeshIndex::new(mesh);
    edge_update_inner(tape, &mi, cfg, &loaded.layers[layer], h, e)
}

/// Updates node latents from aggregated edge and cell messages.
pub fn node_update(
    tape: &mut Tape,
    mesh: &MeshGraph,
    cfg: &ModelConfig,
    loaded: &LoadedParams,
    layer: usize,
    h: VarId,
    e_new: VarId,
    c_new: Option<VarId>,
) -> Result<VarId, ModelError> {
    let mi = MeshIndex::new(mesh);
    node_update_inner(
        tape,
        &mi,
        cfg,
        &loaded.layers[layer],
        mesh.node_count(),
        h,
        e_new,
        c_new,
    )
}

/// Applies the feature-enhancement block of processor layer `layer`.
pub fn fe_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    loaded: &LoadedParams,
    layer: usize,
    h: VarId,
) -> Result<VarId, ModelError> {
    let fe = loaded.layers[layer]
        .fe
        .as_ref()
        .expect("feature enhancement requires its parameters");
    fe_forward_inner(tape, cfg, fe, h)
}

/// Decodes node latents into a state increment and adds the input field.
pub fn decode(
    tape: &mut Tape,
    loaded: &LoadedParams,
    h: VarId,
    u_t: VarId,
) -> Result<VarId, ModelError> {
    let d = mlp_apply(tape, &loaded.decoder, h)?;
    Ok(tape.add(d, u_t)?)
}

/// Builds the full one-step prediction graph on `tape` and returns the
/// prediction variable together with the loaded parameters.
pub fn build_forward(
    tape: &mut Tape,
    mesh: &MeshGraph,
    u_t: &Tensor,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(VarId, LoadedParams), ModelError> {
    cfg.validate()?;
    if mesh.dim != cfg.spatial_dim {
        return Err(ModelError::Config(format!(
            "mesh dimension {} does not match configured {}",
            mesh.dim, cfg.spatial_dim
        )));
    }
    let n = mesh.node_count();
    if u_t.shape() != [n, cfg.field_channels] {
        return Err(ModelError::Config(format!(
            "field shape {:?} does not match [{n}, {}]",
            u_t.shape(),
            cfg.field_channels
        )));
    }
    if params.layers.len() != cfg.layers
        || params.cell_encoder.is_some() != cfg.cell_enabled
        || params
            .layers
            .iter()
            .any(|l| l.cell.is_some() != cfg.cell_enabled || l.fe.is_some() != cfg.fe_enabled)
    {
        return Err(ModelError::Config(
            "parameter layout does not match config".to_string(),
        ));
    }

    let raw = raw_features(mesh, u_t)?;
    let mi = MeshIndex::new(mesh);
    let loaded = load_params(tape, params);
    let u_id = tape.constant(u_t);

    let (mut h, mut e, mut c) = encode(tape, &raw, &loaded)?;
    for layer in &loaded.layers {
        if let (Some(ci), Some(_)) = (c, &layer.cell) {
            c = Some(cell_update_inner(tape, &mi, cfg, layer, h, ci)?);
        }
        e = edge_update_inner(tape, &mi, cfg, layer, h, e)?;
        h = node_update_inner(tape, &mi, cfg, layer, n, h, e, c)?;
        if let Some(fe) = &layer.fe {
            h = fe_forward_inner(tape, cfg, fe, h)?;
        }
    }
    let pred = decode(tape, &loaded, h, u_id)?;
    Ok((pred, loaded))
}

/// One-step prediction without keeping the tape.
pub fn forward_step(
    mesh: &MeshGraph,
    u_t: &Tensor,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let (pred, _) = build_forward(&mut tape, mesh, u_t, cfg, params)?;
    Ok(tape.tensor(pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::grid_to_mesh;
    use crate::model::{init_params, zero_params};
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            spatial_dim: 2,
            field_channels: 2,
            latent_dim: 4,
            layers: 2,
            mlp_hidden: 4,
            mlp_depth: 2,
            n_windows: 2,
            mask_keep_prob: 0.5,
            fe_enabled: true,
            cell_enabled: true,
            residual_enabled: true,
        }
    }

    fn random_field(n: usize, channels: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(&[n, channels], values).unwrap()
    }

    #[test]
    fn zero_parameters_give_identity_step() {
        let cfg = tiny_cfg();
        let mesh = grid_to_mesh(&[3, 3], 0.5, false).unwrap();
        let u = random_field(mesh.node_count(), cfg.field_channels, 5);
        let params = zero_params(&cfg).unwrap();
        let pred = forward_step(&mesh, &u, &cfg, &params).unwrap();
        assert_eq!(pred.values(), u.values());
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let mesh = grid_to_mesh(&[4, 4], 0.25, true).unwrap();
        let u = random_field(mesh.node_count(), cfg.field_channels, 9);
        let params = init_params(&cfg, 3).unwrap();
        let a = forward_step(&mesh, &u, &cfg, &params).unwrap();
        let b = forward_step(&mesh, &u, &cfg, &params).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.shape(), u.shape());
    }

    #[test]
    fn forward_rejects_mismatched_inputs() {
        let cfg = tiny_cfg();
        let mesh = grid_to_mesh(&[3, 3], 0.5, false).unwrap();
        let params = init_params(&cfg, 0).unwrap();
        let bad = random_field(4, cfg.field_channels, 0);
        assert!(forward_step(&mesh, &bad, &cfg, &params).is_err());

        let mesh3 = grid_to_mesh(&[2, 2, 2], 0.5, false).unwrap();
        let u3 = random_field(mesh3.node_count(), cfg.field_channels, 0);
        assert!(forward_step(&mesh3, &u3, &cfg, &params).is_err());

        let no_cell_params = init_params(
            &ModelConfig {
                cell_enabled: false,
                ..tiny_cfg()
            },
            0,
        )
        .unwrap();
        let u = random_field(mesh.node_count(), cfg.field_channels, 0);
        assert!(forward_step(&mesh, &u, &cfg, &no_cell_params).is_err());
    }

    #[test]
    fn node_permutation_commutes_with_forward() {
        let cfg = ModelConfig {
            latent_dim: 8,
            n_windows: 2,
            ..tiny_cfg()
        };
        let mesh = grid_to_mesh(&[4, 4], 0.25, true).unwrap();
        let n = mesh.node_count();
        let u = random_field(n, cfg.field_channels, 11);
        let params = init_params(&cfg, 1).unwrap();
        let base = forward_step(&mesh, &u, &cfg, &params).unwrap();

        let perm: Vec<usize> = (0..n).rev().collect();
        let pmesh = mesh.permute_nodes(&perm).unwrap();
        let mut pu = vec![0.0; u.len()];
        let ch = cfg.field_channels;
        for i in 0..n {
            let j = perm[i];
            pu[j * ch..(j + 1) * ch].copy_from_slice(&u.values()[i * ch..(i + 1) * ch]);
        }
        let pu = Tensor::new(&[n, ch], pu).unwrap();
        let ppred = forward_step(&pmesh, &pu, &cfg, &params).unwrap();

        for i in 0..n {
            let j = perm[i];
            for k in 0..ch {
                let a = base.values()[i * ch + k];
                let b = ppred.values()[j * ch + k];
                assert!(
                    (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                    "node {i}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn zeroed_fe_weights_match_fe_disabled_exactly() {
        let cfg = tiny_cfg();
        let mesh = grid_to_mesh(&[4, 4], 0.25, true).unwrap();
        let u = random_field(mesh.node_count(), cfg.field_channels, 2);

        let mut full = init_params(&cfg, 6).unwrap();
        full.for_each_named_mut(&mut |name, t| {
            if name.contains(".fe.") {
                t.values_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        });

        let no_fe_cfg = ModelConfig {
            fe_enabled: false,
            ..cfg.clone()
        };
        let mut no_fe = zero_params(&no_fe_cfg).unwrap();
        let source: std::collections::BTreeMap<String, Tensor> =
            full.named().into_iter().collect();
        no_fe.for_each_named_mut(&mut |name, t| {
            *t = source[name].clone();
        });

        let a = forward_step(&mesh, &u, &cfg, &full).unwrap();
        let b = forward_step(&mesh, &u, &no_fe_cfg, &no_fe).unwrap();
        assert_eq!(a.values(), b.values(), "ablation must be bitwise contained");
    }

    #[test]
    fn zeroed_masks_match_fe_disabled_exactly() {
        let cfg = tiny_cfg();
        let mesh = grid_to_mesh(&[4, 4], 0.25, true).unwrap();
        let u = random_field(mesh.node_count(), cfg.field_channels, 2);

        let mut full = init_params(&cfg, 6).unwrap();
        let with_masks = forward_step(&mesh, &u, &cfg, &full).unwrap();
        full.for_each_mask_mut(&mut |_, t| {
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        });
        let without = forward_step(&mesh, &u, &cfg, &full).unwrap();
        assert_ne!(with_masks.values(), without.values());

        let no_fe_cfg = ModelConfig {
            fe_enabled: false,
            ..cfg.clone()
        };
        let mut no_fe = zero_params(&no_fe_cfg).unwrap();
        let source: std::collections::BTreeMap<String, Tensor> =
            full.named().into_iter().collect();
        no_fe.for_each_named_mut(&mut |name, t| {
            *t = source[name].clone();
        });
        let b = forward_step(&mesh, &u, &no_fe_cfg, &no_fe).unwrap();
        assert_eq!(without.values(), b.values());
    }

    #[test]
    fn gradients_reach_every_parameter_family() {
        let cfg = tiny_cfg();
        let mesh = grid_to_mesh(&[3, 3], 0.5, false).unwrap();
        let u = random_field(mesh.node_count(), cfg.field_channels, 4);
        let target = random_field(mesh.node_count(), cfg.field_channels, 8);
        let mut params = init_params(&cfg, 12).unwrap();
        let masks_before = params.named_masks();

        let mut tape = Tape::new();
        let (pred, loaded) = build_forward(&mut tape, &mesh, &u, &cfg, &params).unwrap();
        let t_id = tape.constant(&target);
        let diff = tape.sub(pred, t_id).unwrap();
        let sq = tape.mul(diff, diff).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        accumulate_param_grads(&tape, &loaded, &mut params).unwrap();

        let mut missing = Vec::new();
        let mut total_mag = 0.0;
        params.for_each_named(&mut |name, t| {
            match t.grad() {
                None => missing.push(name.to_string()),
                Some(g) => total_mag += g.iter().map(|v| v.abs()).sum::<f64>(),
            }
        });
        assert!(missing.is_empty(), "no grad for {missing:?}");
        assert!(total_mag > 0.0);

        let masks_after = params.named_masks();
        for ((_, a), (_, b)) in masks_before.iter().zip(&masks_after) {
            assert_eq!(a.values(), b.values(), "masks must stay frozen");
        }
    }

    #[test]
    fn backward_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            layers: 1,
            ..tiny_cfg()
        };
        let mesh = grid_to_mesh(&[3, 3], 0.5, true).unwrap();
        let u = random_field(mesh.node_count(), cfg.field_channels, 21);
        let target = random_field(mesh.node_count(), cfg.field_channels, 22);

        let loss_of = |params: &ModelParams| -> f64 {
            let mut tape = Tape::new();
            let (pred, _) = build_forward(&mut tape, &mesh, &u, &cfg, params).unwrap();
            let t_id = tape.constant(&target);
            let diff = tape.sub(pred, t_id).unwrap();
            let sq = tape.mul(diff, diff).unwrap();
            let loss = tape.sum_all(sq).unwrap();
            tape.value(loss)[0]
        };

        let mut params = init_params(&cfg, 31).unwrap();
        let mut tape = Tape::new();
        let (pred, loaded) = build_forward(&mut tape, &mesh, &u, &cfg, &params).unwrap();
        let t_id = tape.constant(&target);
        let diff = tape.sub(pred, t_id).unwrap();
        let sq = tape.mul(diff, diff).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        accumulate_param_grads(&tape, &loaded, &mut params).unwrap();

        // One probe element from each parameter family.
        let probes = [
            ("encoder.node.mlp.w0", 3usize),
            ("encoder.cell.norm.gain", 1),
            ("layer0.cell.mlp.w1", 7),
            ("layer0.edge.mlp.b0", 2),
            ("layer0.node.norm.bias", 0),
            ("layer0.fe.window0.weight", 5),
            ("layer0.fe.window1.weight", 2),
            ("decoder.w0", 4),
            ("decoder.b1", 1),
        ];
        let h = 1e-5;
        for (probe_name, elem) in probes {
            let mut analytic = None;
            params.for_each_named(&mut |name, t| {
                if name == probe_name {
                    analytic = Some(t.grad().unwrap()[elem]);
                }
            });
            let analytic = analytic.unwrap_or_else(|| panic!("{probe_name} not found"));

            let bump = |delta: f64| -> f64 {
                let mut p = params.clone();
                p.for_each_named_mut(&mut |name, t| {
                    if name == probe_name {
                        t.values_mut()[elem] += delta;
                    }
                });
                loss_of(&p)
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "{probe_name}[{elem}]: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn validate_params_rejects_wrong_layout() {
        let cfg = tiny_cfg();
        let good = init_params(&cfg, 0).unwrap();
        assert!(validate_params(&cfg, &good).is_ok());

        let wider = init_params(
            &ModelConfig {
                latent_dim: 8,
                ..tiny_cfg()
            },
            0,
        )
        .unwrap();
        assert!(validate_params(&cfg, &wider).is_err());

        let no_cell = init_params(
            &ModelConfig {
                cell_enabled: false,
                ..tiny_cfg()
            },
            0,
        )
        .unwrap();
        assert!(validate_params(&cfg, &no_cell).is_err());
    }

    #[test]
    fn repeated_backward_accumulates_param_grads() {
        let cfg = ModelConfig {
            layers: 1,
            ..tiny_cfg()
        };
        let mesh = grid_to_mesh(&[3, 3], 0.5, false).unwrap();
        let u = random_field(mesh.node_count(), cfg.field_channels, 1);
        let mut params = init_params(&cfg, 2).unwrap();

        let run = |params: &mut ModelParams, times: usize| -> Vec<f64> {
            params.zero_grads();
            for _ in 0..times {
                let mut tape = Tape::new();
                let (pred, loaded) = build_forward(&mut tape, &mesh, &u, &cfg, params).unwrap();
                let sq = tape.mul(pred, pred).unwrap();
                let loss = tape.sum_all(sq).unwrap();
                tape.backward(loss).unwrap();
                accumulate_param_grads(&tape, &loaded, params).unwrap();
            }
            let mut grads = Vec::new();
            params.for_each_named(&mut |_, t| grads.extend_from_slice(t.grad().unwrap()));
            grads
        };

        let once = run(&mut params, 1);
        let twice = run(&mut params, 2);
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b, "accumulation must be exact");
        }
    }
}
