//! Acceptance gate: nine independently checkable properties of the lab, from
//! gradient correctness through CLI determinism. Each test prints a single
//! pass/fail line (visible with `--nocapture` or on failure).

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cegnn_core::mesh::grid_to_mesh;
use cegnn_core::model::{
    accumulate_param_grads, build_forward, count_parameters, forward_step, init_params,
    zero_params, ModelConfig, ModelParams,
};
use cegnn_core::pde::{
    generate_trajectory, laplacian_periodic, read_trajectory, rk4, rk4_step, write_trajectory,
    FieldState, IcKind, PdeSpec,
};
use cegnn_core::tensor::{Tape, Tensor};
use cegnn_core::train::{evaluate_pairs, make_pairs, train, TrainConfig};
use cegnn_core::MeshGraph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(criterion: &str, ok: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn random_field(rng: &mut ChaCha8Rng, nodes: usize, channels: usize) -> Tensor {
    let values: Vec<f64> = (0..nodes * channels)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    Tensor::new(&[nodes, channels], values).expect("field tensor")
}

fn tiny_config(latent: usize, layers: usize, windows: usize) -> ModelConfig {
    ModelConfig {
        spatial_dim: 2,
        field_channels: 2,
        latent_dim: latent,
        layers,
        mlp_hidden: latent,
        mlp_depth: 2,
        n_windows: windows,
        mask_keep_prob: 0.5,
        fe_enabled: true,
        cell_enabled: true,
        residual_enabled: true,
    }
}

/// Scalar training loss (root-mean-square error) of one forward pass.
fn loss_value(
    mesh: &MeshGraph,
    cfg: &ModelConfig,
    params: &ModelParams,
    u: &Tensor,
    target: &Tensor,
) -> f64 {
    let mut tape = Tape::new();
    let (pred, _) = build_forward(&mut tape, mesh, u, cfg, params).expect("forward");
    let t = tape.constant(target);
    let d = tape.sub(pred, t).expect("sub");
    let m = tape.mul(d, d).expect("mul");
    let s = tape.sum_all(m).expect("sum");
    let sc = tape.scale(s, 1.0 / target.len() as f64).expect("scale");
    let loss = tape.sqrt_scalar(sc).expect("sqrt");
    tape.value(loss)[0]
}

// ── 1. gradient oracle ──

#[test]
fn criterion_1_gradient_oracle() {
    let started = Instant::now();
    let cfg = tiny_config(4, 2, 2);
    let mesh = grid_to_mesh(&[3, 3], 0.5, false).expect("mesh");
    // Seeds chosen so no relu pre-activation lies within the probe step of
    // its kink; central differences are only valid at differentiable points.
    let mut params = init_params(&cfg, 5).expect("init");
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let u = random_field(&mut rng, 9, 2);
    let target = random_field(&mut rng, 9, 2);

    let mut tape = Tape::new();
    let (pred, loaded) = build_forward(&mut tape, &mesh, &u, &cfg, &params).expect("forward");
    let t = tape.constant(&target);
    let d = tape.sub(pred, t).expect("sub");
    let m = tape.mul(d, d).expect("mul");
    let s = tape.sum_all(m).expect("sum");
    let sc = tape.scale(s, 1.0 / target.len() as f64).expect("scale");
    let loss = tape.sqrt_scalar(sc).expect("sqrt");
    tape.backward(loss).expect("backward");
    accumulate_param_grads(&tape, &loaded, &mut params).expect("grads");

    let analytic: Vec<(String, Vec<f64>)> = params
        .named()
        .into_iter()
        .map(|(name, t)| {
            let g = t.grad().expect("tracked parameter has a gradient").to_vec();
            (name, g)
        })
        .collect();

    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (idx, (name, grads)) in analytic.iter().enumerate() {
        for entry in 0..grads.len() {
            let original = read_entry(&params, idx, entry);
            write_entry(&mut params, idx, entry, original + h);
            let plus = loss_value(&mesh, &cfg, &params, &u, &target);
            write_entry(&mut params, idx, entry, original - h);
            let minus = loss_value(&mesh, &cfg, &params, &u, &target);
            write_entry(&mut params, idx, entry, original);
            let fd = (plus - minus) / (2.0 * h);
            let a = grads[entry];
            let denom = a.abs().max(fd.abs());
            let rel = if denom < 1e-6 {
                if (a - fd).abs() <= 1e-8 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (a - fd).abs() / denom
            };
            assert!(
                rel < 1e-4,
                "{name}[{entry}]: analytic {a:.9e} vs finite-difference {fd:.9e} (rel {rel:.3e})"
            );
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        "1 (gradient oracle)",
        max_rel < 1e-4 && elapsed < 120.0,
        &format!("{checked} parameters, max rel err {max_rel:.3e}, {elapsed:.1}s"),
    );
}

fn read_entry(params: &ModelParams, tensor_idx: usize, entry: usize) -> f64 {
    let mut k = 0usize;
    let mut value = f64::NAN;
    params.for_each_named(&mut |_, t| {
        if k == tensor_idx {
            value = t.values()[entry];
        }
        k += 1;
    });
    value
}

fn write_entry(params: &mut ModelParams, tensor_idx: usize, entry: usize, value: f64) {
    let mut k = 0usize;
    params.for_each_named_mut(&mut |_, t| {
        if k == tensor_idx {
            t.values_mut()[entry] = value;
        }
        k += 1;
    });
}

// ── 2. permutation equivariance ──

#[test]
fn criterion_2_permutation_equivariance() {
    let started = Instant::now();
    let cfg = tiny_config(8, 2, 2);
    let mesh = grid_to_mesh(&[5, 5], 0.3, false).expect("mesh");
    let params = init_params(&cfg, 3).expect("init");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = random_field(&mut rng, 25, 2);
    let y = forward_step(&mesh, &u, &cfg, &params).expect("forward");

    let mut max_diff = 0.0f64;
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..25).collect();
        perm.shuffle(&mut rng);
        let mesh_p = mesh.permute_nodes(&perm).expect("permute");
        let mut pu = vec![0.0; u.len()];
        for i in 0..25 {
            for c in 0..2 {
                pu[perm[i] * 2 + c] = u.values()[i * 2 + c];
            }
        }
        let u_p = Tensor::new(&[25, 2], pu).expect("permuted field");
        let y_p = forward_step(&mesh_p, &u_p, &cfg, &params).expect("forward");
        for i in 0..25 {
            for c in 0..2 {
                let diff = (y_p.values()[perm[i] * 2 + c] - y.values()[i * 2 + c]).abs();
                max_diff = max_diff.max(diff);
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        "2 (permutation equivariance)",
        max_diff < 1e-9 && elapsed < 60.0,
        &format!("20 permutations, max abs deviation {max_diff:.3e}, {elapsed:.1}s"),
    );
}

// ── 3. enhancement parameter arithmetic ──

#[test]
fn criterion_3_fe_parameter_arithmetic() {
    // Published totals for D = 128, L = 4 at each window count, the published
    // baseline without enhancement blocks, and the residue by which each
    // published delta exceeds the enhancement entries alone. Three rows share
    // the constant 2,048 residue; the (16,8) row carries 2,052 (4 more), and
    // the (4,32) row is inconsistent with the formula the others obey (its
    // delta falls 13,530 short of the enhancement entries): both published
    // irregularities are asserted as found, not matched to the formula.
    const PUBLISHED: [(usize, usize, usize, Option<usize>); 5] = [
        (1, 128, 9_362_572, Some(2_048)),
        (2, 64, 3_071_116, Some(2_048)),
        (4, 32, 1_482_674, None),
        (8, 16, 1_105_036, Some(2_048)),
        (16, 8, 1_006_736, Some(2_052)),
    ];
    const BASELINE: usize = 971_916;
    const FE_TOTALS: [usize; 5] = [8_388_608, 2_097_152, 524_288, 131_072, 32_768];

    let mut detail = String::new();
    let mut ok = true;
    for (row, &(windows, window_dim, published_total, residue)) in PUBLISHED.iter().enumerate() {
        let cfg = tiny_config(128, 4, windows);
        assert_eq!(cfg.window_dim(), window_dim);
        let counts = count_parameters(&cfg).expect("counts");
        let per_layer = windows * window_dim.pow(3);
        ok &= counts.fe_per_layer == per_layer;
        ok &= counts.fe_total == per_layer * 4;
        ok &= counts.fe_total == FE_TOTALS[row];
        let delta = published_total - BASELINE;
        match residue {
            Some(r) => ok &= delta == counts.fe_total + r,
            None => {
                ok &= delta != counts.fe_total + 2_048;
                detail.push_str(&format!(
                    "(4,32) delta {delta} != {} + 2048 as documented; ",
                    counts.fe_total
                ));
            }
        }
    }
    detail.push_str(
        "deltas match n_windows*window_dim^3*layers + residue (2048; 2052 for the (16,8) row)",
    );
    verdict("3 (FE parameter arithmetic)", ok, &detail);
}

// ── 4. integrator and stencil order ──

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

#[test]
fn criterion_4_integrator_order() {
    let started = Instant::now();
    // Exponential decay u' = -u over [0, 1].
    let mut log_h = Vec::new();
    let mut log_e = Vec::new();
    for &h in &[0.1f64, 0.05, 0.025] {
        let n = (1.0 / h).round() as usize;
        let mut y = vec![1.0];
        for _ in 0..n {
            y = rk4(&y, h, |v| Ok(vec![-v[0]])).expect("rk4");
        }
        let err = (y[0] - (-1.0f64).exp()).abs();
        log_h.push(h.ln());
        log_e.push(err.ln());
    }
    let rk4_slope = fit_slope(&log_h, &log_e);

    // Periodic Laplacian on its eigenfunction sin(2 pi x) sin(2 pi y).
    let mut log_dx = Vec::new();
    let mut log_err = Vec::new();
    for &n in &[16usize, 32, 64] {
        let dx = 1.0 / n as f64;
        let lambda = -8.0 * std::f64::consts::PI * std::f64::consts::PI;
        let mut field = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let x = i as f64 * dx;
                let y = j as f64 * dx;
                field[i * n + j] = (std::f64::consts::TAU * x).sin() * (std::f64::consts::TAU * y).sin();
            }
        }
        let lap = laplacian_periodic(&[n, n], &field, dx).expect("laplacian");
        let err = lap
            .iter()
            .zip(&field)
            .map(|(l, f)| (l - lambda * f).abs())
            .fold(0.0f64, f64::max);
        log_dx.push(dx.ln());
        log_err.push(err.ln());
    }
    let lap_slope = fit_slope(&log_dx, &log_err);

    let elapsed = started.elapsed().as_secs_f64();
    let ok = (rk4_slope - 4.0).abs() <= 0.2 && (lap_slope - 2.0).abs() <= 0.1 && elapsed < 60.0;
    verdict(
        "4 (integrator order)",
        ok,
        &format!("rk4 slope {rk4_slope:.3}, laplacian slope {lap_slope:.3}, {elapsed:.1}s"),
    );
}

// ── 5. reaction fixed point ──

#[test]
fn criterion_5_gs_fixed_point() {
    let started = Instant::now();
    let spec = PdeSpec::gray_scott_2d();
    let n = spec.n_nodes();
    let mut state = FieldState {
        grid: spec.grid.clone(),
        values: [1.0, 0.0].repeat(n),
        time: 0.0,
    };
    let mut max_dev = 0.0f64;
    for _ in 0..1000 {
        state = rk4_step(&spec, &state).expect("step");
        for pair in state.values.chunks_exact(2) {
            max_dev = max_dev.max((pair[0] - 1.0).abs()).max(pair[1].abs());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        "5 (Gray-Scott fixed point)",
        max_dev <= 1e-12 && elapsed < 60.0,
        &format!("max deviation from (1,0) over 1000 steps: {max_dev:.3e}, {elapsed:.1}s"),
    );
}

// ── 6. ablation ordering ──

#[test]
fn criterion_6_ablation_ordering() {
    let started = Instant::now();
    let mut spec = PdeSpec::burgers_2d();
    spec.grid = vec![16, 16];
    spec.steps = 200;
    let ic = IcKind::Gaussian { mean: 0.0, std: 0.3 };
    let gen = |seed| generate_trajectory(&spec, ic, seed, 1).expect("trajectory");
    let train_trajs = [gen(100), gen(101), gen(102)];
    let val_traj = gen(200);
    let test_traj = gen(300);
    let mut train_pairs = Vec::new();
    for t in &train_trajs {
        train_pairs.extend(make_pairs(t).expect("pairs"));
    }
    let val_pairs = make_pairs(&val_traj).expect("pairs");
    let test_pairs = make_pairs(&test_traj).expect("pairs");
    let mesh = grid_to_mesh(&spec.grid, spec.dx, false).expect("mesh");

    // Shared two-phase budget, identical for both variants: an exploration
    // phase at lr 1e-3 and a settle phase at 2e-4, batch 2 to maximize
    // optimizer steps per wall-clock second. The better validation phase's
    // parameters are kept, mirroring the trainer's own best-epoch restore.
    let mut wins = 0usize;
    let mut detail = String::new();
    for seed in [0u64, 1, 2] {
        let mut results = [0.0f64; 2];
        for (slot, (fe, cell)) in [(true, true), (false, false)].into_iter().enumerate() {
            let cfg = ModelConfig {
                fe_enabled: fe,
                cell_enabled: cell,
                ..tiny_config(32, 4, 4)
            };
            let phase1 = TrainConfig {
                epochs: 4,
                batch_size: 2,
                learning_rate: 1e-3,
                noise_std: 1e-4,
                seed,
            };
            let phase2 = TrainConfig {
                epochs: 3,
                learning_rate: 2e-4,
                ..phase1.clone()
            };
            let mut params = init_params(&cfg, seed).expect("init");
            let r1 = train(&mesh, &cfg, &mut params, &train_pairs, &val_pairs, &phase1)
                .expect("train");
            let snapshot = params.clone();
            let r2 = train(&mesh, &cfg, &mut params, &train_pairs, &val_pairs, &phase2)
                .expect("train");
            let v1 = r1.best_val_rmse.unwrap_or(f64::INFINITY);
            let v2 = r2.best_val_rmse.unwrap_or(f64::INFINITY);
            if v2 >= v1 {
                params = snapshot;
            }
            results[slot] = evaluate_pairs(&mesh, &cfg, &params, &test_pairs).expect("eval");
        }
        let [full, baseline] = results;
        if full < baseline {
            wins += 1;
        }
        detail.push_str(&format!(
            "seed {seed}: full {full:.4e} vs w/o cell+FE {baseline:.4e}; "
        ));
    }
    let elapsed = started.elapsed().as_secs_f64();
    detail.push_str(&format!("{wins}/3 wins, {elapsed:.0}s"));
    verdict(
        "6 (ablation ordering)",
        wins >= 2 && elapsed < 1800.0,
        &detail,
    );
}

// ── 7. training determinism across processes ──

#[test]
fn criterion_7_training_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_cegnn"))
            .args(args)
            .output()
            .expect("spawn");
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "generate", "--pde", "burgers", "--grid", "8", "--steps", "20", "--train", "2", "--val",
        "1", "--test", "0", "--out", data.to_str().unwrap(),
    ]);
    let train_into = |dir: &Path| {
        run(&[
            "train", "--data", data.to_str().unwrap(), "--layers", "1", "--latent-dim", "8",
            "--windows", "2", "--epochs", "2", "--batch", "8", "--seed", "5", "--out",
            dir.to_str().unwrap(),
        ]);
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    train_into(&a);
    train_into(&b);
    let csv_a = fs::read(a.join("metrics.csv")).unwrap();
    let csv_b = fs::read(b.join("metrics.csv")).unwrap();
    let ckpt_equal = fs::read(a.join("checkpoint.ckpt")).unwrap()
        == fs::read(b.join("checkpoint.ckpt")).unwrap();
    verdict(
        "7 (training determinism)",
        csv_a == csv_b && ckpt_equal,
        &format!(
            "two identical train invocations: metrics byte-identical ({} bytes), checkpoints identical",
            csv_a.len()
        ),
    );
}

// ── 8. trajectory format round trip ──

#[test]
fn criterion_8_trajectory_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut combos: Vec<(&str, PdeSpec)> = Vec::new();
    let mut small = PdeSpec::burgers_2d();
    small.grid = vec![8, 8];
    small.steps = 5;
    combos.push(("burgers-2d", small));
    let mut fnt = PdeSpec::fitzhugh_nagumo_2d();
    fnt.grid = vec![8, 8];
    fnt.steps = 5;
    combos.push(("fn-2d", fnt.clone()));
    fnt.grid = vec![6, 6, 6];
    combos.push(("fn-3d", fnt));
    let mut gs = PdeSpec::gray_scott_2d();
    gs.grid = vec![8, 8];
    gs.steps = 5;
    combos.push(("gs-2d", gs));
    let mut gs3 = PdeSpec::gray_scott_3d();
    gs3.grid = vec![6, 6, 6];
    gs3.steps = 5;
    combos.push(("gs-3d", gs3));

    let mut ok = true;
    for (label, spec) in &combos {
        let traj = generate_trajectory(spec, IcKind::default_for(spec.kind), 9, 1)
            .expect("trajectory");
        let first = tmp.path().join(format!("{label}-1.traj"));
        let second = tmp.path().join(format!("{label}-2.traj"));
        write_trajectory(&first, &traj).expect("write");
        let reread = read_trajectory(&first).expect("read");
        write_trajectory(&second, &reread).expect("rewrite");
        ok &= fs::read(&first).unwrap() == fs::read(&second).unwrap();
    }
    verdict(
        "8 (trajectory round trip)",
        ok,
        "write -> read -> write byte-identical for burgers-2d, fn-2d, fn-3d, gs-2d, gs-3d",
    );
}

// ── 9. ablation containment ──

#[test]
fn criterion_9_ablation_containment() {
    let cfg_nc = ModelConfig {
        cell_enabled: false,
        ..tiny_config(8, 2, 2)
    };
    let cfg_full = ModelConfig {
        cell_enabled: true,
        ..cfg_nc.clone()
    };
    let donor = init_params(&cfg_nc, 17).expect("init");
    let donor_named: HashMap<String, Tensor> = donor.named().into_iter().collect();
    let donor_masks: HashMap<String, Tensor> = donor.named_masks().into_iter().collect();

    // Start from all-zero full-model parameters, then fill every tensor the
    // reduced variant shares. Wider node-update input weights get the shared
    // rows first and keep zero rows for the cell aggregate.
    let mut full = zero_params(&cfg_full).expect("zero");
    full.for_each_named_mut(&mut |name, t| {
        if let Some(src) = donor_named.get(name) {
            if src.shape() == t.shape() {
                t.values_mut().copy_from_slice(src.values());
            } else {
                let n = src.values().len();
                t.values_mut()[..n].copy_from_slice(src.values());
            }
        }
    });
    full.for_each_mask_mut(&mut |name, t| {
        let src = &donor_masks[name];
        t.values_mut().copy_from_slice(src.values());
    });

    let mesh = grid_to_mesh(&[4, 4], 0.25, false).expect("mesh");
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let u = random_field(&mut rng, 16, 2);
    let y_full = forward_step(&mesh, &u, &cfg_full, &full).expect("forward");
    let y_nc = forward_step(&mesh, &u, &cfg_nc, &donor).expect("forward");

    let identical = y_full
        .values()
        .iter()
        .zip(y_nc.values())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    verdict(
        "9 (ablation containment)",
        identical,
        "zeroed cell-path parameters reproduce the reduced variant bit-for-bit",
    );
}
