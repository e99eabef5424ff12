//! Criterion benchmarks for the hot kernels: dense algebra on the tape, graph
//! aggregation, solver stencils, and a whole surrogate forward step.

use std::hint::black_box;

use cegnn_bench::{bench_mesh, bench_model, random_tensor, round_robin_segments};
use cegnn_core::pde::{laplacian_periodic, rk4_step, FieldState, PdeSpec};
use cegnn_core::tensor::Tape;
use cegnn_core::{forward_step, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_matmul(c: &mut Criterion) {
    let a = random_tensor(&[256, 96], 1);
    let b = random_tensor(&[96, 128], 2);
    c.bench_function("matmul_256x96x128", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let ia = tape.constant(black_box(&a));
            let ib = tape.constant(black_box(&b));
            black_box(tape.matmul(ia, ib).expect("matmul"));
        })
    });
}

fn bench_segment_sum(c: &mut Criterion) {
    let rows = 4096;
    let x = random_tensor(&[rows, 64], 3);
    let ids = round_robin_segments(rows, 1024);
    c.bench_function("segment_sum_4096x64_into_1024", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let ix = tape.constant(black_box(&x));
            black_box(tape.segment_sum(ix, black_box(&ids), 1024).expect("segment_sum"));
        })
    });
}

fn bench_feature_enhancement(c: &mut Criterion) {
    let h = random_tensor(&[1024, 32], 4);
    let w = random_tensor(&[32, 32, 32], 5);
    let mask = {
        let raw = random_tensor(&[32, 32], 6);
        let values = raw.values().iter().map(|v| f64::from(*v > 0.0)).collect();
        Tensor::new(&[32, 32], values).expect("mask")
    };
    c.bench_function("fe_outer_mask_contract_1024x32", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let ih = tape.constant(black_box(&h));
            let iw = tape.constant(black_box(&w));
            let im = tape.constant(black_box(&mask));
            let outer = tape.batched_outer(ih).expect("outer");
            let masked = tape.mask_mul(outer, im).expect("mask");
            black_box(tape.contract3(iw, masked).expect("contract"));
        })
    });
}

fn bench_stencil(c: &mut Criterion) {
    let grid = [128usize, 128];
    let field = random_tensor(&[128 * 128], 7);
    c.bench_function("laplacian_128x128", |bench| {
        bench.iter(|| {
            black_box(laplacian_periodic(&grid, black_box(field.values()), 0.01).expect("stencil"))
        })
    });
}

fn bench_solver_step(c: &mut Criterion) {
    let spec = PdeSpec::gray_scott_2d();
    let n = spec.n_nodes();
    let state = FieldState {
        grid: spec.grid.clone(),
        values: random_tensor(&[n * 2], 8)
            .values()
            .iter()
            .map(|v| 0.5 + 0.1 * v)
            .collect(),
        time: 0.0,
    };
    c.bench_function("rk4_step_gray_scott_48x48", |bench| {
        bench.iter(|| black_box(rk4_step(&spec, black_box(&state)).expect("step")))
    });
}

fn bench_forward(c: &mut Criterion) {
    let mesh = bench_mesh();
    let (cfg, params) = bench_model();
    let u = random_tensor(&[mesh.node_count(), 2], 9);
    c.bench_function("forward_step_32x32_d32_l2", |bench| {
        bench.iter(|| black_box(forward_step(&mesh, black_box(&u), &cfg, &params).expect("forward")))
    });
}

criterion_group!(
    kernels,
    bench_matmul,
    bench_segment_sum,
    bench_feature_enhancement,
    bench_stencil,
    bench_solver_step,
    bench_forward
);
criterion_main!(kernels);
