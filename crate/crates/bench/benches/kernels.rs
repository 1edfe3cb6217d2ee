use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsr_core::kernels::{dense_matmul, spmm_bsr, spmm_csr, BlockShape, BsrMatrix, CsrMatrix, DenseMatrix};
use dsr_core::sparsity::{block_magnitude_prune, magnitude_prune};

fn matrix(rows: usize, cols: usize, seed: f32) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |r, c| ((r * cols + c) as f32 * 0.618 + seed).sin()).unwrap()
}

/// Weight `768×768` times a `768×32` activation block: one query at base size.
fn kernels(c: &mut Criterion) {
    let w = matrix(768, 768, 0.3);
    let x = matrix(768, 32, 1.7);
    let mut group = c.benchmark_group("spmm_768x768x32");
    group.bench_function("dense", |b| b.iter(|| dense_matmul(black_box(&w), black_box(&x)).unwrap()));
    for s in [0.5, 0.8, 0.9, 0.99] {
        let csr = CsrMatrix::from_dense(&magnitude_prune(&w, s).unwrap().apply(&w).unwrap());
        group.bench_with_input(BenchmarkId::new("csr", s), &csr, |b, m| {
            b.iter(|| spmm_csr(black_box(m), black_box(&x)).unwrap())
        });
        let block = BlockShape::ONE_BY_FOUR;
        let masked = block_magnitude_prune(&w, s, block).unwrap().apply(&w).unwrap();
        let bsr = BsrMatrix::from_dense(&masked, block).unwrap();
        group.bench_with_input(BenchmarkId::new("bsr_1x4", s), &bsr, |b, m| {
            b.iter(|| spmm_bsr(black_box(m), black_box(&x)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
