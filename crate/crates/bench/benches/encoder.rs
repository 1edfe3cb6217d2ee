use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dsr_core::encoder::{encode_with, EncodeOptions, EncoderConfig, EncoderWeights};
use dsr_core::kernels::BlockShape;
use dsr_core::sparsity::{apply_and_freeze, compress, prune_encoder, SparsityPattern};

const QUERY: &str = "which sparse encoder answers passage retrieval queries fastest on a cpu";

fn variants(w: &EncoderWeights) -> Vec<(&'static str, EncoderWeights)> {
    let sparse = |s: f64, p: SparsityPattern| compress(&apply_and_freeze(w, &prune_encoder(w, s, p).unwrap()).unwrap()).unwrap();
    vec![
        ("dense", w.clone()),
        ("csr90", sparse(0.9, SparsityPattern::Unstructured)),
        ("bsr80", sparse(0.8, SparsityPattern::Block { block: BlockShape::ONE_BY_FOUR })),
    ]
}

/// One padded 32-token query per iteration.
fn encoder(c: &mut Criterion) {
    let opts = EncodeOptions {
        max_len: 32,
        batch_size: 1,
        pad_to_max_len: true,
    };
    for (preset, cfg) in [("tiny", EncoderConfig::tiny()), ("base", EncoderConfig::base())] {
        let w = EncoderWeights::init(cfg, 0).unwrap();
        let mut group = c.benchmark_group(format!("encode_query_{preset}"));
        if preset == "base" {
            group.sample_size(20);
        }
        for (name, m) in variants(&w) {
            group.bench_function(name, |b| b.iter(|| encode_with(black_box(&m), &[QUERY], opts).unwrap()));
        }
        group.finish();
    }
}

criterion_group!(benches, encoder);
criterion_main!(benches);
