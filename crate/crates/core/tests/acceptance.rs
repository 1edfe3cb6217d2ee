//! Acceptance suite. Each test prints one `PASS` or `FAIL` line.
//!
//! Run with `cargo test -p dsr-core --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use dsr_core::benchharness::{aggregate, aggregate_columns, run_benchmark, speedup, BenchConfig, Columns, WeightsEncoder};
use dsr_core::biencoder::{check_gradients, train, GradCheckOptions, LossKind};
use dsr_core::encoder::{encode, EncodeOptions};
use dsr_core::evalmetrics::{format_percent, relative_impact};
use dsr_core::kernels::{dense_matmul, spmm_bsr, spmm_csr, BlockShape};
use dsr_core::pipeline::experiment::DatasetSpec;
use dsr_core::pipeline::{bundled_fixture, load_corpus, load_queries, load_train, run_experiment, ExperimentConfig};
use dsr_core::pipeline::{Summary, SummaryInput};
use dsr_core::retrieval::{build_index_with, search, IndexMetadata};
use dsr_core::sparsity::{
    apply_and_freeze, block_magnitude_prune, compress, magnitude_prune, prune_encoder, sparsity_stats, WeightMask,
};
use dsr_core::{
    BiEncoder, BsrMatrix, CsrMatrix, DenseMatrix, EncoderConfig, EncoderWeights, FlatIndex, SparsityPattern, TiedMode,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            panic!("{name}: {detail}");
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- kernels

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0f32..1.0)).unwrap()
}

/// `max |a − b| ≤ tol · max(max |b|, 1)`.
fn rel_close(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> Result<(), String> {
    if a.shape() != b.shape() {
        return Err(format!("shape {:?} vs {:?}", a.shape(), b.shape()));
    }
    let scale = b.values().iter().fold(1.0f64, |m, v| m.max(v.abs() as f64));
    let err = a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((*x as f64 - *y as f64).abs()));
    check(err <= tol * scale, || format!("max abs error {err:e} at scale {scale}"))
}

/// Triple loop in f64, bounded against `Σ |w| |x|` per output.
fn naive_close(w: &DenseMatrix, x: &DenseMatrix, got: &DenseMatrix) -> Result<(), String> {
    for r in 0..w.rows() {
        for c in 0..x.cols() {
            let (mut acc, mut mag) = (0.0f64, 0.0f64);
            for k in 0..w.cols() {
                let p = w.get(r, k) as f64 * x.get(k, c) as f64;
                acc += p;
                mag += p.abs();
            }
            let err = (got.get(r, c) as f64 - acc).abs();
            if err > 1e-5 * mag.max(1e-30) + 1e-30 {
                return Err(format!("naive oracle mismatch at ({r},{c}): {} vs {acc}", got.get(r, c)));
            }
        }
    }
    Ok(())
}

#[test]
fn kernel_equivalence() {
    let start = Instant::now();
    let sparsities = [0.0, 0.5, 0.8, 0.9, 0.99];
    let blocks = [BlockShape::new(1, 1), BlockShape::ONE_BY_FOUR, BlockShape::new(2, 2), BlockShape::new(4, 1)];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases = 0usize;
    let outcome = (|| -> Result<(), String> {
        for i in 0..1000 {
            let s = sparsities[i % sparsities.len()];
            let block = blocks[(i / sparsities.len()) % blocks.len()];
            let rows = block.rows * rng.random_range(1..=256 / block.rows);
            let inner = block.cols * rng.random_range(1..=256 / block.cols);
            let n = rng.random_range(1..=256);
            let w = random_matrix(&mut rng, rows, inner);
            let x = random_matrix(&mut rng, inner, n);

            let pruned = magnitude_prune(&w, s).unwrap().apply(&w).unwrap();
            let csr = CsrMatrix::from_dense(&pruned);
            let oracle = dense_matmul(&csr.to_dense(), &x).unwrap();
            let got = spmm_csr(&csr, &x).unwrap();
            rel_close(&got, &oracle, 1e-6).map_err(|e| format!("csr case {i} ({rows}x{inner}x{n}, s={s}): {e}"))?;

            let bpruned = block_magnitude_prune(&w, s, block).unwrap().apply(&w).unwrap();
            let bsr = BsrMatrix::from_dense(&bpruned, block).unwrap();
            let oracle_b = dense_matmul(&bsr.to_dense(), &x).unwrap();
            let got_b = spmm_bsr(&bsr, &x).unwrap();
            rel_close(&got_b, &oracle_b, 1e-6)
                .map_err(|e| format!("bsr {block} case {i} ({rows}x{inner}x{n}, s={s}): {e}"))?;

            if i % 50 == 0 {
                naive_close(&pruned, &x, &oracle).map_err(|e| format!("case {i}: {e}"))?;
            }
            cases += 2;
        }
        let secs = start.elapsed().as_secs_f64();
        check(secs < 60.0, || format!("took {secs:.1}s"))
    })();
    report(
        "kernel equivalence",
        outcome.map(|_| format!("{cases} CSR/BSR products within 1e-6 in {:.1}s", start.elapsed().as_secs_f64())),
    );
}

// ------------------------------------------------------------- statistics

/// Items/sec and Full Time per run; remaining columns are unused here.
fn runs(items: [f64; 5], full: [f64; 5]) -> Vec<Columns> {
    items.iter().zip(full).map(|(&i, f)| [i, f, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).collect()
}

/// Printed aggregate rows for one column: average, stdev, CI, Lower, High.
type Printed = [f64; 5];

struct PublishedRuns {
    name: &'static str,
    rows: Vec<Columns>,
    items: Printed,
    full: Printed,
}

fn published_runs() -> Vec<PublishedRuns> {
    vec![
        PublishedRuns {
            name: "dense baseline",
            rows: runs([44.890, 48.370, 47.290, 48.260, 47.580], [80.414, 74.628, 76.334, 74.810, 75.872]),
            items: [47.278, 1.410, 1.236, 46.042, 48.514],
            full: [76.412, 2.348, 2.058, 74.353, 78.470],
        },
        PublishedRuns {
            name: "dense engine",
            rows: runs([86.03, 85.64, 83.66, 82.23, 67.03], [41.96, 42.15, 43.15, 43.90, 53.85]),
            items: [80.92, 7.91, 6.94, 73.98, 87.86],
            full: [45.00, 5.01, 4.39, 40.62, 49.39],
        },
        PublishedRuns {
            name: "90% unstructured",
            rows: runs([190.31, 205.59, 204.52, 205.11, 207.80], [18.97, 17.56, 17.65, 17.60, 17.37]),
            items: [202.67, 7.02, 6.15, 196.51, 208.82],
            full: [17.83, 0.65, 0.57, 17.27, 18.40],
        },
        PublishedRuns {
            name: "80% block",
            rows: runs([134.14, 141.06, 146.08, 143.82, 143.80], [26.91, 25.59, 24.71, 25.10, 25.10]),
            items: [141.78, 4.63, 4.06, 137.72, 145.84],
            full: [25.48, 0.86, 0.75, 24.73, 26.24],
        },
    ]
}

/// Sample mean, n−1 stdev and the 1.96·σ/√n half-width, computed directly.
fn oracle_stats(xs: &[f64]) -> Printed {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let ci = 1.96 * var.sqrt() / n.sqrt();
    [mean, var.sqrt(), ci, mean - ci, mean + ci]
}

#[test]
fn statistics_golden() {
    let labels = ["average", "stdev", "CI", "Lower", "High"];
    let mut cells = 0;
    let outcome = (|| -> Result<(), String> {
        for t in published_runs() {
            let agg = aggregate_columns(&t.rows).map_err(|e| e.to_string())?;
            for (col, printed) in [(0usize, t.items), (1, t.full)] {
                let got = [agg.average[col], agg.stdev[col], agg.ci95[col], agg.lower[col], agg.high[col]];
                let xs: Vec<f64> = t.rows.iter().map(|r| r[col]).collect();
                let oracle = oracle_stats(&xs);
                for k in 0..5 {
                    check((got[k] - printed[k]).abs() <= 0.01, || {
                        format!("{} column {col} {}: got {:.4}, printed {}", t.name, labels[k], got[k], printed[k])
                    })?;
                    check((got[k] - oracle[k]).abs() <= 1e-9, || {
                        format!("{} column {col} {}: {} vs oracle {}", t.name, labels[k], got[k], oracle[k])
                    })?;
                    cells += 1;
                }
            }
        }
        Ok(())
    })();
    report("statistics golden", outcome.map(|_| format!("{cells} aggregate cells within 0.01")));
}

// ---------------------------------------------------------------- speedup

#[test]
fn speedup_golden() {
    let qps = [("BERT-Base", 47.278), ("dense engine", 80.92), ("90% unstructured", 202.67), ("80% block", 141.78)];
    let expected = [1.00, 1.71, 4.28, 3.00];
    let accuracy = [
        ("BERT-Base", [69.80, 86.34, 85.33]),
        ("dense engine", [69.80, 86.34, 85.33]),
        ("90% unstructured", [70.04, 85.84, 84.41]),
        ("80% block", [69.63, 85.62, 84.81]),
    ];
    let datasets = ["MSMARCO", "NQ", "TriviaQA"];
    let outcome = (|| -> Result<String, String> {
        let mut got = Vec::new();
        for ((name, q), e) in qps.iter().zip(expected) {
            let s = speedup(*q, qps[0].1).map_err(|e| e.to_string())?;
            check((s - e).abs() <= 0.01, || format!("{name}: {s:.4} vs {e}"))?;
            check((s - q / 47.278).abs() < 1e-12, || format!("{name}: {s} is not a plain ratio"))?;
            got.push(s);
        }
        let inputs: Vec<SummaryInput> = accuracy
            .iter()
            .zip(qps)
            .map(|((name, acc), (_, q))| SummaryInput {
                model: name.to_string(),
                accuracy: datasets.iter().map(|d| d.to_string()).zip(acc.iter().copied()).collect::<BTreeMap<_, _>>(),
                qps: q,
            })
            .collect();
        let summary = Summary::build(datasets.iter().map(|d| d.to_string()).collect(), &inputs, 0)
            .map_err(|e| e.to_string())?;
        let csv = summary.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        check(lines[0] == "Model,MSMARCO,NQ,TriviaQA,QPS,Speedup", || format!("header {}", lines[0]))?;
        check(lines[1] == "BERT-Base,69.80%,86.34%,85.33%,47.278,1.00", || lines[1].to_string())?;
        check(lines[2] == "dense engine,69.80%,86.34%,85.33%,80.920,1.71", || lines[2].to_string())?;
        check(lines[3].starts_with("90% unstructured,70.04%,85.84%,84.41%,202.670,4.2"), || lines[3].to_string())?;
        check(lines[4] == "80% block,69.63%,85.62%,84.81%,141.780,3.00", || lines[4].to_string())?;
        Ok(format!("{:?}", got.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>()))
    })();
    report("speedup golden", outcome);
}

// ----------------------------------------------------------------- impact

#[test]
fn impact_golden() {
    let outcome = (|| -> Result<String, String> {
        let a = relative_impact(85.84, 86.34).map_err(|e| e.to_string())?;
        let b = relative_impact(78.78, 79.83).map_err(|e| e.to_string())?;
        let (fa, fb) = (format_percent(a), format_percent(b));
        // 100 · (c / b − 1), rounded half away from zero at two decimals.
        let oracle = |c: f64, base: f64| format!("{:.2}%", (10000.0 * (c - base) / base).round() / 100.0);
        check(fa == "-0.58%" && fa == oracle(85.84, 86.34), || format!("got {fa}"))?;
        check(fb == "-1.32%" && fb == oracle(78.78, 79.83), || format!("got {fb}"))?;
        check(a == -0.58 && b == -1.32, || format!("values {a} {b}"))?;
        Ok(format!("{fa} and {fb}"))
    })();
    report("impact golden", outcome);
}

// --------------------------------------------------------------- gradients

#[test]
fn gradient_correctness() {
    let _g = heavy();
    let start = Instant::now();
    let train_set = load_train(bundled_fixture().train).unwrap();
    let batch = &train_set[..4];
    let weights = EncoderWeights::init_with_std(EncoderConfig::tiny(), 5, 0.2).unwrap();
    let opts = GradCheckOptions::default();
    let mut summary = Vec::new();
    let outcome = (|| -> Result<(), String> {
        for kind in [LossKind::InBatchSoftmax, LossKind::CosinePair] {
            let tc = TrainConfig {
                loss_kind: kind,
                ..TrainConfig::default()
            };
            let model = BiEncoder::from_weights(weights.clone(), TiedMode::Tied);
            let r = check_gradients(&model, batch, &tc, &opts).map_err(|e| e.to_string())?;
            check(r.tensors.len() >= 3 + 2 * 16, || format!("{kind:?}: only {} tensors", r.tensors.len()))?;
            let failures = r.failures(1e-4);
            check(failures.is_empty(), || format!("{kind:?}: {failures:?}"))?;
            summary.push(format!("{kind:?} max rel {:.1e} over {} tensors", r.max_rel_error(), r.tensors.len()));
        }
        let secs = start.elapsed().as_secs_f64();
        check(secs < 300.0, || format!("took {secs:.0}s"))
    })();
    report("gradient correctness", outcome.map(|_| summary.join(", ")));
}

// --------------------------------------------------------- sparse transfer

fn masked_nonzeros(weights: &EncoderWeights, mask: &WeightMask) -> usize {
    weights
        .prunable()
        .map(|(name, lin)| {
            let keep = &mask.get(&name).expect("mask for every prunable matrix").mask.keep;
            let dense = lin.weight.to_dense();
            dense.values().iter().zip(keep).filter(|(v, k)| !**k && **v != 0.0).count()
        })
        .sum()
}

#[test]
fn sparse_transfer_invariant() {
    let _g = heavy();
    let train_set = load_train(bundled_fixture().train).unwrap();
    let base = EncoderWeights::init_with_std(EncoderConfig::tiny(), 21, 0.2).unwrap();
    let mask = prune_encoder(&base, 0.9, SparsityPattern::Unstructured).unwrap();
    let frozen = apply_and_freeze(&base, &mask).unwrap();
    let pruned = sparsity_stats(&frozen).global_sparsity;
    let mut details = Vec::new();
    let outcome = (|| -> Result<(), String> {
        check(format!("{pruned:.2}") == "0.90", || format!("pruned to {pruned}"))?;
        for mode in [TiedMode::Tied, TiedMode::Untied] {
            let cfg = TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            };
            let out = train(&train_set, &cfg, BiEncoder::from_weights(frozen.clone(), mode)).map_err(|e| e.to_string())?;
            check(out.epoch_losses.len() == 3, || "three epochs".into())?;
            let encoders = match mode {
                TiedMode::Tied => vec![out.model.query_encoder()],
                TiedMode::Untied => vec![out.model.query_encoder(), out.model.doc_encoder()],
            };
            for enc in encoders {
                let g = sparsity_stats(enc).global_sparsity;
                check(g == pruned, || format!("{mode:?}: sparsity {g} after training, {pruned} before"))?;
                check(format!("{g:.2}") == "0.90", || format!("{mode:?}: {g}"))?;
                let stray = masked_nonzeros(enc, &mask);
                check(stray == 0, || format!("{mode:?}: {stray} masked weights are nonzero"))?;
                let moved = enc.prunable().zip(frozen.prunable()).any(|((_, a), (_, b))| a.weight.to_dense() != b.weight.to_dense());
                check(moved, || format!("{mode:?}: training left the weights unchanged"))?;
            }
            details.push(format!("{mode:?} sparsity {pruned:.6}"));
        }
        Ok(())
    })();
    report("sparse transfer", outcome.map(|_| details.join(", ")));
}

// --------------------------------------------------------------- retrieval

fn brute_force(index: &FlatIndex, q: &[f32], k: usize) -> Vec<(String, f32)> {
    let mut all: Vec<(String, f32)> = (0..index.len())
        .map(|i| {
            let mut s = 0.0f32;
            for (a, b) in index.row(i).iter().zip(q) {
                s += a * b;
            }
            (index.doc_ids()[i].clone(), s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn compare_search(index: &FlatIndex, queries: &DenseMatrix, label: &str) -> Result<usize, String> {
    let mut n = 0;
    for qi in 0..queries.rows() {
        let q = queries.row(qi);
        for k in [1, 20, 100, 200] {
            let got: Vec<(String, f32)> = search(index, q, k)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|h| (h.doc_id, h.score))
                .collect();
            let want = brute_force(index, q, k);
            check(got == want, || format!("{label} query {qi} k={k}: results differ"))?;
            n += 1;
        }
    }
    Ok(n)
}

#[test]
fn retrieval_exactness() {
    let _g = heavy();
    let outcome = (|| -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dim = 64;
        let ids: Vec<String> = (0..1000).map(|i| format!("doc{i:04}")).collect();
        let vectors: Vec<f32> = (0..1000 * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let meta = IndexMetadata {
            fingerprint: 0,
            normalized: false,
        };
        let random = FlatIndex::new(dim, ids, vectors, meta).map_err(|e| e.to_string())?;
        let queries = random_matrix(&mut rng, 25, dim);
        let a = compare_search(&random, &queries, "random")?;

        let paths = bundled_fixture();
        let corpus = load_corpus(&paths.corpus).map_err(|e| e.to_string())?;
        let weights = EncoderWeights::init(EncoderConfig::tiny(), 4).unwrap();
        let index = build_index_with(&corpus, &weights, EncodeOptions::new(128, 32)).map_err(|e| e.to_string())?;
        check(index.len() == 1000, || format!("fixture index has {} docs", index.len()))?;
        let texts: Vec<String> = load_queries(&paths.queries).unwrap().into_iter().map(|q| q.text).collect();
        let qv = encode(&weights, &texts, 32, 32).map_err(|e| e.to_string())?;
        let b = compare_search(&index, &qv, "fixture")?;
        Ok(format!("{a} random and {b} fixture searches identical to brute force"))
    })();
    report("retrieval exactness", outcome);
}

// -------------------------------------------------------------- end to end

#[test]
fn end_to_end_experiment() {
    let _g = heavy();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let paths = bundled_fixture();
    let mut cfg = ExperimentConfig::new(vec![DatasetSpec {
        name: "synth".into(),
        corpus: paths.corpus,
        queries: paths.queries,
        qrels: paths.qrels,
        train: paths.train,
    }]);
    cfg.bench.num_queries = 500;
    cfg.output_dir = Some(dir.path().to_path_buf());
    let outcome = (|| -> Result<String, String> {
        let r = run_experiment(&cfg).map_err(|e| e.to_string())?;
        check(r.variants.len() == 6, || format!("{} variants", r.variants.len()))?;
        let tied: Vec<TiedMode> = r.variants.iter().map(|v| v.variant.tied).collect();
        check(tied.contains(&TiedMode::Tied) && tied.contains(&TiedMode::Untied), || "both tied modes".into())?;
        for v in &r.variants {
            for d in &v.datasets {
                check(d.metrics.num_queries == 100, || format!("{}: {} queries", v.variant.name, d.metrics.num_queries))?;
                let a = &d.metrics.accuracy;
                check(a[&20] <= a[&100] && a[&100] <= a[&200], || format!("{}: {a:?}", v.variant.name))?;
            }
        }
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).map_err(|e| e.to_string())?;
        check(summary.starts_with("Model,synth,QPS,Speedup\n"), || summary.clone())?;
        check(summary.lines().count() == 7, || summary.clone())?;
        let figure = std::fs::read_to_string(dir.path().join("figure.csv")).map_err(|e| e.to_string())?;
        check(figure.starts_with("series,label,qps,relative_accuracy\n"), || figure.clone())?;
        check(figure.lines().count() == 7, || figure.clone())?;
        let secs = start.elapsed().as_secs_f64();
        check(secs < 900.0, || format!("took {secs:.0}s"))?;
        let best = r.summary.rows.iter().map(|row| row.accuracy[0]).fold(0.0, f64::max);
        Ok(format!("6 variants in {secs:.0}s, best accuracy@100 {best:.1}%"))
    })();
    report("end-to-end experiment", outcome);
}

// -------------------------------------------------------------- throughput

#[test]
fn throughput_property() {
    let _g = heavy();
    let texts: Vec<String> = load_queries(bundled_fixture().queries).unwrap().into_iter().map(|q| q.text).collect();
    let bench = BenchConfig {
        num_queries: 8,
        warmup_queries: 1,
        ..BenchConfig::default()
    };
    let dense = EncoderWeights::init(EncoderConfig::base(), 0).unwrap();
    let csr = compress(&apply_and_freeze(&dense, &prune_encoder(&dense, 0.9, SparsityPattern::Unstructured).unwrap()).unwrap())
        .unwrap();
    let block = SparsityPattern::Block {
        block: BlockShape::ONE_BY_FOUR,
    };
    let bsr = compress(&apply_and_freeze(&dense, &prune_encoder(&dense, 0.8, block).unwrap()).unwrap()).unwrap();

    let measure = |w: &EncoderWeights| {
        let mut enc = WeightsEncoder::new(w, &bench);
        let runs = run_benchmark(&mut enc, &texts, &bench).unwrap();
        assert_eq!(runs.len(), 5);
        aggregate(&runs).unwrap()
    };
    let d = measure(&dense);
    let c = measure(&csr);
    let b = measure(&bsr);
    let sc = speedup(c.average[0], d.average[0]).unwrap();
    let sb = speedup(b.average[0], d.average[0]).unwrap();
    let detail = format!(
        "dense {:.2}±{:.2}, csr90 {:.2}±{:.2} ({sc:.2}x), bsr80 {:.2}±{:.2} ({sb:.2}x) items/sec",
        d.average[0], d.ci95[0], c.average[0], c.ci95[0], b.average[0], b.ci95[0]
    );
    let outcome = check(sc >= 2.0, || format!("CSR speedup {sc:.2} < 2.0; {detail}"))
        .and_then(|_| check(sb >= 1.5, || format!("BSR speedup {sb:.2} < 1.5; {detail}")))
        .map(|_| detail);
    report("throughput", outcome);
}
