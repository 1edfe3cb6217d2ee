//! The end-to-end flow: prune, train, index, search, evaluate and benchmark
//! every model variant, then write the quality tables, summary and figure
//! data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchharness::{
    aggregate, emit_figure_data, figure_rows, report_csv, run_benchmark, AggregateStats, BenchConfig, FigureRow,
    RunStats, WeightsEncoder,
};
use crate::biencoder::{train, BiEncoder, TiedMode, TrainConfig, TrainExample};
use crate::encoder::{EncodeOptions, EncoderConfig, EncoderWeights, INIT_STD};
use crate::error::{Error, Result};
use crate::evalmetrics::{evaluate, quality_csv, write_run, EvalMode, MetricReport, QualityRow, Qrels, DEFAULT_DEPTHS};
use crate::kernels::BlockShape;
use crate::retrieval::{build_index_with, search_batch_with, Corpus, Query};
use crate::sparsity::{apply_and_freeze, compress, prune_encoder, sparsity_stats, SparsityPattern};

use super::data::{load_corpus, load_qrels, load_queries, load_train};
use super::modelfile::{load_model, save_model};
use super::summary::{Summary, SummaryInput, SUMMARY_DEPTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub train: PathBuf,
}

/// One model to evaluate: weight sharing plus the sparsity applied to the
/// starting checkpoint before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub tied: TiedMode,
    #[serde(default)]
    pub sparsity: f64,
    #[serde(default = "unstructured")]
    pub pattern: SparsityPattern,
}

fn unstructured() -> SparsityPattern {
    SparsityPattern::Unstructured
}

impl Variant {
    /// Dense, 90% unstructured and 80% 1×4-block, each tied and untied.
    pub fn defaults() -> Vec<Variant> {
        let block = SparsityPattern::Block {
            block: BlockShape::ONE_BY_FOUR,
        };
        let mut out = Vec::new();
        for (tied, suffix) in [(TiedMode::Tied, "tied"), (TiedMode::Untied, "untied")] {
            for (name, sparsity, pattern) in [
                ("dense", 0.0, SparsityPattern::Unstructured),
                ("sparse90", 0.9, SparsityPattern::Unstructured),
                ("block80", 0.8, block),
            ] {
                out.push(Variant {
                    name: format!("{name}-{suffix}"),
                    tied,
                    sparsity,
                    pattern,
                });
            }
        }
        out
    }

    pub fn is_block(&self) -> bool {
        matches!(self.pattern, SparsityPattern::Block { .. })
    }
}

fn default_preset() -> String {
    "tiny".into()
}

fn default_init_std() -> f32 {
    INIT_STD
}

fn default_depths() -> Vec<usize> {
    DEFAULT_DEPTHS.to_vec()
}

fn default_batch() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSpec>,
    /// Dense starting checkpoint; a fresh `preset` model when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_std")]
    pub init_std: f32,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "Variant::defaults")]
    pub variants: Vec<Variant>,
    /// Batch size for document and query encoding during indexing and search.
    #[serde(default = "default_batch")]
    pub encode_batch_size: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub save_models: bool,
}

impl ExperimentConfig {
    /// A config over the given datasets with every other field defaulted.
    pub fn new(datasets: Vec<DatasetSpec>) -> Self {
        Self {
            datasets,
            model: None,
            preset: default_preset(),
            seed: 0,
            init_std: INIT_STD,
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
            depths: default_depths(),
            variants: Variant::defaults(),
            encode_batch_size: default_batch(),
            output_dir: None,
            save_models: false,
        }
    }

    /// Parses JSON, resolves relative paths against the file's directory and
    /// validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut self.datasets {
            fix(&mut d.corpus);
            fix(&mut d.queries);
            fix(&mut d.qrels);
            fix(&mut d.train);
        }
        if let Some(m) = &mut self.model {
            fix(m);
        }
        if let Some(o) = &mut self.output_dir {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::invalid("experiment needs at least one dataset"));
        }
        if self.variants.is_empty() {
            return Err(Error::invalid("experiment needs at least one variant"));
        }
        if self.depths.is_empty() || self.depths[0] == 0 || self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("depths {:?} must be positive and strictly ascending", self.depths)));
        }
        if !self.depths.contains(&SUMMARY_DEPTH) {
            return Err(Error::invalid(format!("depths must include {SUMMARY_DEPTH} for the summary")));
        }
        if self.encode_batch_size == 0 {
            return Err(Error::invalid("encode_batch_size must be at least 1"));
        }
        let mut names = std::collections::BTreeSet::new();
        for v in &self.variants {
            if !names.insert(&v.name) {
                return Err(Error::invalid(format!("variant name '{}' repeated", v.name)));
            }
            if !(0.0..1.0).contains(&v.sparsity) {
                return Err(Error::invalid(format!("variant '{}' sparsity {} outside [0, 1)", v.name, v.sparsity)));
            }
        }
        let mut dnames = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if !dnames.insert(&d.name) {
                return Err(Error::invalid(format!("dataset name '{}' repeated", d.name)));
            }
            for p in [&d.corpus, &d.queries, &d.qrels, &d.train] {
                if !p.exists() {
                    return Err(Error::invalid(format!("dataset '{}': {} does not exist", d.name, p.display())));
                }
            }
        }
        if let Some(m) = &self.model {
            if !m.exists() {
                return Err(Error::invalid(format!("model {} does not exist", m.display())));
            }
        }
        self.train.validate()?;
        self.bench.validate()?;
        Ok(())
    }

    fn starting_weights(&self) -> Result<EncoderWeights> {
        match &self.model {
            Some(p) => Ok(load_model(p)?.to_dense_storage()),
            None => EncoderWeights::init_with_std(EncoderConfig::preset(&self.preset)?, self.seed, self.init_std),
        }
    }
}

struct Dataset {
    name: String,
    corpus: Corpus,
    queries: Vec<Query>,
    qrels: Qrels,
    train: Vec<TrainExample>,
}

impl Dataset {
    fn load(spec: &DatasetSpec) -> Result<Self> {
        Ok(Self {
            name: spec.name.clone(),
            corpus: load_corpus(&spec.corpus)?,
            queries: load_queries(&spec.queries)?,
            qrels: load_qrels(&spec.qrels)?,
            train: load_train(&spec.train)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub dataset: String,
    pub metrics: MetricReport,
    pub epoch_losses: Vec<f64>,
    /// Global sparsity of the query encoder after training.
    pub query_sparsity: f64,
    pub doc_sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    /// Global sparsity right after pruning, before training.
    pub pruned_sparsity: f64,
    pub datasets: Vec<DatasetResult>,
    pub bench_runs: Vec<RunStats>,
    pub bench: AggregateStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub datasets: Vec<String>,
    pub depths: Vec<usize>,
    pub variants: Vec<VariantResult>,
    pub summary: Summary,
    pub figure: Vec<FigureRow>,
}

impl ExperimentResult {
    /// Quality rows for one dataset, each impact taken against the dense
    /// variant with the same weight sharing.
    pub fn quality_rows(&self, dataset: usize) -> Result<Vec<QualityRow>> {
        let baseline = |tied: TiedMode| {
            self.variants
                .iter()
                .find(|v| v.variant.tied == tied && v.variant.sparsity == 0.0)
                .map(|v| &v.datasets[dataset].metrics)
        };
        self.variants
            .iter()
            .map(|v| {
                let metrics = v.datasets[dataset].metrics.clone();
                let impact = match baseline(v.variant.tied) {
                    Some(b) if v.variant.sparsity > 0.0 => Some(metrics.impact_vs(b)?),
                    _ => None,
                };
                Ok(QualityRow {
                    model: v.variant.name.clone(),
                    tied: v.variant.tied == TiedMode::Tied,
                    sparsity: v.variant.sparsity,
                    block_sparsity: v.variant.is_block(),
                    metrics,
                    impact,
                })
            })
            .collect()
    }
}

fn compress_model(model: BiEncoder) -> Result<BiEncoder> {
    Ok(match model {
        BiEncoder::Tied(w) => BiEncoder::Tied(compress(&w)?),
        BiEncoder::Untied { query, doc } => BiEncoder::untied(compress(&query)?, compress(&doc)?)?,
    })
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Runs every variant on every dataset and, when `output_dir` is set, writes
/// `result.json`, `summary.csv`, `figure.csv`, `quality-<dataset>.csv`,
/// per-variant benchmark reports and TREC runs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let data: Vec<Dataset> = config.datasets.iter().map(Dataset::load).collect::<Result<_>>()?;
    let start = config.starting_weights()?;
    let max_depth = *config.depths.last().expect("validated nonempty");
    let doc_opts = EncodeOptions {
        max_len: config.train.doc_max_len,
        batch_size: config.encode_batch_size,
        pad_to_max_len: false,
    };
    let query_opts = EncodeOptions {
        max_len: config.train.query_max_len,
        ..doc_opts
    };
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir.join("runs"))?;
        std::fs::create_dir_all(dir.join("bench"))?;
        if config.save_models {
            std::fs::create_dir_all(dir.join("models"))?;
        }
    }

    let mut results = Vec::with_capacity(config.variants.len());
    for v in &config.variants {
        log::info!("variant {}", v.name);
        let pruned = if v.sparsity > 0.0 {
            apply_and_freeze(&start, &prune_encoder(&start, v.sparsity, v.pattern)?)?
        } else {
            start.clone()
        };
        let mut per_dataset = Vec::with_capacity(data.len());
        let mut bench_model = None;
        for d in &data {
            let outcome = train(&d.train, &config.train, BiEncoder::from_weights(pruned.clone(), v.tied))?;
            let model = if v.sparsity > 0.0 {
                compress_model(outcome.model)?
            } else {
                outcome.model
            };
            let index = build_index_with(&d.corpus, model.doc_encoder(), doc_opts)?;
            let run = search_batch_with(&index, &model, &d.queries, max_depth, query_opts)?;
            let metrics = evaluate(&run, &d.qrels, &config.depths, EvalMode::Strict)?;
            log::info!(
                "{} on {}: accuracy@{} {:.4}",
                v.name,
                d.name,
                SUMMARY_DEPTH,
                metrics.accuracy_at(SUMMARY_DEPTH).unwrap_or(f64::NAN)
            );
            if let Some(dir) = &config.output_dir {
                let stem = format!("{}.{}", file_stem(&v.name), file_stem(&d.name));
                write_run(dir.join("runs").join(format!("{stem}.trec")), &run, &v.name)?;
                if config.save_models {
                    save_model(model.query_encoder(), dir.join("models").join(format!("{stem}.query.dsrm")))?;
                    if v.tied == TiedMode::Untied {
                        save_model(model.doc_encoder(), dir.join("models").join(format!("{stem}.doc.dsrm")))?;
                    }
                }
            }
            per_dataset.push(DatasetResult {
                dataset: d.name.clone(),
                metrics,
                epoch_losses: outcome.epoch_losses,
                query_sparsity: sparsity_stats(model.query_encoder()).global_sparsity,
                doc_sparsity: sparsity_stats(model.doc_encoder()).global_sparsity,
            });
            if bench_model.is_none() {
                bench_model = Some(model);
            }
        }

        let model = bench_model.expect("at least one dataset");
        let texts: Vec<String> = data[0].queries.iter().map(|q| q.text.clone()).collect();
        let mut enc = WeightsEncoder::new(model.query_encoder(), &config.bench);
        let bench_runs = run_benchmark(&mut enc, &texts, &config.bench)?;
        let bench = aggregate(&bench_runs)?;
        if let Some(dir) = &config.output_dir {
            let cols: Vec<_> = bench_runs.iter().map(RunStats::columns).collect();
            std::fs::write(dir.join("bench").join(format!("{}.csv", file_stem(&v.name))), report_csv(&cols, &bench))?;
        }
        results.push(VariantResult {
            variant: v.clone(),
            pruned_sparsity: sparsity_stats(&pruned).global_sparsity,
            datasets: per_dataset,
            bench_runs,
            bench,
        });
    }

    let names: Vec<String> = data.iter().map(|d| d.name.clone()).collect();
    let inputs: Vec<SummaryInput> = results
        .iter()
        .map(|r| SummaryInput {
            model: r.variant.name.clone(),
            accuracy: r
                .datasets
                .iter()
                .map(|d| (d.dataset.clone(), 100.0 * d.metrics.accuracy_at(SUMMARY_DEPTH).unwrap_or(0.0)))
                .collect::<BTreeMap<_, _>>(),
            qps: r.bench.average[0],
        })
        .collect();
    let summary = Summary::build(names.clone(), &inputs, 0)?;
    let figure = figure_rows(&summary.figure_points())?;
    let result = ExperimentResult {
        datasets: names,
        depths: config.depths.clone(),
        variants: results,
        summary,
        figure,
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(&result, dir)?;
    }
    Ok(result)
}

pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.csv"), result.summary.to_csv())?;
    emit_figure_data(&result.summary.figure_points(), dir.join("figure.csv"))?;
    for (i, d) in result.datasets.iter().enumerate() {
        std::fs::write(dir.join(format!("quality-{}.csv", file_stem(d))), quality_csv(&result.quality_rows(i)?))?;
    }
    std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(result)? + "\n")?;
    Ok(())
}
