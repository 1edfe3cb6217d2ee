//! `dsr`: prune, train, index, search, evaluate and benchmark sparse
//! bi-encoders from the command line.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dsr_core::benchharness::{emit_figure_data, emit_report, run_benchmark, ReportFormat, WeightsEncoder};
use dsr_core::biencoder::{train, BiEncoder, LossKind, TiedMode, TrainConfig};
use dsr_core::encoder::{encode_with, EncodeOptions, EncoderConfig, EncoderWeights, INIT_STD};
use dsr_core::evalmetrics::{evaluate, read_run, write_run, EvalMode, DEFAULT_DEPTHS};
use dsr_core::kernels::BlockShape;
use dsr_core::pipeline::{
    generate, load_corpus, load_model, load_qrels, load_queries, load_train, run_experiment, save_model,
    write_dataset, ExperimentConfig, ReportSpec, SynthConfig,
};
use dsr_core::retrieval::{build_index_with, load_index, save_index, search_batch_with, verify_encoder};
use dsr_core::sparsity::{apply_and_freeze, compress, prune_encoder, sparsity_stats, SparsityPattern};

#[derive(Parser)]
#[command(name = "dsr", version, about = "Sparse bi-encoder retrieval toolkit")]
struct Cli {
    /// JSON experiment config; its train, bench and depths settings override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a randomly initialized encoder.
    InitModel(InitModelArgs),
    /// Magnitude-prune a model and freeze its sparsity pattern.
    Prune(PruneArgs),
    /// Fine-tune a bi-encoder on JSONL training triples.
    Train(TrainArgs),
    /// Embed queries or documents as JSONL vectors.
    Encode(EncodeArgs),
    /// Build a flat index over a corpus.
    Index(IndexArgs),
    /// Retrieve the top k documents per query as a TREC run.
    Search(SearchArgs),
    /// Accuracy@k and MRR@10 of a run against qrels.
    Eval(EvalArgs),
    /// Time query encoding.
    Bench(BenchArgs),
    /// Sparsity statistics of a model, or the throughput/quality summary.
    Report(ReportArgs),
    /// Write the seeded synthetic dataset.
    Synth(SynthArgs),
    /// Run the full prune, train, index, search, eval, bench flow.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct InitModelArgs {
    #[arg(long, default_value = "tiny")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = INIT_STD)]
    init_std: f32,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Unstructured,
    Block,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sparsity: f64,
    #[arg(long, value_enum, default_value = "unstructured")]
    pattern: PatternArg,
    /// Block shape for `--pattern block`, as RxC.
    #[arg(long, default_value = "1x4")]
    block: String,
    /// Store pruned matrices as CSR/BSR.
    #[arg(long)]
    compress: bool,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TiedArg {
    Tied,
    Untied,
}

impl From<TiedArg> for TiedMode {
    fn from(t: TiedArg) -> Self {
        match t {
            TiedArg::Tied => TiedMode::Tied,
            TiedArg::Untied => TiedMode::Untied,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    InBatchSoftmax,
    CosinePair,
}

#[derive(Args)]
struct TrainArgs {
    /// Starting weights; the document encoder too unless `--doc-model` is given.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    doc_model: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum, default_value = "tied")]
    tied: TiedArg,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negatives_per_query: Option<usize>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Query (or tied) encoder output.
    #[arg(long, short)]
    output: PathBuf,
    /// Document encoder output for untied training.
    #[arg(long)]
    doc_output: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct EncodeInput {
    /// TSV `qid<TAB>text`.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// JSONL `{docid, text}`.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: EncodeInput,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    /// Document encoder.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 128)]
    max_len: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// Query encoder (the tied encoder when `--doc-model` is absent).
    #[arg(long)]
    model: PathBuf,
    /// Document encoder the index was built with, for untied models.
    #[arg(long)]
    doc_model: Option<PathBuf>,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 200)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    max_len: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value = "dsr")]
    tag: String,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated retrieval depths.
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    /// Skip queries without judgments instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Metrics JSON output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    num_queries: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    warmup_queries: Option<usize>,
    /// Trim each batch to its longest query instead of padding to max_len.
    #[arg(long)]
    dynamic_shapes: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Print per-matrix and global sparsity of `--model`.
    #[arg(long, requires = "model")]
    stats: bool,
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON listing models, datasets, accuracies and QPS (values or files).
    #[arg(long, conflicts_with = "stats")]
    summary: Option<PathBuf>,
    /// Summary CSV output; stdout when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Relative-accuracy figure data output.
    #[arg(long)]
    figure: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_docs: Option<usize>,
    #[arg(long)]
    num_train: Option<usize>,
    #[arg(long)]
    num_eval: Option<usize>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<Option<ExperimentConfig>> {
    path.as_ref()
        .map(|p| ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display())))
        .transpose()
}

fn load(path: &Path) -> Result<EncoderWeights> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn save(w: &EncoderWeights, path: &Path) -> Result<()> {
    save_model(w, path).with_context(|| format!("writing model {}", path.display()))
}

fn init_model(a: InitModelArgs) -> Result<()> {
    let w = EncoderWeights::init_with_std(EncoderConfig::preset(&a.preset)?, a.seed, a.init_std)?;
    save(&w, &a.output)?;
    println!("{} parameters, fingerprint {:016x}", w.num_parameters(), w.fingerprint());
    Ok(())
}

fn prune(a: PruneArgs) -> Result<()> {
    let w = load(&a.model)?.to_dense_storage();
    let pattern = match a.pattern {
        PatternArg::Unstructured => SparsityPattern::Unstructured,
        PatternArg::Block => SparsityPattern::Block {
            block: a.block.parse::<BlockShape>()?,
        },
    };
    let mut pruned = apply_and_freeze(&w, &prune_encoder(&w, a.sparsity, pattern)?)?;
    if a.compress {
        pruned = compress(&pruned)?;
    }
    save(&pruned, &a.output)?;
    println!("global sparsity {:.4}", sparsity_stats(&pruned).global_sparsity);
    Ok(())
}

fn train_cmd(a: TrainArgs, cfg: Option<&ExperimentConfig>) -> Result<()> {
    let mut tc = TrainConfig::default();
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.negatives_per_query {
        tc.negatives_per_query = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(l) = a.loss {
        tc.loss_kind = match l {
            LossArg::InBatchSoftmax => LossKind::InBatchSoftmax,
            LossArg::CosinePair => LossKind::CosinePair,
        };
    }
    if let Some(c) = cfg {
        tc = c.train.clone();
    }
    let query = load(&a.model)?;
    let model = match (a.tied.into(), &a.doc_model) {
        (TiedMode::Tied, None) => BiEncoder::tied(query),
        (TiedMode::Tied, Some(_)) => bail!("--doc-model only applies to --tied untied"),
        (TiedMode::Untied, None) => BiEncoder::from_weights(query, TiedMode::Untied),
        (TiedMode::Untied, Some(d)) => BiEncoder::untied(query, load(d)?)?,
    };
    if model.mode() == TiedMode::Untied && a.doc_output.is_none() {
        bail!("untied training needs --doc-output for the document encoder");
    }
    let data = load_train(&a.train)?;
    let outcome = train(&data, &tc, model)?;
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {} loss {l:.6}", e + 1);
    }
    save(outcome.model.query_encoder(), &a.output)?;
    if let Some(d) = &a.doc_output {
        save(outcome.model.doc_encoder(), d)?;
    }
    Ok(())
}

fn encode_cmd(a: EncodeArgs) -> Result<()> {
    let w = load(&a.model)?;
    let (ids, texts, default_len): (Vec<String>, Vec<String>, usize) = match (&a.input.queries, &a.input.corpus) {
        (Some(q), _) => {
            let qs = load_queries(q)?;
            (qs.iter().map(|q| q.query_id.clone()).collect(), qs.into_iter().map(|q| q.text).collect(), 32)
        }
        (_, Some(c)) => {
            let docs = load_corpus(c)?;
            let docs = docs.documents();
            (docs.iter().map(|d| d.doc_id.clone()).collect(), docs.iter().map(|d| d.text.clone()).collect(), 128)
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let opts = EncodeOptions::new(a.max_len.unwrap_or(default_len), a.batch_size);
    let m = encode_with(&w, &texts, opts)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(&a.output)?);
    for (i, id) in ids.iter().enumerate() {
        serde_json::to_writer(&mut out, &serde_json::json!({ "id": id, "vector": m.row(i) }))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn index_cmd(a: IndexArgs) -> Result<()> {
    let w = load(&a.model)?;
    let corpus = load_corpus(&a.corpus)?;
    let index = build_index_with(&corpus, &w, EncodeOptions::new(a.max_len, a.batch_size))?;
    save_index(&index, &a.output)?;
    println!("indexed {} documents, dim {}", index.len(), index.dim());
    Ok(())
}

fn search_cmd(a: SearchArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let query = load(&a.model)?;
    let model = match &a.doc_model {
        None => BiEncoder::tied(query),
        Some(d) => BiEncoder::untied(query, load(d)?)?,
    };
    if let Some(msg) = verify_encoder(&index, model.doc_encoder()) {
        eprintln!("warning: {msg}");
    }
    let queries = load_queries(&a.queries)?;
    let run = search_batch_with(&index, &model, &queries, a.k, EncodeOptions::new(a.max_len, a.batch_size))?;
    write_run(&a.output, &run, &a.tag)?;
    Ok(())
}

fn eval_cmd(a: EvalArgs, cfg: Option<&ExperimentConfig>) -> Result<()> {
    let depths = match (cfg, a.depths) {
        (Some(c), _) => c.depths.clone(),
        (None, Some(d)) => d,
        (None, None) => DEFAULT_DEPTHS.to_vec(),
    };
    let mode = if a.lenient { EvalMode::Lenient } else { EvalMode::Strict };
    let report = evaluate(&read_run(&a.run)?, &load_qrels(&a.qrels)?, &depths, mode)?;
    for (k, v) in &report.accuracy {
        println!("accuracy@{k}\t{:.4}", v);
    }
    println!("mrr@10\t{:.4}", report.mrr_at_10);
    if report.skipped > 0 {
        println!("skipped\t{}", report.skipped);
    }
    if let Some(o) = &a.output {
        std::fs::write(o, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs, cfg: Option<&ExperimentConfig>) -> Result<()> {
    let mut bc = cfg.map(|c| c.bench.clone()).unwrap_or_default();
    if cfg.is_none() {
        if let Some(v) = a.num_queries {
            bc.num_queries = v;
        }
        if let Some(v) = a.batch_size {
            bc.batch_size = v;
        }
        if let Some(v) = a.max_len {
            bc.max_len = v;
        }
        if let Some(v) = a.runs {
            bc.runs = v;
        }
        if let Some(v) = a.warmup_queries {
            bc.warmup_queries = v;
        }
        if a.dynamic_shapes {
            bc.pad_to_max_len = false;
        }
    }
    let w = load(&a.model)?;
    let texts: Vec<String> = load_queries(&a.queries)?.into_iter().map(|q| q.text).collect();
    let runs = run_benchmark(&mut WeightsEncoder::new(&w, &bc), &texts, &bc)?;
    let format = match a.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    let agg = emit_report(&runs, &a.output, format)?;
    println!("items/sec {:.3} (95% CI ±{:.3})", agg.average[0], agg.ci95[0]);
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    if a.stats {
        let w = load(a.model.as_deref().expect("clap requires --model"))?;
        let stats = sparsity_stats(&w);
        let json = serde_json::to_string_pretty(&stats)? + "\n";
        match &a.output {
            Some(o) => std::fs::write(o, &json)?,
            None => print!("{json}"),
        }
        println!("global sparsity {:.2}", stats.global_sparsity);
        return Ok(());
    }
    let Some(path) = &a.summary else {
        bail!("report needs --stats or --summary");
    };
    let spec: ReportSpec = serde_json::from_str(&std::fs::read_to_string(path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let summary = spec.summarize(path.parent().unwrap_or(Path::new(".")))?;
    match &a.output {
        Some(o) => std::fs::write(o, summary.to_csv())?,
        None => print!("{}", summary.to_csv()),
    }
    if let Some(f) = &a.figure {
        emit_figure_data(&summary.figure_points(), f)?;
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut sc = SynthConfig::default();
    if let Some(v) = a.seed {
        sc.seed = v;
    }
    if let Some(v) = a.num_docs {
        sc.num_docs = v;
    }
    if let Some(v) = a.num_train {
        sc.num_train = v;
    }
    if let Some(v) = a.num_eval {
        sc.num_eval = v;
    }
    let data = generate(&sc)?;
    let paths = write_dataset(&data, &a.output)?;
    println!("{}", serde_json::to_string_pretty(&paths)?);
    Ok(())
}

fn experiment_cmd(a: ExperimentArgs, cfg: Option<ExperimentConfig>) -> Result<()> {
    let Some(mut cfg) = cfg else {
        bail!("experiment needs --config");
    };
    if a.output_dir.is_some() {
        cfg.output_dir = a.output_dir;
    }
    let result = run_experiment(&cfg)?;
    print!("{}", result.summary.to_csv());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    match cli.command {
        Command::InitModel(a) => init_model(a),
        Command::Prune(a) => prune(a),
        Command::Train(a) => train_cmd(a, cfg.as_ref()),
        Command::Encode(a) => encode_cmd(a),
        Command::Index(a) => index_cmd(a),
        Command::Search(a) => search_cmd(a),
        Command::Eval(a) => eval_cmd(a, cfg.as_ref()),
        Command::Bench(a) => bench_cmd(a, cfg.as_ref()),
        Command::Report(a) => report_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Experiment(a) => experiment_cmd(a, cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
