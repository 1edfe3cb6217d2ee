//! Persistence, data loading, the synthetic dataset, the experiment runner
//! and the summary report.

pub mod data;
pub mod experiment;
pub mod modelfile;
pub mod summary;
pub mod synth;

pub use data::{load_corpus, load_qrels, load_queries, load_train};
pub use experiment::{run_experiment, DatasetSpec, ExperimentConfig, ExperimentResult, Variant};
pub use modelfile::{load_model, model_from_bytes, model_to_bytes, payload_fingerprint, save_model};
pub use summary::{ReportSpec, Summary, SummaryInput};
pub use synth::{bundled_fixture, generate, write_dataset, DatasetPaths, SynthConfig, SynthDataset};
