//! Seeded synthetic retrieval dataset.
//!
//! Documents are drawn from topic clusters: each mixes words of its topic with
//! shared background words and a few words unique to the document. A query
//! paraphrases one document by sampling its unique and topic words into a
//! question template; its qrel points at that document. Training queries and
//! evaluation queries come from disjoint documents.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biencoder::TrainExample;
use crate::error::{Error, Result};
use crate::evalmetrics::Qrels;
use crate::retrieval::{Corpus, Document, Query};

use super::data::{write_corpus, write_qrels, write_queries, write_train};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_train: usize,
    pub num_eval: usize,
    pub num_topics: usize,
    pub words_per_topic: usize,
    pub background_words: usize,
    pub unique_words_per_doc: usize,
    pub doc_len: usize,
    pub query_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_docs: 1000,
            num_train: 200,
            num_eval: 100,
            num_topics: 20,
            words_per_topic: 30,
            background_words: 200,
            unique_words_per_doc: 3,
            doc_len: 40,
            query_len: 6,
            seed: 13,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_docs == 0 || self.num_topics == 0 || self.words_per_topic == 0 || self.background_words == 0 {
            return Err(Error::invalid("synthetic dataset needs documents, topics and words"));
        }
        if self.num_train + self.num_eval > self.num_docs {
            return Err(Error::invalid(format!(
                "{} train + {} eval queries need distinct source documents, only {} exist",
                self.num_train, self.num_eval, self.num_docs
            )));
        }
        if self.num_topics > self.num_docs {
            return Err(Error::invalid("more topics than documents"));
        }
        if self.doc_len < self.unique_words_per_doc + 1 || self.query_len == 0 {
            return Err(Error::invalid("doc_len must exceed unique_words_per_doc and query_len be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub corpus: Corpus,
    pub train: Vec<TrainExample>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const TEMPLATES: [(&str, &str); 4] = [
    ("what is", "about"),
    ("find the", "text"),
    ("where does", "appear"),
    ("which passage covers", "and more"),
];

struct Lexicon {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Lexicon {
    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=4);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).expect("nonempty"));
                w.push_str(VOWELS.choose(&mut self.rng).expect("nonempty"));
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

struct Doc {
    topic: usize,
    unique: Vec<String>,
    topic_words: Vec<String>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut lex = Lexicon {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        used: BTreeSet::new(),
    };
    let background = lex.words(config.background_words);
    let topics: Vec<Vec<String>> = (0..config.num_topics).map(|_| lex.words(config.words_per_topic)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let mut docs = Vec::with_capacity(config.num_docs);
    let mut meta = Vec::with_capacity(config.num_docs);
    for i in 0..config.num_docs {
        let topic = i % config.num_topics;
        let unique = lex.words(config.unique_words_per_doc);
        let mut words: Vec<String> = unique.clone();
        let mut topic_words = Vec::new();
        while words.len() < config.doc_len {
            if rng.random_bool(0.6) {
                let w = topics[topic].choose(&mut rng).expect("nonempty").clone();
                topic_words.push(w.clone());
                words.push(w);
            } else {
                words.push(background.choose(&mut rng).expect("nonempty").clone());
            }
        }
        words.shuffle(&mut rng);
        docs.push(Document {
            doc_id: format!("D{i:04}"),
            text: words.join(" "),
        });
        meta.push(Doc { topic, unique, topic_words });
    }

    let mut order: Vec<usize> = (0..config.num_docs).collect();
    order.shuffle(&mut rng);
    let paraphrase = |d: &Doc, rng: &mut ChaCha8Rng| -> String {
        let (lead, tail) = TEMPLATES.choose(rng).expect("nonempty");
        let mut picked: Vec<&String> = d.unique.iter().collect();
        picked.shuffle(rng);
        picked.truncate(config.query_len.div_ceil(2));
        while picked.len() < config.query_len {
            match d.topic_words.choose(rng) {
                Some(w) if rng.random_bool(0.7) => picked.push(w),
                _ => picked.push(background.choose(rng).expect("nonempty")),
            }
        }
        picked.shuffle(rng);
        let body: Vec<&str> = picked.iter().map(|s| s.as_str()).collect();
        format!("{lead} {} {tail}", body.join(" "))
    };

    let mut train = Vec::with_capacity(config.num_train);
    for &i in &order[..config.num_train] {
        let d = &meta[i];
        let same_topic: Vec<usize> = (0..config.num_docs).filter(|&j| j != i && meta[j].topic == d.topic).collect();
        let other_topic = loop {
            let j = rng.random_range(0..config.num_docs);
            if meta[j].topic != d.topic || config.num_topics == 1 {
                break j;
            }
        };
        let mut negatives = Vec::new();
        if let Some(&j) = same_topic.choose(&mut rng) {
            negatives.push(docs[j].text.clone());
        }
        negatives.push(docs[other_topic].text.clone());
        train.push(TrainExample {
            query: paraphrase(d, &mut rng),
            positive: docs[i].text.clone(),
            negatives,
        });
    }

    let mut queries = Vec::with_capacity(config.num_eval);
    let mut qrels = Qrels::new();
    for (n, &i) in order[config.num_train..config.num_train + config.num_eval].iter().enumerate() {
        let qid = format!("Q{n:03}");
        queries.push(Query {
            query_id: qid.clone(),
            text: paraphrase(&meta[i], &mut rng),
        });
        qrels.insert(qid, docs[i].doc_id.clone());
    }

    Ok(SynthDataset {
        corpus: Corpus::new(docs)?,
        train,
        queries,
        qrels,
    })
}

/// File locations of a dataset written by [`write_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub train: PathBuf,
}

impl DatasetPaths {
    /// `corpus.jsonl`, `queries.tsv`, `qrels.trec`, `train.jsonl` under `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            corpus: dir.join("corpus.jsonl"),
            queries: dir.join("queries.tsv"),
            qrels: dir.join("qrels.trec"),
            train: dir.join("train.jsonl"),
        }
    }
}

pub fn write_dataset(data: &SynthDataset, dir: impl AsRef<Path>) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir.as_ref())?;
    let paths = DatasetPaths::in_dir(dir);
    write_corpus(&paths.corpus, &data.corpus)?;
    write_queries(&paths.queries, &data.queries)?;
    write_qrels(&paths.qrels, &data.qrels)?;
    write_train(&paths.train, &data.train)?;
    Ok(paths)
}

/// The copy of the default dataset shipped with the crate.
pub fn bundled_fixture() -> DatasetPaths {
    DatasetPaths::in_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("synth"))
}
