use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use expanet_core::baselines::{rocchio_expand, tfidf, train_linear, LinearConfig, SparseVector};
use expanet_core::text::{load_documents, load_labeled};
use expanet_core::train::split_validation;
use expanet_core::{
    EvalMetrics, InvertedIndex, LabelSet, LongDocument, RawText, ShortText, Vocabulary,
};

use crate::config::RunConfig;

pub struct Data {
    pub labels: LabelSet,
    pub index: InvertedIndex,
    pub train: Vec<ShortText>,
    pub validation: Vec<ShortText>,
    pub test: Option<Vec<ShortText>>,
}

pub fn build_index(
    docs: &[RawText],
    extra_texts: &[RawText],
    min_count: u64,
    doc_len: usize,
    mu: f64,
) -> Result<InvertedIndex> {
    let vocab = Vocabulary::build(docs, extra_texts, min_count)?;
    let encoded = docs
        .iter()
        .map(|d| LongDocument::encode(d, &vocab, doc_len))
        .collect();
    Ok(InvertedIndex::build(encoded, vocab, mu)?)
}

/// Loads every file the config names. Without an explicit validation file the
/// training texts are split with the configured fraction and seed.
pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let t = &cfg.training;
    let labels = LabelSet::load(&cfg.labels)?;
    let train_raw = load_labeled(&cfg.train, &labels)?;
    let val_raw = cfg.validation.as_ref().map(|p| load_labeled(p, &labels)).transpose()?;
    let test_raw = cfg.test.as_ref().map(|p| load_labeled(p, &labels)).transpose()?;
    for (name, set) in [("train", Some(&train_raw)), ("validation", val_raw.as_ref()), ("test", test_raw.as_ref())] {
        if let Some(set) = set {
            if let Some(bad) = set.iter().find(|r| r.label.is_none()) {
                bail!("{name} text {:?} has no label", bad.id);
            }
        }
    }

    let index = match (&cfg.index, &cfg.docs) {
        (Some(path), _) => {
            let index = InvertedIndex::load(path)?;
            if index.doc_len() != t.doc_len {
                bail!(
                    "index {} was built with doc_len {}, config says {}",
                    path.display(),
                    index.doc_len(),
                    t.doc_len
                );
            }
            index
        }
        (None, Some(docs)) => {
            let docs = load_documents(docs)?;
            let mut texts = train_raw.clone();
            texts.extend(val_raw.iter().flatten().cloned());
            texts.extend(test_raw.iter().flatten().cloned());
            build_index(&docs, &texts, cfg.min_count, t.doc_len, cfg.mu)?
        }
        (None, None) => bail!("config needs either \"docs\" or \"index\""),
    };

    let encode = |raw: &[RawText]| -> Vec<ShortText> {
        raw.iter()
            .map(|r| ShortText::encode(r, index.vocab(), t.short_len))
            .collect()
    };
    let all_train = encode(&train_raw);
    let (train, validation) = match &val_raw {
        Some(v) => (all_train, encode(v)),
        None => split_validation(&all_train, t.validation_fraction, t.seed),
    };
    let test = test_raw.as_deref().map(encode);
    Ok(Data {
        labels,
        train,
        validation,
        test,
        index,
    })
}

pub fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    write_file(dir, name, serde_json::to_string_pretty(value)? + "\n")
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineResult {
    pub method: String,
    pub lambda: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

pub const LAMBDA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

fn featurize(
    texts: &[ShortText],
    index: &InvertedIndex,
    doc_vectors: &[SparseVector],
    k: usize,
    lambda: f64,
) -> Result<Vec<SparseVector>> {
    texts
        .iter()
        .map(|st| {
            let q = tfidf(st.tokens(), index.vocab());
            if lambda == 0.0 {
                return Ok(q);
            }
            let hits = index.retrieve_topk(st.tokens(), k, None);
            if hits.is_empty() {
                return Ok(q);
            }
            let docs: Vec<SparseVector> = hits.iter().map(|h| doc_vectors[h.ordinal].clone()).collect();
            Ok(rocchio_expand(&q, &docs, lambda)?)
        })
        .collect()
}

fn fit_and_score(
    data: &Data,
    doc_vectors: &[SparseVector],
    k: usize,
    lambda: f64,
    eval: &[ShortText],
) -> Result<EvalMetrics> {
    let x_train = featurize(&data.train, &data.index, doc_vectors, k, lambda)?;
    let y_train: Vec<usize> = data.train.iter().map(|s| s.label.expect("labels checked at load")).collect();
    let model = train_linear(
        &x_train,
        &y_train,
        data.labels.len(),
        data.index.vocab().len(),
        &LinearConfig::default(),
    )?;
    let x_eval = featurize(eval, &data.index, doc_vectors, k, lambda)?;
    let truth: Vec<usize> = eval.iter().map(|s| s.label.expect("labels checked at load")).collect();
    let pred: Vec<usize> = x_eval.iter().map(|x| model.predict(x)).collect();
    Ok(EvalMetrics::compute(&truth, &pred, data.labels.len()))
}

/// TFIDF bag-of-words, optionally Rocchio-expanded with the top `k` retrieved
/// documents. For Rocchio, lambda is picked on the validation split and the
/// winner is scored on the test set.
pub fn run_baseline(data: &Data, method: &str, k: usize) -> Result<BaselineResult> {
    let test = data.test.as_deref().context("baselines need a test set")?;
    let doc_vectors: Vec<SparseVector> = data
        .index
        .docs()
        .iter()
        .map(|d| tfidf(&d.full_token_ids, data.index.vocab()))
        .collect();
    let lambda = match method {
        "bow" => 0.0,
        "rocchio" => {
            let mut best = (f64::NEG_INFINITY, 0.0);
            for &lambda in &LAMBDA_GRID {
                let m = fit_and_score(data, &doc_vectors, k, lambda, &data.validation)?;
                if m.micro_f1 > best.0 {
                    best = (m.micro_f1, lambda);
                }
            }
            best.1
        }
        other => bail!("unknown baseline method {other:?} (expected bow or rocchio)"),
    };
    let m = fit_and_score(data, &doc_vectors, k, lambda, test)?;
    Ok(BaselineResult {
        method: method.to_string(),
        lambda,
        micro_f1: m.micro_f1,
        macro_f1: m.macro_f1,
    })
}
