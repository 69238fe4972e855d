//! Seeded synthetic corpora: a tiny overfitting set and a sparse topic task
//! where short texts alone are under-determined but retrieved documents
//! carry the class signal.

use rand::Rng;

use crate::error::Result;
use crate::numerics::seeded_rng;
use crate::retrieval::{InvertedIndex, DEFAULT_MU};
use crate::text::{tokenize, LabelSet, LongDocument, RawText, ShortText, Vocabulary};

/// A labeled corpus in plain-text form, before tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCorpus {
    pub labels: Vec<String>,
    /// `(id, text)`
    pub docs: Vec<(String, String)>,
    /// `(id, text, label name)`
    pub texts: Vec<(String, String, String)>,
}

impl TextCorpus {
    pub fn docs_jsonl(&self) -> String {
        self.docs
            .iter()
            .map(|(id, text)| serde_json::json!({ "id": id, "text": text }).to_string() + "\n")
            .collect()
    }

    pub fn texts_jsonl(&self, range: std::ops::Range<usize>) -> String {
        self.texts[range]
            .iter()
            .map(|(id, text, label)| {
                serde_json::json!({ "id": id, "text": text, "label": label }).to_string() + "\n"
            })
            .collect()
    }

    pub fn labels_json(&self) -> String {
        serde_json::to_string(&self.labels).expect("label names serialize")
    }

    /// Tokenizes, builds the shared vocabulary and the index, and encodes the texts.
    pub fn build(&self, short_len: usize, doc_len: usize) -> Result<Encoded> {
        let labels = LabelSet::new(self.labels.clone())?;
        let docs: Vec<RawText> = self
            .docs
            .iter()
            .map(|(id, text)| RawText {
                id: id.clone(),
                tokens: tokenize(text),
                label: None,
            })
            .collect();
        let texts: Vec<RawText> = self
            .texts
            .iter()
            .map(|(id, text, label)| RawText {
                id: id.clone(),
                tokens: tokenize(text),
                label: labels.index(label),
            })
            .collect();
        let vocab = Vocabulary::build(&docs, &texts, 1)?;
        let encoded_docs = docs
            .iter()
            .map(|d| LongDocument::encode(d, &vocab, doc_len))
            .collect();
        let texts = texts
            .iter()
            .map(|t| ShortText::encode(t, &vocab, short_len))
            .collect();
        let index = InvertedIndex::build(encoded_docs, vocab, DEFAULT_MU)?;
        Ok(Encoded {
            labels,
            index,
            texts,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub labels: LabelSet,
    pub index: InvertedIndex,
    pub texts: Vec<ShortText>,
}

pub type ToyDataset = Encoded;

fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|c| format!("class{c}")).collect()
}

fn topic_token(class: usize, j: usize) -> String {
    format!("c{class}t{j}")
}

/// 32 short texts over 3 classes, each with a 12-document collection to read from.
pub fn toy_corpus(seed: u64) -> TextCorpus {
    let mut rng = seeded_rng(seed);
    let classes = 3;
    let pool = 6;
    let docs = (0..12)
        .map(|i| {
            let c = i % classes;
            let words: Vec<String> = (0..10)
                .map(|_| topic_token(c, rng.random_range(0..pool)))
                .chain(std::iter::once("common".to_string()))
                .collect();
            (format!("doc{i}"), words.join(" "))
        })
        .collect();
    let texts = (0..32)
        .map(|i| {
            let c = i % classes;
            let words: Vec<String> = (0..3)
                .map(|_| topic_token(c, rng.random_range(0..pool)))
                .collect();
            (format!("toy{i}"), words.join(" "), format!("class{c}"))
        })
        .collect();
    TextCorpus {
        labels: class_names(classes),
        docs,
        texts,
    }
}

pub fn toy_dataset(seed: u64) -> ToyDataset {
    toy_corpus(seed)
        .build(15, 100)
        .expect("toy corpus is well formed")
}

/// Shape of the sparse topic task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionTaskSpec {
    pub classes: usize,
    /// Topic tokens per class.
    pub pool_size: usize,
    pub short_texts: usize,
    pub tokens_per_text: usize,
    pub docs: usize,
    pub tokens_per_doc: usize,
    /// Leading texts used for training; the rest are the test set.
    pub train_texts: usize,
}

impl Default for ExpansionTaskSpec {
    fn default() -> Self {
        ExpansionTaskSpec {
            classes: 3,
            pool_size: 1500,
            short_texts: 600,
            tokens_per_text: 2,
            docs: 300,
            tokens_per_doc: 30,
            train_texts: 300,
        }
    }
}

/// Short texts of a few topic tokens each; class `c` draws from its own pool.
/// Documents are built the same way but longer, so a text's retrieved
/// documents share its class and cover tokens the training texts never used.
pub fn expansion_corpus(spec: &ExpansionTaskSpec, seed: u64) -> TextCorpus {
    let mut rng = seeded_rng(seed);
    let mut draw = |class: usize, n: usize| -> String {
        (0..n)
            .map(|_| topic_token(class, rng.random_range(0..spec.pool_size)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let docs = (0..spec.docs)
        .map(|i| (format!("doc{i}"), draw(i % spec.classes, spec.tokens_per_doc)))
        .collect();
    let texts = (0..spec.short_texts)
        .map(|i| {
            let c = i % spec.classes;
            (format!("q{i}"), draw(c, spec.tokens_per_text), format!("class{c}"))
        })
        .collect();
    TextCorpus {
        labels: class_names(spec.classes),
        docs,
        texts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_shapes() {
        let t = toy_dataset(0);
        assert_eq!(t.texts.len(), 32);
        assert_eq!(t.labels.len(), 3);
        assert!(t.texts.iter().all(|s| s.real_len == 3 && s.label.is_some()));
        assert_eq!(toy_corpus(0), toy_corpus(0));
    }

    #[test]
    fn expansion_shapes() {
        let spec = ExpansionTaskSpec::default();
        let c = expansion_corpus(&spec, 1);
        assert_eq!(c.texts.len(), 600);
        assert_eq!(c.docs.len(), 300);
        assert!(c.docs.iter().all(|(_, t)| tokenize(t).len() == 30));
        assert!(c.texts.iter().all(|(_, t, _)| tokenize(t).len() == 2));
        let jsonl = c.texts_jsonl(0..2);
        assert_eq!(jsonl.lines().count(), 2);
    }
}
