//! Inverted index over the long-document collection, Dirichlet-smoothed
//! query-likelihood ranking, and fixed-size memory assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::text::{LongDocument, Vocabulary, PAD, UNK};

pub const DEFAULT_MU: f64 = 2000.0;
pub const DEFAULT_TOP_K: usize = 20;

const INDEX_MAGIC: &[u8; 8] = b"EXPNIDX\0";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDoc {
    pub ordinal: usize,
    pub score: f64,
}

/// Postings and document lengths over the full (untruncated) document text,
/// together with the vocabulary and documents they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    vocab: Vocabulary,
    docs: Vec<LongDocument>,
    postings: Vec<Vec<Posting>>,
    doc_lengths: Vec<u64>,
    mu: f64,
    doc_len: usize,
}

impl InvertedIndex {
    pub fn build(docs: Vec<LongDocument>, vocab: Vocabulary, mu: f64) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCollection);
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
        }
        let doc_len = docs[0].token_ids.len();
        let mut postings = vec![Vec::new(); vocab.len()];
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (ordinal, doc) in docs.iter().enumerate() {
            if doc.token_ids.len() != doc_len {
                return Err(Error::Shape("documents encoded with different lengths".into()));
            }
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for &t in &doc.full_token_ids {
                if t as usize >= vocab.len() {
                    return Err(Error::Shape(format!("token id {t} outside vocabulary")));
                }
                *counts.entry(t).or_insert(0) += 1;
            }
            for (t, tf) in counts {
                postings[t as usize].push(Posting {
                    doc: ordinal as u32,
                    tf,
                });
            }
            doc_lengths.push(doc.full_token_ids.len() as u64);
        }
        Ok(InvertedIndex {
            vocab,
            docs,
            postings,
            doc_lengths,
            mu,
            doc_len,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn docs(&self) -> &[LongDocument] {
        &self.docs
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Truncation length the documents were encoded with.
    pub fn doc_len(&self) -> usize {
        self.doc_len
    }

    pub fn postings(&self, token: u32) -> &[Posting] {
        &self.postings[token as usize]
    }

    pub fn doc_length(&self, ordinal: usize) -> u64 {
        self.doc_lengths[ordinal]
    }

    pub fn ordinal_of(&self, doc_id: &str) -> Option<usize> {
        self.docs.iter().position(|d| d.id == doc_id)
    }

    /// Distinct scorable query terms with their query counts, ascending by id.
    /// PAD, UNK and tokens unseen in the collection are dropped.
    pub fn query_terms(&self, query: &[u32]) -> Vec<(u32, u32)> {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for &t in query {
            if t == PAD || t == UNK || t as usize >= self.vocab.len() {
                continue;
            }
            if self.vocab.collection_tf(t) == 0 {
                continue;
            }
            *counts.entry(t).or_insert(0) += 1;
        }
        counts.into_iter().collect()
    }

    fn term_frequency(&self, token: u32, ordinal: usize) -> u32 {
        let list = &self.postings[token as usize];
        list.binary_search_by_key(&(ordinal as u32), |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    /// Log query likelihood of `query` under the Dirichlet-smoothed language
    /// model of document `ordinal`.
    pub fn score(&self, query: &[u32], ordinal: usize) -> f64 {
        self.score_terms(&self.query_terms(query), ordinal)
    }

    fn score_terms(&self, terms: &[(u32, u32)], ordinal: usize) -> f64 {
        let collection_len = self.vocab.collection_len() as f64;
        let denom = self.doc_lengths[ordinal] as f64 + self.mu;
        terms
            .iter()
            .map(|&(t, qtf)| {
                let p_collection = self.vocab.collection_tf(t) as f64 / collection_len;
                let tf = self.term_frequency(t, ordinal) as f64;
                qtf as f64 * ((tf + self.mu * p_collection) / denom).ln()
            })
            .sum()
    }

    /// Documents sharing at least one term with the query, best first; ties go
    /// to the lower ordinal. `exclude` drops one document (self-retrieval).
    pub fn retrieve_topk(&self, query: &[u32], k: usize, exclude: Option<usize>) -> Vec<ScoredDoc> {
        let terms = self.query_terms(query);
        let mut candidates: Vec<usize> = terms
            .iter()
            .flat_map(|&(t, _)| self.postings[t as usize].iter().map(|p| p.doc as usize))
            .filter(|&d| Some(d) != exclude)
            .collect();
        candidates.sort_unstable();
        candidates.dedup();

        let mut scored: Vec<ScoredDoc> = candidates
            .into_iter()
            .map(|ordinal| ScoredDoc {
                ordinal,
                score: self.score_terms(&terms, ordinal),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.ordinal.cmp(&b.ordinal)));
        scored.truncate(k);
        scored
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        w.u64(self.vocab.hash());
        w.f64(self.mu);
        w.u64(self.doc_len as u64);

        w.u64(self.vocab.num_docs());
        w.u64(self.vocab.len() as u64);
        for (i, t) in self.vocab.tokens().iter().enumerate() {
            w.str(t);
            w.u64(self.vocab.doc_freq(i as u32));
            w.u64(self.vocab.collection_tf(i as u32));
        }

        w.u64(self.docs.len() as u64);
        for d in &self.docs {
            w.str(&d.id);
            w.u64(d.full_token_ids.len() as u64);
            for &t in &d.full_token_ids {
                w.u32(t);
            }
        }

        for list in &self.postings {
            w.u64(list.len() as u64);
            for p in list {
                w.u32(p.doc);
                w.u32(p.tf);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let vocab_hash = r.u64()?;
        let mu = r.f64()?;
        let doc_len = r.u64()? as usize;

        let num_docs = r.u64()?;
        let v = r.len(24)?;
        let mut tokens = Vec::with_capacity(v);
        let mut doc_freq = Vec::with_capacity(v);
        let mut collection_tf = Vec::with_capacity(v);
        for _ in 0..v {
            tokens.push(r.str()?);
            doc_freq.push(r.u64()?);
            collection_tf.push(r.u64()?);
        }
        let vocab = Vocabulary::from_parts(tokens, doc_freq, collection_tf, num_docs)?;
        if vocab.hash() != vocab_hash {
            return Err(Error::VocabularyMismatch {
                expected: vocab_hash,
                found: vocab.hash(),
            });
        }

        let n = r.len(16)?;
        let mut docs = Vec::with_capacity(n);
        for _ in 0..n {
            let id = r.str()?;
            let len = r.len(4)?;
            let full = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            docs.push(LongDocument::from_full(id, full, doc_len));
        }

        let mut postings = Vec::with_capacity(v);
        for _ in 0..v {
            let len = r.len(8)?;
            let list = (0..len)
                .map(|_| Ok(Posting { doc: r.u32()?, tf: r.u32()? }))
                .collect::<Result<Vec<_>>>()?;
            postings.push(list);
        }
        r.finish()?;

        let index = InvertedIndex::build(docs, vocab, mu)?;
        if index.postings != postings {
            return Err(Error::Format("postings disagree with stored documents".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// The K documents a short text reads from, in retrieval-rank order.
/// `None` marks an EMPTY slot (no document shared a term with the query).
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySet {
    pub doc_ordinals: Vec<Option<usize>>,
    pub scores: Vec<f64>,
    /// How many slots came straight from retrieval before duplication.
    pub retrieved: usize,
}

impl MemorySet {
    pub fn len(&self) -> usize {
        self.doc_ordinals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ordinals.is_empty()
    }
}

/// Pads or truncates ranked results to exactly `k` slots. Short result lists
/// are topped up with uniform draws (with replacement) from themselves.
pub fn assemble_memory<R: Rng + ?Sized>(results: &[ScoredDoc], k: usize, rng: &mut R) -> MemorySet {
    let take = results.len().min(k);
    let mut doc_ordinals: Vec<Option<usize>> =
        results[..take].iter().map(|r| Some(r.ordinal)).collect();
    let mut scores: Vec<f64> = results[..take].iter().map(|r| r.score).collect();
    if results.is_empty() {
        doc_ordinals.resize(k, None);
        scores.resize(k, f64::NEG_INFINITY);
    } else {
        while doc_ordinals.len() < k {
            let pick = &results[rng.random_range(0..results.len())];
            doc_ordinals.push(Some(pick.ordinal));
            scores.push(pick.score);
        }
    }
    MemorySet {
        doc_ordinals,
        scores,
        retrieved: take,
    }
}
