//! Tokenization, vocabulary construction and fixed-length encoding of short
//! texts and long documents, plus the JSONL loaders.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_SHORT_LEN: usize = 15;
pub const DEFAULT_DOC_LEN: usize = 100;

/// Lowercases and splits on maximal runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    doc_freq: Vec<u64>,
    collection_tf: Vec<u64>,
    collection_len: u64,
    num_docs: u64,
}

impl Vocabulary {
    /// Builds the vocabulary over both corpora. Collection statistics are
    /// computed over the long documents only; out-of-vocabulary occurrences are
    /// counted under UNK so that `collection_len` stays the true token count.
    pub fn build<D, S>(long_docs: &[D], short_texts: &[S], min_count: u64) -> Result<Self>
    where
        D: AsRef<[String]>,
        S: AsRef<[String]>,
    {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for tokens in long_docs
            .iter()
            .map(AsRef::as_ref)
            .chain(short_texts.iter().map(AsRef::as_ref))
        {
            for t in tokens {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut id_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        let mut vocab = Vocabulary {
            token_to_id,
            doc_freq: vec![0; id_to_token.len()],
            collection_tf: vec![0; id_to_token.len()],
            id_to_token,
            collection_len: 0,
            num_docs: long_docs.len() as u64,
        };
        for tokens in long_docs {
            let mut seen = HashSet::new();
            for t in tokens.as_ref() {
                let id = vocab.id_or_unk(t) as usize;
                vocab.collection_tf[id] += 1;
                vocab.collection_len += 1;
                if seen.insert(id) {
                    vocab.doc_freq[id] += 1;
                }
            }
        }
        Ok(vocab)
    }

    /// Reassembles a vocabulary from persisted parts, re-checking invariants.
    pub fn from_parts(
        id_to_token: Vec<String>,
        doc_freq: Vec<u64>,
        collection_tf: Vec<u64>,
        num_docs: u64,
    ) -> Result<Self> {
        let v = id_to_token.len();
        if v <= 2 || doc_freq.len() != v || collection_tf.len() != v {
            return Err(Error::Format("inconsistent vocabulary sections".into()));
        }
        if id_to_token[PAD as usize] != PAD_TOKEN || id_to_token[UNK as usize] != UNK_TOKEN {
            return Err(Error::Format("reserved tokens missing".into()));
        }
        if doc_freq.iter().any(|&df| df > num_docs) {
            return Err(Error::Format("document frequency exceeds document count".into()));
        }
        let token_to_id: HashMap<String, u32> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        if token_to_id.len() != v {
            return Err(Error::Format("duplicate tokens in vocabulary".into()));
        }
        let collection_len = collection_tf.iter().sum();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            doc_freq,
            collection_tf,
            collection_len,
            num_docs,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn doc_freq(&self, id: u32) -> u64 {
        self.doc_freq[id as usize]
    }

    pub fn doc_freqs(&self) -> &[u64] {
        &self.doc_freq
    }

    pub fn collection_tf(&self, id: u32) -> u64 {
        self.collection_tf[id as usize]
    }

    pub fn collection_tfs(&self) -> &[u64] {
        &self.collection_tf
    }

    pub fn collection_len(&self) -> u64 {
        self.collection_len
    }

    pub fn num_docs(&self) -> u64 {
        self.num_docs
    }

    /// Stable fingerprint of the token-to-id mapping.
    pub fn hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for t in &self.id_to_token {
            hasher.update((t.len() as u64).to_le_bytes());
            hasher.update(t.as_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
    }

    /// Maps the first `max_len` tokens to ids and right-pads with PAD.
    /// Returns the padded ids and the number of real tokens.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> (Vec<u32>, usize) {
        let real_len = tokens.len().min(max_len);
        let mut ids: Vec<u32> = tokens[..real_len]
            .iter()
            .map(|t| self.id_or_unk(t.as_ref()))
            .collect();
        ids.resize(max_len, PAD);
        (ids, real_len)
    }

    pub fn encode_all<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// Inverse of `encode` for in-vocabulary tokens; PAD is dropped.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != PAD)
            .filter_map(|&id| self.token(id).map(str::to_string))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidLabels(format!(
                "need at least 2 classes, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidLabels(format!("duplicate label {n:?}")));
            }
        }
        Ok(LabelSet { names })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let names: Vec<String> = serde_json::from_str(&raw).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        LabelSet::new(names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A tokenized text as read from disk, before encoding against a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct RawText {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: Option<usize>,
}

impl AsRef<[String]> for RawText {
    fn as_ref(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortText {
    pub id: String,
    pub token_ids: Vec<u32>,
    pub real_len: usize,
    pub label: Option<usize>,
}

impl ShortText {
    pub fn encode(raw: &RawText, vocab: &Vocabulary, max_len: usize) -> Self {
        let (token_ids, real_len) = vocab.encode(&raw.tokens, max_len);
        ShortText {
            id: raw.id.clone(),
            token_ids,
            real_len,
            label: raw.label,
        }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.token_ids[..self.real_len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongDocument {
    pub id: String,
    pub token_ids: Vec<u32>,
    pub real_len: usize,
    pub full_token_ids: Vec<u32>,
}

impl LongDocument {
    pub fn encode(raw: &RawText, vocab: &Vocabulary, max_len: usize) -> Self {
        Self::from_full(raw.id.clone(), vocab.encode_all(&raw.tokens), max_len)
    }

    pub fn from_full(id: String, full_token_ids: Vec<u32>, max_len: usize) -> Self {
        let real_len = full_token_ids.len().min(max_len);
        let mut token_ids = full_token_ids[..real_len].to_vec();
        token_ids.resize(max_len, PAD);
        LongDocument {
            id,
            token_ids,
            real_len,
            full_token_ids,
        }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.token_ids[..self.real_len]
    }
}

#[derive(Deserialize)]
struct JsonLine {
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
}

fn read_jsonl(path: &Path) -> Result<Vec<(usize, JsonLine)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        out.push((lineno, parsed));
    }
    Ok(out)
}

fn parse_texts(
    path: &Path,
    labels: Option<&LabelSet>,
    kind: &str,
) -> Result<Vec<RawText>> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in read_jsonl(path)? {
        let id = rec.id.ok_or_else(|| fail(line, "missing \"id\" field".into()))?;
        let text = rec
            .text
            .ok_or_else(|| fail(line, "missing \"text\" field".into()))?;
        if !seen.insert(id.clone()) {
            return Err(fail(line, format!("duplicate id {id:?}")));
        }
        let tokens = tokenize(&text);
        if tokens.is_empty() {
            return Err(fail(line, format!("{kind} {id:?} has no tokens")));
        }
        let label = match (labels, rec.label) {
            (Some(set), Some(name)) => Some(
                set.index(&name)
                    .ok_or_else(|| fail(line, format!("unknown label {name:?}")))?,
            ),
            _ => None,
        };
        out.push(RawText { id, tokens, label });
    }
    Ok(out)
}

/// Reads short texts, one JSON object per line, resolving labels against `labels`.
pub fn load_labeled(path: impl AsRef<Path>, labels: &LabelSet) -> Result<Vec<RawText>> {
    parse_texts(path.as_ref(), Some(labels), "short text")
}

/// Reads unlabeled long documents, one JSON object per line.
pub fn load_documents(path: impl AsRef<Path>) -> Result<Vec<RawText>> {
    parse_texts(path.as_ref(), None, "document")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Sequestration in Fiscal 2016"),
            vec!["sequestration", "in", "fiscal", "2016"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("ROFL!! #movie"), vec!["rofl", "movie"]);
    }

    #[test]
    fn build_counts_by_hand() {
        let docs = vec![toks("a a b"), toks("b c")];
        let none: Vec<Vec<String>> = vec![];
        let v = Vocabulary::build(&docs, &none, 1).unwrap();
        assert_eq!(v.len(), 5);
        let id = |t| v.id(t).unwrap();
        assert_eq!(v.collection_tf(id("a")), 2);
        assert_eq!(v.collection_tf(id("b")), 2);
        assert_eq!(v.collection_tf(id("c")), 1);
        assert_eq!(v.collection_len(), 5);
        assert_eq!(v.doc_freq(id("b")), 2);
        assert_eq!(v.doc_freq(id("a")), 1);

        let v2 = Vocabulary::build(&docs, &none, 2).unwrap();
        assert_eq!(v2.len(), 4);
        assert!(v2.id("a").is_some() && v2.id("b").is_some());
        assert_eq!(v2.id_or_unk("c"), UNK);
        assert_eq!(v2.collection_len(), 5);
    }

    #[test]
    fn build_rejects_empty() {
        let none: Vec<Vec<String>> = vec![];
        assert!(matches!(
            Vocabulary::build(&none, &none, 1),
            Err(Error::EmptyVocabulary)
        ));
        assert!(Vocabulary::build(&[toks("a")], &none, 0).is_err());
    }

    #[test]
    fn encode_pads_truncates_and_unks() {
        let docs = vec![toks("x y z")];
        let none: Vec<Vec<String>> = vec![];
        let v = Vocabulary::build(&docs, &none, 1).unwrap();

        let (ids, n) = v.encode(&toks("x y z"), 15);
        assert_eq!((ids.len(), n), (15, 3));
        assert!(ids[3..].iter().all(|&i| i == PAD));

        let long: Vec<String> = (0..20).map(|i| ["x", "y", "z"][i % 3].to_string()).collect();
        let (ids, n) = v.encode(&long, 15);
        assert_eq!((ids.len(), n), (15, 15));
        assert_eq!(v.decode(&ids), long[..15].to_vec());

        let (ids, _) = v.encode(&toks("x nope"), 4);
        assert_eq!(ids[1], UNK);
    }

    #[test]
    fn label_set_validation() {
        assert!(LabelSet::new(vec!["a".into()]).is_err());
        assert!(LabelSet::new(vec!["a".into(), "a".into()]).is_err());
        let l = LabelSet::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(l.index("b"), Some(1));
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_labeled_resolves_labels() {
        let labels = LabelSet::new(
            ["A", "B", "C", "D", "E", "Theory"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        let f = write_tmp("{\"id\":\"t1\",\"text\":\"graph cuts\",\"label\":\"Theory\"}\n");
        let texts = load_labeled(f.path(), &labels).unwrap();
        assert_eq!(texts[0].label, Some(5));
        assert_eq!(texts[0].tokens, vec!["graph", "cuts"]);
    }

    #[test]
    fn load_errors_name_the_line() {
        let labels = LabelSet::new(vec!["a".into(), "b".into()]).unwrap();
        let f = write_tmp("{\"id\":\"t1\",\"text\":\"ok\",\"label\":\"a\"}\n{\"id\":\"t2\"}\n");
        match load_labeled(f.path(), &labels) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("text"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let f = write_tmp("{\"id\":\"t1\",\"text\":\"ok\",\"label\":\"zzz\"}\n");
        assert!(matches!(load_labeled(f.path(), &labels), Err(Error::Parse { line: 1, .. })));

        let f = write_tmp("{\"id\":\"d\",\"text\":\"x\"}\n{\"id\":\"d\",\"text\":\"y\"}\n");
        assert!(matches!(load_documents(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn load_documents_has_no_label() {
        let f = write_tmp("{\"id\":\"d1\",\"text\":\"Some long text here\"}\n");
        let docs = load_documents(f.path()).unwrap();
        assert_eq!(docs[0].label, None);
        assert_eq!(docs[0].tokens.len(), 4);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;
        use std::collections::HashMap;

        fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
            prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g"]), 0..12)
                    .prop_map(|v| v.into_iter().map(String::from).collect()),
                1..10,
            )
        }

        proptest! {
            #[test]
            fn statistics_match_naive_counts(docs in corpus(), shorts in corpus(), min_count in 1u64..3) {
                let Ok(v) = Vocabulary::build(&docs, &shorts, min_count) else {
                    return Ok(());
                };
                for (i, t) in v.tokens().iter().enumerate() {
                    prop_assert_eq!(v.id(t), Some(i as u32));
                }
                prop_assert_eq!(v.collection_len(), v.collection_tfs().iter().sum::<u64>());
                prop_assert_eq!(v.collection_len() as usize, docs.iter().map(Vec::len).sum::<usize>());

                let mut naive_tf: HashMap<u32, u64> = HashMap::new();
                let mut naive_df: HashMap<u32, u64> = HashMap::new();
                for d in &docs {
                    let mut seen = std::collections::HashSet::new();
                    for t in d {
                        let id = v.id_or_unk(t);
                        *naive_tf.entry(id).or_default() += 1;
                        if seen.insert(id) {
                            *naive_df.entry(id).or_default() += 1;
                        }
                    }
                }
                for id in 0..v.len() as u32 {
                    prop_assert_eq!(v.collection_tf(id), naive_tf.get(&id).copied().unwrap_or(0));
                    prop_assert_eq!(v.doc_freq(id), naive_df.get(&id).copied().unwrap_or(0));
                    prop_assert!(v.doc_freq(id) <= docs.len() as u64);
                }
            }

            #[test]
            fn encode_length_and_decode(tokens in prop::collection::vec(prop::sample::select(vec!["a", "b", "zz"]), 0..30), max_len in 1usize..20) {
                let docs = vec![vec!["a".to_string(), "b".to_string()]];
                let none: Vec<Vec<String>> = vec![];
                let v = Vocabulary::build(&docs, &none, 1).unwrap();
                let (ids, n) = v.encode(&tokens, max_len);
                prop_assert_eq!(ids.len(), max_len);
                prop_assert_eq!(n, tokens.len().min(max_len));
                prop_assert!(ids[n..].iter().all(|&i| i == PAD));
                let expected: Vec<String> = tokens[..n]
                    .iter()
                    .map(|t| if *t == "zz" { UNK_TOKEN.to_string() } else { t.to_string() })
                    .collect();
                prop_assert_eq!(v.decode(&ids), expected);
            }
        }
    }
}
