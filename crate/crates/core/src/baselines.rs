//! Bag-of-words baselines: TFIDF vectors, Rocchio pseudo-relevance-feedback
//! expansion, and a multinomial logistic classifier over sparse features.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::argmax;
use crate::numerics::{softmax, AdamConfig, AdamState};
use crate::text::{Vocabulary, PAD, UNK};

/// Sorted `(token_id, weight)` pairs with no stored zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn from_map(map: BTreeMap<u32, f64>) -> Self {
        SparseVector {
            entries: map.into_iter().filter(|&(_, w)| w != 0.0).collect(),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut map = BTreeMap::new();
        for (id, w) in pairs {
            *map.entry(id).or_insert(0.0) += w;
        }
        Self::from_map(map)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> f64 {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for &(i, w) in &self.entries {
            out[i as usize] = w;
        }
        out
    }
}

/// `tf * ln((N + 1) / (df + 1))`, L2-normalized. PAD and UNK are dropped.
pub fn tfidf(tokens: &[u32], vocab: &Vocabulary) -> SparseVector {
    let n = vocab.num_docs() as f64;
    let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
    for &t in tokens {
        if t == PAD || t == UNK || t as usize >= vocab.len() {
            continue;
        }
        *tf.entry(t).or_insert(0.0) += 1.0;
    }
    for (&t, w) in tf.iter_mut() {
        *w *= ((n + 1.0) / (vocab.doc_freq(t) as f64 + 1.0)).ln();
    }
    let v = SparseVector::from_map(tf);
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    SparseVector {
        entries: v.entries.into_iter().map(|(i, w)| (i, w / norm)).collect(),
    }
}

/// `(1 - lambda) q + (lambda / K) sum_i d_i`
pub fn rocchio_expand(q: &SparseVector, docs: &[SparseVector], lambda: f64) -> Result<SparseVector> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("rocchio expansion needs at least one document".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    let doc_weight = lambda / docs.len() as f64;
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    for &(i, w) in &q.entries {
        *acc.entry(i).or_insert(0.0) += (1.0 - lambda) * w;
    }
    for d in docs {
        for &(i, w) in &d.entries {
            *acc.entry(i).or_insert(0.0) += doc_weight * w;
        }
    }
    Ok(SparseVector::from_map(acc))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub grad_tol: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            l2: 1e-4,
            learning_rate: 1e-2,
            max_epochs: 1000,
            grad_tol: 1e-5,
        }
    }
}

/// Multinomial logistic regression: `weights` is C x F row-major, one bias per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub num_classes: usize,
    pub num_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub epochs_run: usize,
}

impl LinearModel {
    pub fn logits(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * self.num_features..(c + 1) * self.num_features];
                self.bias[c]
                    + x.entries()
                        .iter()
                        .filter(|&&(i, _)| (i as usize) < self.num_features)
                        .map(|&(i, w)| row[i as usize] * w)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &SparseVector) -> usize {
        argmax(&self.logits(x))
    }
}

/// Full-batch Adam on mean cross-entropy plus `l2/2 * |W|^2` (bias unpenalized),
/// until the gradient norm drops below `grad_tol` or `max_epochs` is reached.
pub fn train_linear(
    features: &[SparseVector],
    labels: &[usize],
    num_classes: usize,
    num_features: usize,
    config: &LinearConfig,
) -> Result<LinearModel> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InvalidArgument("features and labels must be non-empty and aligned".into()));
    }
    if labels.iter().any(|&l| l >= num_classes) {
        return Err(Error::InvalidArgument("label outside class range".into()));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::InvalidArgument("training data contains a single class".into()));
    }

    let mut model = LinearModel {
        num_classes,
        num_features,
        weights: vec![0.0; num_classes * num_features],
        bias: vec![0.0; num_classes],
        epochs_run: 0,
    };
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &[model.weights.len(), model.bias.len()],
    );
    let n = features.len() as f64;
    for epoch in 0..config.max_epochs {
        let mut gw: Vec<f64> = model.weights.iter().map(|w| config.l2 * w).collect();
        let mut gb = vec![0.0; num_classes];
        for (x, &y) in features.iter().zip(labels) {
            let mut delta = softmax(&model.logits(x));
            delta[y] -= 1.0;
            for (c, &dc) in delta.iter().enumerate() {
                gb[c] += dc / n;
                let row = &mut gw[c * num_features..(c + 1) * num_features];
                for &(i, w) in x.entries() {
                    if (i as usize) < num_features {
                        row[i as usize] += dc * w / n;
                    }
                }
            }
        }
        let norm = gw.iter().chain(&gb).map(|g| g * g).sum::<f64>().sqrt();
        model.epochs_run = epoch;
        if norm < config.grad_tol {
            break;
        }
        adam.step(&mut [&mut model.weights, &mut model.bias], &[&gw, &gb])?;
        model.epochs_run = epoch + 1;
    }
    Ok(model)
}
