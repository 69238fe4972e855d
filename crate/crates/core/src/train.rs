//! Mini-batch training, evaluation, hop and memory-size sweeps, and attention
//! export.
//!
//! Every random choice is drawn from a generator derived from the config seed
//! and a fixed stream id, so two runs with the same inputs are bit-identical.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalMetrics;
use crate::model::{
    backward_into, forward, loss, AttentionMode, ModelInput, ModelParameters, DEFAULT_DIM,
    DEFAULT_INIT_STD, DEFAULT_TAU,
};
use crate::numerics::{derive_seed, seeded_rng, AdamConfig, AdamState};
use crate::retrieval::{assemble_memory, InvertedIndex, MemorySet, DEFAULT_TOP_K};
use crate::text::{ShortText, DEFAULT_DOC_LEN, DEFAULT_SHORT_LEN};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_MEMORY: u64 = 4;
const STREAM_SPLIT: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Soft,
    Hard,
}

fn default_dim() -> usize {
    DEFAULT_DIM
}
fn default_memory_size() -> usize {
    DEFAULT_TOP_K
}
fn default_hops() -> usize {
    1
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_lr() -> f64 {
    1e-2
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    50
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_init_std() -> f64 {
    DEFAULT_INIT_STD
}
fn default_short_len() -> usize {
    DEFAULT_SHORT_LEN
}
fn default_doc_len() -> usize {
    DEFAULT_DOC_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_memory_size")]
    pub memory_size: usize,
    #[serde(default = "default_hops")]
    pub hops: usize,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_short_len")]
    pub short_len: usize,
    #[serde(default = "default_doc_len")]
    pub doc_len: usize,
    /// Drop a query's own id from its retrieval results (memory built from the
    /// training texts themselves).
    #[serde(default)]
    pub exclude_self: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: default_dim(),
            memory_size: default_memory_size(),
            hops: default_hops(),
            mode: ModeName::Soft,
            tau: default_tau(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            validation_fraction: default_val_fraction(),
            init_std: default_init_std(),
            short_len: default_short_len(),
            doc_len: default_doc_len(),
            exclude_self: false,
        }
    }
}

impl TrainConfig {
    pub fn attention(&self) -> AttentionMode {
        match self.mode {
            ModeName::Soft => AttentionMode::Soft,
            ModeName::Hard => AttentionMode::Hard { tau: self.tau },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.memory_size == 0 {
            return bad("memory_size must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.init_std > 0.0) {
            return bad("learning_rate and init_std must be positive".into());
        }
        if self.short_len == 0 || self.doc_len == 0 {
            return bad("truncation lengths must be at least 1".into());
        }
        self.attention().validate()
    }
}

/// One short text with its assembled memory, ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: ModelInput,
    pub label: Option<usize>,
    pub memory: MemorySet,
}

/// Retrieves and assembles a K-slot memory for every text. The duplication
/// generator of text `i` is derived from `(seed, i)`.
pub fn build_examples(
    texts: &[ShortText],
    index: &InvertedIndex,
    memory_size: usize,
    seed: u64,
    exclude_self: bool,
) -> Vec<Example> {
    let base = derive_seed(seed, STREAM_MEMORY);
    texts
        .par_iter()
        .enumerate()
        .map(|(i, st)| {
            let exclude = if exclude_self { index.ordinal_of(&st.id) } else { None };
            let results = index.retrieve_topk(st.tokens(), memory_size, exclude);
            let mut rng = seeded_rng(derive_seed(base, i as u64));
            let memory = assemble_memory(&results, memory_size, &mut rng);
            let cells = memory
                .doc_ordinals
                .iter()
                .map(|slot| match slot {
                    Some(o) => index.docs()[*o].tokens().to_vec(),
                    None => Vec::new(),
                })
                .collect();
            Example {
                id: st.id.clone(),
                input: ModelInput {
                    query: st.tokens().to_vec(),
                    memory: cells,
                },
                label: st.label,
                memory,
            }
        })
        .collect()
}

/// Seeded shuffle-and-split; returns `(train, validation)`.
pub fn split_validation<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seeded_rng(derive_seed(seed, STREAM_SPLIT)));
    let n_val = ((items.len() as f64 * fraction).round() as usize).clamp(
        usize::from(items.len() > 1),
        items.len().saturating_sub(1),
    );
    let (val, train) = order.split_at(n_val);
    let mut train: Vec<usize> = train.to_vec();
    let mut val: Vec<usize> = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (
        train.into_iter().map(|i| items[i].clone()).collect(),
        val.into_iter().map(|i| items[i].clone()).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the predictions made during the epoch's forward passes.
    pub train_accuracy: f64,
    pub validation_micro_f1: Option<f64>,
    pub validation_macro_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

fn labels_of(examples: &[Example]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| Error::InvalidArgument(format!("example {:?} has no label", e.id)))
        })
        .collect()
}

/// Trains from scratch. With a validation set the parameters of the epoch with
/// the best validation micro-F1 are returned (earliest on ties); otherwise
/// those of the last epoch.
pub fn train(
    config: &TrainConfig,
    vocab_size: usize,
    num_classes: usize,
    train_set: &[Example],
    validation: Option<&[Example]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let labels = labels_of(train_set)?;
    if labels.iter().any(|&l| l >= num_classes) {
        return Err(Error::InvalidArgument("label outside class range".into()));
    }
    if let Some(val) = validation {
        labels_of(val)?;
    }
    if config.hops > 0 && train_set.iter().any(|e| e.input.memory.len() != config.memory_size) {
        return Err(Error::Shape(format!(
            "every example needs exactly {} memory cells",
            config.memory_size
        )));
    }

    let mode = config.attention();
    let mut params = ModelParameters::init(
        vocab_size,
        config.dim,
        num_classes,
        config.init_std,
        &mut seeded_rng(derive_seed(config.seed, STREAM_INIT)),
    );
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &params.tensor_sizes(),
    );
    let mut shuffle_rng = seeded_rng(derive_seed(config.seed, STREAM_SHUFFLE));
    let noise_base = derive_seed(config.seed, STREAM_NOISE);

    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParameters)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_seed = derive_seed(noise_base, epoch as u64);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        for batch in order.chunks(config.batch_size) {
            for m in grads.tensors_mut() {
                m.fill(0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &train_set[i];
                let mut rng = seeded_rng(derive_seed(epoch_seed, i as u64));
                let trace = forward(&params, &ex.input, mode, config.hops, &mut rng)?;
                let l = loss(&trace, labels[i]);
                if !l.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "non-finite loss at epoch {epoch}, example {:?}",
                        ex.id
                    )));
                }
                loss_sum += l;
                correct += usize::from(trace.predicted() == labels[i]);
                backward_into(&trace, &ex.input, labels[i], &params, mode, scale, &mut grads)?;
            }
            let grad_slices: Vec<&[f64]> = grads.tensors().iter().map(|m| m.as_slice()).collect();
            let mut param_slices: Vec<&mut [f64]> =
                params.tensors_mut().into_iter().map(|m| m.as_mut_slice()).collect();
            adam.step(&mut param_slices, &grad_slices)?;
            params.zero_pad_rows();
        }

        let (val_micro, val_macro) = match validation {
            Some(val) => {
                let m = evaluate(&params, val, mode, config.hops, derive_seed(config.seed, epoch as u64))?;
                (Some(m.micro_f1), Some(m.macro_f1))
            }
            None => (None, None),
        };
        if let Some(micro) = val_micro {
            if best.as_ref().is_none_or(|(b, _, _)| micro > *b) {
                best = Some((micro, epoch, params.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            validation_micro_f1: val_micro,
            validation_macro_f1: val_macro,
        });
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, config.epochs.saturating_sub(1)),
    };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

/// Predicted class per example. HARD-mode noise for example `i` comes from
/// a generator derived from `(seed, i)`.
pub fn predict(
    params: &ModelParameters,
    examples: &[Example],
    mode: AttentionMode,
    hops: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = seeded_rng(derive_seed(seed, i as u64));
            forward(params, &ex.input, mode, hops, &mut rng).map(|t| t.predicted())
        })
        .collect()
}

pub fn evaluate(
    params: &ModelParameters,
    examples: &[Example],
    mode: AttentionMode,
    hops: usize,
    seed: u64,
) -> Result<EvalMetrics> {
    let truth = labels_of(examples)?;
    let predicted = predict(params, examples, mode, hops, seed)?;
    Ok(EvalMetrics::compute(&truth, &predicted, params.num_classes()))
}

/// Mean attention weight per memory rank, one vector per hop, plus the
/// average of those vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionSummary {
    pub per_hop: Vec<Vec<f64>>,
    pub mean_over_hops: Vec<f64>,
    pub examples: usize,
}

pub fn export_attention(
    params: &ModelParameters,
    examples: &[Example],
    mode: AttentionMode,
    hops: usize,
    seed: u64,
) -> Result<AttentionSummary> {
    if hops == 0 {
        return Err(Error::InvalidArgument("attention export needs at least one hop".into()));
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("no examples to average over".into()));
    }
    let k = examples[0].input.memory.len();
    let traces: Vec<Vec<Vec<f64>>> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            if ex.input.memory.len() != k {
                return Err(Error::Shape("examples have different memory sizes".into()));
            }
            let mut rng = seeded_rng(derive_seed(seed, i as u64));
            let t = forward(params, &ex.input, mode, hops, &mut rng)?;
            Ok(t.hops.into_iter().map(|h| h.weights).collect())
        })
        .collect::<Result<_>>()?;

    let n = examples.len() as f64;
    let mut per_hop = vec![vec![0.0; k]; hops];
    for hop_weights in &traces {
        for (acc, w) in per_hop.iter_mut().zip(hop_weights) {
            for (a, x) in acc.iter_mut().zip(w) {
                *a += x;
            }
        }
    }
    per_hop.iter_mut().flatten().for_each(|x| *x /= n);
    let mean_over_hops = (0..k)
        .map(|j| per_hop.iter().map(|h| h[j]).sum::<f64>() / hops as f64)
        .collect();
    Ok(AttentionSummary {
        per_hop,
        mean_over_hops,
        examples: examples.len(),
    })
}

/// Texts a sweep trains and evaluates on. Memories are rebuilt per run because
/// they depend on K and on the seed.
pub struct SweepData<'a> {
    pub index: &'a InvertedIndex,
    pub num_classes: usize,
    pub train: &'a [ShortText],
    pub validation: Option<&'a [ShortText]>,
    pub test: &'a [ShortText],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub hops: usize,
    pub memory_size: usize,
    pub micro_f1_mean: f64,
    pub micro_f1_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub runs: Vec<SweepRun>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train on `data.train` (validating on `data.validation`), evaluate on `data.test`.
pub fn train_and_evaluate(config: &TrainConfig, data: &SweepData) -> Result<EvalMetrics> {
    let build = |texts: &[ShortText]| {
        build_examples(texts, data.index, config.memory_size, config.seed, config.exclude_self)
    };
    let train_ex = build(data.train);
    let val_ex = data.validation.map(build);
    let test_ex = build(data.test);
    let outcome = train(
        config,
        data.index.vocab().len(),
        data.num_classes,
        &train_ex,
        val_ex.as_deref(),
    )?;
    evaluate(
        &outcome.params,
        &test_ex,
        config.attention(),
        config.hops,
        derive_seed(config.seed, u64::MAX),
    )
}

fn sweep_row(base: &TrainConfig, data: &SweepData, seeds: &[u64]) -> Result<SweepRow> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("a sweep needs at least one seed".into()));
    }
    let runs = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..base.clone() };
            train_and_evaluate(&cfg, data).map(|m| SweepRun {
                seed,
                micro_f1: m.micro_f1,
                macro_f1: m.macro_f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (micro_f1_mean, micro_f1_std) = mean_std(&runs.iter().map(|r| r.micro_f1).collect::<Vec<_>>());
    let (macro_f1_mean, macro_f1_std) = mean_std(&runs.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
    Ok(SweepRow {
        hops: base.hops,
        memory_size: base.memory_size,
        micro_f1_mean,
        micro_f1_std,
        macro_f1_mean,
        macro_f1_std,
        runs,
    })
}

pub const SWEEP_HOPS: [usize; 5] = [0, 1, 2, 3, 4];

/// One row per hop count in 0..=4, each over all `seeds`.
pub fn sweep_hops(config: &TrainConfig, data: &SweepData, seeds: &[u64]) -> Result<Vec<SweepRow>> {
    SWEEP_HOPS
        .iter()
        .map(|&hops| sweep_row(&TrainConfig { hops, ..config.clone() }, data, seeds))
        .collect()
}

/// One row per memory size, with one hop of soft attention.
pub fn sweep_memory(
    config: &TrainConfig,
    data: &SweepData,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    sizes
        .iter()
        .map(|&memory_size| {
            let cfg = TrainConfig {
                memory_size,
                hops: 1,
                mode: ModeName::Soft,
                ..config.clone()
            };
            sweep_row(&cfg, data, seeds)
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("hops,memory_size,micro_f1_mean,micro_f1_std,macro_f1_mean,macro_f1_std,runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.hops, r.memory_size, r.micro_f1_mean, r.micro_f1_std, r.macro_f1_mean, r.macro_f1_std,
            r.runs.len()
        ));
    }
    out
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("epoch,train_loss,train_accuracy,validation_micro_f1,validation_macro_f1\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch,
            h.train_loss,
            h.train_accuracy,
            opt(h.validation_micro_f1),
            opt(h.validation_macro_f1)
        ));
    }
    out
}
