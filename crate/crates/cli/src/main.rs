//! `expanet` command-line entry point.

mod config;
mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use expanet_core::model::{forward, Checkpoint};
use expanet_core::numerics::seeded_rng;
use expanet_core::retrieval::{assemble_memory, DEFAULT_MU, DEFAULT_TOP_K};
use expanet_core::text::{load_documents, load_labeled, tokenize, DEFAULT_DOC_LEN};
use expanet_core::train::{
    build_examples, evaluate, export_attention, history_to_csv, sweep_hops, sweep_memory,
    sweep_to_csv, train, SweepData,
};
use expanet_core::{InvertedIndex, LabelSet, ModelInput};

use config::RunConfig;
use pipeline::{build_index, load_data, run_baseline, write_file, write_json};

#[derive(Parser)]
#[command(name = "expanet", version, about = "Short text expansion and classification with memory networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Hops,
    Memory,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Bow,
    Rocchio,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist the inverted index over a long-document collection.
    BuildIndex {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MU)]
        mu: f64,
        #[arg(long, default_value_t = DEFAULT_DOC_LEN)]
        doc_len: usize,
        #[arg(long, default_value_t = 1)]
        min_count: u64,
        /// Short-text files whose tokens join the shared vocabulary.
        #[arg(long)]
        texts: Vec<PathBuf>,
    },
    /// Print the top-k documents for a query as TSV (rank, doc_id, score).
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        k: usize,
    },
    /// Train a model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hops: Option<usize>,
    },
    /// Score a checkpoint on a labeled test file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show the memory, per-hop attention and prediction for one short text.
    Expand {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Repeat training over hop counts 0..=4 or over memory sizes.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![5usize, 10, 20, 50])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TFIDF bag-of-words or Rocchio-expanded baseline with a logistic classifier.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildIndex {
            docs,
            out,
            mu,
            doc_len,
            min_count,
            texts,
        } => cmd_build_index(&docs, &out, mu, doc_len, min_count, &texts),
        Command::Retrieve { index, query, k } => cmd_retrieve(&index, &query, k),
        Command::Train {
            config,
            out,
            seed,
            epochs,
            hops,
        } => cmd_train(&config, out.as_deref(), seed, epochs, hops),
        Command::Evaluate {
            checkpoint,
            index,
            test,
            seed,
            out,
        } => cmd_evaluate(&checkpoint, &index, &test, seed, out.as_deref()),
        Command::Expand {
            checkpoint,
            index,
            query,
            seed,
        } => cmd_expand(&checkpoint, &index, &query, seed),
        Command::Sweep {
            kind,
            config,
            sizes,
            seeds,
            out,
        } => cmd_sweep(kind, &config, &sizes, seeds, out.as_deref()),
        Command::Baseline {
            method,
            config,
            out,
        } => cmd_baseline(method, &config, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Bad invocation rather than bad data; exits with status 2 like clap errors.
#[derive(Debug)]
struct UsageError(&'static str);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}

impl std::error::Error for UsageError {}

const EMPTY_QUERY: UsageError = UsageError("--query must contain at least one word");

fn require_file(path: &Path) -> Result<()> {
    ensure!(path.is_file(), "input file not found: {}", path.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn cmd_build_index(
    docs: &Path,
    out: &Path,
    mu: f64,
    doc_len: usize,
    min_count: u64,
    texts: &[PathBuf],
) -> Result<()> {
    require_file(docs)?;
    for t in texts {
        require_file(t)?;
    }
    ensure!(doc_len >= 1, "--doc-len must be at least 1");
    let docs = load_documents(docs)?;
    let mut extra = Vec::new();
    for t in texts {
        extra.extend(load_documents(t)?);
    }
    let index = build_index(&docs, &extra, min_count, doc_len, mu)?;
    index.save(out)?;
    println!("documents\t{}", index.num_docs());
    println!("vocabulary\t{}", index.vocab().len());
    println!("collection_length\t{}", index.vocab().collection_len());
    Ok(())
}

fn query_ids(index: &InvertedIndex, query: &str) -> Result<Vec<u32>> {
    let tokens = tokenize(query);
    if tokens.is_empty() {
        return Err(EMPTY_QUERY.into());
    }
    Ok(index.vocab().encode_all(&tokens))
}

fn cmd_retrieve(index: &Path, query: &str, k: usize) -> Result<()> {
    ensure!(k >= 1, "--k must be at least 1");
    if tokenize(query).is_empty() {
        return Err(EMPTY_QUERY.into());
    }
    require_file(index)?;
    let index = InvertedIndex::load(index)?;
    let ids = query_ids(&index, query)?;
    for (rank, hit) in index.retrieve_topk(&ids, k, None).iter().enumerate() {
        println!("{}\t{}\t{}", rank + 1, index.docs()[hit.ordinal].id, hit.score);
    }
    Ok(())
}

fn load_run_config(path: &Path, need_test: bool) -> Result<RunConfig> {
    require_file(path)?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_seed_env()?;
    cfg.validate(need_test)?;
    Ok(cfg)
}

fn cmd_train(
    config: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    epochs: Option<usize>,
    hops: Option<usize>,
) -> Result<()> {
    let mut cfg = load_run_config(config, false)?;
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    if let Some(e) = epochs {
        cfg.training.epochs = e;
    }
    if let Some(h) = hops {
        cfg.training.hops = h;
    }
    let out = cfg.out_dir(out)?;
    let t = cfg.training.clone();

    let data = load_data(&cfg)?;
    let build = |texts| build_examples(texts, &data.index, t.memory_size, t.seed, t.exclude_self);
    let train_ex = build(&data.train);
    let val_ex = build(&data.validation);
    let outcome = train(
        &t,
        data.index.vocab().len(),
        data.labels.len(),
        &train_ex,
        (!val_ex.is_empty()).then_some(val_ex.as_slice()),
    )?;
    for h in &outcome.history {
        println!(
            "epoch {:>3}  loss {:.6}  train_acc {:.4}  val_micro_f1 {}",
            h.epoch + 1,
            h.train_loss,
            h.train_accuracy,
            h.validation_micro_f1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
    }

    create_dir(&out)?;
    let checkpoint = Checkpoint {
        params: outcome.params,
        mode: t.attention(),
        hops: t.hops,
        memory_size: t.memory_size,
        short_len: t.short_len,
        vocab_hash: data.index.vocab().hash(),
        labels: data.labels.names().to_vec(),
    };
    checkpoint.save(out.join("checkpoint.bin"))?;
    let mut files = vec!["checkpoint.bin", "history.csv", "history.json", "metrics.json"];
    if cfg.index.is_none() {
        data.index.save(out.join("index.bin"))?;
        files.push("index.bin");
    }
    write_file(&out, "history.csv", history_to_csv(&outcome.history))?;
    write_json(&out, "history.json", &outcome.history)?;

    let mut metrics = json!({ "best_epoch": outcome.best_epoch });
    if let Some(test) = &data.test {
        let test_ex = build(test);
        let m = evaluate(&checkpoint.params, &test_ex, t.attention(), t.hops, t.seed)?;
        println!("test micro_f1 {}  macro_f1 {}", m.micro_f1, m.macro_f1);
        metrics["test"] = serde_json::to_value(&m)?;
        if t.hops > 0 {
            let attention = export_attention(&checkpoint.params, &test_ex, t.attention(), t.hops, t.seed)?;
            write_json(&out, "attention.json", &attention)?;
            files.push("attention.json");
        }
    }
    write_json(&out, "metrics.json", &metrics)?;
    write_manifest(&out, "train", &cfg, data.index.vocab().hash(), &files)?;
    println!("wrote {}", out.join("checkpoint.bin").display());
    Ok(())
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, vocab_hash: u64, files: &[&str]) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "config": cfg,
        "seed": cfg.training.seed,
        "vocab_hash": format!("{vocab_hash:016x}"),
        "files": files,
    });
    write_json(out, "manifest.json", &manifest)
}

fn load_model(checkpoint: &Path, index: &Path) -> Result<(Checkpoint, InvertedIndex)> {
    require_file(checkpoint)?;
    require_file(index)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let index = InvertedIndex::load(index)?;
    if ckpt.vocab_hash != index.vocab().hash() {
        bail!(
            "checkpoint vocabulary {:016x} does not match index vocabulary {:016x}",
            ckpt.vocab_hash,
            index.vocab().hash()
        );
    }
    Ok((ckpt, index))
}

fn cmd_evaluate(checkpoint: &Path, index: &Path, test: &Path, seed: u64, out: Option<&Path>) -> Result<()> {
    require_file(test)?;
    let (ckpt, index) = load_model(checkpoint, index)?;
    let labels = LabelSet::new(ckpt.labels.clone())?;
    let raw = load_labeled(test, &labels)?;
    if let Some(bad) = raw.iter().find(|r| r.label.is_none()) {
        bail!("test text {:?} has no label", bad.id);
    }
    let texts: Vec<_> = raw
        .iter()
        .map(|r| expanet_core::ShortText::encode(r, index.vocab(), ckpt.short_len))
        .collect();
    let examples = build_examples(&texts, &index, ckpt.memory_size, seed, false);
    let m = evaluate(&ckpt.params, &examples, ckpt.mode, ckpt.hops, seed)?;
    println!("micro_f1\t{}", m.micro_f1);
    println!("macro_f1\t{}", m.macro_f1);
    for (c, s) in m.per_class.iter().enumerate() {
        println!("class\t{}\t{}\t{}\t{}", labels.name(c), s.precision, s.recall, s.f1);
    }
    if let Some(out) = out {
        create_dir(out)?;
        write_json(out, "evaluation.json", &m)?;
    }
    Ok(())
}

fn cmd_expand(checkpoint: &Path, index: &Path, query: &str, seed: u64) -> Result<()> {
    if tokenize(query).is_empty() {
        return Err(EMPTY_QUERY.into());
    }
    let (ckpt, index) = load_model(checkpoint, index)?;
    let (ids, _) = index.vocab().encode(&tokenize(query), ckpt.short_len);
    let ids: Vec<u32> = ids.into_iter().filter(|&t| t != expanet_core::text::PAD).collect();
    let mut rng = seeded_rng(seed);
    let hits = index.retrieve_topk(&ids, ckpt.memory_size, None);
    let memory = assemble_memory(&hits, ckpt.memory_size, &mut rng);
    let doc_name = |slot: &Option<usize>| match slot {
        Some(o) => index.docs()[*o].id.clone(),
        None => "<empty>".to_string(),
    };
    let input = ModelInput {
        query: ids,
        memory: memory
            .doc_ordinals
            .iter()
            .map(|slot| slot.map(|o| index.docs()[o].tokens().to_vec()).unwrap_or_default())
            .collect(),
    };
    let trace = forward(&ckpt.params, &input, ckpt.mode, ckpt.hops, &mut rng)?;

    println!("# memory ({} retrieved, {} slots)", memory.retrieved, memory.len());
    for (rank, (slot, score)) in memory.doc_ordinals.iter().zip(&memory.scores).enumerate() {
        println!("{}\t{}\t{}", rank + 1, doc_name(slot), score);
    }
    for (h, hop) in trace.hops.iter().enumerate() {
        println!("# hop {} attention", h + 1);
        for (rank, (slot, w)) in memory.doc_ordinals.iter().zip(&hop.weights).enumerate() {
            println!("{}\t{}\t{}", rank + 1, doc_name(slot), w);
        }
    }
    println!("# prediction\t{}", ckpt.labels[trace.predicted()]);
    for (name, p) in ckpt.labels.iter().zip(&trace.probs) {
        println!("{name}\t{p}");
    }
    Ok(())
}

fn cmd_sweep(kind: SweepKind, config: &Path, sizes: &[usize], seeds: u64, out: Option<&Path>) -> Result<()> {
    ensure!(seeds >= 1, "--seeds must be at least 1");
    let cfg = load_run_config(config, true)?;
    let out = cfg.out_dir(out)?;
    let data = load_data(&cfg)?;
    let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.training.seed + i).collect();
    let sweep = SweepData {
        index: &data.index,
        num_classes: data.labels.len(),
        train: &data.train,
        validation: Some(&data.validation),
        test: data.test.as_deref().expect("validated"),
    };
    let (rows, name) = match kind {
        SweepKind::Hops => (sweep_hops(&cfg.training, &sweep, &seed_list)?, "sweep_hops"),
        SweepKind::Memory => {
            ensure!(sizes.iter().all(|&k| k >= 1), "memory sizes must be at least 1");
            (sweep_memory(&cfg.training, &sweep, sizes, &seed_list)?, "sweep_memory")
        }
    };
    let csv = sweep_to_csv(&rows);
    print!("{csv}");
    create_dir(&out)?;
    write_file(&out, &format!("{name}.csv"), &csv)?;
    write_json(&out, &format!("{name}.json"), &rows)?;
    let files = [format!("{name}.csv"), format!("{name}.json")];
    write_manifest(
        &out,
        name,
        &cfg,
        data.index.vocab().hash(),
        &files.iter().map(String::as_str).collect::<Vec<_>>(),
    )
}

fn cmd_baseline(method: BaselineMethod, config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_run_config(config, true)?;
    let data = load_data(&cfg)?;
    let method = match method {
        BaselineMethod::Bow => "bow",
        BaselineMethod::Rocchio => "rocchio",
    };
    let result = run_baseline(&data, method, cfg.training.memory_size)?;
    println!("{}", serde_json::to_string(&result)?);
    if let Some(out) = out.map(Path::to_path_buf).or(cfg.out.clone()) {
        create_dir(&out)?;
        let name = format!("baseline_{method}.json");
        write_json(&out, &name, &result)?;
        write_manifest(&out, &format!("baseline-{method}"), &cfg, data.index.vocab().hash(), &[&name])?;
    }
    Ok(())
}
