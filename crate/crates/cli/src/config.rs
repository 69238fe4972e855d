use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use expanet_core::retrieval::DEFAULT_MU;
use expanet_core::TrainConfig;

pub const SEED_ENV: &str = "EXPANET_SEED";

fn default_mu() -> f64 {
    DEFAULT_MU
}

fn default_min_count() -> u64 {
    1
}

/// One run definition: file locations plus every training hyperparameter.
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Long documents; required unless `index` is given.
    #[serde(default)]
    pub docs: Option<PathBuf>,
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
    #[serde(flatten)]
    pub training: TrainConfig,
}

const PATH_KEYS: [&str; 9] = [
    "train", "labels", "validation", "test", "docs", "index", "out", "mu", "min_count",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&raw)
            .with_context(|| format!("config {} is not valid JSON", path.display()))?;
        let Some(obj) = value.as_object() else {
            bail!("config {} must be a JSON object", path.display());
        };
        let training_keys = serde_json::to_value(TrainConfig::default())?;
        let training_keys = training_keys.as_object().expect("TrainConfig serializes to an object");
        for key in obj.keys() {
            if !PATH_KEYS.contains(&key.as_str()) && !training_keys.contains_key(key) {
                bail!("config {}: unknown key {key:?}", path.display());
            }
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .with_context(|| format!("config {} is malformed", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.train);
        fix(&mut self.labels);
        for p in [
            &mut self.validation,
            &mut self.test,
            &mut self.docs,
            &mut self.index,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.training.seed = raw
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={raw:?} is not an unsigned integer"))?;
        }
        Ok(())
    }

    /// Checks every input path and all hyperparameters before any work starts.
    pub fn validate(&self, need_test: bool) -> Result<()> {
        self.training.validate()?;
        if !(self.mu > 0.0) {
            bail!("mu must be positive, got {}", self.mu);
        }
        if self.min_count == 0 {
            bail!("min_count must be at least 1");
        }
        if self.docs.is_none() && self.index.is_none() {
            bail!("config needs either \"docs\" or \"index\"");
        }
        if need_test && self.test.is_none() {
            bail!("config needs a \"test\" file for this command");
        }
        let inputs = [Some(&self.train), Some(&self.labels)]
            .into_iter()
            .chain([&self.validation, &self.test, &self.docs, &self.index].map(Option::as_ref))
            .flatten();
        for p in inputs {
            if !p.is_file() {
                bail!("input file not found: {}", p.display());
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        match flag.map(Path::to_path_buf).or_else(|| self.out.clone()) {
            Some(dir) => Ok(dir),
            None => bail!("no output directory: pass --out or set \"out\" in the config"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn flat_keys_parse_and_paths_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(
            dir.path(),
            "run.json",
            r#"{"train": "t.jsonl", "labels": "l.json", "docs": "d.jsonl", "hops": 3, "mode": "hard", "epochs": 2}"#,
        );
        let rc = RunConfig::load(&cfg).unwrap();
        assert_eq!(rc.training.hops, 3);
        assert_eq!(rc.train, dir.path().join("t.jsonl"));
        assert_eq!(rc.mu, 2000.0);
        assert!(rc.validate(false).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "run.json", r#"{"train": "t", "labels": "l", "hopz": 3}"#);
        let err = RunConfig::load(&cfg).unwrap_err().to_string();
        assert!(err.contains("hopz"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunConfig::load(&write(dir.path(), "a.json", r#"{"train": "t", "labels": "l"}"#)).unwrap();
        let b = RunConfig::load(&write(dir.path(), "b.json", r#"{"train": "t", "labels": "l", "seed": 1}"#)).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }
}
