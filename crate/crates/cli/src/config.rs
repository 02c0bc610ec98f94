//! Flat `key=value` run configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file,
//! `RETINA_SEED`, then `--key value` flags. Later settings replace earlier
//! ones except `disable`, which accumulates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::Result;
use kbqa_core::constructor::ConstructorConfig;
use kbqa_core::discriminator::Mode;
use kbqa_core::pipeline::{Ablation, PipelineConfig};
use kbqa_core::retriever::RetrieverConfig;
use kbqa_core::scorer::TrainConfig;

use crate::usage;

pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key {
        name,
        default,
        help,
    }
}

pub const DISABLE: &str = "disable";
pub const SEED_ENV: &str = "RETINA_SEED";

pub const KEYS: &[Key] = &[
    key(
        "kb-dir",
        None,
        "directory holding types.tsv, relations.tsv, entities.tsv, facts.tsv",
    ),
    key(
        "dataset",
        None,
        "JSON-lines question set (training, dev or test depending on the command)",
    ),
    key("predictions", None, "JSON-lines predictions to evaluate"),
    key("plan", None, "JSON-lines perturbation plan"),
    key("output", None, "output file (or directory for generate)"),
    key("out-kb-dir", None, "where perturb writes the reduced KB"),
    key("inventory", None, "sketch inventory file"),
    key("threshold", None, "tuned threshold file"),
    key(
        "threshold.tau",
        None,
        "fixed NK threshold, overrides the threshold file",
    ),
    key("model.retriever", None, "retriever model file"),
    key("model.sketch", None, "sketch ranker model file"),
    key("model.types", None, "type relevance model file"),
    key("model.relations", None, "relation relevance model file"),
    key("model.discriminator", None, "discriminator model file"),
    key("seed", Some("13"), "seed for every random choice"),
    key("jobs", Some("1"), "worker threads for predict and ablate"),
    key(
        "mode",
        Some("unanswerability"),
        "unanswerability | egc | top-ranked",
    ),
    key(
        DISABLE,
        Some(""),
        "components to disable: lfr, lfi, sgsr, egc (repeatable)",
    ),
    key(
        "linker.top_k_per_mention",
        Some("1"),
        "entities kept per mention",
    ),
    key(
        "retriever.top_k",
        Some("10"),
        "retrieved logical forms kept",
    ),
    key(
        "retriever.max_paths",
        Some("2000"),
        "cap on enumerated KB paths",
    ),
    key("retriever.max_hops", Some("2"), "path length, 1 or 2"),
    key("constructor.beam", Some("10"), "sketches kept"),
    key(
        "constructor.schema_top_k",
        Some("10"),
        "types and relations kept",
    ),
    key(
        "constructor.max_groundings",
        Some("5000"),
        "cap on groundings per question",
    ),
    key("train.lr", Some("0.5"), "learning rate"),
    key("train.epochs", Some("200"), "epochs"),
    key("train.batch", Some("16"), "mini-batch size"),
    key(
        "discriminator.negatives",
        Some("64"),
        "negatives sampled per question for the discriminator",
    ),
    key(
        "generate.questions",
        Some("300"),
        "questions generated (split 60/20/20)",
    ),
];

fn known(name: &str) -> bool {
    KEYS.iter().any(|k| k.name == name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
    disabled: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .filter(|k| k.name != DISABLE)
            .filter_map(|k| k.default.map(|d| (k.name.to_string(), d.to_string())))
            .collect();
        Config {
            values,
            disabled: Vec::new(),
        }
    }
}

impl Config {
    /// Applies one setting; `disable` takes comma-separated names and appends.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        if !known(name) {
            return Err(usage(format!("unknown config key `{name}`")));
        }
        if name == DISABLE {
            for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                Ablation::from_str(item).map_err(|e| usage(format!("--disable: {e}")))?;
                if !self.disabled.iter().any(|d| d == item) {
                    self.disabled.push(item.to_string());
                }
            }
        } else {
            self.values.insert(name.to_string(), value.to_string());
        }
        Ok(())
    }

    /// Applies a config file body; `origin` names it in errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(usage(format!(
                    "{origin}:{}: expected key=value, found `{line}`",
                    i + 1
                )));
            };
            self.set(k.trim(), v.trim())
                .map_err(|e| usage(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_text(text, "config")?;
        Ok(c)
    }

    /// The effective settings, one `key=value` per line, sorted by key.
    pub fn echo(&self) -> Vec<String> {
        let mut all = self.values.clone();
        all.insert(DISABLE.to_string(), self.disabled.join(","));
        all.into_iter().map(|(k, v)| format!("{k}={v}")).collect()
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        debug_assert!(known(name), "{name}");
        self.values
            .get(name)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }

    /// A path setting that must be present.
    pub fn required(&self, name: &str) -> Result<PathBuf> {
        self.get(name).map(PathBuf::from).ok_or_else(|| {
            usage(format!(
                "missing required setting `{name}` (pass --{name} <path>)"
            ))
        })
    }

    /// A required path that must already exist.
    pub fn input(&self, name: &str) -> Result<PathBuf> {
        let path = self.required(name)?;
        if !path.exists() {
            return Err(usage(format!("{name}: {} does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn parse<T: FromStr>(&self, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self
            .get(name)
            .ok_or_else(|| usage(format!("missing setting `{name}`")))?;
        raw.parse().map_err(|e| usage(format!("{name}={raw}: {e}")))
    }

    fn positive(&self, name: &str) -> Result<usize> {
        let v: usize = self.parse(name)?;
        if v == 0 {
            return Err(usage(format!("{name} must be at least 1")));
        }
        Ok(v)
    }

    pub fn disabled(&self) -> BTreeSet<Ablation> {
        self.disabled
            .iter()
            .filter_map(|d| d.parse().ok())
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn jobs(&self) -> Result<usize> {
        self.positive("jobs")
    }

    pub fn mode(&self) -> Result<Mode> {
        self.parse("mode")
    }

    pub fn fixed_tau(&self) -> Result<Option<f64>> {
        match self.get("threshold.tau") {
            None => Ok(None),
            Some(_) => self.parse("threshold.tau").map(Some),
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let max_hops = self.positive("retriever.max_hops")?;
        if max_hops > 2 {
            return Err(usage("retriever.max_hops must be 1 or 2"));
        }
        Ok(PipelineConfig {
            retriever: RetrieverConfig {
                top_k: self.positive("retriever.top_k")?,
                max_paths: self.positive("retriever.max_paths")?,
                max_hops,
            },
            constructor: ConstructorConfig {
                beam: self.positive("constructor.beam")?,
                schema_top_k: self.positive("constructor.schema_top_k")?,
                max_groundings: self.positive("constructor.max_groundings")?,
                check_types: true,
            },
            top_k_per_mention: self.positive("linker.top_k_per_mention")?,
            mode: self.mode()?,
            disabled: self.disabled(),
        })
    }

    pub fn train(&self, negatives: Option<usize>) -> Result<TrainConfig> {
        let lr: f64 = self.parse("train.lr")?;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(usage("train.lr must be a positive number"));
        }
        Ok(TrainConfig {
            lr,
            epochs: self.positive("train.epochs")?,
            batch: self.positive("train.batch")?,
            negatives_per_example: negatives,
            seed: self.seed()?,
        })
    }

    /// Parses every numeric knob so bad values fail before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.jobs()?;
        self.pipeline()?;
        self.train(None)?;
        self.fixed_tau()?;
        self.positive("discriminator.negatives")?;
        self.positive("generate.questions")?;
        Ok(())
    }
}
