//! Run configuration. Keys mirror command-line flags one-to-one and the file
//! format is flat `key = value` lines.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::eval::AblationMode;
use crate::scorer::ScorerShape;
use crate::template::InstructionTemplate;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub task: Task,
    /// In-context examples at inference.
    pub k: usize,
    /// Candidates scored per query when labeling.
    pub m: usize,
    /// Fraction of the training set used as labeling queries.
    pub ratio: f64,
    pub batch_size: usize,
    /// Retriever learning rate.
    pub lr: f64,
    /// Scorer learning rate.
    pub lm_lr: f64,
    pub weight_decay: f64,
    pub epochs_retriever: usize,
    pub epochs_lm: usize,
    /// Zero-example scorer epochs before the first alternating step.
    pub warmup_epochs: usize,
    pub grad_accum: usize,
    /// Alternating steps.
    pub t: usize,
    pub d: usize,
    pub d_r: usize,
    /// Prompt length budget in tokens.
    pub max_len: usize,
    pub max_gen_len: usize,
    pub positions: usize,
    /// Decay of the scorer's tail-weighted encoder state.
    pub recency: f64,
    pub k_max: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub reinit_per_step: bool,
    pub mode: AblationMode,
    pub template_dir: Option<PathBuf>,
    pub definition: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            task: Task::Aspe,
            k: 4,
            m: 50,
            ratio: 0.1,
            batch_size: 2,
            lr: 5e-5,
            lm_lr: 1e-2,
            weight_decay: 0.01,
            epochs_retriever: 4,
            epochs_lm: 2,
            warmup_epochs: 1,
            grad_accum: 2,
            t: 3,
            d: 64,
            d_r: 64,
            max_len: 128,
            max_gen_len: 32,
            positions: 32,
            recency: 0.9,
            k_max: 7,
            init_scale: 0.1,
            seed: 0,
            reinit_per_step: false,
            mode: AblationMode::Full,
            template_dir: None,
            definition: None,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

impl Config {
    pub const KEYS: [&'static str; 25] = [
        "task",
        "k",
        "m",
        "ratio",
        "batch-size",
        "lr",
        "lm-lr",
        "weight-decay",
        "epochs-retriever",
        "epochs-lm",
        "warmup-epochs",
        "grad-accum",
        "t",
        "d",
        "d-r",
        "max-len",
        "max-gen-len",
        "positions",
        "recency",
        "k-max",
        "init-scale",
        "seed",
        "reinit-per-step",
        "mode",
        "template-dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "task" => self.task = value.parse()?,
            "k" => self.k = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "ratio" => self.ratio = parse(key, value)?,
            "batch-size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lm-lr" => self.lm_lr = parse(key, value)?,
            "weight-decay" => self.weight_decay = parse(key, value)?,
            "epochs-retriever" => self.epochs_retriever = parse(key, value)?,
            "epochs-lm" => self.epochs_lm = parse(key, value)?,
            "warmup-epochs" => self.warmup_epochs = parse(key, value)?,
            "grad-accum" => self.grad_accum = parse(key, value)?,
            "t" => self.t = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "d-r" => self.d_r = parse(key, value)?,
            "max-len" => self.max_len = parse(key, value)?,
            "max-gen-len" => self.max_gen_len = parse(key, value)?,
            "positions" => self.positions = parse(key, value)?,
            "recency" => self.recency = parse(key, value)?,
            "k-max" => self.k_max = parse(key, value)?,
            "init-scale" => self.init_scale = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "reinit-per-step" => self.reinit_per_step = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "template-dir" => self.template_dir = (!value.trim().is_empty()).then(|| PathBuf::from(value.trim())),
            "definition" => self.definition = (!value.is_empty()).then(|| value.to_string()),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment line.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Self::KEYS
            .iter()
            .map(|&k| {
                let v = match k {
                    "task" => self.task.to_string(),
                    "k" => self.k.to_string(),
                    "m" => self.m.to_string(),
                    "ratio" => self.ratio.to_string(),
                    "batch-size" => self.batch_size.to_string(),
                    "lr" => self.lr.to_string(),
                    "lm-lr" => self.lm_lr.to_string(),
                    "weight-decay" => self.weight_decay.to_string(),
                    "epochs-retriever" => self.epochs_retriever.to_string(),
                    "epochs-lm" => self.epochs_lm.to_string(),
                    "warmup-epochs" => self.warmup_epochs.to_string(),
                    "grad-accum" => self.grad_accum.to_string(),
                    "t" => self.t.to_string(),
                    "d" => self.d.to_string(),
                    "d-r" => self.d_r.to_string(),
                    "max-len" => self.max_len.to_string(),
                    "max-gen-len" => self.max_gen_len.to_string(),
                    "positions" => self.positions.to_string(),
                    "recency" => self.recency.to_string(),
                    "k-max" => self.k_max.to_string(),
                    "init-scale" => self.init_scale.to_string(),
                    "seed" => self.seed.to_string(),
                    "reinit-per-step" => self.reinit_per_step.to_string(),
                    "mode" => self.mode.to_string(),
                    "template-dir" => self
                        .template_dir
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    _ => unreachable!(),
                };
                (k.to_string(), v)
            })
            .collect();
        if let Some(def) = &self.definition {
            out.push(("definition".into(), def.clone()));
        }
        out
    }

    pub fn to_kv(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad("ratio must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return bad("batch-size and grad-accum must be at least 1");
        }
        if self.d == 0 || self.d_r == 0 || self.positions == 0 || self.max_len == 0 {
            return bad("widths, positions and max-len must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lm_lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be non-negative");
        }
        if !(self.recency > 0.0 && self.recency <= 1.0) {
            return bad("recency must lie in (0, 1]");
        }
        if self.m < 2 * self.k.max(1) {
            return bad("m must be at least 2k so positives and negatives do not overlap");
        }
        Ok(())
    }

    pub fn scorer_shape(&self) -> ScorerShape {
        ScorerShape {
            width: self.d,
            positions: self.positions,
            max_prompt_len: self.max_len,
            recency: self.recency,
        }
    }

    /// Labeling positives/negatives per query; at least one.
    pub fn label_k(&self) -> usize {
        self.k.max(1)
    }

    pub fn template(&self) -> Result<InstructionTemplate> {
        let t = match &self.template_dir {
            Some(dir) => InstructionTemplate::load(dir, self.task)?,
            None => InstructionTemplate::builtin(self.task),
        };
        Ok(match &self.definition {
            Some(def) => t.with_definition(def.clone()),
            None => t,
        })
    }
}
