use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{atsc_accuracy, atsc_prediction, tuple_f1, Metrics};
use crate::corpus::{parse_output, serialize_label, Candidate, Dataset, ParsedLabel, ParsedPolarity, Sample, Task};
use crate::error::{Error, Result};
use crate::retriever::{retrieve, CandidateIndex, Retriever};
use crate::rng;
use crate::scalar::Scalar;
use crate::scorer::Scorer;
use crate::template::InstructionTemplate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    NoAlternating,
    NoRetriever,
    NoExample,
    NoInstruction,
    FrozenLm,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Full,
        AblationMode::NoAlternating,
        AblationMode::NoRetriever,
        AblationMode::NoExample,
        AblationMode::NoInstruction,
        AblationMode::FrozenLm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoAlternating => "no_alternating",
            AblationMode::NoRetriever => "no_retriever",
            AblationMode::NoExample => "no_example",
            AblationMode::NoInstruction => "no_instruction",
            AblationMode::FrozenLm => "frozen_lm",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Read-only view of the models and pool used to build prompts.
pub struct InferenceContext<'a, T: Scalar, S: Scorer> {
    pub scorer: &'a S,
    pub retriever: &'a Retriever<T>,
    pub index: &'a CandidateIndex<T>,
    /// Example pool, rendered for `task`; `pool[i].id == i`.
    pub pool: &'a [Candidate],
    pub template: &'a InstructionTemplate,
    pub task: Task,
    pub seed: u64,
    pub max_gen_len: usize,
    /// Prompt budget in tokens; longer prompts are flagged.
    pub max_len: usize,
    /// Queries are members of the pool and must not retrieve themselves.
    pub exclude_self: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: usize,
    pub prompt: String,
    pub raw_output: String,
    pub parsed: Vec<String>,
    pub gold: String,
    pub examples: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub mode: AblationMode,
    pub task: Task,
    pub k: usize,
    pub metrics: Metrics,
    pub predictions: Vec<PredictionRecord>,
    /// The shared examples used by `no_retriever`.
    pub fixed_examples: Option<Vec<usize>>,
    /// Prompts longer than the token budget.
    pub over_budget: usize,
}

fn show(label: &ParsedLabel) -> String {
    let pol = |p: &ParsedPolarity| match p {
        ParsedPolarity::Known(p) => p.to_string(),
        ParsedPolarity::Rejected(w) => format!("?{w}"),
    };
    match label {
        ParsedLabel::Term(t) => t.clone(),
        ParsedLabel::Pair(t, p) => format!("{t}: {}", pol(p)),
        ParsedLabel::Sentiment(p) => pol(p),
    }
}

impl<T: Scalar, S: Scorer> InferenceContext<'_, T, S> {
    /// First `k` entries of a seeded permutation of the pool.
    pub fn fixed_examples(&self, k: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.pool.len()).collect();
        ids.shuffle(&mut rng::stream(self.seed, rng::FIXED_EXAMPLES, &[]));
        ids.truncate(k);
        ids
    }

    /// Top-`k` retrieved example ids for a query.
    pub fn retrieved_examples(&self, sample: &Sample, k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let input = sample.input(self.task)?;
        let exclude = self.exclude_self.then_some(sample.id);
        Ok(retrieve(self.retriever, self.index, &input, exclude, k)?
            .hits
            .into_iter()
            .map(|h| h.id)
            .collect())
    }

    /// The prompt for `sample` under `mode`, and the example ids it embeds.
    pub fn prompt(&self, sample: &Sample, k: usize, mode: AblationMode, fixed: &[usize]) -> Result<(String, Vec<usize>)> {
        let input = sample.input(self.task)?;
        let ids = match mode {
            AblationMode::Full | AblationMode::NoAlternating | AblationMode::FrozenLm => self.retrieved_examples(sample, k)?,
            AblationMode::NoRetriever => fixed.to_vec(),
            AblationMode::NoExample => Vec::new(),
            AblationMode::NoInstruction => return Ok((input, Vec::new())),
        };
        let examples: Vec<Candidate> = ids.iter().map(|&i| self.pool[i].clone()).collect();
        Ok((self.template.render(&examples, &input, examples.len()), ids))
    }

    fn over_budget(&self, prompt: &str) -> bool {
        self.scorer.vocab().encode(prompt).len() > self.max_len
    }
}

/// Generates and scores a prediction for every test sample.
pub fn run_inference<T: Scalar, S: Scorer>(
    ctx: &InferenceContext<'_, T, S>,
    test: &Dataset,
    k: usize,
    mode: AblationMode,
) -> Result<InferenceReport> {
    ctx.index.check_fresh(ctx.retriever)?;
    let fixed = (mode == AblationMode::NoRetriever).then(|| ctx.fixed_examples(k));
    let fixed_ids = fixed.clone().unwrap_or_default();

    let rows: Vec<(PredictionRecord, Vec<ParsedLabel>, usize, bool)> = test
        .samples
        .par_iter()
        .map(|s| {
            let (prompt, examples) = ctx.prompt(s, k, mode, &fixed_ids)?;
            let raw = ctx.scorer.generate(&prompt, ctx.max_gen_len);
            let parsed = parse_output(&raw, ctx.task);
            let over = ctx.over_budget(&prompt);
            let record = PredictionRecord {
                id: s.id,
                parsed: parsed.labels.iter().map(show).collect(),
                gold: serialize_label(s, ctx.task)?,
                raw_output: raw,
                prompt,
                examples,
            };
            let failures = parsed.failures();
            Ok((record, parsed.labels, failures, over))
        })
        .collect::<Result<_>>()?;

    let metrics = match ctx.task {
        Task::Atsc => {
            let preds: Vec<_> = rows.iter().map(|r| atsc_prediction(&r.1)).collect();
            let golds = test.samples.iter().map(Sample::atsc_polarity).collect::<Result<Vec<_>>>()?;
            atsc_accuracy(&preds, &golds)?
        }
        task => {
            let preds: Vec<Vec<ParsedLabel>> = rows.iter().map(|r| r.1.clone()).collect();
            let golds: Vec<_> = test.samples.iter().map(|s| s.labels.clone()).collect();
            let mut m = tuple_f1(&preds, &golds, task)?;
            m.parse_failures = rows.iter().map(|r| r.2).sum();
            m
        }
    };
    let over_budget = rows.iter().filter(|r| r.3).count();
    Ok(InferenceReport {
        mode,
        task: ctx.task,
        k,
        metrics,
        predictions: rows.into_iter().map(|r| r.0).collect(),
        fixed_examples: fixed,
        over_budget,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub metrics: Metrics,
    pub over_budget: usize,
    /// Some prompt at this `k` exceeded the token budget.
    pub truncated: bool,
}

/// Full-mode evaluation for every `k` in `0..=k_max`, ascending.
pub fn k_sweep<T: Scalar, S: Scorer>(ctx: &InferenceContext<'_, T, S>, test: &Dataset, k_max: usize) -> Result<Vec<SweepRow>> {
    (0..=k_max)
        .map(|k| {
            let r = run_inference(ctx, test, k, AblationMode::Full)?;
            Ok(SweepRow {
                k,
                metrics: r.metrics,
                over_budget: r.over_budget,
                truncated: r.over_budget > 0,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExampleSource {
    /// The retriever's top-1 example.
    Retrieved,
    /// A seeded uniform draw from the pool.
    Random,
}

/// Mean log-likelihood of the gold output given a one-example prompt.
pub fn example_likelihood<T: Scalar, S: Scorer>(
    ctx: &InferenceContext<'_, T, S>,
    queries: &Dataset,
    source: ExampleSource,
) -> Result<f64> {
    ctx.index.check_fresh(ctx.retriever)?;
    let lls: Vec<f64> = queries
        .samples
        .par_iter()
        .map(|s| {
            let example = match source {
                ExampleSource::Retrieved => ctx.retrieved_examples(s, 1)?[0],
                ExampleSource::Random => {
                    let mut r = rng::stream(ctx.seed, rng::RANDOM_EXAMPLES, &[s.id as u64]);
                    loop {
                        let id = r.gen_range(0..ctx.pool.len());
                        if !(ctx.exclude_self && id == s.id) {
                            break id;
                        }
                    }
                }
            };
            let prompt = ctx.template.render(std::slice::from_ref(&ctx.pool[example]), &s.input(ctx.task)?, 1);
            Ok(ctx.scorer.score(&prompt, &serialize_label(s, ctx.task)?).total.as_f64())
        })
        .collect::<Result<_>>()?;
    Ok(if lls.is_empty() { 0.0 } else { lls.iter().sum::<f64>() / lls.len() as f64 })
}
