//! Alternating training of the retriever and the scorer.
//!
//! Step 0 initializes both models and warms the scorer up on zero-example
//! prompts. Each step `s` in `1..=t` trains the retriever with the step
//! `s-1` scorer as labeler, then fine-tunes the scorer on prompts holding the
//! new retriever's top-1 example.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_retriever, load_scorer, save_retriever, save_scorer};
use crate::config::Config;
use crate::contrastive::{train_retriever, RetrieverEpoch};
use crate::corpus::{Candidate, Dataset, Polarity, Task, SENTINEL_TERM};
use crate::error::{Error, Result};
use crate::eval::{run_inference, AblationMode, InferenceContext, Metrics};
use crate::retriever::{retrieve, CandidateIndex, Retriever};
use crate::rng;
use crate::scalar::Scalar;
use crate::scorer::{ReferenceScorer, Scorer};
use crate::template::{atsc_input, candidate_text, query_text, InstructionTemplate};
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmReport {
    pub step: usize,
    pub epoch_losses: Vec<f64>,
    pub updates: usize,
    /// Largest number of in-context examples in any training prompt.
    pub max_examples_per_prompt: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub retriever: Vec<RetrieverEpoch>,
    pub lm: LmReport,
    pub dev: Metrics,
}

#[derive(Clone, Debug)]
pub struct ScheduleState<T> {
    pub step: usize,
    /// `retrievers[s]` is the retriever after step `s`.
    pub retrievers: Vec<Retriever<T>>,
    pub scorers: Vec<ReferenceScorer<T>>,
    pub records: Vec<StepRecord>,
    /// `(retriever, scorer)` checkpoint paths per step, when persisted.
    pub checkpoints: Vec<(PathBuf, PathBuf)>,
}

impl<T: Scalar> ScheduleState<T> {
    pub fn scorer(&self) -> &ReferenceScorer<T> {
        self.scorers.last().expect("lineage is never empty")
    }

    pub fn retriever(&self) -> &Retriever<T> {
        self.retrievers.last().expect("lineage is never empty")
    }
}

pub fn retriever_checkpoint(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("retriever_{step}.ckpt"))
}

pub fn scorer_checkpoint(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("scorer_{step}.ckpt"))
}

/// Vocabulary over the training texts, their serialized labels and every
/// fixed string the prompt grammar can emit.
pub fn build_vocabulary(train: &Dataset, template: &InstructionTemplate, k_max: usize) -> Result<Vocabulary> {
    let mut texts: Vec<String> = Vec::new();
    for s in &train.samples {
        texts.push(s.text.clone());
    }
    for task in Task::ALL {
        for s in &train.for_task(task).samples {
            texts.push(crate::corpus::serialize_label(s, task)?);
        }
        let t = InstructionTemplate::builtin(task);
        texts.extend([t.definition, t.example, t.query]);
    }
    texts.extend([template.definition.clone(), template.example.clone(), template.query.clone()]);
    texts.push(atsc_input("", ""));
    texts.push(candidate_text(&Candidate::new(0, "", "")));
    texts.push(query_text(""));
    texts.push("Definition:".into());
    texts.push(SENTINEL_TERM.into());
    texts.extend(Polarity::ALL.iter().map(|p| p.to_string()));
    texts.extend((1..=k_max.max(9)).map(|i| i.to_string()));
    let texts: Vec<String> = texts
        .into_iter()
        .map(|t| t.replace("{n}", " ").replace("{input}", " ").replace("{output}", " "))
        .collect();
    Ok(Vocabulary::build(texts.iter().map(String::as_str)))
}

pub fn init_models<T: Scalar>(train: &Dataset, template: &InstructionTemplate, cfg: &Config) -> Result<(ReferenceScorer<T>, Retriever<T>)> {
    let vocab = Arc::new(build_vocabulary(train, template, cfg.k_max)?);
    let scorer = ReferenceScorer::new(
        vocab.clone(),
        cfg.scorer_shape(),
        cfg.init_scale,
        cfg.weight_decay,
        &mut rng::stream(cfg.seed, rng::INIT_SCORER, &[]),
    );
    let retriever = Retriever::new(vocab, cfg.d_r, cfg.weight_decay, &mut rng::stream(cfg.seed, rng::INIT_RETRIEVER, &[]));
    Ok((scorer, retriever))
}

/// Runs `epochs` passes of NLL fine-tuning over fixed `(prompt, target)`
/// pairs in a seeded order, stepping every `grad_accum` pairs.
fn train_on_prompts<S: Scorer>(
    scorer: &mut S,
    pairs: &[(String, String)],
    cfg: &Config,
    step: usize,
    epochs: usize,
) -> Result<(Vec<f64>, usize)> {
    scorer.reset_optimizer();
    let mut losses = Vec::with_capacity(epochs);
    let mut updates = 0;
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, rng::LM_ORDER, &[step as u64, epoch as u64]));
        let mut grad = scorer.zero_gradient();
        let mut pending = 0usize;
        let mut total = 0.0;
        for i in order {
            let (prompt, target) = &pairs[i];
            total += scorer.accumulate_gradient(prompt, target, &mut grad);
            pending += 1;
            if pending == cfg.grad_accum {
                scorer.apply_gradient(&grad, 1.0 / pending as f64, cfg.lm_lr)?;
                grad = scorer.zero_gradient();
                pending = 0;
                updates += 1;
            }
        }
        if pending > 0 {
            scorer.apply_gradient(&grad, 1.0 / pending as f64, cfg.lm_lr)?;
            updates += 1;
        }
        let mean = if pairs.is_empty() { 0.0 } else { total / pairs.len() as f64 };
        info!("scorer step {step} epoch {epoch}: nll {mean:.5}");
        losses.push(mean);
    }
    Ok((losses, updates))
}

/// Step-0 warm-up on zero-example prompts.
pub fn warm_up<S: Scorer>(scorer: &mut S, train: &Dataset, template: &InstructionTemplate, cfg: &Config) -> Result<LmReport> {
    let pairs = train
        .samples
        .iter()
        .map(|s| Ok((template.render(&[], &s.input(train.task)?, 0), crate::corpus::serialize_label(s, train.task)?)))
        .collect::<Result<Vec<_>>>()?;
    let (epoch_losses, updates) = train_on_prompts(scorer, &pairs, cfg, 0, cfg.warmup_epochs)?;
    Ok(LmReport {
        step: 0,
        epoch_losses,
        updates,
        max_examples_per_prompt: 0,
    })
}

/// Fine-tunes the scorer with each training sample's top-1 retrieved example.
pub fn finetune_lm<T: Scalar, S: Scorer>(
    scorer: &mut S,
    retriever: &Retriever<T>,
    train: &Dataset,
    template: &InstructionTemplate,
    cfg: &Config,
    step: usize,
) -> Result<LmReport> {
    let cands = train.candidates()?;
    let index = CandidateIndex::from_candidates(retriever, &cands);
    let pairs = cands
        .par_iter()
        .map(|c| {
            let hits = retrieve(retriever, &index, &c.input, Some(c.id), 1)?.hits;
            let examples: Vec<_> = hits.iter().map(|h| cands[h.id].clone()).collect();
            debug_assert!(examples.iter().all(|e| e.id != c.id));
            Ok((template.render(&examples, &c.input, examples.len()), c.output.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (epoch_losses, updates) = train_on_prompts(scorer, &pairs, cfg, step, cfg.epochs_lm)?;
    Ok(LmReport {
        step,
        epoch_losses,
        updates,
        max_examples_per_prompt: usize::from(!cands.is_empty() && cands.len() > 1),
    })
}

/// Full-mode dev metrics with `cfg.k` retrieved examples from `train`.
pub fn dev_metrics<T: Scalar>(
    scorer: &ReferenceScorer<T>,
    retriever: &Retriever<T>,
    train: &Dataset,
    dev: &Dataset,
    template: &InstructionTemplate,
    cfg: &Config,
) -> Result<Metrics> {
    let pool = train.candidates()?;
    let index = CandidateIndex::from_candidates(retriever, &pool);
    let ctx = InferenceContext {
        scorer,
        retriever,
        index: &index,
        pool: &pool,
        template,
        task: cfg.task,
        seed: cfg.seed,
        max_gen_len: cfg.max_gen_len,
        max_len: cfg.max_len,
        exclude_self: false,
    };
    Ok(run_inference(&ctx, dev, cfg.k, AblationMode::Full)?.metrics)
}

fn targeted(ds: &Dataset, task: Task) -> Dataset {
    if ds.task == task {
        ds.clone()
    } else {
        ds.for_task(task)
    }
}

fn write_metrics(dir: &Path, task: Task, records: &[StepRecord]) -> Result<()> {
    let mut out = String::from("step\ttask\tsplit\tprecision\trecall\tf1\taccuracy\tparse_failures\n");
    for r in records {
        let m = &r.dev;
        out.push_str(&format!(
            "{}\t{}\tdev\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            r.step, task, m.precision, m.recall, m.f1, m.accuracy, m.parse_failures
        ));
    }
    fs::write(dir.join("metrics.tsv"), out)?;
    Ok(())
}

struct Runner<'a> {
    train: Dataset,
    dev: Dataset,
    template: InstructionTemplate,
    cfg: &'a Config,
    out: Option<&'a Path>,
}

impl Runner<'_> {
    fn persist<T: Scalar>(&self, state: &mut ScheduleState<T>, step: usize) -> Result<()> {
        if let Some(dir) = self.out {
            let (r, s) = (retriever_checkpoint(dir, step), scorer_checkpoint(dir, step));
            save_retriever(&r, &state.retrievers[step])?;
            save_scorer(&s, &state.scorers[step])?;
            state.checkpoints.push((r, s));
            write_metrics(dir, self.cfg.task, &state.records)?;
        }
        Ok(())
    }

    fn step<T: Scalar>(&self, state: &mut ScheduleState<T>, s: usize) -> Result<()> {
        let cfg = self.cfg;
        let labeler = &state.scorers[s - 1];
        let (mut retriever, mut scorer) = if cfg.reinit_per_step {
            (state.retrievers[0].clone(), state.scorers[0].clone())
        } else {
            (state.retrievers[s - 1].clone(), labeler.clone())
        };
        let bootstrap = s == 1 || cfg.reinit_per_step;
        let epochs = train_retriever(&mut retriever, &self.train, labeler, &self.template, cfg, s, bootstrap)?;
        let lm = finetune_lm(&mut scorer, &retriever, &self.train, &self.template, cfg, s)?;
        let dev = dev_metrics(&scorer, &retriever, &self.train, &self.dev, &self.template, cfg)?;
        info!("step {s}: dev f1 {:.4} accuracy {:.4}", dev.f1, dev.accuracy);
        state.retrievers.push(retriever);
        state.scorers.push(scorer);
        state.records.push(StepRecord {
            step: s,
            retriever: epochs,
            lm,
            dev,
        });
        state.step = s;
        self.persist(state, s)
    }
}

/// Runs steps `0..=cfg.t`, persisting checkpoints and `metrics.tsv` into `out`
/// after every step when given.
pub fn run_schedule<T: Scalar>(train: &Dataset, dev: &Dataset, cfg: &Config, out: Option<&Path>) -> Result<ScheduleState<T>> {
    if cfg.t == 0 {
        return Err(Error::Config("t must be at least 1".into()));
    }
    cfg.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let runner = Runner {
        train: targeted(train, cfg.task),
        dev: targeted(dev, cfg.task),
        template: cfg.template()?,
        cfg,
        out,
    };
    let (mut scorer, retriever) = init_models::<T>(&runner.train, &runner.template, cfg)?;
    let lm = warm_up(&mut scorer, &runner.train, &runner.template, cfg)?;
    let dev = dev_metrics(&scorer, &retriever, &runner.train, &runner.dev, &runner.template, cfg)?;
    let mut state = ScheduleState {
        step: 0,
        retrievers: vec![retriever],
        scorers: vec![scorer],
        records: vec![StepRecord {
            step: 0,
            retriever: Vec::new(),
            lm,
            dev,
        }],
        checkpoints: Vec::new(),
    };
    runner.persist(&mut state, 0)?;
    for s in 1..=cfg.t {
        runner.step(&mut state, s)?;
    }
    Ok(state)
}

/// Reloads the lineage `0..=from_step` from `checkpoints` and runs the
/// remaining steps. The returned records cover only the new steps.
pub fn resume_schedule<T: Scalar>(
    checkpoints: &Path,
    from_step: usize,
    train: &Dataset,
    dev: &Dataset,
    cfg: &Config,
    out: Option<&Path>,
) -> Result<ScheduleState<T>> {
    cfg.validate()?;
    if from_step > cfg.t {
        return Err(Error::Config(format!("cannot resume from step {from_step} of a {}-step schedule", cfg.t)));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let runner = Runner {
        train: targeted(train, cfg.task),
        dev: targeted(dev, cfg.task),
        template: cfg.template()?,
        cfg,
        out,
    };
    let mut state = ScheduleState {
        step: from_step,
        retrievers: Vec::new(),
        scorers: Vec::new(),
        records: Vec::new(),
        checkpoints: Vec::new(),
    };
    for s in 0..=from_step {
        state.retrievers.push(load_retriever(&retriever_checkpoint(checkpoints, s))?);
        state.scorers.push(load_scorer(&scorer_checkpoint(checkpoints, s))?);
    }
    for s in from_step + 1..=cfg.t {
        runner.step(&mut state, s)?;
    }
    Ok(state)
}
