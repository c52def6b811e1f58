use std::path::Path;

use crate::alternating::{run_schedule, StepRecord};
use crate::config::Config;
use crate::corpus::{Candidate, Dataset};
use crate::error::Result;
use crate::retriever::{CandidateIndex, Retriever};
use crate::scalar::Scalar;
use crate::scorer::ReferenceScorer;
use crate::template::InstructionTemplate;

use super::inference::{run_inference, AblationMode, InferenceContext, InferenceReport};

/// Final models of a schedule run plus the example pool they retrieve from.
#[derive(Clone, Debug)]
pub struct TrainedModels<T> {
    pub scorer: ReferenceScorer<T>,
    pub retriever: Retriever<T>,
    pub pool: Vec<Candidate>,
    pub index: CandidateIndex<T>,
    pub template: InstructionTemplate,
    pub config: Config,
    pub records: Vec<StepRecord>,
}

impl<T: Scalar> TrainedModels<T> {
    /// Trains the models `mode` evaluates with. `no_alternating` runs a
    /// single step and `frozen_lm` never fine-tunes past the warm-up.
    pub fn train(train: &Dataset, dev: &Dataset, cfg: &Config, mode: AblationMode, out: Option<&Path>) -> Result<Self> {
        let cfg = schedule_config(cfg, mode);
        let state = run_schedule::<T>(train, dev, &cfg, out)?;
        Self::from_models(state.scorer().clone(), state.retriever().clone(), train, &cfg, state.records)
    }

    pub fn from_models(
        scorer: ReferenceScorer<T>,
        retriever: Retriever<T>,
        train: &Dataset,
        cfg: &Config,
        records: Vec<StepRecord>,
    ) -> Result<Self> {
        let pool = if train.task == cfg.task { train.clone() } else { train.for_task(cfg.task) }.candidates()?;
        let index = CandidateIndex::from_candidates(&retriever, &pool);
        Ok(Self {
            scorer,
            retriever,
            pool,
            index,
            template: cfg.template()?,
            config: cfg.clone(),
            records,
        })
    }

    pub fn context(&self) -> InferenceContext<'_, T, ReferenceScorer<T>> {
        InferenceContext {
            scorer: &self.scorer,
            retriever: &self.retriever,
            index: &self.index,
            pool: &self.pool,
            template: &self.template,
            task: self.config.task,
            seed: self.config.seed,
            max_gen_len: self.config.max_gen_len,
            max_len: self.config.max_len,
            exclude_self: false,
        }
    }

    pub fn evaluate(&self, test: &Dataset, mode: AblationMode) -> Result<InferenceReport> {
        let test = if test.task == self.config.task { test.clone() } else { test.for_task(self.config.task) };
        run_inference(&self.context(), &test, self.config.k, mode)
    }
}

/// The schedule configuration `mode` trains under.
pub fn schedule_config(cfg: &Config, mode: AblationMode) -> Config {
    let mut cfg = cfg.clone();
    cfg.mode = mode;
    match mode {
        AblationMode::NoAlternating => cfg.t = 1,
        AblationMode::FrozenLm => cfg.epochs_lm = 0,
        _ => {}
    }
    cfg
}

/// Trains under `mode` and evaluates on `test`.
pub fn evaluate_mode<T: Scalar>(
    train: &Dataset,
    dev: &Dataset,
    test: &Dataset,
    cfg: &Config,
    mode: AblationMode,
) -> Result<(InferenceReport, TrainedModels<T>)> {
    let models = TrainedModels::<T>::train(train, dev, cfg, mode, None)?;
    Ok((models.evaluate(test, mode)?, models))
}
