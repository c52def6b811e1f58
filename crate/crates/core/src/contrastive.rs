//! Likelihood-supervised candidate labeling and contrastive retriever training.
//!
//! For each labeling query the scorer rates every candidate by the
//! log-likelihood it gives the query's gold output when the candidate is the
//! single in-context example. The best `k` form the positive set, the worst
//! `k` the negative set. A batch of `B` queries, each with one positive and
//! one negative, is trained with an InfoNCE objective where every query sees
//! the other queries' positives and negatives as extra negatives.

use log::info;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::corpus::{Candidate, Dataset};
use crate::error::{Error, Result};
use crate::retriever::{retrieve, CandidateIndex, Retriever, RetrieverGradient};
use crate::rng::{self, StageRng};
use crate::scalar::{dot, log_sum_exp, Scalar};
use crate::scorer::Scorer;
use crate::template::{candidate_text, query_text, InstructionTemplate};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: usize,
    /// Log-likelihood of the query's gold output with this candidate as the example.
    pub delta: f64,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCandidates {
    /// Best `k` by delta, best first.
    pub positives: Vec<ScoredCandidate>,
    /// Worst `k` by delta, in the same descending order.
    pub negatives: Vec<ScoredCandidate>,
}

/// Sorts by descending delta (ties: ascending id) and takes the two ends.
pub fn split_by_delta(mut scored: Vec<ScoredCandidate>, k: usize) -> Result<LabeledCandidates> {
    if scored.len() < 2 * k {
        return Err(Error::TooFewCandidates {
            required: 2 * k,
            got: scored.len(),
            k,
        });
    }
    scored.sort_by(|a, b| b.delta.total_cmp(&a.delta).then(a.id.cmp(&b.id)));
    let negatives = scored.split_off(scored.len() - k);
    scored.truncate(k);
    Ok(LabeledCandidates {
        positives: scored,
        negatives,
    })
}

/// Scores each `(candidate, similarity)` for `query` and splits into
/// positives and negatives.
pub fn label_candidates<S: Scorer>(
    scorer: &S,
    template: &InstructionTemplate,
    query: &Candidate,
    candidates: &[(Candidate, f64)],
    k: usize,
) -> Result<LabeledCandidates> {
    if candidates.len() < 2 * k {
        return Err(Error::TooFewCandidates {
            required: 2 * k,
            got: candidates.len(),
            k,
        });
    }
    debug_assert!(candidates.iter().all(|(c, _)| c.id != query.id));
    let scored = candidates
        .par_iter()
        .map(|(c, sim)| {
            let prompt = template.render(std::slice::from_ref(c), &query.input, 1);
            ScoredCandidate {
                id: c.id,
                delta: scorer.score(&prompt, &query.output).total.as_f64(),
                similarity: *sim,
            }
        })
        .collect();
    split_by_delta(scored, k)
}

/// `⌈r·n⌉`, guarding against float noise just above an integer.
pub fn subset_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Ids of `⌈r·n⌉` samples drawn without replacement.
pub fn sample_training_subset(n: usize, ratio: f64, rng: &mut StageRng) -> Vec<usize> {
    let size = subset_size(n, ratio).min(n);
    index::sample(rng, n, size).into_vec()
}

/// `-log(e^{s+} / (e^{s+} + Σ e^{s-}))` with inner-product similarities.
pub fn infonce_loss<T: Scalar>(query: &[T], positive: &[T], negatives: &[&[T]]) -> T {
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(dot(query, positive));
    logits.extend(negatives.iter().map(|n| dot(query, n)));
    log_sum_exp(&logits) - logits[0]
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub query_id: usize,
    pub query_input: String,
    pub positive: Candidate,
    pub negative: Candidate,
}

/// `B` queries; query `i` is contrasted against its own negative plus every
/// other query's positive and negative (`2B - 1` negatives). A candidate that
/// is the query's own sample is masked out.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveBatch {
    pub items: Vec<BatchItem>,
}

impl ContrastiveBatch {
    fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.items.iter().flat_map(|it| [&it.positive, &it.negative])
    }

    /// Ids of the negatives seen by item `i`.
    pub fn negatives_for(&self, i: usize) -> Vec<usize> {
        let q = self.items[i].query_id;
        self.candidates()
            .enumerate()
            .filter(|&(j, c)| j != 2 * i && c.id != q)
            .map(|(_, c)| c.id)
            .collect()
    }
}

/// Mean InfoNCE over the batch and its gradient.
pub fn batch_loss_and_gradient<T: Scalar>(
    retriever: &Retriever<T>,
    batch: &ContrastiveBatch,
    want_gradient: bool,
) -> (T, Option<RetrieverGradient<T>>) {
    let b = batch.items.len();
    let q_texts: Vec<String> = batch.items.iter().map(|it| query_text(&it.query_input)).collect();
    let c_list: Vec<&Candidate> = batch.candidates().collect();
    let c_texts: Vec<String> = c_list.iter().map(|c| candidate_text(c)).collect();
    let hq: Vec<Vec<T>> = q_texts.iter().map(|t| retriever.encode_text(t)).collect();
    let hc: Vec<Vec<T>> = c_texts.iter().map(|t| retriever.encode_text(t)).collect();

    let scale = T::lit(1.0 / b as f64);
    let mut loss = T::zero();
    let mut d_s = vec![vec![T::zero(); hc.len()]; b];
    for i in 0..b {
        let active: Vec<usize> = (0..hc.len())
            .filter(|&j| j == 2 * i || c_list[j].id != batch.items[i].query_id)
            .collect();
        let logits: Vec<T> = active.iter().map(|&j| dot(&hq[i], &hc[j])).collect();
        let lse = log_sum_exp(&logits);
        let pos = active.iter().position(|&j| j == 2 * i).expect("positive is active");
        loss += (lse - logits[pos]) * scale;
        for (a, &j) in active.iter().enumerate() {
            let p = (logits[a] - lse).exp();
            d_s[i][j] = (p - if j == 2 * i { T::one() } else { T::zero() }) * scale;
        }
    }
    if !want_gradient {
        return (loss, None);
    }

    let d = retriever.width();
    let mut grad = retriever.zero_gradient();
    for i in 0..b {
        let mut d_hq = vec![T::zero(); d];
        for j in 0..hc.len() {
            for (a, &x) in d_hq.iter_mut().zip(&hc[j]) {
                *a += d_s[i][j] * x;
            }
        }
        retriever.accumulate_text_gradient(&q_texts[i], &d_hq, &mut grad);
    }
    for j in 0..hc.len() {
        let mut d_hc = vec![T::zero(); d];
        for i in 0..b {
            for (a, &x) in d_hc.iter_mut().zip(&hq[i]) {
                *a += d_s[i][j] * x;
            }
        }
        retriever.accumulate_text_gradient(&c_texts[j], &d_hc, &mut grad);
    }
    (loss, Some(grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieverEpoch {
    pub step: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean over queries of `mean sim(q, C+) - mean sim(q, C-)` after the epoch.
    pub separation: f64,
    pub queries: usize,
    pub bootstrap: bool,
}

struct LabeledQuery {
    query: Candidate,
    labels: LabeledCandidates,
}

/// Trains `retriever` on labeling queries drawn from `pool`.
///
/// With `bootstrap`, the first epoch draws `m` random candidates per query
/// instead of retrieving them. The candidate index is rebuilt once per epoch.
pub fn train_retriever<T: Scalar, S: Scorer>(
    retriever: &mut Retriever<T>,
    pool: &Dataset,
    scorer: &S,
    template: &InstructionTemplate,
    cfg: &Config,
    step: usize,
    bootstrap: bool,
) -> Result<Vec<RetrieverEpoch>> {
    let cands = pool.candidates()?;
    let queries = sample_training_subset(pool.len(), cfg.ratio, &mut rng::stream(cfg.seed, rng::SUBSET, &[step as u64]));
    let k = cfg.label_k();
    retriever.reset_optimizer();
    let mut report = Vec::with_capacity(cfg.epochs_retriever);

    for epoch in 0..cfg.epochs_retriever {
        let random_pool = bootstrap && epoch == 0;
        let index = CandidateIndex::from_candidates(retriever, &cands);
        let labeled: Vec<LabeledQuery> = queries
            .par_iter()
            .map(|&qid| {
                let query = cands[qid].clone();
                let pool_cands: Vec<(Candidate, f64)> = if random_pool {
                    let mut r = rng::stream(cfg.seed, rng::BOOTSTRAP, &[step as u64, qid as u64]);
                    let n = cands.len();
                    index::sample(&mut r, n, (cfg.m + 1).min(n))
                        .into_iter()
                        .filter(|&id| id != qid)
                        .take(cfg.m)
                        .map(|id| (cands[id].clone(), 0.0))
                        .collect()
                } else {
                    retrieve(retriever, &index, &query.input, Some(qid), cfg.m)?
                        .hits
                        .into_iter()
                        .map(|h| (cands[h.id].clone(), h.similarity.as_f64()))
                        .collect()
                };
                let labels = label_candidates(scorer, template, &query, &pool_cands, k)?;
                Ok(LabeledQuery { query, labels })
            })
            .collect::<Result<_>>()?;

        let path = [step as u64, epoch as u64];
        let mut pos_rng = rng::stream(cfg.seed, rng::POSITIVE, &path);
        let mut neg_rng = rng::stream(cfg.seed, rng::NEGATIVE, &path);
        let mut items: Vec<BatchItem> = labeled
            .iter()
            .map(|lq| {
                let p = lq.labels.positives[pos_rng.gen_range(0..lq.labels.positives.len())].id;
                let n = lq.labels.negatives[neg_rng.gen_range(0..lq.labels.negatives.len())].id;
                BatchItem {
                    query_id: lq.query.id,
                    query_input: lq.query.input.clone(),
                    positive: cands[p].clone(),
                    negative: cands[n].clone(),
                }
            })
            .collect();
        items.shuffle(&mut rng::stream(cfg.seed, rng::BATCH, &path));

        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in items.chunks(cfg.batch_size) {
            let batch = ContrastiveBatch { items: chunk.to_vec() };
            let (loss, grad) = batch_loss_and_gradient(retriever, &batch, true);
            retriever.apply_gradient(&grad.expect("requested"), 1.0, cfg.lr)?;
            total += loss.as_f64();
            batches += 1;
        }

        let separation = mean_separation(retriever, &labeled, &cands);
        let mean_loss = if batches == 0 { 0.0 } else { total / batches as f64 };
        info!("retriever step {step} epoch {epoch}: loss {mean_loss:.5} separation {separation:.5}");
        report.push(RetrieverEpoch {
            step,
            epoch,
            mean_loss,
            separation,
            queries: labeled.len(),
            bootstrap: random_pool,
        });
    }
    Ok(report)
}

fn mean_separation<T: Scalar>(retriever: &Retriever<T>, labeled: &[LabeledQuery], cands: &[Candidate]) -> f64 {
    if labeled.is_empty() {
        return 0.0;
    }
    let per_query: Vec<f64> = labeled
        .par_iter()
        .map(|lq| {
            let q = retriever.encode_query(&lq.query.input);
            let mean = |set: &[ScoredCandidate]| {
                set.iter()
                    .map(|s| dot(&q, &retriever.encode_candidate(&cands[s.id])).as_f64())
                    .sum::<f64>()
                    / set.len() as f64
            };
            mean(&lq.labels.positives) - mean(&lq.labels.negatives)
        })
        .collect();
    per_query.iter().sum::<f64>() / per_query.len() as f64
}
