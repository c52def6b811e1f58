//! Oracles shared by the integration test targets.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use absa_rank::contrastive::{batch_loss_and_gradient, BatchItem, ContrastiveBatch};
use absa_rank::corpus::{AspectLabel, Candidate, ParsedLabel, ParsedPolarity, Polarity, Task};
use absa_rank::eval::Metrics;
use absa_rank::retriever::{Hit, Retriever};
use absa_rank::rng::{self, StageRng};
use absa_rank::scorer::{ReferenceScorer, Scorer, ScorerShape};
use absa_rank::vocab::Vocabulary;
use rand::seq::SliceRandom;
use rand::Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps vanishing gradients from
/// dominating the ratio with round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn fuzz_rng(name: &str, case: u64) -> StageRng {
    rng::stream(0x7e57, name, &[case])
}

fn randomize(buf: &mut [f64], scale: f64, r: &mut StageRng) {
    for x in buf {
        *x = r.gen_range(-scale..scale);
    }
}

/// Four user tokens, so `|V| = 8` with the reserved ids.
pub fn micro_vocab() -> Arc<Vocabulary> {
    Arc::new(Vocabulary::from_tokens(["a", "b", "c", "d"].map(String::from)))
}

pub fn micro_scorer(seed: u64) -> ReferenceScorer<f64> {
    let shape = ScorerShape {
        width: 3,
        positions: 4,
        max_prompt_len: 5,
        recency: 0.7,
    };
    let mut r = fuzz_rng("micro-scorer", seed);
    let mut s = ReferenceScorer::new(micro_vocab(), shape, 0.5, 0.0, &mut r);
    for buf in s.params_mut().buffers_mut() {
        randomize(buf, 0.7, &mut r);
    }
    s
}

fn random_text(r: &mut StageRng, min: usize, max: usize) -> String {
    let words = ["a", "b", "c", "d"];
    let n = r.gen_range(min..=max);
    (0..n).map(|_| *words.choose(r).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Max relative error between the analytic NLL gradient and central
/// differences over every scorer parameter.
pub fn scorer_fd_error(seed: u64) -> f64 {
    let mut r = fuzz_rng("scorer-fd-case", seed);
    let prompt = random_text(&mut r, 1, 5);
    let target = random_text(&mut r, 1, 4);
    let base = micro_scorer(seed);
    let mut grad = base.zero_gradient();
    base.accumulate_gradient(&prompt, &target, &mut grad);

    let nll = |s: &ReferenceScorer<f64>| -s.score(&prompt, &target).total;
    let mut worst: f64 = 0.0;
    for b in 0..3 {
        for i in 0..base.params().buffers()[b].len() {
            let mut plus = base.clone();
            plus.params_mut().buffers_mut()[b][i] += FD_EPS;
            let mut minus = base.clone();
            minus.params_mut().buffers_mut()[b][i] -= FD_EPS;
            let numeric = (nll(&plus) - nll(&minus)) / (2.0 * FD_EPS);
            worst = worst.max(relative_error(grad.buffers()[b][i], numeric));
        }
    }
    worst
}

pub fn micro_retriever(width: usize, seed: u64) -> Retriever<f64> {
    let mut r = fuzz_rng("micro-retriever", seed);
    let mut ret = Retriever::new(micro_vocab(), width, 0.0, &mut r);
    for buf in ret.params_mut().buffers_mut() {
        randomize(buf, 0.9, &mut r);
    }
    ret
}

/// Max relative error of the InfoNCE batch gradient, `d_r = 3`.
pub fn retriever_fd_error(batch_size: usize, seed: u64) -> f64 {
    let mut r = fuzz_rng("retriever-fd-case", seed);
    let items: Vec<BatchItem> = (0..batch_size)
        .map(|i| BatchItem {
            query_id: 100 + i,
            query_input: random_text(&mut r, 1, 4),
            positive: Candidate::new(2 * i, random_text(&mut r, 1, 3), random_text(&mut r, 1, 2)),
            negative: Candidate::new(2 * i + 1, random_text(&mut r, 1, 3), random_text(&mut r, 1, 2)),
        })
        .collect();
    let batch = ContrastiveBatch { items };
    let base = micro_retriever(3, seed);
    let (_, grad) = batch_loss_and_gradient(&base, &batch, true);
    let grad = grad.unwrap();

    let loss = |ret: &Retriever<f64>| batch_loss_and_gradient(ret, &batch, false).0;
    let mut worst: f64 = 0.0;
    for b in 0..3 {
        for i in 0..base.params().buffers()[b].len() {
            let mut plus = base.clone();
            plus.params_mut().buffers_mut()[b][i] += FD_EPS;
            let mut minus = base.clone();
            minus.params_mut().buffers_mut()[b][i] -= FD_EPS;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_EPS);
            worst = worst.max(relative_error(grad.buffers()[b][i], numeric));
        }
    }
    worst
}

/// Exhaustive retrieval: sort everything, then drop the excluded id.
pub fn brute_force_top_m(scores: &[f64], exclude: Option<usize>, m: usize) -> Vec<Hit<f64>> {
    let mut all: Vec<Hit<f64>> = scores
        .iter()
        .enumerate()
        .filter(|(id, _)| Some(*id) != exclude)
        .map(|(id, &similarity)| Hit { id, similarity })
        .collect();
    all.sort_by(|a, b| b.similarity.partial_cmp(&a.similarity).unwrap().then(a.id.cmp(&b.id)));
    all.truncate(m);
    all
}

fn key(term: &str) -> String {
    term.trim().to_lowercase()
}

fn countable(term: &str) -> bool {
    let k = key(term);
    !k.is_empty() && k != "noaspectterm"
}

/// Direct set-counting implementation of micro tuple P/R/F1.
pub fn brute_force_f1(preds: &[Vec<ParsedLabel>], golds: &[Vec<AspectLabel>], task: Task) -> (f64, f64, f64) {
    let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(golds) {
        let gold: BTreeSet<(String, Option<Polarity>)> = g
            .iter()
            .filter(|l| !l.is_sentinel())
            .map(|l| (key(&l.term), (task == Task::Aspe).then_some(l.polarity)))
            .collect();
        let mut pred: BTreeSet<(String, Option<Polarity>, bool)> = BTreeSet::new();
        for l in p {
            match l {
                ParsedLabel::Term(t) if countable(t) => {
                    pred.insert((key(t), None, task != Task::Aspe));
                }
                ParsedLabel::Pair(t, pol) if countable(t) => {
                    let known = match pol {
                        ParsedPolarity::Known(p) => Some(*p),
                        ParsedPolarity::Rejected(_) => None,
                    };
                    match task {
                        Task::Aspe => pred.insert((key(t), known, known.is_some())),
                        _ => pred.insert((key(t), None, true)),
                    };
                }
                _ => {}
            }
        }
        ng += gold.len();
        np += pred.len();
        tp += pred
            .iter()
            .filter(|(t, p, valid)| *valid && gold.contains(&(t.clone(), *p)))
            .count();
    }
    let p = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let r = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn brute_force_accuracy(preds: &[Option<Polarity>], golds: &[Polarity]) -> f64 {
    let hits = preds.iter().zip(golds).filter(|(p, g)| **p == Some(**g)).count();
    hits as f64 / golds.len() as f64
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

pub fn metrics_match(m: &Metrics, p: f64, r: f64, f: f64) -> bool {
    close(m.precision, p) && close(m.recall, r) && close(m.f1, f)
}
