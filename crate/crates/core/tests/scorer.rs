mod common;

use std::sync::Arc;

use absa_rank::corpus::generate_synthetic;
use absa_rank::rng;
use absa_rank::scorer::{ReferenceScorer, Scorer, ScorerShape};
use absa_rank::vocab::{Vocabulary, EOS};
use common::micro_scorer;
use proptest::prelude::*;

fn corpus_scorer(seed: u64) -> (ReferenceScorer<f64>, Vec<(String, String)>) {
    let (train, _) = generate_synthetic(60, 20, seed);
    let pairs: Vec<(String, String)> = train
        .samples
        .iter()
        .map(|s| (s.text.clone(), absa_rank::corpus::serialize_label(s, train.task).unwrap()))
        .collect();
    let texts: Vec<&str> = pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect();
    let vocab = Arc::new(Vocabulary::build(texts));
    let shape = ScorerShape {
        width: 8,
        ..ScorerShape::default()
    };
    let mut s = ReferenceScorer::new(vocab, shape, 0.3, 0.0, &mut rng::stream(seed, rng::INIT_SCORER, &[]));
    for (p, t) in pairs.iter().take(20) {
        s.finetune_step(p, t, 0.05).unwrap();
    }
    (s, pairs)
}

#[test]
fn total_matches_chain_rule_over_step_distributions() {
    let (s, pairs) = corpus_scorer(1);
    for (prompt, target) in pairs.iter().take(30) {
        let mut ids = s.vocab().encode(target);
        ids.push(EOS);
        let mut chain = 0.0;
        for l in 0..ids.len() {
            chain += s.step_distribution(prompt, &ids[..l])[ids[l] as usize].ln();
        }
        let ll = s.score(prompt, target);
        assert!((ll.total - chain).abs() < 1e-9, "{} vs {chain}", ll.total);
    }
}

#[test]
fn greedy_first_token_is_the_argmax() {
    let (s, pairs) = corpus_scorer(2);
    for (prompt, _) in pairs.iter().take(30) {
        let p = s.step_distribution(prompt, &[]);
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        let generated = s.generate(prompt, 1);
        let first = s.vocab().encode(&generated).first().copied().unwrap_or(EOS);
        assert_eq!(first as usize, best);
        // Swapping the first generated token for any other lowers its log-probability.
        assert!(p.iter().all(|&q| q <= p[best]));
    }
}

#[test]
fn memorizes_a_single_pair() {
    let (mut s, _) = corpus_scorer(3);
    let prompt = "the battery was really long";
    let target = "battery: positive";
    for _ in 0..300 {
        s.finetune_step(prompt, target, 0.02).unwrap();
    }
    assert_eq!(s.generate(prompt, 16), target);
}

#[test]
fn two_hundred_steps_lower_the_loss() {
    let (mut s, pairs) = corpus_scorer(4);
    let (prompt, target) = &pairs[40];
    let first = s.finetune_step(prompt, target, 1e-2).unwrap();
    let mut last = first;
    for _ in 0..200 {
        last = s.finetune_step(prompt, target, 1e-2).unwrap();
    }
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn frozen_scorer_is_bitwise_stable() {
    let (s, pairs) = corpus_scorer(5);
    let (prompt, target) = &pairs[0];
    let a = (s.score(prompt, target), s.generate(prompt, 16));
    let b = (s.score(prompt, target), s.generate(prompt, 16));
    assert_eq!(a, b);
}

#[test]
fn f32_and_f64_agree_on_a_trained_micro_model() {
    let s64 = micro_scorer(9);
    let params = s64.params();
    let cast = |b: &[f64]| b.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let p32 = absa_rank::scorer::ScorerParams {
        embedding: cast(&params.embedding),
        output: cast(&params.output),
        bias: cast(&params.bias),
    };
    let s32 = ReferenceScorer::<f32>::from_params(s64.vocab_arc().clone(), s64.shape(), p32, 0.0);
    let (a, b) = (s64.score("a b c", "d a"), s32.score("a b c", "d a"));
    assert!((a.total - b.total as f64).abs() < 1e-4);
}

fn micro_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "zz"]), 1..6).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_likelihood_is_additive_and_non_positive(seed in 0u64..1000, prompt in micro_text(), target in micro_text()) {
        let s = micro_scorer(seed);
        let ll = s.score(&prompt, &target);
        let sum: f64 = ll.per_token.iter().sum();
        prop_assert!((ll.total - sum).abs() < 1e-9);
        prop_assert!(ll.per_token.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn null_update_keeps_parameters(seed in 0u64..1000, prompt in micro_text(), target in micro_text()) {
        let mut s = micro_scorer(seed);
        let before = s.params().clone();
        let expected = -s.score(&prompt, &target).total;
        let loss = s.finetune_step(&prompt, &target, 0.0).unwrap();
        prop_assert_eq!(s.params(), &before);
        prop_assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn step_distribution_is_normalized(seed in 0u64..1000, prompt in micro_text(), prefix in prop::collection::vec(0u32..8, 0..4)) {
        let s = micro_scorer(seed);
        let p = s.step_distribution(&prompt, &prefix);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
