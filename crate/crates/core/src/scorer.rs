//! Conditional sequence scorer/generator.
//!
//! [`Scorer`] is the contract the pipeline uses: teacher-forced
//! log-likelihood, next-token distributions, greedy decoding and NLL
//! fine-tuning. [`ReferenceScorer`] implements it with a small model that is
//! trained from scratch:
//!
//! * encoder states: `e` = mean of the prompt's token embeddings and `r` =
//!   the same mean with weights `γ^(n-1-i)` favouring the prompt's tail,
//! * decoder memory `m_l` = mean embedding of the tokens emitted so far,
//! * step input `z_l = [e ; r ; E[y_{l-1}] ; m_l ; onehot(l)]`,
//! * logits `W z_l + b` over the vocabulary.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::{first_non_finite, AdamW};
use crate::rng::StageRng;
use crate::scalar::{log_sum_exp, softmax_in_place, Scalar};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS};

/// Teacher-forced log-likelihood of a target, in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLikelihood<T> {
    pub total: T,
    pub per_token: Vec<T>,
}

pub trait Scorer: Send + Sync {
    type Scalar: Scalar;
    type Gradient: Send;

    fn vocab(&self) -> &Vocabulary;

    /// `Σ_l log p(y_l | prompt, y_<l)` including the end token.
    fn score(&self, prompt: &str, target: &str) -> LogLikelihood<Self::Scalar>;

    /// Next-token distribution after `prefix` (target ids, without the begin token).
    fn step_distribution(&self, prompt: &str, prefix: &[TokenId]) -> Vec<Self::Scalar>;

    /// Greedy decoding of at most `max_len` tokens.
    fn generate(&self, prompt: &str, max_len: usize) -> String;

    fn zero_gradient(&self) -> Self::Gradient;

    /// Adds the NLL gradient for one pair into `grad` and returns the NLL.
    fn accumulate_gradient(&self, prompt: &str, target: &str, grad: &mut Self::Gradient) -> f64;

    /// One optimizer step with `grad * grad_scale`.
    fn apply_gradient(&mut self, grad: &Self::Gradient, grad_scale: f64, lr: f64) -> Result<()>;

    /// Discards optimizer moments.
    fn reset_optimizer(&mut self);

    /// Returns the NLL before the update.
    fn finetune_step(&mut self, prompt: &str, target: &str, lr: f64) -> Result<f64> {
        let mut g = self.zero_gradient();
        let loss = self.accumulate_gradient(prompt, target, &mut g);
        self.apply_gradient(&g, 1.0, lr)?;
        Ok(loss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScorerShape {
    /// Embedding width `d`.
    pub width: usize,
    /// Number of distinct position codes; later steps share the last one.
    pub positions: usize,
    /// Prompts longer than this keep only their last tokens.
    pub max_prompt_len: usize,
    /// Per-token decay `γ ∈ (0, 1]` of the tail-weighted encoder state.
    pub recency: f64,
}

impl Default for ScorerShape {
    fn default() -> Self {
        Self {
            width: 64,
            positions: 32,
            max_prompt_len: 128,
            recency: 0.9,
        }
    }
}

/// Parameters of [`ReferenceScorer`], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams<T> {
    /// `|V| × d`
    pub embedding: Vec<T>,
    /// `|V| × (4d + positions)`
    pub output: Vec<T>,
    /// `|V|`
    pub bias: Vec<T>,
}

impl<T: Scalar> ScorerParams<T> {
    pub fn zeros(vocab: usize, shape: ScorerShape) -> Self {
        Self {
            embedding: vec![T::zero(); vocab * shape.width],
            output: vec![T::zero(); vocab * (FEATURE_BLOCKS * shape.width + shape.positions)],
            bias: vec![T::zero(); vocab],
        }
    }

    pub fn buffers(&self) -> [&[T]; 3] {
        [&self.embedding, &self.output, &self.bias]
    }

    pub fn buffers_mut(&mut self) -> [&mut [T]; 3] {
        [&mut self.embedding, &mut self.output, &mut self.bias]
    }

    fn sizes(&self) -> [usize; 3] {
        [self.embedding.len(), self.output.len(), self.bias.len()]
    }
}

pub type ScorerGradient<T> = ScorerParams<T>;

/// Embedding-sized blocks of the step input: `e`, `r`, previous token, memory.
const FEATURE_BLOCKS: usize = 4;

const PARAM_NAMES: [&str; 3] = ["embedding", "output", "bias"];

#[derive(Clone, Debug)]
pub struct ReferenceScorer<T> {
    vocab: Arc<Vocabulary>,
    shape: ScorerShape,
    params: ScorerParams<T>,
    opt: AdamW<T>,
}

impl<T: Scalar> ReferenceScorer<T> {
    /// Embeddings uniform in `±init_scale`, output layer zero (so the untrained
    /// model predicts the uniform distribution).
    pub fn new(vocab: Arc<Vocabulary>, shape: ScorerShape, init_scale: f64, weight_decay: f64, rng: &mut StageRng) -> Self {
        let mut params = ScorerParams::zeros(vocab.len(), shape);
        for w in params.embedding.iter_mut() {
            *w = T::lit(rng.gen_range(-init_scale..=init_scale));
        }
        Self::from_params(vocab, shape, params, weight_decay)
    }

    pub fn from_params(vocab: Arc<Vocabulary>, shape: ScorerShape, params: ScorerParams<T>, weight_decay: f64) -> Self {
        assert_eq!(params.sizes(), ScorerParams::<T>::zeros(vocab.len(), shape).sizes(), "parameter shapes");
        let opt = AdamW::new(&params.sizes(), weight_decay);
        Self {
            vocab,
            shape,
            params,
            opt,
        }
    }

    pub fn shape(&self) -> ScorerShape {
        self.shape
    }

    pub fn vocab_arc(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn params(&self) -> &ScorerParams<T> {
        &self.params
    }

    /// Direct parameter access (gradient checks, checkpoint restore).
    pub fn params_mut(&mut self) -> &mut ScorerParams<T> {
        &mut self.params
    }

    pub fn weight_decay(&self) -> f64 {
        self.opt.weight_decay
    }

    fn feature_width(&self) -> usize {
        FEATURE_BLOCKS * self.shape.width + self.shape.positions
    }

    fn prompt_ids(&self, prompt: &str) -> Vec<TokenId> {
        let mut ids = self.vocab.encode(prompt);
        if ids.len() > self.shape.max_prompt_len {
            ids.drain(..ids.len() - self.shape.max_prompt_len);
        }
        ids
    }

    fn target_ids(&self, target: &str) -> Vec<TokenId> {
        let mut ids = self.vocab.encode(target);
        ids.push(EOS);
        ids
    }

    fn emb_row(&self, id: TokenId) -> &[T] {
        let d = self.shape.width;
        &self.params.embedding[id as usize * d..(id as usize + 1) * d]
    }

    /// Pooling weights of the two encoder states, each summing to one.
    fn pooling_weights(&self, n: usize) -> (T, Vec<T>) {
        let gamma = self.shape.recency;
        let raw: Vec<f64> = (0..n).map(|i| gamma.powi((n - 1 - i) as i32)).collect();
        let total: f64 = raw.iter().sum();
        (T::lit(1.0 / n.max(1) as f64), raw.into_iter().map(|w| T::lit(w / total)).collect())
    }

    /// `[e ; r]`, zero for an empty prompt.
    fn encoder_state(&self, ids: &[TokenId]) -> Vec<T> {
        let d = self.shape.width;
        let mut e = vec![T::zero(); 2 * d];
        let (mean_w, tail_w) = self.pooling_weights(ids.len());
        for (&id, &tw) in ids.iter().zip(&tail_w) {
            for (j, &w) in self.emb_row(id).iter().enumerate() {
                e[j] += mean_w * w;
                e[d + j] += tw * w;
            }
        }
        e
    }

    /// `W[:, :2d] [e ; r] + b`, shared by every decoding step.
    fn base_logits(&self, enc: &[T]) -> Vec<T> {
        let (d, f) = (self.shape.width, self.feature_width());
        (0..self.vocab.len())
            .map(|r| {
                let row = &self.params.output[r * f..r * f + 2 * d];
                self.params.bias[r] + crate::scalar::dot(row, enc)
            })
            .collect()
    }

    fn position(&self, step: usize) -> usize {
        step.min(self.shape.positions - 1)
    }

    fn step_logits(&self, base: &[T], prev: TokenId, memory: &[T], step: usize) -> Vec<T> {
        let (d, f) = (self.shape.width, self.feature_width());
        let prev_emb = self.emb_row(prev);
        let pos = FEATURE_BLOCKS * d + self.position(step);
        (0..self.vocab.len())
            .map(|r| {
                let row = &self.params.output[r * f..(r + 1) * f];
                base[r]
                    + crate::scalar::dot(&row[2 * d..3 * d], prev_emb)
                    + crate::scalar::dot(&row[3 * d..4 * d], memory)
                    + row[pos]
            })
            .collect()
    }

    /// Mean embedding of `emitted`, zero when nothing was emitted yet.
    fn memory(&self, emitted: &[TokenId]) -> Vec<T> {
        let mut m = vec![T::zero(); self.shape.width];
        if emitted.is_empty() {
            return m;
        }
        for &id in emitted {
            for (a, &w) in m.iter_mut().zip(self.emb_row(id)) {
                *a += w;
            }
        }
        let n = T::lit(emitted.len() as f64);
        m.iter_mut().for_each(|x| *x /= n);
        m
    }
}

impl<T: Scalar> Scorer for ReferenceScorer<T> {
    type Scalar = T;
    type Gradient = ScorerGradient<T>;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, prompt: &str, target: &str) -> LogLikelihood<T> {
        let enc = self.encoder_state(&self.prompt_ids(prompt));
        let base = self.base_logits(&enc);
        let ids = self.target_ids(target);
        let per_token: Vec<T> = ids
            .iter()
            .enumerate()
            .map(|(step, &y)| {
                let prev = if step == 0 { BOS } else { ids[step - 1] };
                let logits = self.step_logits(&base, prev, &self.memory(&ids[..step]), step);
                logits[y as usize] - log_sum_exp(&logits)
            })
            .collect();
        let total = per_token.iter().copied().sum();
        LogLikelihood { total, per_token }
    }

    fn step_distribution(&self, prompt: &str, prefix: &[TokenId]) -> Vec<T> {
        let enc = self.encoder_state(&self.prompt_ids(prompt));
        let base = self.base_logits(&enc);
        let prev = prefix.last().copied().unwrap_or(BOS);
        let mut p = self.step_logits(&base, prev, &self.memory(prefix), prefix.len());
        softmax_in_place(&mut p);
        p
    }

    fn generate(&self, prompt: &str, max_len: usize) -> String {
        let enc = self.encoder_state(&self.prompt_ids(prompt));
        let base = self.base_logits(&enc);
        let mut out: Vec<TokenId> = Vec::new();
        let mut prev = BOS;
        for step in 0..max_len {
            let mut p = self.step_logits(&base, prev, &self.memory(&out), step);
            softmax_in_place(&mut p);
            let next = argmax(&p) as TokenId;
            if next == EOS {
                break;
            }
            out.push(next);
            prev = next;
        }
        self.vocab.decode(&out)
    }

    fn zero_gradient(&self) -> ScorerGradient<T> {
        ScorerParams::zeros(self.vocab.len(), self.shape)
    }

    fn accumulate_gradient(&self, prompt: &str, target: &str, grad: &mut ScorerGradient<T>) -> f64 {
        let (d, f) = (self.shape.width, self.feature_width());
        let prompt_ids = self.prompt_ids(prompt);
        let enc = self.encoder_state(&prompt_ids);
        let base = self.base_logits(&enc);
        let ids = self.target_ids(target);
        let mut d_enc = vec![T::zero(); 2 * d];
        let mut d_prev = vec![T::zero(); d];
        let mut d_mem = vec![T::zero(); d];
        let mut nll = T::zero();
        for (step, &y) in ids.iter().enumerate() {
            let prev = if step == 0 { BOS } else { ids[step - 1] };
            let memory = self.memory(&ids[..step]);
            let mut g = self.step_logits(&base, prev, &memory, step);
            nll += log_sum_exp(&g) - g[y as usize];
            softmax_in_place(&mut g);
            g[y as usize] -= T::one();

            let pos = FEATURE_BLOCKS * d + self.position(step);
            d_prev.iter_mut().for_each(|x| *x = T::zero());
            d_mem.iter_mut().for_each(|x| *x = T::zero());
            let prev_emb = self.emb_row(prev);
            for (r, &gr) in g.iter().enumerate() {
                let row = &self.params.output[r * f..(r + 1) * f];
                let grow = &mut grad.output[r * f..(r + 1) * f];
                for j in 0..2 * d {
                    grow[j] += gr * enc[j];
                    d_enc[j] += gr * row[j];
                }
                for j in 0..d {
                    grow[2 * d + j] += gr * prev_emb[j];
                    grow[3 * d + j] += gr * memory[j];
                    d_prev[j] += gr * row[2 * d + j];
                    d_mem[j] += gr * row[3 * d + j];
                }
                grow[pos] += gr;
                grad.bias[r] += gr;
            }
            add_row(&mut grad.embedding, prev, &d_prev, T::one(), d);
            if step > 0 {
                let share = T::lit(1.0 / step as f64);
                for &id in &ids[..step] {
                    add_row(&mut grad.embedding, id, &d_mem, share, d);
                }
            }
        }
        let (mean_w, tail_w) = self.pooling_weights(prompt_ids.len());
        for (&id, &tw) in prompt_ids.iter().zip(&tail_w) {
            add_row(&mut grad.embedding, id, &d_enc[..d], mean_w, d);
            add_row(&mut grad.embedding, id, &d_enc[d..], tw, d);
        }
        nll.as_f64()
    }

    fn apply_gradient(&mut self, grad: &ScorerGradient<T>, grad_scale: f64, lr: f64) -> Result<()> {
        for (name, buf) in PARAM_NAMES.iter().zip(grad.buffers()) {
            if let Some(index) = first_non_finite(buf) {
                return Err(Error::NonFiniteGradient { param: name, index });
            }
        }
        let grads = grad.buffers();
        self.opt.step(&mut self.params.buffers_mut(), &grads, grad_scale, lr);
        Ok(())
    }

    fn reset_optimizer(&mut self) {
        self.opt = AdamW::new(&self.params.sizes(), self.opt.weight_decay);
    }
}

/// `table[id] += scale * delta` on a row-major `|V| × d` table.
fn add_row<T: Scalar>(table: &mut [T], id: TokenId, delta: &[T], scale: T, d: usize) {
    let row = &mut table[id as usize * d..(id as usize + 1) * d];
    for (a, &b) in row.iter_mut().zip(delta) {
        *a += scale * b;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::build(["the food was good : positive ; service bad negative"]))
    }

    fn scorer(shape: ScorerShape) -> ReferenceScorer<f64> {
        ReferenceScorer::new(tiny_vocab(), shape, 0.5, 0.0, &mut rng::stream(1, rng::INIT_SCORER, &[]))
    }

    #[test]
    fn untrained_model_is_uniform() {
        let s = scorer(ScorerShape::default());
        let v = s.vocab().len() as f64;
        let ll = s.score("the food was good", "food : positive");
        assert_eq!(ll.per_token.len(), 4);
        assert!((ll.total + 4.0 * v.ln()).abs() < 1e-9);
    }

    #[test]
    fn total_is_sum_of_tokens() {
        let mut s = scorer(ScorerShape::default());
        for _ in 0..5 {
            s.finetune_step("the food", "food : positive", 0.05).unwrap();
        }
        let ll = s.score("the food was bad", "service : negative");
        let sum: f64 = ll.per_token.iter().sum();
        assert!((ll.total - sum).abs() < 1e-9);
        assert!(ll.per_token.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn max_len_caps_generation() {
        let mut s = scorer(ScorerShape::default());
        for _ in 0..50 {
            s.finetune_step("the food", "food : positive", 0.05).unwrap();
        }
        let out = s.generate("the food", 1);
        assert!(crate::vocab::tokenize(&out).len() <= 1);
        assert_eq!(out, "food");
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut s = scorer(ScorerShape::default());
        s.finetune_step("the food", "good", 0.1).unwrap();
        let before = s.params().clone();
        let expected = -s.score("the food was", "good").total;
        let loss = s.finetune_step("the food was", "good", 0.0).unwrap();
        assert_eq!(s.params(), &before);
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut s = scorer(ScorerShape::default());
        let mut g = s.zero_gradient();
        g.bias[2] = f64::NAN;
        match s.apply_gradient(&g, 1.0, 0.1) {
            Err(Error::NonFiniteGradient { param, index }) => assert_eq!((param, index), ("bias", 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn long_prompts_keep_their_tail() {
        let shape = ScorerShape {
            max_prompt_len: 2,
            ..ScorerShape::default()
        };
        let mut s = scorer(shape);
        s.finetune_step("food good", "positive", 0.1).unwrap();
        assert_eq!(s.score("service bad food good", "positive"), s.score("food good", "positive"));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.1_f64, 0.3, 0.3]), 1);
    }
}
