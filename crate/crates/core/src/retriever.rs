//! Dense retriever: mean-pooled token encoder, inner-product similarity and
//! exact top-m search over a candidate index.
//!
//! Token output `o_t = P tanh(E[t]) + c`; the text embedding is the mean of
//! the `o_t`. The encoder carries no position information.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{Candidate, Dataset};
use crate::error::{Error, Result};
use crate::optim::{first_non_finite, AdamW};
use crate::rng::StageRng;
use crate::scalar::{dot, Scalar};
use crate::template::{candidate_text, query_text};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverParams<T> {
    /// `|V| × d_r`
    pub embedding: Vec<T>,
    /// `d_r × d_r`
    pub projection: Vec<T>,
    /// `d_r`
    pub bias: Vec<T>,
}

impl<T: Scalar> RetrieverParams<T> {
    pub fn zeros(vocab: usize, width: usize) -> Self {
        Self {
            embedding: vec![T::zero(); vocab * width],
            projection: vec![T::zero(); width * width],
            bias: vec![T::zero(); width],
        }
    }

    pub fn buffers(&self) -> [&[T]; 3] {
        [&self.embedding, &self.projection, &self.bias]
    }

    pub fn buffers_mut(&mut self) -> [&mut [T]; 3] {
        [&mut self.embedding, &mut self.projection, &mut self.bias]
    }

    fn sizes(&self) -> [usize; 3] {
        [self.embedding.len(), self.projection.len(), self.bias.len()]
    }
}

pub type RetrieverGradient<T> = RetrieverParams<T>;

const PARAM_NAMES: [&str; 3] = ["embedding", "projection", "bias"];

#[derive(Clone, Debug)]
pub struct Retriever<T> {
    vocab: Arc<Vocabulary>,
    width: usize,
    params: RetrieverParams<T>,
    /// Bumped on every parameter change; indexes record the version they saw.
    version: u64,
    opt: AdamW<T>,
}

impl<T: Scalar> Retriever<T> {
    /// Embeddings standard-normal-ish (uniform, unit variance), projection
    /// uniform with variance `1/d_r`, bias zero.
    pub fn new(vocab: Arc<Vocabulary>, width: usize, weight_decay: f64, rng: &mut StageRng) -> Self {
        let mut params = RetrieverParams::zeros(vocab.len(), width);
        let a = 3f64.sqrt();
        for w in params.embedding.iter_mut() {
            *w = T::lit(rng.gen_range(-a..=a));
        }
        let b = a / (width as f64).sqrt();
        for w in params.projection.iter_mut() {
            *w = T::lit(rng.gen_range(-b..=b));
        }
        Self::from_params(vocab, width, params, weight_decay)
    }

    pub fn from_params(vocab: Arc<Vocabulary>, width: usize, params: RetrieverParams<T>, weight_decay: f64) -> Self {
        assert_eq!(params.sizes(), RetrieverParams::<T>::zeros(vocab.len(), width).sizes(), "parameter shapes");
        let opt = AdamW::new(&params.sizes(), weight_decay);
        Self {
            vocab,
            width,
            params,
            version: 0,
            opt,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &RetrieverParams<T> {
        &self.params
    }

    pub fn weight_decay(&self) -> f64 {
        self.opt.weight_decay
    }

    /// Mutable parameter access; invalidates existing indexes.
    pub fn params_mut(&mut self) -> &mut RetrieverParams<T> {
        self.version += 1;
        &mut self.params
    }

    fn squashed(&self, id: TokenId) -> impl Iterator<Item = T> + '_ {
        let d = self.width;
        self.params.embedding[id as usize * d..(id as usize + 1) * d].iter().map(|x| x.tanh())
    }

    fn project(&self, u: &[T]) -> Vec<T> {
        let d = self.width;
        (0..d)
            .map(|i| self.params.bias[i] + dot(&self.params.projection[i * d..(i + 1) * d], u))
            .collect()
    }

    /// Per-token encoder outputs `o_t`.
    pub fn token_outputs(&self, text: &str) -> Vec<Vec<T>> {
        self.vocab
            .encode(text)
            .into_iter()
            .map(|id| self.project(&self.squashed(id).collect::<Vec<_>>()))
            .collect()
    }

    /// Mean-pooled embedding of raw text; the empty text maps to zero.
    pub fn encode_text(&self, text: &str) -> Vec<T> {
        let ids = self.vocab.encode(text);
        if ids.is_empty() {
            return vec![T::zero(); self.width];
        }
        let mut u = vec![T::zero(); self.width];
        for &id in &ids {
            for (a, s) in u.iter_mut().zip(self.squashed(id)) {
                *a += s;
            }
        }
        let n = T::lit(ids.len() as f64);
        u.iter_mut().for_each(|x| *x /= n);
        self.project(&u)
    }

    pub fn encode_candidate(&self, c: &Candidate) -> Vec<T> {
        self.encode_text(&candidate_text(c))
    }

    pub fn encode_query(&self, input: &str) -> Vec<T> {
        self.encode_text(&query_text(input))
    }

    /// Back-propagates `d loss / d h` for the embedding of `text` into `grad`.
    pub fn accumulate_text_gradient(&self, text: &str, d_h: &[T], grad: &mut RetrieverGradient<T>) {
        let d = self.width;
        let ids = self.vocab.encode(text);
        if ids.is_empty() {
            return;
        }
        let n = T::lit(ids.len() as f64);
        let mut u = vec![T::zero(); d];
        for &id in &ids {
            for (a, s) in u.iter_mut().zip(self.squashed(id)) {
                *a += s;
            }
        }
        u.iter_mut().for_each(|x| *x /= n);
        // h = P u + c
        let mut d_u = vec![T::zero(); d];
        for i in 0..d {
            grad.bias[i] += d_h[i];
            let row = &self.params.projection[i * d..(i + 1) * d];
            let grow = &mut grad.projection[i * d..(i + 1) * d];
            for j in 0..d {
                grow[j] += d_h[i] * u[j];
                d_u[j] += d_h[i] * row[j];
            }
        }
        for &id in &ids {
            let base = id as usize * d;
            for j in 0..d {
                let t = self.params.embedding[base + j].tanh();
                grad.embedding[base + j] += d_u[j] * (T::one() - t * t) / n;
            }
        }
    }

    pub fn zero_gradient(&self) -> RetrieverGradient<T> {
        RetrieverParams::zeros(self.vocab.len(), self.width)
    }

    pub fn apply_gradient(&mut self, grad: &RetrieverGradient<T>, grad_scale: f64, lr: f64) -> Result<()> {
        for (name, buf) in PARAM_NAMES.iter().zip(grad.buffers()) {
            if let Some(index) = first_non_finite(buf) {
                return Err(Error::NonFiniteGradient { param: name, index });
            }
        }
        self.opt.step(&mut self.params.buffers_mut(), &grad.buffers(), grad_scale, lr);
        self.version += 1;
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.opt = AdamW::new(&self.params.sizes(), self.opt.weight_decay);
    }
}

/// Inner product of two embeddings.
pub fn similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::WidthMismatch(a.len(), b.len()));
    }
    Ok(dot(a, b))
}

/// Candidate embeddings of a pool, tied to the retriever version that built them.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateIndex<T> {
    rows: Vec<Vec<T>>,
    version: u64,
}

impl<T: Scalar> CandidateIndex<T> {
    /// Row `i` embeds sample `i` of `pool`.
    pub fn build(retriever: &Retriever<T>, pool: &Dataset) -> Result<Self> {
        let cands = pool.candidates()?;
        Ok(Self::from_candidates(retriever, &cands))
    }

    pub fn from_candidates(retriever: &Retriever<T>, cands: &[Candidate]) -> Self {
        debug_assert!(cands.iter().enumerate().all(|(i, c)| c.id == i));
        Self {
            rows: cands.par_iter().map(|c| retriever.encode_candidate(c)).collect(),
            version: retriever.version(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, id: usize) -> &[T] {
        &self.rows[id]
    }

    pub fn is_stale(&self, retriever: &Retriever<T>) -> bool {
        self.version != retriever.version()
    }

    pub fn check_fresh(&self, retriever: &Retriever<T>) -> Result<()> {
        if self.is_stale(retriever) {
            return Err(Error::StaleIndex {
                built: self.version,
                current: retriever.version(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit<T> {
    pub id: usize,
    pub similarity: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval<T> {
    pub hits: Vec<Hit<T>>,
    /// Fewer than `m` candidates were available.
    pub truncated: bool,
}

/// Descending similarity, then ascending id.
pub fn rank_order<T: Scalar>(a: &Hit<T>, b: &Hit<T>) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then(a.id.cmp(&b.id))
}

/// Exact top-`m` selection over `(id, similarity)` scores.
pub fn top_m<T: Scalar>(scores: impl IntoIterator<Item = Hit<T>>, exclude: Option<usize>, m: usize) -> Retrieval<T> {
    let mut hits: Vec<Hit<T>> = scores.into_iter().filter(|h| Some(h.id) != exclude).collect();
    let truncated = hits.len() < m;
    if m == 0 {
        hits.clear();
    } else if hits.len() > m {
        hits.select_nth_unstable_by(m - 1, rank_order);
        hits.truncate(m);
    }
    hits.sort_by(rank_order);
    Retrieval { hits, truncated }
}

/// Top-`m` pool entries for a query input. `exclude` removes the query's own
/// sample when it belongs to the pool.
pub fn retrieve<T: Scalar>(
    retriever: &Retriever<T>,
    index: &CandidateIndex<T>,
    query_input: &str,
    exclude: Option<usize>,
    m: usize,
) -> Result<Retrieval<T>> {
    index.check_fresh(retriever)?;
    let q = retriever.encode_query(query_input);
    Ok(top_m(
        index.rows.iter().enumerate().map(|(id, row)| Hit {
            id,
            similarity: dot(&q, row),
        }),
        exclude,
        m,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Task};
    use crate::rng;

    fn retriever(width: usize) -> Retriever<f64> {
        let vocab = Arc::new(Vocabulary::build(["a b c d input output : the food was good positive"]));
        Retriever::new(vocab, width, 0.0, &mut rng::stream(3, rng::INIT_RETRIEVER, &[]))
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(similarity(&[1.5, -2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(similarity(&[1.0], &[1.0, 2.0]), Err(Error::WidthMismatch(1, 2))));
    }

    #[test]
    fn single_token_is_its_own_output() {
        let r = retriever(5);
        assert_eq!(r.encode_text("a"), r.token_outputs("a")[0]);
    }

    #[test]
    fn permutation_invariant() {
        let r = retriever(6);
        let ab = r.encode_text("a b");
        let ba = r.encode_text("b a");
        for (x, y) in ab.iter().zip(&ba) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_of_token_outputs() {
        let r = retriever(4);
        let text = "the food was good the";
        let outs = r.token_outputs(text);
        let h = r.encode_text(text);
        for j in 0..4 {
            let m = outs.iter().map(|o| o[j]).sum::<f64>() / outs.len() as f64;
            assert!((m - h[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn query_and_candidate_renderings_differ() {
        let r = retriever(4);
        let c = Candidate::new(0, "the food", "good");
        assert_ne!(r.encode_query("the food"), r.encode_candidate(&c));
        assert_eq!(r.encode_query("the food"), r.encode_query("the food"));
    }

    #[test]
    fn zero_params_give_zero_vector() {
        let vocab = Arc::new(Vocabulary::build(["a b"]));
        let r = Retriever::<f64>::from_params(vocab.clone(), 3, RetrieverParams::zeros(vocab.len(), 3), 0.0);
        assert_eq!(r.encode_query("a b"), vec![0.0; 3]);
    }

    #[test]
    fn self_exclusion_and_ties() {
        let hits = (0..3).map(|id| Hit { id, similarity: 1.0_f64 });
        let r = top_m(hits, Some(1), 2);
        assert_eq!(r.hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![0, 2]);
        assert!(!r.truncated);
        let r = top_m((0..3).map(|id| Hit { id, similarity: 0.0_f64 }), Some(0), 5);
        assert!(r.truncated);
        assert_eq!(r.hits.len(), 2);
    }

    #[test]
    fn stale_index_is_rejected() {
        let (train, _) = generate_synthetic(30, 5, 1);
        let vocab = Arc::new(Vocabulary::build(train.samples.iter().map(|s| s.text.as_str())));
        let mut r = Retriever::<f64>::new(vocab, 8, 0.0, &mut rng::stream(1, rng::INIT_RETRIEVER, &[]));
        let index = CandidateIndex::build(&r, &train).unwrap();
        assert_eq!(index, CandidateIndex::build(&r, &train).unwrap());
        retrieve(&r, &index, &train.samples[0].text, Some(0), 3).unwrap();
        let g = r.zero_gradient();
        r.apply_gradient(&g, 1.0, 0.1).unwrap();
        assert!(matches!(retrieve(&r, &index, "x", None, 3), Err(Error::StaleIndex { .. })));
    }

    #[test]
    fn index_matches_on_the_fly_encoding() {
        let (train, _) = generate_synthetic(60, 5, 2);
        let texts: Vec<String> = train.candidates().unwrap().iter().map(candidate_text).collect();
        let vocab = Arc::new(Vocabulary::build(texts.iter().map(String::as_str)));
        let r = Retriever::<f64>::new(vocab, 8, 0.0, &mut rng::stream(2, rng::INIT_RETRIEVER, &[]));
        let index = CandidateIndex::build(&r, &train).unwrap();
        let query = train.samples[5].input(Task::Aspe).unwrap();
        let via_index = retrieve(&r, &index, &query, Some(5), 7).unwrap();
        let q = r.encode_query(&query);
        let cands = train.candidates().unwrap();
        let direct = top_m(
            cands.iter().map(|c| Hit {
                id: c.id,
                similarity: similarity(&q, &r.encode_candidate(c)).unwrap(),
            }),
            Some(5),
            7,
        );
        assert_eq!(via_index, direct);
    }
}
