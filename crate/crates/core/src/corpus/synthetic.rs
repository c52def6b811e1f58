//! Deterministic synthetic review corpus.
//!
//! Aspect nouns fall into two classes: ones where "more" is good (a long
//! battery, a big portion) and ones where "more" is bad (a long wait, a high
//! price). Magnitude adjectives therefore take their polarity from the class
//! of the noun they modify, which a bag-of-words model cannot resolve from the
//! sentence alone but can copy from a demonstration that pairs the same
//! adjective with a noun of the same class. Context-free adjectives carry a
//! fixed polarity.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{AspectLabel, Dataset, Polarity, Sample, Split, Task};
use crate::rng::{self, StageRng};

const MORE_IS_GOOD: &[&str] = &[
    "portion", "menu", "selection", "battery", "warranty", "screen", "patio", "wine list", "happy hour",
];
const MORE_IS_BAD: &[&str] = &[
    "wait", "line", "delay", "noise", "price", "bill", "fee", "waiting time", "service charge",
];
const UP: &[&str] = &["long", "high", "big", "huge", "large"];
const DOWN: &[&str] = &["short", "low", "small", "tiny", "limited"];
const POSITIVE: &[&str] = &["great", "excellent", "amazing", "wonderful", "superb", "lovely", "fantastic"];
const NEGATIVE: &[&str] = &["awful", "terrible", "horrible", "disappointing", "bad", "poor", "dreadful"];
const NEUTRAL: &[&str] = &["okay", "average", "fine", "standard", "acceptable", "ordinary", "typical"];
const INTENSIFIERS: &[&str] = &["really", "very", "quite", "rather", "pretty", "truly", "fairly", "so"];
const PEOPLE: &[&str] = &[
    "friend", "wife", "husband", "boss", "sister", "brother", "cousin", "colleague", "neighbor", "partner", "mother",
    "father",
];
const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const TIMES: &[&str] = &["morning", "afternoon", "evening", "night", "lunch", "brunch", "dinner", "breakfast"];
const VERBS: &[&str] = &["visit", "return to", "recommend", "try", "review", "revisit"];
const PLACES: &[&str] = &["place", "spot", "restaurant", "shop", "store", "cafe", "bistro", "diner", "hotel", "bar"];

const SINGLE_FRAMES: &[&str] = &[
    "the {N} was {A} .",
    "I thought the {N} was {I} {A} .",
    "{A} {N} , we will be back .",
    "honestly , the {N} at this {P} is {A} .",
    "we found the {N} to be {I} {A} .",
    "my {W} said the {N} seemed {A} .",
    "what a {A} {N} !",
    "on {D} the {N} was {I} {A} .",
    "the {N} is always {A} here .",
];
const DOUBLE_FRAMES: &[&str] = &[
    "the {N} was {A} but the {N2} was {A2} .",
    "{A} {N} and {A2} {N2} .",
    "we liked that the {N} was {A} , though the {N2} was {A2} .",
];
const EMPTY_FRAMES: &[&str] = &[
    "we came here on a {D} {T} .",
    "my {W} and I will {V} this {P} again .",
    "I stopped by this {P} for {T} .",
    "unbelievable .",
    "we went with my {W} on {D} .",
];

#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub p_two_aspects: f64,
    pub p_no_aspect: f64,
    /// Probability that an aspect is described by a magnitude adjective.
    pub p_context_dependent: f64,
    /// Aspect nouns drawn per class, at most 9.
    pub terms_per_class: usize,
    /// Magnitude adjectives drawn per direction, at most 5.
    pub magnitude_words: usize,
    /// Context-free adjectives drawn per polarity, at most 7.
    pub opinion_words: usize,
}

impl SyntheticConfig {
    pub fn new(n_train: usize, n_test: usize, seed: u64) -> Self {
        Self {
            n_train,
            n_test,
            seed,
            p_two_aspects: 0.1,
            p_no_aspect: 0.1,
            p_context_dependent: 0.6,
            terms_per_class: 5,
            magnitude_words: 2,
            opinion_words: 3,
        }
    }

    pub fn generate(&self) -> (Dataset, Dataset) {
        assert!(self.n_train >= 20, "synthetic corpus needs at least 20 training samples");
        let train = self.split(self.n_train, Split::Train, 0);
        let test = self.split(self.n_test, Split::Test, 1);
        (train, test)
    }

    fn split(&self, n: usize, split: Split, stream: u64) -> Dataset {
        let mut rng = rng::stream(self.seed, rng::DATA, &[stream]);
        let samples = (0..n).map(|id| self.sample(id, &mut rng)).collect();
        Dataset::new(samples, Task::Aspe, split)
    }

    fn sample(&self, id: usize, rng: &mut StageRng) -> Sample {
        let u: f64 = rng.gen();
        let (frame, n_aspects) = if u < self.p_no_aspect {
            (*EMPTY_FRAMES.choose(rng).unwrap(), 0)
        } else if u < self.p_no_aspect + self.p_two_aspects {
            (*DOUBLE_FRAMES.choose(rng).unwrap(), 2)
        } else {
            (*SINGLE_FRAMES.choose(rng).unwrap(), 1)
        };

        let mut aspects: Vec<(&str, &str, Polarity)> = Vec::with_capacity(n_aspects);
        while aspects.len() < n_aspects {
            let (noun, adj, pol) = self.aspect(rng);
            if aspects.iter().all(|(n, _, _)| *n != noun) {
                aspects.push((noun, adj, pol));
            }
        }

        let mut words = Vec::new();
        for slot in frame.split(' ') {
            let fill = match slot {
                "{N}" => aspects[0].0,
                "{A}" => aspects[0].1,
                "{N2}" => aspects[1].0,
                "{A2}" => aspects[1].1,
                "{I}" => INTENSIFIERS.choose(rng).unwrap(),
                "{W}" => PEOPLE.choose(rng).unwrap(),
                "{D}" => DAYS.choose(rng).unwrap(),
                "{T}" => TIMES.choose(rng).unwrap(),
                "{V}" => VERBS.choose(rng).unwrap(),
                "{P}" => PLACES.choose(rng).unwrap(),
                w => w,
            };
            words.push(fill);
        }
        let labels = aspects
            .iter()
            .map(|(n, _, p)| AspectLabel::new(*n, *p).expect("lexicon terms are valid"))
            .collect();
        Sample::new(id, join_words(&words), labels)
    }

    fn aspect(&self, rng: &mut StageRng) -> (&'static str, &'static str, Polarity) {
        let more_is_good = rng.gen_bool(0.5);
        let noun = prefix(if more_is_good { MORE_IS_GOOD } else { MORE_IS_BAD }, self.terms_per_class)
            .choose(rng)
            .unwrap();
        if rng.gen_bool(self.p_context_dependent) {
            let up = rng.gen_bool(0.5);
            let adj = prefix(if up { UP } else { DOWN }, self.magnitude_words).choose(rng).unwrap();
            let pol = if up == more_is_good { Polarity::Positive } else { Polarity::Negative };
            (noun, adj, pol)
        } else {
            let (lex, pol) = [
                (POSITIVE, Polarity::Positive),
                (NEGATIVE, Polarity::Negative),
                (NEUTRAL, Polarity::Neutral),
            ]
            .choose(rng)
            .copied()
            .unwrap();
            (noun, prefix(lex, self.opinion_words).choose(rng).unwrap(), pol)
        }
    }
}

fn prefix(lexicon: &'static [&'static str], n: usize) -> &'static [&'static str] {
    &lexicon[..n.clamp(1, lexicon.len())]
}

/// Deterministic train/test corpora with default mixture settings.
pub fn generate_synthetic(n_train: usize, n_test: usize, seed: u64) -> (Dataset, Dataset) {
    SyntheticConfig::new(n_train, n_test, seed).generate()
}

fn join_words(words: &[&str]) -> String {
    let mut out = String::new();
    for w in words {
        let punct = matches!(*w, "." | "," | "!" | "?");
        if !out.is_empty() && !punct {
            out.push(' ');
        }
        out.push_str(w);
    }
    let mut chars = out.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => out,
    }
}
