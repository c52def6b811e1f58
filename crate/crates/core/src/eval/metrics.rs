use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{AspectLabel, ParsedLabel, ParsedPolarity, Polarity, Task, SENTINEL_TERM};
use crate::error::{Error, Result};

/// Micro-averaged scores over a split.
///
/// Precision is 0 when nothing is predicted, recall is 0 when nothing is gold,
/// and F1 is 0 when both are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// ATSC: fraction of correct polarities. Tuple tasks: fraction of samples
    /// whose predicted tuple set equals the gold set.
    pub accuracy: f64,
    pub num_pred: usize,
    pub num_gold: usize,
    pub num_correct: usize,
    pub parse_failures: usize,
}

impl Metrics {
    fn from_counts(num_pred: usize, num_gold: usize, num_correct: usize, accuracy: f64) -> Self {
        let precision = if num_pred == 0 { 0.0 } else { num_correct as f64 / num_pred as f64 };
        let recall = if num_gold == 0 { 0.0 } else { num_correct as f64 / num_gold as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            accuracy,
            num_pred,
            num_gold,
            num_correct,
            parse_failures: 0,
        }
    }

    /// The headline number: accuracy for ATSC, F1 otherwise.
    pub fn headline(&self, task: Task) -> f64 {
        match task {
            Task::Atsc => self.accuracy,
            Task::Ate | Task::Aspe => self.f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Key {
    Term(String),
    /// `None` marks an unrecognized polarity word, which never matches.
    Pair(String, Option<Polarity>),
}

fn norm(term: &str) -> Option<String> {
    let t = term.trim().to_lowercase();
    (t != SENTINEL_TERM && !t.is_empty()).then_some(t)
}

fn pred_key(label: &ParsedLabel, task: Task) -> Option<Key> {
    let (term, pol) = match label {
        ParsedLabel::Term(t) => (t.as_str(), None),
        ParsedLabel::Pair(t, p) => (t.as_str(), p.known()),
        ParsedLabel::Sentiment(_) => return None,
    };
    let term = norm(term)?;
    Some(match task {
        Task::Aspe => Key::Pair(term, pol),
        _ => Key::Term(term),
    })
}

fn gold_key(label: &AspectLabel, task: Task) -> Option<Key> {
    let term = norm(&label.term)?;
    Some(match task {
        Task::Aspe => Key::Pair(term, Some(label.polarity)),
        _ => Key::Term(term),
    })
}

/// Exact-match tuple F1: terms for ATE, `(term, polarity)` for ASPE. Terms are
/// compared trimmed and lowercased, duplicates count once and sentinel pairs
/// are ignored on both sides.
pub fn tuple_f1(preds: &[Vec<ParsedLabel>], golds: &[Vec<AspectLabel>], task: Task) -> Result<Metrics> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(preds.len(), golds.len()));
    }
    let (mut np, mut ng, mut nc, mut exact) = (0, 0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        let p: HashSet<Key> = p.iter().filter_map(|l| pred_key(l, task)).collect();
        let g: HashSet<Key> = g.iter().filter_map(|l| gold_key(l, task)).collect();
        np += p.len();
        ng += g.len();
        nc += p.intersection(&g).count();
        exact += usize::from(p == g);
    }
    let acc = if preds.is_empty() { 0.0 } else { exact as f64 / preds.len() as f64 };
    Ok(Metrics::from_counts(np, ng, nc, acc))
}

/// Fraction of exact polarity matches; `None` predictions (unparseable) are wrong.
pub fn atsc_accuracy(preds: &[Option<Polarity>], golds: &[Polarity]) -> Result<Metrics> {
    if preds.len() != golds.len() {
        return Err(Error::LengthMismatch(preds.len(), golds.len()));
    }
    if let Some(i) = golds.iter().position(|&g| g == Polarity::None) {
        return Err(Error::NoneGold(i));
    }
    let correct = preds.iter().zip(golds).filter(|(p, g)| **p == Some(**g)).count();
    let n = golds.len();
    let acc = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
    let mut m = Metrics::from_counts(n, n, correct, acc);
    m.parse_failures = preds.iter().filter(|p| p.is_none()).count();
    Ok(m)
}

/// First recognized polarity in ATSC output.
pub fn atsc_prediction(labels: &[ParsedLabel]) -> Option<Polarity> {
    labels.iter().find_map(|l| match l {
        ParsedLabel::Sentiment(ParsedPolarity::Known(p)) => Some(*p),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(t: &str, p: Polarity) -> ParsedLabel {
        ParsedLabel::Pair(t.into(), ParsedPolarity::Known(p))
    }

    fn gold(t: &str, p: Polarity) -> AspectLabel {
        AspectLabel::new(t, p).unwrap()
    }

    #[test]
    fn hand_example() {
        let m = tuple_f1(
            &[vec![pair("food", Polarity::Positive)]],
            &[vec![gold("food", Polarity::Positive), gold("service", Polarity::Negative)]],
            Task::Aspe,
        )
        .unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 0.5));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let g = vec![vec![gold("food", Polarity::Positive)], vec![gold("wait", Polarity::Negative)]];
        let p: Vec<Vec<ParsedLabel>> = g
            .iter()
            .map(|v| v.iter().map(|l| pair(&l.term, l.polarity)).collect())
            .collect();
        assert_eq!(tuple_f1(&p, &g, Task::Aspe).unwrap().f1, 1.0);
        let m = tuple_f1(&[vec![], vec![]], &g, Task::Aspe).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn case_whitespace_duplicates_and_sentinel() {
        let p = vec![vec![
            ParsedLabel::Term(" Food ".into()),
            ParsedLabel::Term("food".into()),
            ParsedLabel::Term("noaspectterm".into()),
        ]];
        let g = vec![vec![gold("food", Polarity::Positive)]];
        let m = tuple_f1(&p, &g, Task::Ate).unwrap();
        assert_eq!((m.num_pred, m.num_gold, m.num_correct), (1, 1, 1));
        let m = tuple_f1(&[vec![ParsedLabel::Term("noaspectterm".into())]], &[vec![AspectLabel::sentinel()]], Task::Ate)
            .unwrap();
        assert_eq!((m.num_pred, m.num_gold, m.f1, m.accuracy), (0, 0, 0.0, 1.0));
    }

    #[test]
    fn rejected_polarity_is_wrong() {
        let p = vec![vec![ParsedLabel::Pair("food".into(), ParsedPolarity::Rejected("tasty".into()))]];
        let m = tuple_f1(&p, &[vec![gold("food", Polarity::Positive)]], Task::Aspe).unwrap();
        assert_eq!((m.num_pred, m.num_correct), (1, 0));
        // ATE ignores polarity entirely.
        assert_eq!(tuple_f1(&p, &[vec![gold("food", Polarity::Positive)]], Task::Ate).unwrap().f1, 1.0);
    }

    #[test]
    fn accuracy_examples() {
        use Polarity::{Negative, Neutral, Positive};
        assert_eq!(atsc_accuracy(&[Some(Positive), Some(Negative)], &[Positive, Positive]).unwrap().accuracy, 0.5);
        assert_eq!(atsc_accuracy(&[Some(Neutral)], &[Neutral]).unwrap().accuracy, 1.0);
        let m = atsc_accuracy(&[None, None], &[Positive, Negative]).unwrap();
        assert_eq!((m.accuracy, m.parse_failures), (0.0, 2));
        assert!(matches!(atsc_accuracy(&[None], &[Positive, Negative]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(atsc_accuracy(&[None], &[Polarity::None]), Err(Error::NoneGold(0))));
    }

    #[test]
    fn length_mismatch() {
        assert!(tuple_f1(&[], &[vec![]], Task::Ate).is_err());
    }
}
