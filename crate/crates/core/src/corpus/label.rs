//! Output-label grammar.
//!
//! * ATE:  `term; term; ...`
//! * ATSC: `polarity`
//! * ASPE: `term: polarity; term: polarity; ...`
//!
//! Tuples are separated by `"; "` because terms may contain commas, and the
//! term/polarity split happens at the last `": "` so colons inside a term
//! survive.

use serde::{Deserialize, Serialize};

use super::{Polarity, Sample, Task};
use crate::error::{Error, Result};

const TUPLE_SEP: &str = "; ";
const PAIR_SEP: &str = ": ";

pub fn serialize_label(sample: &Sample, task: Task) -> Result<String> {
    match task {
        Task::Ate => Ok(sample
            .labels
            .iter()
            .map(|l| l.term.as_str())
            .collect::<Vec<_>>()
            .join(TUPLE_SEP)),
        Task::Aspe => Ok(sample
            .labels
            .iter()
            .map(|l| format!("{}{PAIR_SEP}{}", l.term, l.polarity))
            .collect::<Vec<_>>()
            .join(TUPLE_SEP)),
        Task::Atsc => {
            let aspect = sample.aspect.as_deref().ok_or(Error::MissingAspect(sample.id))?;
            sample
                .labels
                .iter()
                .find(|l| l.term == aspect)
                .map(|l| l.polarity.as_str().to_string())
                .ok_or_else(|| Error::AspectNotFound {
                    id: sample.id,
                    aspect: aspect.to_string(),
                })
        }
    }
}

/// A polarity word read back from generator output.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParsedPolarity {
    Known(Polarity),
    /// Unrecognized word; always scored as wrong.
    Rejected(String),
}

impl ParsedPolarity {
    fn read(word: &str) -> Self {
        word.parse::<Polarity>()
            .map(ParsedPolarity::Known)
            .unwrap_or_else(|_| ParsedPolarity::Rejected(word.to_string()))
    }

    pub fn known(&self) -> Option<Polarity> {
        match self {
            ParsedPolarity::Known(p) => Some(*p),
            ParsedPolarity::Rejected(_) => None,
        }
    }
}

/// One tuple read from output, restricted to the fields the task predicts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParsedLabel {
    Term(String),
    Pair(String, ParsedPolarity),
    Sentiment(ParsedPolarity),
}

impl ParsedLabel {
    /// The task-restricted view of every gold label of `sample`.
    pub fn gold(sample: &Sample, task: Task) -> Result<Vec<ParsedLabel>> {
        Ok(match task {
            Task::Ate => sample.labels.iter().map(|l| ParsedLabel::Term(l.term.clone())).collect(),
            Task::Aspe => sample
                .labels
                .iter()
                .map(|l| ParsedLabel::Pair(l.term.clone(), ParsedPolarity::Known(l.polarity)))
                .collect(),
            Task::Atsc => vec![ParsedLabel::Sentiment(ParsedPolarity::Known(sample.atsc_polarity()?))],
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub labels: Vec<ParsedLabel>,
    /// Segments that could not be read at all.
    pub dropped: usize,
    /// Tuples whose polarity word was not recognized.
    pub rejected: usize,
}

impl ParsedOutput {
    pub fn failures(&self) -> usize {
        self.dropped + self.rejected
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Also accept `term#polarity` pairs.
    pub hash_pairs: bool,
}

/// Reads generator output back into labels. Never fails.
pub fn parse_output(text: &str, task: Task) -> ParsedOutput {
    parse_output_with(text, task, ParseOptions::default())
}

pub fn parse_output_with(text: &str, task: Task, opts: ParseOptions) -> ParsedOutput {
    let mut out = ParsedOutput::default();
    if text.trim().is_empty() {
        return out;
    }
    if task == Task::Atsc {
        let p = ParsedPolarity::read(text.trim());
        if matches!(p, ParsedPolarity::Rejected(_)) {
            out.rejected += 1;
        }
        out.labels.push(ParsedLabel::Sentiment(p));
        return out;
    }
    for segment in text.split(TUPLE_SEP) {
        if segment.trim().is_empty() {
            out.dropped += 1;
            continue;
        }
        match task {
            Task::Ate => out.labels.push(ParsedLabel::Term(segment.to_string())),
            Task::Aspe => {
                let split = segment
                    .rsplit_once(PAIR_SEP)
                    .or_else(|| opts.hash_pairs.then(|| segment.rsplit_once('#')).flatten());
                match split {
                    Some((term, pol)) if !term.trim().is_empty() => {
                        let p = ParsedPolarity::read(pol);
                        if matches!(p, ParsedPolarity::Rejected(_)) {
                            out.rejected += 1;
                        }
                        out.labels.push(ParsedLabel::Pair(term.to_string(), p));
                    }
                    _ => out.dropped += 1,
                }
            }
            Task::Atsc => unreachable!(),
        }
    }
    out
}
