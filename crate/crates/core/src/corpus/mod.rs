//! Samples, datasets and the aspect-label grammar shared by all subtasks.

mod io;
mod label;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template::atsc_input;

pub use io::{load_dataset, write_dataset};
pub use label::{parse_output, parse_output_with, serialize_label, ParseOptions, ParsedLabel, ParsedOutput, ParsedPolarity};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Term used for sentences without any aspect.
pub const SENTINEL_TERM: &str = "noaspectterm";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
    None,
}

impl Polarity {
    pub const ALL: [Polarity; 4] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral, Polarity::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::None => "none",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(Polarity::Positive),
            "negative" | "neg" => Ok(Polarity::Negative),
            "neutral" | "neu" => Ok(Polarity::Neutral),
            "none" => Ok(Polarity::None),
            _ => Err(Error::UnknownPolarity(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectLabel {
    pub term: String,
    pub polarity: Polarity,
}

impl AspectLabel {
    /// Builds a label, enforcing that `none` pairs only with the sentinel term.
    pub fn new(term: impl Into<String>, polarity: Polarity) -> Result<Self> {
        let term = term.into();
        if term.trim().is_empty() {
            return Err(Error::Config("aspect term must be non-empty".into()));
        }
        let sentinel = term == SENTINEL_TERM;
        if sentinel != (polarity == Polarity::None) {
            return Err(Error::Config(format!(
                "polarity `none` is reserved for `{SENTINEL_TERM}` (got `{term}: {polarity}`)"
            )));
        }
        Ok(Self { term, polarity })
    }

    pub fn sentinel() -> Self {
        Self {
            term: SENTINEL_TERM.to_string(),
            polarity: Polarity::None,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.term == SENTINEL_TERM && self.polarity == Polarity::None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "ate")]
    Ate,
    #[serde(rename = "atsc")]
    Atsc,
    #[serde(rename = "aspe")]
    Aspe,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Ate, Task::Atsc, Task::Aspe];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ate => "ate",
            Task::Atsc => "atsc",
            Task::Aspe => "aspe",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ate" => Ok(Task::Ate),
            "atsc" => Ok(Task::Atsc),
            "aspe" => Ok(Task::Aspe),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One review with its gold labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub text: String,
    pub labels: Vec<AspectLabel>,
    /// Designated aspect term, set only for ATSC samples.
    pub aspect: Option<String>,
}

impl Sample {
    /// Normalizes the label list: duplicates are dropped (first occurrence
    /// wins), the sentinel is removed when real aspects exist, and an empty
    /// list becomes the sentinel pair.
    pub fn new(id: usize, text: impl Into<String>, labels: Vec<AspectLabel>) -> Self {
        let mut out: Vec<AspectLabel> = Vec::with_capacity(labels.len());
        let has_real = labels.iter().any(|l| !l.is_sentinel());
        for l in labels {
            if has_real && l.is_sentinel() {
                continue;
            }
            if !out.contains(&l) {
                out.push(l);
            }
        }
        if out.is_empty() {
            out.push(AspectLabel::sentinel());
        }
        Self {
            id,
            text: text.into(),
            labels: out,
            aspect: None,
        }
    }

    pub fn with_aspect(mut self, aspect: impl Into<String>) -> Self {
        self.aspect = Some(aspect.into());
        self
    }

    pub fn is_aspect_free(&self) -> bool {
        self.labels.iter().all(AspectLabel::is_sentinel)
    }

    /// Model-side input string for this sample under `task`.
    pub fn input(&self, task: Task) -> Result<String> {
        match task {
            Task::Atsc => {
                let aspect = self.aspect.as_deref().ok_or(Error::MissingAspect(self.id))?;
                Ok(atsc_input(&self.text, aspect))
            }
            Task::Ate | Task::Aspe => Ok(self.text.clone()),
        }
    }

    /// Gold polarity of the designated ATSC aspect.
    pub fn atsc_polarity(&self) -> Result<Polarity> {
        let aspect = self.aspect.as_deref().ok_or(Error::MissingAspect(self.id))?;
        self.labels
            .iter()
            .find(|l| l.term == aspect)
            .map(|l| l.polarity)
            .ok_or_else(|| Error::AspectNotFound {
                id: self.id,
                aspect: aspect.to_string(),
            })
    }

    /// Renders this sample as an in-context example for `task`.
    pub fn to_candidate(&self, task: Task) -> Result<Candidate> {
        Ok(Candidate {
            id: self.id,
            input: self.input(task)?,
            output: serialize_label(self, task)?,
        })
    }
}

/// A training pair rendered for use as an in-context example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub input: String,
    pub output: String,
}

impl Candidate {
    pub fn new(id: usize, input: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            id,
            input: input.into(),
            output: output.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub task: Task,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, task: Task, split: Split) -> Self {
        debug_assert!(samples.iter().enumerate().all(|(i, s)| s.id == i), "ids must be dense");
        Self { samples, task, split }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Sample> {
        self.samples.get(id)
    }

    /// Re-targets the dataset at `task`.
    ///
    /// ATE and ASPE share samples verbatim. For ATSC every sample that lacks a
    /// designated aspect is expanded into one sample per distinct aspect term
    /// (aspect-free sentences are dropped); ids are reassigned densely.
    pub fn for_task(&self, task: Task) -> Dataset {
        if task != Task::Atsc {
            return Dataset {
                samples: self.samples.clone(),
                task,
                split: self.split,
            };
        }
        let mut samples = Vec::new();
        for s in &self.samples {
            if s.aspect.is_some() {
                let mut c = s.clone();
                c.id = samples.len();
                samples.push(c);
                continue;
            }
            let mut seen: Vec<&str> = Vec::new();
            for l in s.labels.iter().filter(|l| !l.is_sentinel()) {
                if seen.contains(&l.term.as_str()) {
                    continue;
                }
                seen.push(&l.term);
                let mut c = s.clone();
                c.id = samples.len();
                c.aspect = Some(l.term.clone());
                samples.push(c);
            }
        }
        Dataset {
            samples,
            task,
            split: self.split,
        }
    }

    pub fn candidates(&self) -> Result<Vec<Candidate>> {
        self.samples.iter().map(|s| s.to_candidate(self.task)).collect()
    }
}
