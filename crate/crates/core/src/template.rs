//! Instruction prompt rendering.
//!
//! A prompt is `Definition: <DEF>`, then one block per example, then the
//! query block ending in the `Output:` cue, all joined by single spaces. The
//! scorer conditions on these exact bytes.

use std::fs;
use std::path::Path;

use crate::corpus::{Candidate, Task};
use crate::error::{Error, Result};

const ATE_ASSET: &str = include_str!("../assets/templates/ate.txt");
const ATSC_ASSET: &str = include_str!("../assets/templates/atsc.txt");
const ASPE_ASSET: &str = include_str!("../assets/templates/aspe.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstructionTemplate {
    pub definition: String,
    /// Pattern with `{n}`, `{input}` and `{output}` placeholders.
    pub example: String,
    /// Pattern with an `{input}` placeholder.
    pub query: String,
}

impl InstructionTemplate {
    /// Parses a template asset: `definition:`, `example:` and `query:` lines,
    /// `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut definition, mut example, mut query) = (None, None, None);
        for line in text.lines() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(": ")
                .ok_or_else(|| Error::Template(format!("expected `key: value`, got `{line}`")))?;
            let slot = match key {
                "definition" => &mut definition,
                "example" => &mut example,
                "query" => &mut query,
                other => return Err(Error::Template(format!("unknown key `{other}`"))),
            };
            *slot = Some(value.to_string());
        }
        let missing = |k: &str| Error::Template(format!("missing `{k}` line"));
        let t = Self {
            definition: definition.ok_or_else(|| missing("definition"))?,
            example: example.ok_or_else(|| missing("example"))?,
            query: query.ok_or_else(|| missing("query"))?,
        };
        if !t.example.contains("{input}") || !t.example.contains("{output}") || !t.query.contains("{input}") {
            return Err(Error::Template("example needs {input} and {output}, query needs {input}".into()));
        }
        Ok(t)
    }

    pub fn builtin(task: Task) -> Self {
        let src = match task {
            Task::Ate => ATE_ASSET,
            Task::Atsc => ATSC_ASSET,
            Task::Aspe => ASPE_ASSET,
        };
        Self::parse(src).expect("bundled templates are valid")
    }

    /// Loads `<dir>/<task>.txt`.
    pub fn load(dir: &Path, task: Task) -> Result<Self> {
        Self::parse(&fs::read_to_string(dir.join(format!("{task}.txt")))?)
    }

    pub fn with_definition(mut self, definition: impl Into<String>) -> Self {
        self.definition = definition.into();
        self
    }

    /// Renders the prompt with the first `k` examples.
    ///
    /// Panics if `k > examples.len()`.
    pub fn render(&self, examples: &[Candidate], input: &str, k: usize) -> String {
        let mut out = format!("Definition: {}", self.definition);
        for (i, ex) in examples[..k].iter().enumerate() {
            out.push(' ');
            out.push_str(
                &self
                    .example
                    .replace("{n}", &(i + 1).to_string())
                    .replace("{input}", &ex.input)
                    .replace("{output}", &ex.output),
            );
        }
        out.push(' ');
        out.push_str(&self.query.replace("{input}", input));
        out
    }
}

/// Renders with the builtin grammar and a custom definition.
pub fn render(definition: &str, examples: &[Candidate], input: &str, k: usize) -> String {
    InstructionTemplate::builtin(Task::Aspe)
        .with_definition(definition)
        .render(examples, input, k)
}

/// Splices the designated aspect onto the review text for ATSC.
pub fn atsc_input(text: &str, aspect: &str) -> String {
    format!("{text} The aspect is {aspect}.")
}

/// Retriever-side rendering of a candidate.
pub fn candidate_text(c: &Candidate) -> String {
    format!("Input: {} Output: {}", c.input, c.output)
}

/// Retriever-side rendering of a query.
pub fn query_text(input: &str) -> String {
    format!("Input: {input}")
}
