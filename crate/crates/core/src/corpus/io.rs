use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AspectLabel, Dataset, Polarity, Sample, Split, Task};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    text: String,
    labels: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aspect: Option<String>,
}

/// Reads a JSON-lines dataset. Ids follow line order; `conflict` labels are
/// skipped. For ATSC, records without an `aspect` field are expanded with
/// [`Dataset::for_task`].
pub fn load_dataset(path: &Path, task: Task, split: Split) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let malformed = |reason: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let mut labels = Vec::with_capacity(rec.labels.len());
        for (term, pol) in rec.labels {
            if pol.trim().eq_ignore_ascii_case("conflict") {
                continue;
            }
            let polarity: Polarity = pol.parse()?;
            labels.push(AspectLabel::new(term, polarity).map_err(|e| malformed(e.to_string()))?);
        }
        let mut sample = Sample::new(samples.len(), rec.text, labels);
        sample.aspect = rec.aspect;
        samples.push(sample);
    }
    let ds = Dataset::new(samples, Task::Aspe, split);
    Ok(match task {
        Task::Atsc => ds.for_task(Task::Atsc),
        other => Dataset { task: other, ..ds },
    })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in &dataset.samples {
        let rec = Record {
            text: s.text.clone(),
            labels: s
                .labels
                .iter()
                .filter(|l| !l.is_sentinel())
                .map(|l| (l.term.clone(), l.polarity.to_string()))
                .collect(),
            aspect: s.aspect.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
