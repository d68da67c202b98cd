use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ink::{InkSequence, RawPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled characters over `classes` categories.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub samples: Vec<InkSequence>,
    pub classes: usize,
    pub split: Option<Split>,
}

impl Corpus {
    /// Checks that every label lies in `[0, classes)`.
    pub fn new(samples: Vec<InkSequence>, classes: usize, split: Option<Split>) -> Result<Self> {
        for s in &samples {
            if let Some(label) = s.label {
                if label >= classes {
                    return Err(Error::Label { label, classes });
                }
            }
        }
        Ok(Self { samples, classes, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    label: Option<usize>,
    points: Vec<(f64, f64, u32)>,
}

/// Reads one character per line. Blank lines are skipped; the class count is
/// one more than the largest label.
pub fn read_jsonl(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let parsed: Line = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if parsed.points.iter().any(|&(x, y, _)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Value {
                path: path.to_path_buf(),
                line: lineno,
            });
        }
        let points = parsed.points.iter().map(|&(x, y, s)| RawPoint::new(x, y, s)).collect();
        let seq = InkSequence::new(points, parsed.label).map_err(|e| parse_err(e.to_string()))?;
        samples.push(seq);
    }
    let classes = samples.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1);
    Corpus::new(samples, classes, None)
}

pub fn write_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    write_sequences(&corpus.samples, path)
}

pub(crate) fn write_sequences(samples: &[InkSequence], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (i, s) in samples.iter().enumerate() {
        if s.points().iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Value {
                path: path.to_path_buf(),
                line: i + 1,
            });
        }
        let line = Line {
            label: s.label,
            points: s.points().iter().map(|p| (p.x, p.y, p.stroke)).collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
