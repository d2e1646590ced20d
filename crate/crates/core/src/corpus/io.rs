//! JSONL persistence, one sample per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentedSample, Matrix, Sample, ScoreScale};
use crate::error::{Error, Result};
use crate::phone_align::PhoneSeq;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speaker: Option<String>,
    cohort: String,
    reference: Vec<String>,
    features: Vec<Vec<f64>>,
    #[serde(default)]
    scores: Option<BTreeMap<String, f64>>,
    scale: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pseudo_reference: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pseudo_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_id: Option<String>,
}

fn read_records(path: &Path) -> Result<Vec<(usize, Record)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push((k + 1, rec));
    }
    Ok(out)
}

fn write_lines<T>(path: &Path, items: &[T], to_record: impl Fn(&T) -> Record) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&to_record(item)).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn at_line(line: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Validation(m) => Error::Validation(format!("line {line}: {m}")),
        other => Error::Parse {
            line,
            message: other.to_string(),
        },
    }
}

fn sample_from(line: usize, rec: Record) -> Result<Sample> {
    let err = at_line(line);
    let reference = PhoneSeq::new(rec.reference).map_err(&err)?;
    let features = Matrix::from_rows(&rec.features).map_err(|e| Error::Validation(format!("line {line}: {e}")))?;
    let scale = ScoreScale::try_from(rec.scale).map_err(&err)?;
    let sample = Sample {
        id: rec.id,
        speaker: rec.speaker,
        cohort: rec.cohort,
        reference,
        features,
        scores: rec.scores,
        scale,
    };
    sample.validate().map_err(&err)?;
    Ok(sample)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    read_records(path)?
        .into_iter()
        .map(|(line, rec)| {
            if rec.pseudo_reference.is_some() {
                return Err(Error::Validation(format!(
                    "line {line}: augmented record in a plain corpus file"
                )));
            }
            sample_from(line, rec)
        })
        .collect()
}

pub fn save_corpus(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), samples, |s| Record {
        id: s.id.clone(),
        speaker: s.speaker.clone(),
        cohort: s.cohort.clone(),
        reference: s.reference.symbols().to_vec(),
        features: s.features.to_rows(),
        scores: s.scores.clone(),
        scale: s.scale.into(),
        pseudo_reference: None,
        pseudo_score: None,
        base_id: None,
    })
}

/// Loads pseudo-referenced samples. `features` holds the rows computed
/// against `pseudo_reference`.
pub fn load_augmented(path: impl AsRef<Path>) -> Result<Vec<AugmentedSample>> {
    let path = path.as_ref();
    read_records(path)?
        .into_iter()
        .map(|(line, rec)| {
            let err = at_line(line);
            let (Some(pseudo), Some(score)) = (rec.pseudo_reference, rec.pseudo_score) else {
                return Err(Error::Validation(format!(
                    "line {line}: record lacks pseudo_reference or pseudo_score"
                )));
            };
            let sample = AugmentedSample {
                base_id: rec.base_id.unwrap_or_else(|| rec.id.clone()),
                id: rec.id,
                speaker: rec.speaker,
                cohort: rec.cohort,
                reference: PhoneSeq::new(rec.reference).map_err(&err)?,
                pseudo_reference: PhoneSeq::new(pseudo).map_err(&err)?,
                features_hyp: Matrix::from_rows(&rec.features)
                    .map_err(|e| Error::Validation(format!("line {line}: {e}")))?,
                pseudo_score: score,
                scale: ScoreScale::try_from(rec.scale).map_err(&err)?,
            };
            sample.validate().map_err(&err)?;
            Ok(sample)
        })
        .collect()
}

pub fn save_augmented(samples: &[AugmentedSample], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), samples, |s| Record {
        id: s.id.clone(),
        speaker: s.speaker.clone(),
        cohort: s.cohort.clone(),
        reference: s.reference.symbols().to_vec(),
        features: s.features_hyp.to_rows(),
        scores: None,
        scale: s.scale.into(),
        pseudo_reference: Some(s.pseudo_reference.symbols().to_vec()),
        pseudo_score: Some(s.pseudo_score),
        base_id: Some(s.base_id.clone()),
    })
}
