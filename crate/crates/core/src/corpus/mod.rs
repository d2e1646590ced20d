//! Samples, score scales, JSONL ingestion, synthetic generation and
//! noisy-channel augmentation.

mod augment;
mod generate;
mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phone_align::PhoneSeq;

pub use augment::{augment, estimate_noise_std, AugmentConfig, Channel, Severity};
pub use generate::{generate_corpus, AspectCurve, GenConfig, OodConfig, PhoneModel, Proficiency};
pub use io::{load_augmented, load_corpus, save_augmented, save_corpus};

/// Canonical aspect names, in head order.
pub const ASPECTS: [&str; 3] = ["pronunciation", "rhythm", "intonation"];

/// Closed label range `[a, b]` with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct ScoreScale {
    a: f64,
    b: f64,
}

impl ScoreScale {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("score scale needs a < b, got [{a}, {b}]")));
        }
        Ok(ScoreScale { a, b })
    }

    /// Pseudo-score range.
    pub fn unit() -> Self {
        ScoreScale { a: 0.0, b: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.a
    }

    pub fn hi(&self) -> f64 {
        self.b
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.a && s <= self.b
    }
}

impl TryFrom<[f64; 2]> for ScoreScale {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        ScoreScale::new(v[0], v[1])
    }
}

impl From<ScoreScale> for [f64; 2] {
    fn from(s: ScoreScale) -> Self {
        [s.a, s.b]
    }
}

impl std::str::FromStr for ScoreScale {
    type Err = Error;

    /// Parses `A,B`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("expected A,B but got {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad scale bound {t:?}: {e}")))
        };
        ScoreScale::new(parse(a)?, parse(b)?)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape(format!(
                "row {r} has {} values, expected {cols}",
                rows[r].len()
            )));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(<[f64]>::to_vec).collect()
    }
}

/// A scored (or unscored) sentence: reference phones plus one feature row per phone.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Grouping key for speaker-disjoint splits; falls back to `id`.
    pub speaker: Option<String>,
    pub cohort: String,
    pub reference: PhoneSeq,
    pub features: Matrix,
    pub scores: Option<BTreeMap<String, f64>>,
    pub scale: ScoreScale,
}

impl Sample {
    pub fn speaker_key(&self) -> &str {
        self.speaker.as_deref().unwrap_or(&self.id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.reference.len() {
            return Err(Error::Validation(format!(
                "sample {}: {} feature rows for {} reference phones",
                self.id,
                self.features.rows(),
                self.reference.len()
            )));
        }
        if self.features.cols() == 0 {
            return Err(Error::Validation(format!("sample {}: empty feature rows", self.id)));
        }
        if let Some(scores) = &self.scores {
            for (aspect, &s) in scores {
                if !self.scale.contains(s) {
                    return Err(Error::Validation(format!(
                        "sample {}: {aspect} score {s} outside [{}, {}]",
                        self.id,
                        self.scale.lo(),
                        self.scale.hi()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Scores in the order of `aspects`; fails if any is missing.
    pub fn scores_for(&self, aspects: &[String]) -> Result<Vec<f64>> {
        let scores = self
            .scores
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("sample {} has no scores", self.id)))?;
        aspects
            .iter()
            .map(|a| {
                scores.get(a).copied().ok_or_else(|| {
                    Error::Validation(format!("sample {} has no {a} score", self.id))
                })
            })
            .collect()
    }
}

/// A sample re-described against a pseudo reference and labelled with the
/// NMI between the true and pseudo references.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub id: String,
    pub base_id: String,
    pub speaker: Option<String>,
    pub cohort: String,
    pub reference: PhoneSeq,
    pub pseudo_reference: PhoneSeq,
    /// One row per pseudo-reference phone.
    pub features_hyp: Matrix,
    pub pseudo_score: f64,
    pub scale: ScoreScale,
}

impl AugmentedSample {
    pub fn speaker_key(&self) -> &str {
        self.speaker.as_deref().unwrap_or(&self.base_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features_hyp.rows() != self.pseudo_reference.len() {
            return Err(Error::Validation(format!(
                "augmented sample {}: {} feature rows for {} pseudo-reference phones",
                self.id,
                self.features_hyp.rows(),
                self.pseudo_reference.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.pseudo_score) {
            return Err(Error::Validation(format!(
                "augmented sample {}: pseudo-score {} outside [0, 1]",
                self.id, self.pseudo_score
            )));
        }
        Ok(())
    }
}

/// Aspect names present in every scored sample, canonical ones first.
pub fn common_aspects(samples: &[Sample]) -> Result<Vec<String>> {
    let mut common: Option<Vec<String>> = None;
    for s in samples {
        let Some(scores) = &s.scores else {
            return Err(Error::Validation(format!("sample {} has no scores", s.id)));
        };
        let keys: Vec<String> = scores.keys().cloned().collect();
        common = Some(match common {
            None => keys,
            Some(c) => c.into_iter().filter(|k| keys.contains(k)).collect(),
        });
    }
    let mut out = common.unwrap_or_default();
    if out.is_empty() {
        return Err(Error::Validation("no aspect is scored in every sample".into()));
    }
    out.sort_by_key(|a| (ASPECTS.iter().position(|c| c == a).unwrap_or(usize::MAX), a.clone()));
    Ok(out)
}
