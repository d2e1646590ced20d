//! RMSE, PCC, band-wise RMSE and comparison tables.
//!
//! Bands split the label scale `[a, b]` into equal-width intervals, closed on
//! the left except the last, which also includes `b`. Bands are numbered
//! from 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ScoreScale;
use crate::error::{Error, Result};

pub const REPORT_VERSION: &str = "anchorscore-report/1";

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("no predictions".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Sample Pearson correlation.
pub fn pcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStat {
    pub band: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty band.
    pub rmse: Option<f64>,
}

/// 1-based band of `value`.
/// One band per integer score for integer scales, ten otherwise.
pub fn default_bands(scale: ScoreScale) -> usize {
    let (a, b) = (scale.lo(), scale.hi());
    if a.fract() == 0.0 && b.fract() == 0.0 {
        (b - a) as usize + 1
    } else {
        10
    }
}

pub fn band_of(value: f64, scale: ScoreScale, bands: usize) -> usize {
    let (a, b) = (scale.lo(), scale.hi());
    let k = ((value - a) * bands as f64 / (b - a)).floor();
    (k.max(0.0) as usize).min(bands - 1) + 1
}

pub fn bandwise_rmse(pred: &[f64], truth: &[f64], scale: ScoreScale, bands: usize) -> Result<Vec<BandStat>> {
    check_pair(pred, truth)?;
    if bands == 0 {
        return Err(Error::Config("band count must be positive".into()));
    }
    let mut ss = vec![0.0; bands];
    let mut counts = vec![0usize; bands];
    for (p, t) in pred.iter().zip(truth) {
        if !scale.contains(*t) {
            return Err(Error::Range {
                value: *t,
                lo: scale.lo(),
                hi: scale.hi(),
            });
        }
        let k = band_of(*t, scale, bands) - 1;
        ss[k] += (p - t) * (p - t);
        counts[k] += 1;
    }
    let width = (scale.hi() - scale.lo()) / bands as f64;
    Ok((0..bands)
        .map(|k| BandStat {
            band: k + 1,
            lo: scale.lo() + width * k as f64,
            hi: if k + 1 == bands { scale.hi() } else { scale.lo() + width * (k + 1) as f64 },
            count: counts[k],
            rmse: (counts[k] > 0).then(|| (ss[k] / counts[k] as f64).sqrt()),
        })
        .collect())
}

/// Population standard deviation of the non-empty band RMSEs.
pub fn band_evenness(bands: &[BandStat]) -> Option<f64> {
    let vals: Vec<f64> = bands.iter().filter_map(|b| b.rmse).collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    Some((vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt())
}

/// Count-weighted quadratic mean of band RMSEs; equals the global RMSE.
pub fn recombined_rmse(bands: &[BandStat]) -> Option<f64> {
    let n: usize = bands.iter().map(|b| b.count).sum();
    if n == 0 {
        return None;
    }
    let ss: f64 = bands
        .iter()
        .filter_map(|b| b.rmse.map(|r| b.count as f64 * r * r))
        .sum();
    Some((ss / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectReport {
    pub aspect: String,
    pub rmse: f64,
    /// `None` when either side is constant.
    pub pcc: Option<f64>,
    pub band_rmse: Vec<BandStat>,
    pub band_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub version: String,
    pub model: String,
    pub cohort: String,
    pub scale: ScoreScale,
    pub samples: usize,
    pub bands: usize,
    pub aspects: Vec<AspectReport>,
}

impl EvalReport {
    /// `pred[i][a]` and `truth[i][a]` are scores of sample `i` on aspect `a`,
    /// on `scale`.
    pub fn build(
        model: &str,
        cohort: &str,
        scale: ScoreScale,
        bands: usize,
        aspect_names: &[String],
        pred: &[Vec<f64>],
        truth: &[Vec<f64>],
    ) -> Result<Self> {
        if pred.len() != truth.len() || pred.is_empty() {
            return Err(Error::Shape(format!("{} predictions for {} samples", pred.len(), truth.len())));
        }
        if pred.iter().chain(truth).any(|r| r.len() != aspect_names.len()) {
            return Err(Error::Shape(format!("every row needs {} aspects", aspect_names.len())));
        }
        let aspects = aspect_names
            .iter()
            .enumerate()
            .map(|(a, name)| {
                let p: Vec<f64> = pred.iter().map(|r| r[a]).collect();
                let t: Vec<f64> = truth.iter().map(|r| r[a]).collect();
                let band_rmse = bandwise_rmse(&p, &t, scale, bands)?;
                Ok(AspectReport {
                    aspect: name.clone(),
                    rmse: rmse(&p, &t)?,
                    pcc: match pcc(&p, &t) {
                        Ok(v) => Some(v),
                        Err(Error::UndefinedCorrelation(_)) => None,
                        Err(e) => return Err(e),
                    },
                    band_std: band_evenness(&band_rmse),
                    band_rmse,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            version: REPORT_VERSION.to_string(),
            model: model.to_string(),
            cohort: cohort.to_string(),
            scale,
            samples: pred.len(),
            bands,
            aspects,
        })
    }

    pub fn aspect(&self, name: &str) -> Option<&AspectReport> {
        self.aspects.iter().find(|a| a.aspect == name)
    }

    pub fn mean_rmse(&self) -> f64 {
        self.aspects.iter().map(|a| a.rmse).sum::<f64>() / self.aspects.len() as f64
    }

    /// Mean over aspects of the band RMSE standard deviation.
    pub fn mean_band_std(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.aspects.iter().map(|a| a.band_std).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Largest gap between an aspect's RMSE and its recombined band RMSEs.
    pub fn decomposition_error(&self) -> f64 {
        self.aspects
            .iter()
            .map(|a| match recombined_rmse(&a.band_rmse) {
                Some(r) => (r - a.rmse).abs(),
                None => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if r.version != REPORT_VERSION {
            return Err(Error::Schema(format!("unsupported report version {:?}", r.version)));
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Long-format rows: model, cohort, aspect, metric, band, value, count.
    pub fn csv_rows(&self) -> Vec<[String; 7]> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut rows = Vec::new();
        for a in &self.aspects {
            let row = |metric: &str, band: String, value: String, count: usize| {
                [
                    self.model.clone(),
                    self.cohort.clone(),
                    a.aspect.clone(),
                    metric.to_string(),
                    band,
                    value,
                    count.to_string(),
                ]
            };
            rows.push(row("rmse", "all".into(), a.rmse.to_string(), self.samples));
            rows.push(row("pcc", "all".into(), opt(a.pcc), self.samples));
            rows.push(row("band_std", "all".into(), opt(a.band_std), self.samples));
            for b in &a.band_rmse {
                rows.push(row("band_rmse", b.band.to_string(), opt(b.rmse), b.count));
            }
        }
        rows
    }
}

pub const REPORT_CSV_HEADER: [&str; 7] = ["model", "cohort", "aspect", "metric", "band", "value", "count"];

pub fn write_reports_csv(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(REPORT_CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in reports {
        for row in r.csv_rows() {
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub cohort: String,
    pub aspect: String,
    pub rmse: f64,
    pub pcc: Option<f64>,
    /// Lowest RMSE among models for this cohort and aspect.
    pub best_rmse: bool,
    /// Highest PCC among models for this cohort and aspect.
    pub best_pcc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub aspects: Vec<String>,
    pub cohorts: Vec<String>,
    pub models: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side table of every report, with best cells flagged per
/// (cohort, aspect). Rows follow report order, then aspect order.
pub fn compare(reports: &[EvalReport]) -> Result<Comparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Schema("nothing to compare".into()))?;
    let aspects: Vec<String> = first.aspects.iter().map(|a| a.aspect.clone()).collect();
    let want: BTreeSet<&String> = aspects.iter().collect();
    for r in reports {
        let got: BTreeSet<&String> = r.aspects.iter().map(|a| &a.aspect).collect();
        if got != want {
            return Err(Error::Schema(format!(
                "report {}/{} has aspects {:?}, expected {:?}",
                r.model, r.cohort, got, want
            )));
        }
    }
    let mut best_rmse: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut best_pcc: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in reports {
        for a in &r.aspects {
            let key = (r.cohort.as_str(), a.aspect.as_str());
            let e = best_rmse.entry(key).or_insert(f64::INFINITY);
            *e = e.min(a.rmse);
            if let Some(p) = a.pcc {
                let e = best_pcc.entry(key).or_insert(f64::NEG_INFINITY);
                *e = e.max(p);
            }
        }
    }
    let mut rows = Vec::new();
    let mut cohorts = Vec::new();
    let mut models = Vec::new();
    for r in reports {
        if !cohorts.contains(&r.cohort) {
            cohorts.push(r.cohort.clone());
        }
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
        for name in &aspects {
            let a = r.aspect(name).expect("aspect sets checked");
            let key = (r.cohort.as_str(), name.as_str());
            rows.push(ComparisonRow {
                model: r.model.clone(),
                cohort: r.cohort.clone(),
                aspect: name.clone(),
                rmse: a.rmse,
                pcc: a.pcc,
                best_rmse: a.rmse == best_rmse[&key],
                best_pcc: a.pcc.is_some() && a.pcc == best_pcc.get(&key).copied(),
            });
        }
    }
    Ok(Comparison {
        aspects,
        cohorts,
        models,
        rows,
    })
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["model", "cohort", "aspect", "rmse", "pcc", "best_rmse", "best_pcc"])
            .map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.cohort.clone(),
                r.aspect.clone(),
                r.rmse.to_string(),
                r.pcc.map(|v| v.to_string()).unwrap_or_default(),
                r.best_rmse.to_string(),
                r.best_pcc.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
