//! End-to-end robustness experiment.
//!
//! Output directory:
//!
//! ```text
//! corpora/      train.jsonl  test.jsonl  ood.jsonl  augmented.jsonl
//! checkpoints/  anchor_s{seed}.ckpt  eval_rho{rho}_s{seed}.ckpt  *.log.csv
//! reports/      {model}_{cohort}.json  reports.csv  comparison.{csv,json}  summary.json
//! manifest.json
//! ```
//!
//! The manifest is rewritten after every stage, so an aborted run records how
//! far it got.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    augment, common_aspects, generate_corpus, save_augmented, save_corpus, AugmentConfig, Channel, GenConfig, OodConfig,
    Sample, ScoreScale, Severity,
};
use crate::error::{Error, Result};
use crate::evalreport::{compare, default_bands, write_reports_csv, EvalReport};
use crate::pipeline::{anchor_predictions, train_anchor, train_eval, write_history, LossKind, TrainConfig};
use crate::rng;
use crate::scorer::{from_target, save_model, ScorerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestCohorts {
    /// Test cohorts are only scored, so they can be large; small ones make
    /// the rho comparison hinge on which speakers were drawn.
    pub in_dist_speakers: usize,
    pub ood_speakers: usize,
    pub ood: OodConfig,
}

impl Default for TestCohorts {
    fn default() -> Self {
        TestCohorts {
            in_dist_speakers: 200,
            ood_speakers: 200,
            ood: OodConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub model: ScorerConfig,
    pub training: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub rhos: Vec<f64>,
    /// The pair compared by the directional checks.
    pub baseline_rho: f64,
    pub proposed_rho: f64,
    /// Bands per cohort; unset means one band per integer score.
    pub bands: Option<usize>,
    /// Training cohort; test cohorts reuse it with derived seeds.
    pub corpus: GenConfig,
    pub test: TestCohorts,
    pub augment: AugmentConfig,
    pub anchor: StageConfig,
    pub eval: StageConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ScorerConfig::default();
        ExperimentConfig {
            name: "default".into(),
            seeds: vec![1, 2, 3],
            rhos: vec![0.0, 0.25, 1.0],
            baseline_rho: 0.0,
            proposed_rho: 0.25,
            bands: None,
            corpus: GenConfig::default(),
            test: TestCohorts::default(),
            // Severity varies per variant so pseudo-scores cover the scale
            // rather than clustering at one channel's typical NMI.
            augment: AugmentConfig {
                nbest: 4,
                mismatch_rate: 0.1,
                channel: Channel {
                    sub: 0.6,
                    del: 0.1,
                    ins: 0.1,
                },
                severity: Severity::Uniform,
                ..AugmentConfig::default()
            },
            anchor: StageConfig {
                model: ScorerConfig {
                    aspects: 1,
                    ..model.clone()
                },
                training: TrainConfig {
                    epochs: 8,
                    batch_size: 32,
                    ..TrainConfig::default()
                },
            },
            eval: StageConfig {
                model,
                training: TrainConfig {
                    epochs: 20,
                    batch_size: 32,
                    ..TrainConfig::default()
                },
            },
        }
    }
}

impl ExperimentConfig {
    /// About 200 training sentences, one seed; finishes in seconds.
    pub fn smoke() -> Self {
        let d = Self::default();
        let small = ScorerConfig {
            embed_dim: 8,
            heads: 2,
            layers: 1,
            ..ScorerConfig::default()
        };
        ExperimentConfig {
            name: "smoke".into(),
            seeds: vec![1],
            corpus: GenConfig {
                n_speakers: 25,
                sentences_per_speaker: 8,
                ..d.corpus.clone()
            },
            test: TestCohorts {
                in_dist_speakers: 8,
                ood_speakers: 8,
                ..d.test.clone()
            },
            augment: AugmentConfig {
                nbest: 3,
                ..d.augment.clone()
            },
            anchor: StageConfig {
                model: ScorerConfig { aspects: 1, ..small.clone() },
                training: TrainConfig { epochs: 2, ..d.anchor.training.clone() },
            },
            eval: StageConfig {
                model: small,
                training: TrainConfig { epochs: 3, ..d.eval.training.clone() },
            },
            ..d
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected default or smoke)"))),
        }
    }

    /// Parses a TOML document layered over a preset: keys it sets replace
    /// the preset's, tables merge key by key. The preset is named by an
    /// optional top-level `preset` key and defaults to `default`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config_error = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
        let mut overrides: toml::Table = toml::from_str(text).map_err(|e| config_error(&e))?;
        let preset = match overrides.remove("preset") {
            None => "default".to_string(),
            Some(toml::Value::String(name)) => name,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let mut merged = toml::Table::try_from(Self::preset(&preset)?).map_err(|e| config_error(&e))?;
        merge_tables(&mut merged, overrides);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| config_error(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.rhos.is_empty() {
            return Err(Error::Config("seeds and rhos must be non-empty".into()));
        }
        for &rho in &self.rhos {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Config(format!("rho {rho} outside [0, 1]")));
            }
        }
        if self.bands == Some(0) {
            return Err(Error::Config("bands must be positive".into()));
        }
        if self.test.in_dist_speakers == 0 || self.test.ood_speakers == 0 {
            return Err(Error::Config("test cohorts need speakers".into()));
        }
        self.corpus.validate()?;
        self.augment.validate()?;
        self.anchor.training.validate()?;
        self.eval.training.validate()?;
        Ok(())
    }

    pub fn test_config(&self) -> GenConfig {
        GenConfig {
            n_speakers: self.test.in_dist_speakers,
            id_prefix: "test".into(),
            seed: rng::derive(self.corpus.seed, 101),
            ood: None,
            ..self.corpus.clone()
        }
    }

    pub fn ood_config(&self) -> GenConfig {
        GenConfig {
            n_speakers: self.test.ood_speakers,
            id_prefix: "ood".into(),
            cohort: "ood".into(),
            seed: rng::derive(self.corpus.seed, 102),
            ood: Some(self.test.ood.clone()),
            ..self.corpus.clone()
        }
    }

    fn bands_for(&self, scale: ScoreScale) -> usize {
        self.bands.unwrap_or_else(|| default_bands(scale))
    }
}

fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

pub fn rho_label(rho: f64) -> String {
    format!("rho{rho}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub complete: bool,
    pub stages: Vec<StageRecord>,
    pub files: Vec<String>,
}

/// One seed's view of the directional checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Mean over aspects of the in-distribution band RMSE std.
    pub band_std_baseline: f64,
    pub band_std_proposed: f64,
    pub ood_pcc_baseline: Vec<Option<f64>>,
    pub ood_pcc_proposed: Vec<Option<f64>>,
    /// Mean over aspects of in-distribution RMSE.
    pub anchor_rmse: f64,
    pub baseline_rmse: f64,
    pub proposed_rmse: f64,
    pub evenness_improved: bool,
    pub ood_pcc_improved: bool,
    pub anchor_worse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub baseline_rho: f64,
    pub proposed_rho: f64,
    pub aspects: Vec<String>,
    pub seeds: Vec<SeedOutcome>,
    /// Majority votes across seeds.
    pub evenness_improved: bool,
    pub ood_pcc_improved: bool,
    pub anchor_worse: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub summary: Option<Summary>,
}

struct Run<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl Run<'_> {
    fn save_manifest(&self) -> Result<()> {
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Vec<String>) -> Result<T>) -> Result<T> {
        let mut files = Vec::new();
        let result = f(&mut files);
        self.manifest.files.extend(files);
        match result {
            Ok(v) => {
                self.manifest.stages.push(StageRecord {
                    stage: name.into(),
                    status: "done".into(),
                    error: None,
                });
                self.save_manifest()?;
                Ok(v)
            }
            Err(e) => {
                let e = e.in_stage(name);
                self.manifest.stages.push(StageRecord {
                    stage: name.into(),
                    status: "failed".into(),
                    error: Some(e.to_string()),
                });
                self.save_manifest()?;
                Err(e)
            }
        }
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn truth_rows(samples: &[Sample], aspects: &[String]) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|s| s.scores_for(aspects)).collect()
}

fn rescale(rows: Vec<Vec<f64>>, scale: ScoreScale) -> Result<Vec<Vec<f64>>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(|t| from_target(t, scale)).collect())
        .collect()
}

/// Runs every stage into `dir`, which is created if needed.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, log: &dyn Fn(&str)) -> Result<ExperimentOutput> {
    cfg.validate()?;
    for sub in ["corpora", "checkpoints", "reports"] {
        mkdir(&dir.join(sub))?;
    }
    let mut run = Run {
        dir,
        manifest: Manifest {
            name: cfg.name.clone(),
            complete: false,
            stages: Vec::new(),
            files: Vec::new(),
        },
    };
    run.save_manifest()?;

    log("generating corpora");
    let (train, test, ood) = run.stage("generate", |files| {
        let train = generate_corpus(&cfg.corpus)?;
        let test = generate_corpus(&cfg.test_config())?;
        let ood = generate_corpus(&cfg.ood_config())?;
        for (name, data) in [("train", &train), ("test", &test), ("ood", &ood)] {
            let rel = format!("corpora/{name}.jsonl");
            save_corpus(data, dir.join(&rel))?;
            files.push(rel);
        }
        Ok((train, test, ood))
    })?;
    let aspects = run.stage("aspects", |_| common_aspects(&train))?;

    log("augmenting");
    let aug = run.stage("augment", |files| {
        let aug = augment(&train, &cfg.augment)?;
        save_augmented(&aug, dir.join("corpora/augmented.jsonl"))?;
        files.push("corpora/augmented.jsonl".into());
        Ok(aug)
    })?;

    let cohorts: [(&str, &[Sample]); 2] = [("in-dist", &test), ("ood", &ood)];
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        log(&format!("seed {seed}: training anchor on {} augmented samples", aug.len()));
        let anchor_name = format!("anchor_s{seed}");
        let anchor = run.stage(&format!("train-{anchor_name}"), |files| {
            let model_cfg = ScorerConfig {
                seed: rng::derive(seed, 1),
                ..cfg.anchor.model.clone()
            };
            let train_cfg = TrainConfig {
                seed,
                ..cfg.anchor.training.clone()
            };
            let t = train_anchor(&aug, &model_cfg, &train_cfg)?;
            save_model(&t.model, dir.join(format!("checkpoints/{anchor_name}.ckpt")))?;
            write_history(&t.history, dir.join(format!("checkpoints/{anchor_name}.log.csv")))?;
            files.push(format!("checkpoints/{anchor_name}.ckpt"));
            files.push(format!("checkpoints/{anchor_name}.log.csv"));
            Ok(t.model)
        })?;

        reports.extend(run.stage(&format!("evaluate-{anchor_name}"), |files| {
            evaluate_cohorts(&anchor_name, &cohorts, &aspects, cfg, dir, files, |s| {
                anchor_predictions(&anchor, s, aspects.len())
            })
        })?);

        for &rho in &cfg.rhos {
            let name = format!("eval_{}_s{seed}", rho_label(rho));
            log(&format!("seed {seed}: training {name}"));
            let model = run.stage(&format!("train-{name}"), |files| {
                let model_cfg = ScorerConfig {
                    seed,
                    ..cfg.eval.model.clone()
                };
                let train_cfg = TrainConfig {
                    seed,
                    loss: LossKind::Imse { rho },
                    ..cfg.eval.training.clone()
                };
                let t = train_eval(&train, &anchor, &model_cfg, &train_cfg)?;
                save_model(&t.model, dir.join(format!("checkpoints/{name}.ckpt")))?;
                write_history(&t.history, dir.join(format!("checkpoints/{name}.log.csv")))?;
                files.push(format!("checkpoints/{name}.ckpt"));
                files.push(format!("checkpoints/{name}.log.csv"));
                Ok(t.model)
            })?;
            reports.extend(run.stage(&format!("evaluate-{name}"), |files| {
                evaluate_cohorts(&name, &cohorts, &aspects, cfg, dir, files, |s: &[Sample]| {
                    s.iter().map(|x| model.forward(&x.features)).collect()
                })
            })?);
        }
    }

    log("writing comparison tables");
    let summary = run.stage("compare", |files| {
        let table = compare(&reports)?;
        table.save_csv(dir.join("reports/comparison.csv"))?;
        table.save_json(dir.join("reports/comparison.json"))?;
        write_reports_csv(&reports, dir.join("reports/reports.csv"))?;
        files.extend(["reports/comparison.csv", "reports/comparison.json", "reports/reports.csv"].map(String::from));
        let summary = summarize(cfg, &aspects, &reports);
        if let Some(s) = &summary {
            let path = dir.join("reports/summary.json");
            let text = serde_json::to_string_pretty(s).expect("summary serializes");
            fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
            files.push("reports/summary.json".into());
        }
        Ok(summary)
    })?;
    run.manifest.complete = true;
    run.save_manifest()?;
    Ok(ExperimentOutput {
        dir: dir.to_path_buf(),
        reports,
        summary,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cohorts(
    model: &str,
    cohorts: &[(&str, &[Sample])],
    aspects: &[String],
    cfg: &ExperimentConfig,
    dir: &Path,
    files: &mut Vec<String>,
    forward: impl Fn(&[Sample]) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<EvalReport>> {
    let mut out = Vec::new();
    for &(cohort, samples) in cohorts {
        let scale = samples[0].scale;
        if samples.iter().any(|s| s.scale != scale) {
            return Err(Error::Validation(format!("cohort {cohort} mixes score scales")));
        }
        let pred = rescale(forward(samples)?, scale)?;
        let truth = truth_rows(samples, aspects)?;
        let report = EvalReport::build(model, cohort, scale, cfg.bands_for(scale), aspects, &pred, &truth)?;
        let rel = format!("reports/{model}_{cohort}.json");
        report.save_json(dir.join(&rel))?;
        files.push(rel);
        out.push(report);
    }
    Ok(out)
}

fn summarize(cfg: &ExperimentConfig, aspects: &[String], reports: &[EvalReport]) -> Option<Summary> {
    if !cfg.rhos.contains(&cfg.baseline_rho) || !cfg.rhos.contains(&cfg.proposed_rho) {
        return None;
    }
    let find = |model: &str, cohort: &str| reports.iter().find(|r| r.model == model && r.cohort == cohort);
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let base = format!("eval_{}_s{seed}", rho_label(cfg.baseline_rho));
        let prop = format!("eval_{}_s{seed}", rho_label(cfg.proposed_rho));
        let anchor = format!("anchor_s{seed}");
        let (bi, pi, ai) = (find(&base, "in-dist")?, find(&prop, "in-dist")?, find(&anchor, "in-dist")?);
        let (bo, po) = (find(&base, "ood")?, find(&prop, "ood")?);
        let pccs = |r: &EvalReport| aspects.iter().map(|a| r.aspect(a).and_then(|x| x.pcc)).collect::<Vec<_>>();
        let (ob, op) = (pccs(bo), pccs(po));
        let wins = ob
            .iter()
            .zip(&op)
            .filter(|(b, p)| matches!((b, p), (Some(b), Some(p)) if p > b))
            .count();
        let (sb, sp) = (bi.mean_band_std()?, pi.mean_band_std()?);
        let (rb, rp, ra) = (bi.mean_rmse(), pi.mean_rmse(), ai.mean_rmse());
        seeds.push(SeedOutcome {
            seed,
            band_std_baseline: sb,
            band_std_proposed: sp,
            ood_pcc_baseline: ob,
            ood_pcc_proposed: op,
            anchor_rmse: ra,
            baseline_rmse: rb,
            proposed_rmse: rp,
            evenness_improved: sp < sb,
            ood_pcc_improved: 2 * wins > aspects.len(),
            anchor_worse: ra > rb.max(rp),
        });
    }
    let majority = |f: fn(&SeedOutcome) -> bool| 2 * seeds.iter().filter(|s| f(s)).count() > seeds.len();
    Some(Summary {
        baseline_rho: cfg.baseline_rho,
        proposed_rho: cfg.proposed_rho,
        aspects: aspects.to_vec(),
        evenness_improved: majority(|s| s.evenness_improved),
        ood_pcc_improved: majority(|s| s.ood_pcc_improved),
        anchor_worse: majority(|s| s.anchor_worse),
        seeds,
    })
}
