//! Two-stage training.
//!
//! Stage I fits a single-output anchor to `2 * pseudo_score - 1` on augmented
//! samples. Stage II fits the evaluation scorer with the interpolated MSE,
//! using the frozen anchor's output on each sample's own features as `s_hat`.

mod optim;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{common_aspects, AugmentedSample, Matrix, Sample, ScoreScale};
use crate::error::{Error, Result};
use crate::evalreport::{csv_error, default_bands, pcc, rmse, EvalReport};
use crate::losses::{imse, mse_with_grad, LossConfig};
use crate::rng;
use crate::scorer::{from_target, save_model, to_target, ScorerConfig, ScorerModel};

pub use optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LossKind {
    Mse,
    Imse { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Drives shuffling and the validation split.
    pub seed: u64,
    pub loss: LossKind,
    pub shuffle: bool,
    /// Fraction of speakers held out to pick the best epoch; 0 keeps the last.
    pub validation_fraction: f64,
    /// Save every n-th epoch into `checkpoint_dir`; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            loss: LossKind::Mse,
            shuffle: true,
            validation_fraction: 0.1,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate must be positive and weight_decay non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if let LossKind::Imse { rho } = self.loss {
            LossConfig::new(rho)?;
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every needs checkpoint_dir".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// On the tanh target range, pooled over aspects.
    pub rmse: f64,
    pub pcc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ScorerModel,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["epoch", "split", "loss", "rmse", "pcc"])
        .map_err(|e| csv_error(path, e))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.split.clone(),
            r.loss.to_string(),
            r.rmse.to_string(),
            r.pcc.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A training example on the tanh range: per-aspect targets and, for iMSE,
/// per-aspect anchor predictions.
struct Example<'a> {
    features: &'a Matrix,
    speaker: &'a str,
    target: Vec<f64>,
    anchor: Vec<f64>,
}

fn split_by_speaker<'a>(examples: Vec<Example<'a>>, cfg: &TrainConfig) -> (Vec<Example<'a>>, Vec<Example<'a>>) {
    let speakers: BTreeSet<&str> = examples.iter().map(|e| e.speaker).collect();
    let n_val = (cfg.validation_fraction * speakers.len() as f64).round() as usize;
    if n_val == 0 || n_val >= speakers.len() {
        return (examples, Vec::new());
    }
    let mut order: Vec<&str> = speakers.into_iter().collect();
    order.shuffle(&mut rng::stream(rng::derive(cfg.seed, 4), 0));
    let held: BTreeSet<&str> = order[..n_val].iter().copied().collect();
    examples.into_iter().partition(|e| !held.contains(e.speaker))
}

fn check_anchor_len(anchor: &[f64], target: &[f64]) -> Result<()> {
    if anchor.len() != target.len() {
        return Err(Error::Shape("anchor predictions do not match target aspects".into()));
    }
    Ok(())
}

/// Mean over aspects of the per-aspect loss, and its gradient with respect
/// to every prediction.
fn batch_loss(preds: &[Vec<f64>], batch: &[&Example], loss: LossKind) -> Result<(f64, Vec<Vec<f64>>)> {
    let aspects = preds[0].len();
    let mut total = 0.0;
    let mut grads = vec![vec![0.0; aspects]; preds.len()];
    for a in 0..aspects {
        let y: Vec<f64> = preds.iter().map(|p| p[a]).collect();
        let s: Vec<f64> = batch.iter().map(|e| e.target[a]).collect();
        let (l, g) = match loss {
            LossKind::Mse => mse_with_grad(&y, &s)?,
            LossKind::Imse { rho } => {
                let sh: Vec<f64> = batch.iter().map(|e| e.anchor[a]).collect();
                imse(&y, &s, &sh, &LossConfig::new(rho)?)?
            }
        };
        total += l;
        for (row, gv) in grads.iter_mut().zip(g) {
            row[a] = gv / aspects as f64;
        }
    }
    Ok((total / aspects as f64, grads))
}

fn pooled_metrics(preds: &[Vec<f64>], examples: &[&Example]) -> (f64, Option<f64>) {
    let p: Vec<f64> = preds.iter().flatten().copied().collect();
    let t: Vec<f64> = examples.iter().flat_map(|e| e.target.iter().copied()).collect();
    (rmse(&p, &t).unwrap_or(f64::NAN), pcc(&p, &t).ok())
}

fn validation_metrics(model: &ScorerModel, examples: &[Example], loss: LossKind) -> Result<(f64, f64, Option<f64>)> {
    let refs: Vec<&Example> = examples.iter().collect();
    let preds = refs
        .iter()
        .map(|e| model.forward(e.features))
        .collect::<Result<Vec<_>>>()?;
    let (l, _) = batch_loss(&preds, &refs, loss)?;
    let (r, c) = pooled_metrics(&preds, &refs);
    Ok((l, r, c))
}

fn fit(mut model: ScorerModel, examples: Vec<Example>, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let (train, valid) = split_by_speaker(examples, cfg);
    let mut opt = Adam::new(model.param_count(), cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut grads = vec![0.0; model.param_count()];

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng::stream(rng::derive(cfg.seed, 3), epoch as u64));
        }
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut epoch_preds = Vec::with_capacity(train.len());
        let mut epoch_examples = Vec::with_capacity(train.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let caches = batch
                .iter()
                .map(|e| model.forward_cached(e.features))
                .collect::<Result<Vec<_>>>()?;
            let preds: Vec<Vec<f64>> = caches.iter().map(|c| c.outputs().to_vec()).collect();
            let (loss, d_preds) = batch_loss(&preds, &batch, cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            grads.fill(0.0);
            for (cache, d) in caches.iter().zip(&d_preds) {
                model.accumulate_gradient(cache, d, &mut grads)?;
            }
            opt.step(model.params_mut(), &grads);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            epoch_preds.extend(preds);
            epoch_examples.extend(batch);
        }
        let (r, c) = pooled_metrics(&epoch_preds, &epoch_examples);
        let train_loss = loss_sum / seen as f64;
        history.push(EpochRecord {
            epoch,
            split: "train".into(),
            loss: train_loss,
            rmse: r,
            pcc: c,
        });
        let score = if valid.is_empty() {
            train_loss
        } else {
            let (l, r, c) = validation_metrics(&model, &valid, cfg.loss)?;
            history.push(EpochRecord {
                epoch,
                split: "valid".into(),
                loss: l,
                rmse: r,
                pcc: c,
            });
            l
        };
        if !score.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        let keep = if valid.is_empty() {
            true
        } else {
            best.as_ref().is_none_or(|b| score < b.0)
        };
        if keep {
            best = Some((score, epoch, model.params().to_vec()));
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            let dir = cfg.checkpoint_dir.as_ref().expect("validated");
            save_model(&model, dir.join(format!("epoch-{epoch:04}.ckpt")))?;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.set_params(params)?;
    Ok(Trained {
        model,
        history,
        best_epoch,
    })
}

/// Stage I: single-head anchor fitted to the pseudo-scores with MSE.
/// `scorer_cfg.aspects` is forced to 1.
pub fn train_anchor(aug: &[AugmentedSample], scorer_cfg: &ScorerConfig, cfg: &TrainConfig) -> Result<Trained> {
    if aug.is_empty() {
        return Err(Error::Config("no augmented samples to train the anchor on".into()));
    }
    if cfg.loss != LossKind::Mse {
        return Err(Error::Config("the anchor is trained with mse".into()));
    }
    let model = ScorerModel::new(ScorerConfig {
        aspects: 1,
        ..scorer_cfg.clone()
    })?;
    let examples = aug
        .iter()
        .map(|s| {
            s.validate()?;
            Ok(Example {
                features: &s.features_hyp,
                speaker: s.speaker_key(),
                target: vec![to_target(s.pseudo_score, ScoreScale::unit())?],
                anchor: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fit(model, examples, cfg)
}

/// Human targets of every sample on the tanh range, in `aspects` order.
pub fn human_targets(train: &[Sample], aspects: &[String]) -> Result<Vec<Vec<f64>>> {
    train
        .iter()
        .map(|s| {
            s.validate()?;
            s.scores_for(aspects)?
                .into_iter()
                .map(|v| to_target(v, s.scale))
                .collect()
        })
        .collect()
}

/// Frozen anchor outputs for every sample, broadcast to `aspects` heads when
/// the anchor has a single head.
pub fn anchor_predictions(anchor: &ScorerModel, samples: &[Sample], aspects: usize) -> Result<Vec<Vec<f64>>> {
    let heads = anchor.config().aspects;
    if heads != 1 && heads != aspects {
        return Err(Error::Shape(format!("anchor has {heads} heads for {aspects} aspects")));
    }
    samples
        .iter()
        .map(|s| {
            let y = anchor.forward(&s.features)?;
            Ok(if heads == 1 { vec![y[0]; aspects] } else { y })
        })
        .collect()
}

/// Stage II with a frozen anchor. `scorer_cfg.aspects` is set to the number
/// of aspects scored in every training sample.
pub fn train_eval(
    train: &[Sample],
    anchor: &ScorerModel,
    scorer_cfg: &ScorerConfig,
    cfg: &TrainConfig,
) -> Result<Trained> {
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let aspects = common_aspects(train)?;
    let pseudo = match cfg.loss {
        LossKind::Mse => vec![Vec::new(); train.len()],
        LossKind::Imse { .. } => anchor_predictions(anchor, train, aspects.len())?,
    };
    train_eval_with_targets(train, &aspects, &pseudo, scorer_cfg, cfg)
}

/// Stage II with anchor predictions already on the tanh range.
pub fn train_eval_with_targets(
    train: &[Sample],
    aspects: &[String],
    pseudo: &[Vec<f64>],
    scorer_cfg: &ScorerConfig,
    cfg: &TrainConfig,
) -> Result<Trained> {
    if train.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    if pseudo.len() != train.len() {
        return Err(Error::Shape(format!("{} anchor rows for {} samples", pseudo.len(), train.len())));
    }
    let targets = human_targets(train, aspects)?;
    let mut model = ScorerModel::new(ScorerConfig {
        aspects: aspects.len(),
        ..scorer_cfg.clone()
    })?;
    model.set_aspect_names(aspects.to_vec())?;
    let examples = train
        .iter()
        .zip(targets)
        .zip(pseudo)
        .map(|((s, target), anchor)| {
            if matches!(cfg.loss, LossKind::Imse { .. }) {
                check_anchor_len(anchor, &target)?;
            }
            Ok(Example {
                features: &s.features,
                speaker: s.speaker_key(),
                target,
                anchor: anchor.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fit(model, examples, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub scores: BTreeMap<String, f64>,
}

/// Model outputs mapped onto `scale`.
pub fn predict(model: &ScorerModel, samples: &[Sample], scale: ScoreScale) -> Result<Vec<Prediction>> {
    samples
        .iter()
        .map(|s| {
            let y = model.forward(&s.features)?;
            let scores = model
                .aspect_names()
                .iter()
                .zip(y)
                .map(|(name, t)| Ok((name.clone(), from_target(t, scale)?)))
                .collect::<Result<_>>()?;
            Ok(Prediction {
                id: s.id.clone(),
                scores,
            })
        })
        .collect()
}

/// Scores `samples` with `model` and reports against their human labels.
/// A single-head model is compared on every aspect; otherwise heads are
/// matched to aspects by name.
pub fn evaluate(model: &ScorerModel, name: &str, samples: &[Sample], bands: Option<usize>) -> Result<EvalReport> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Validation("no samples to evaluate".into()))?;
    if let Some(s) = samples.iter().find(|s| s.scale != first.scale || s.cohort != first.cohort) {
        return Err(Error::Validation(format!(
            "sample {} differs from {} in cohort or scale",
            s.id, first.id
        )));
    }
    let aspects = common_aspects(samples)?;
    let heads: Vec<usize> = if model.config().aspects == 1 {
        vec![0; aspects.len()]
    } else {
        aspects
            .iter()
            .map(|a| {
                model
                    .aspect_names()
                    .iter()
                    .position(|n| n == a)
                    .ok_or_else(|| Error::Validation(format!("model has no head for aspect {a}")))
            })
            .collect::<Result<_>>()?
    };
    let mut pred = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    for s in samples {
        let y = model.forward(&s.features)?;
        pred.push(heads.iter().map(|&h| from_target(y[h], s.scale)).collect::<Result<Vec<_>>>()?);
        truth.push(s.scores_for(&aspects)?);
    }
    let bands = bands.unwrap_or_else(|| default_bands(first.scale));
    EvalReport::build(name, &first.cohort, first.scale, bands, &aspects, &pred, &truth)
}
