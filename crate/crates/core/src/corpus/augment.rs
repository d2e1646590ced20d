use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AugmentedSample, Matrix, Sample};
use crate::error::{Error, Result};
use crate::info_metric::nmi;
use crate::phone_align::{align, PhoneSeq};
use crate::rng;

/// Per-phone error rates of the simulated recognizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub sub: f64,
    pub del: f64,
    pub ins: f64,
}

impl Channel {
    pub fn scaled(self, factor: f64) -> Channel {
        Channel {
            sub: self.sub * factor,
            del: self.del * factor,
            ins: self.ins * factor,
        }
    }

    pub const CLEAN: Channel = Channel {
        sub: 0.0,
        del: 0.0,
        ins: 0.0,
    };
}

/// How each pseudo reference sets its error rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Every pseudo reference uses the channel rates as given.
    #[default]
    Fixed,
    /// Each pseudo reference scales the rates by a uniform draw from [0, 1],
    /// spreading pseudo-scores over the whole range.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Pseudo references produced per input sample.
    pub nbest: usize,
    /// Fraction of pseudo references replaced by another sample's reference.
    pub mismatch_rate: f64,
    pub channel: Channel,
    pub severity: Severity,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            nbest: 30,
            mismatch_rate: 0.1,
            channel: Channel {
                sub: 0.15,
                del: 0.05,
                ins: 0.05,
            },
            severity: Severity::Fixed,
            seed: 11,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nbest == 0 {
            return Err(Error::Config("nbest must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mismatch_rate) {
            return Err(Error::Config("mismatch_rate must lie in [0, 1]".into()));
        }
        let Channel { sub, del, ins } = self.channel;
        if [sub, del, ins].iter().any(|r| !(*r >= 0.0)) || sub + del + ins > 1.0 + 1e-12 {
            return Err(Error::Config(
                "channel rates must be non-negative with sub + del + ins <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Pooled within-sentence standard deviation of each feature dimension.
///
/// Rows of one sentence share the speaker's proficiency, so their spread
/// around the sentence mean is pure noise.
pub fn estimate_noise_std(samples: &[Sample]) -> Vec<f64> {
    let dim = samples.first().map_or(0, |s| s.features.cols());
    let mut ss = vec![0.0; dim];
    let mut dof = 0usize;
    for s in samples {
        let rows = s.features.rows();
        if rows < 2 || s.features.cols() != dim {
            continue;
        }
        for d in 0..dim {
            let mean = (0..rows).map(|r| s.features.row(r)[d]).sum::<f64>() / rows as f64;
            ss[d] += (0..rows).map(|r| (s.features.row(r)[d] - mean).powi(2)).sum::<f64>();
        }
        dof += rows - 1;
    }
    ss.into_iter()
        .map(|v| if dof == 0 { 0.0 } else { (v / dof as f64).sqrt() })
        .collect()
}

fn pick(r: &mut ChaCha8Rng, alphabet: &[String]) -> String {
    alphabet[r.random_range(0..alphabet.len())].clone()
}

fn pass_through_channel(
    reference: &PhoneSeq,
    channel: Channel,
    alphabet: &[String],
    r: &mut ChaCha8Rng,
) -> PhoneSeq {
    let mut out = Vec::with_capacity(reference.len() + 2);
    for phone in reference.symbols() {
        let u: f64 = r.random();
        if u < channel.sub {
            let others: Vec<&String> = alphabet.iter().filter(|a| *a != phone).collect();
            if others.is_empty() {
                out.push(phone.clone());
            } else {
                out.push(others[r.random_range(0..others.len())].clone());
            }
        } else if u < channel.sub + channel.del {
            // deleted
        } else if u < channel.sub + channel.del + channel.ins {
            out.push(phone.clone());
            out.push(pick(r, alphabet));
        } else {
            out.push(phone.clone());
        }
    }
    if out.is_empty() {
        out.push(pick(r, alphabet));
    }
    PhoneSeq::new(out).expect("channel output drawn from valid phones")
}

/// Feature rows of `base` re-described against `pseudo`.
///
/// A pseudo phone that the alignment matches to the same reference phone
/// keeps that phone's row. Substituted and inserted pseudo phones have no
/// supporting speech segment and get a fresh zero-mean noise row.
fn features_against(
    base: &Sample,
    pseudo: &PhoneSeq,
    noise: &[Normal<f64>],
    r: &mut ChaCha8Rng,
) -> Result<Matrix> {
    let alignment = align(&base.reference, pseudo)?;
    let dim = base.features.cols();
    let mut out = Matrix::zeros(pseudo.len(), dim);
    let (mut ref_row, mut hyp_row) = (0, 0);
    for pair in &alignment.pairs {
        match (&pair.reference, &pair.hypothesis) {
            (Some(_), Some(_)) if pair.is_match() => {
                out.row_mut(hyp_row).copy_from_slice(base.features.row(ref_row));
                ref_row += 1;
                hyp_row += 1;
            }
            (reference, Some(_)) => {
                for (x, n) in out.row_mut(hyp_row).iter_mut().zip(noise) {
                    *x = n.sample(r);
                }
                hyp_row += 1;
                if reference.is_some() {
                    ref_row += 1;
                }
            }
            (Some(_), None) => ref_row += 1,
            (None, None) => unreachable!("alignment pairs always have one side"),
        }
    }
    Ok(out)
}

/// Expands every sample into `nbest` pseudo-referenced, NMI-scored variants.
pub fn augment(samples: &[Sample], cfg: &AugmentConfig) -> Result<Vec<AugmentedSample>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("cannot augment an empty corpus".into()));
    }
    for s in samples {
        s.validate()?;
    }
    let alphabet: Vec<String> = samples
        .iter()
        .flat_map(|s| s.reference.symbols().iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let noise: Vec<Normal<f64>> = estimate_noise_std(samples)
        .into_iter()
        .map(|sd| Normal::new(0.0, sd).expect("non-negative std"))
        .collect();

    let mut out = Vec::with_capacity(samples.len() * cfg.nbest);
    for (i, base) in samples.iter().enumerate() {
        if noise.len() != base.features.cols() {
            return Err(Error::Shape(format!(
                "sample {} has feature dimension {}, corpus uses {}",
                base.id,
                base.features.cols(),
                noise.len()
            )));
        }
        for k in 0..cfg.nbest {
            let mut r = rng::stream(cfg.seed, (i * cfg.nbest + k) as u64);
            let mismatched = cfg.mismatch_rate > 0.0 && r.random::<f64>() < cfg.mismatch_rate;
            let pseudo = if mismatched && samples.len() > 1 {
                let mut j = r.random_range(0..samples.len() - 1);
                if j >= i {
                    j += 1;
                }
                samples[j].reference.clone()
            } else if mismatched {
                let len = base.reference.len();
                PhoneSeq::new((0..len).map(|_| pick(&mut r, &alphabet))).expect("valid phones")
            } else {
                let channel = match cfg.severity {
                    Severity::Fixed => cfg.channel,
                    Severity::Uniform => cfg.channel.scaled(r.random()),
                };
                pass_through_channel(&base.reference, channel, &alphabet, &mut r)
            };
            let features_hyp = features_against(base, &pseudo, &noise, &mut r)?;
            let pseudo_score = nmi(&base.reference, &pseudo)?;
            out.push(AugmentedSample {
                id: format!("{}#{k}", base.id),
                base_id: base.id.clone(),
                speaker: base.speaker.clone(),
                cohort: base.cohort.clone(),
                reference: base.reference.clone(),
                pseudo_reference: pseudo,
                features_hyp,
                pseudo_score,
                scale: base.scale,
            });
        }
    }
    Ok(out)
}
