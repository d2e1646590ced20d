use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Matrix, Sample, ScoreScale, ASPECTS};
use crate::error::{Error, Result};
use crate::phone_align::PhoneSeq;
use crate::rng;

const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH",
    "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH",
    "UW", "V", "W", "Y", "Z", "ZH",
];

/// Speaker proficiency prior, `theta ~ Beta(alpha, beta)` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proficiency {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Proficiency {
    fn default() -> Self {
        Proficiency {
            alpha: 5.0,
            beta: 1.5,
        }
    }
}

/// How a speaker's proficiency shows up in individual phone rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhoneModel {
    /// Every row is `theta * u + noise`.
    Graded,
    /// Each phone is pronounced correctly with probability `theta` (row
    /// `u + noise`) and otherwise mispronounced (row `noise`). Rows still
    /// average to `theta * u`.
    #[default]
    Mispronounce,
}

/// Rater curve for one aspect: expected label is `a + (b - a) * theta^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspectCurve {
    pub name: String,
    pub exponent: f64,
}

/// Out-of-distribution cohort settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    pub scale: ScoreScale,
    /// Added to every feature value.
    pub feature_shift: f64,
    /// Fraction of sentences paired with an unrelated reference and the lowest label.
    pub mismatch_fraction: f64,
}

impl Default for OodConfig {
    fn default() -> Self {
        OodConfig {
            scale: ScoreScale::new(1.0, 5.0).unwrap(),
            feature_shift: 0.5,
            mismatch_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_speakers: usize,
    pub sentences_per_speaker: usize,
    pub alphabet_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub proficiency: Proficiency,
    pub phone_model: PhoneModel,
    pub feature_dim: usize,
    /// Per-value Gaussian feature noise.
    pub noise_std: f64,
    pub rater_count: usize,
    pub rater_noise: f64,
    pub integer_scores: bool,
    pub aspects: Vec<AspectCurve>,
    pub scale: ScoreScale,
    pub cohort: String,
    pub id_prefix: String,
    /// Sampling seed for speakers, sentences, noise and raters.
    pub seed: u64,
    /// Seed of the shared feature model; corpora meant to be scored by the
    /// same model must agree on it.
    pub feature_seed: u64,
    pub ood: Option<OodConfig>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_speakers: 125,
            sentences_per_speaker: 16,
            alphabet_size: 4,
            min_len: 10,
            max_len: 20,
            proficiency: Proficiency::default(),
            phone_model: PhoneModel::default(),
            feature_dim: 16,
            noise_std: 1.0,
            rater_count: 5,
            rater_noise: 0.7,
            integer_scores: true,
            aspects: ASPECTS
                .iter()
                .zip([1.0, 0.9, 1.1])
                .map(|(n, e)| AspectCurve {
                    name: n.to_string(),
                    exponent: e,
                })
                .collect(),
            scale: ScoreScale::new(1.0, 10.0).unwrap(),
            cohort: "in-dist".into(),
            id_prefix: "spk".into(),
            seed: 1,
            feature_seed: 7,
            ood: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_speakers == 0 || self.sentences_per_speaker == 0 {
            return fail("n_speakers and sentences_per_speaker must be positive");
        }
        if self.alphabet_size < 4 {
            return fail("alphabet_size must be at least 4");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail("need 1 <= min_len <= max_len");
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive");
        }
        if !(self.noise_std >= 0.0) || !(self.rater_noise >= 0.0) {
            return fail("noise levels must be non-negative");
        }
        if self.rater_count == 0 {
            return fail("rater_count must be positive");
        }
        if !(self.proficiency.alpha > 0.0 && self.proficiency.beta > 0.0) {
            return fail("proficiency alpha and beta must be positive");
        }
        if self.aspects.is_empty() || self.aspects.iter().any(|a| !(a.exponent > 0.0)) {
            return fail("need at least one aspect, each with a positive exponent");
        }
        if let Some(ood) = &self.ood {
            if !(0.0..=1.0).contains(&ood.mismatch_fraction) {
                return fail("ood.mismatch_fraction must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Score scale of the generated cohort.
    pub fn cohort_scale(&self) -> ScoreScale {
        self.ood.as_ref().map_or(self.scale, |o| o.scale)
    }

    pub fn alphabet(&self) -> Vec<String> {
        (0..self.alphabet_size)
            .map(|k| ARPABET.get(k).map_or_else(|| format!("P{k}"), |s| s.to_string()))
            .collect()
    }

    /// Proficient-pronunciation direction `u` of the feature space. The
    /// non-proficient anchor is the origin.
    pub fn feature_direction(&self) -> Vec<f64> {
        let mut r = rng::stream(self.feature_seed, 0);
        let unit = Normal::new(0.0, 1.0).unwrap();
        (0..self.feature_dim).map(|_| unit.sample(&mut r)).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Synthesizes a corpus with latent speaker proficiency.
///
/// Each speaker draws `theta` from the configured Beta prior. Every sentence
/// gets random phones and one feature row per phone whose mean is `theta * u`
/// (plus the OOD shift), see [`PhoneModel`]. Each aspect label is the median of `rater_count`
/// noisy raters around `a + (b - a) * theta^exponent`.
pub fn generate_corpus(cfg: &GenConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let alphabet = cfg.alphabet();
    let direction = cfg.feature_direction();
    let scale = cfg.cohort_scale();
    let shift = cfg.ood.as_ref().map_or(0.0, |o| o.feature_shift);
    let mismatch = cfg.ood.as_ref().map_or(0.0, |o| o.mismatch_fraction);
    let prior = Beta::new(cfg.proficiency.alpha, cfg.proficiency.beta)
        .map_err(|e| Error::Config(format!("proficiency prior: {e}")))?;
    let feat_noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let rater_noise = Normal::new(0.0, cfg.rater_noise).map_err(|e| Error::Config(e.to_string()))?;

    let random_sentence = |r: &mut rand_chacha::ChaCha8Rng| -> PhoneSeq {
        let len = r.random_range(cfg.min_len..=cfg.max_len);
        PhoneSeq::new((0..len).map(|_| alphabet[r.random_range(0..alphabet.len())].clone()))
            .expect("generated phones are valid")
    };

    let mut samples = Vec::with_capacity(cfg.n_speakers * cfg.sentences_per_speaker);
    for spk in 0..cfg.n_speakers {
        let speaker = format!("{}{spk:04}", cfg.id_prefix);
        let theta = prior.sample(&mut rng::stream(rng::derive(cfg.seed, 1), spk as u64));
        for utt in 0..cfg.sentences_per_speaker {
            let mut r = rng::stream(
                rng::derive(cfg.seed, 2),
                (spk * cfg.sentences_per_speaker + utt) as u64,
            );
            let mut reference = random_sentence(&mut r);
            let off_task = mismatch > 0.0 && r.random::<f64>() < mismatch;
            // Off-task speech: rows are scored against an unrelated text and
            // carry no proficiency evidence.
            let weight = if off_task { 0.0 } else { theta };
            if off_task {
                reference = random_sentence(&mut r);
            }
            let mut features = Matrix::zeros(reference.len(), cfg.feature_dim);
            for i in 0..reference.len() {
                let w = match cfg.phone_model {
                    PhoneModel::Graded => weight,
                    PhoneModel::Mispronounce => {
                        if r.random::<f64>() < weight {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                for (x, u) in features.row_mut(i).iter_mut().zip(&direction) {
                    *x = w * u + shift + feat_noise.sample(&mut r);
                }
            }
            let mut scores = BTreeMap::new();
            for aspect in &cfg.aspects {
                let label = if off_task {
                    scale.lo()
                } else {
                    let expect = scale.lo() + (scale.hi() - scale.lo()) * theta.powf(aspect.exponent);
                    let mut marks: Vec<f64> = (0..cfg.rater_count)
                        .map(|_| {
                            let m = (expect + rater_noise.sample(&mut r)).clamp(scale.lo(), scale.hi());
                            if cfg.integer_scores {
                                m.round().clamp(scale.lo(), scale.hi())
                            } else {
                                m
                            }
                        })
                        .collect();
                    median(&mut marks)
                };
                scores.insert(aspect.name.clone(), label);
            }
            samples.push(Sample {
                id: format!("{speaker}-{utt:03}"),
                speaker: Some(speaker.clone()),
                cohort: cfg.cohort.clone(),
                reference,
                features,
                scores: Some(scores),
                scale,
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            n_speakers: 20,
            sentences_per_speaker: 5,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&GenConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn samples_are_valid() {
        let cfg = small();
        let corpus = generate_corpus(&cfg).unwrap();
        assert_eq!(corpus.len(), 100);
        for s in &corpus {
            s.validate().unwrap();
            assert!(s.reference.len() >= cfg.min_len && s.reference.len() <= cfg.max_len);
            assert_eq!(s.scores.as_ref().unwrap().len(), 3);
        }
    }

    #[test]
    fn noiseless_scores_are_monotone_in_proficiency() {
        let cfg = GenConfig {
            noise_std: 0.0,
            rater_noise: 0.0,
            integer_scores: false,
            aspects: vec![AspectCurve {
                name: "pronunciation".into(),
                exponent: 1.0,
            }],
            phone_model: PhoneModel::Graded,
            ..small()
        };
        let u = cfg.feature_direction();
        let norm2: f64 = u.iter().map(|x| x * x).sum();
        for s in generate_corpus(&cfg).unwrap() {
            // theta recovered exactly from the features
            let theta = s.features.row(0).iter().zip(&u).map(|(x, u)| x * u).sum::<f64>() / norm2;
            let label = s.scores.as_ref().unwrap()["pronunciation"];
            assert!((label - (1.0 + 9.0 * theta)).abs() < 1e-9);
        }
    }

    #[test]
    fn mispronounced_rows_track_proficiency() {
        let cfg = GenConfig {
            n_speakers: 40,
            sentences_per_speaker: 20,
            noise_std: 0.0,
            rater_noise: 0.0,
            integer_scores: false,
            aspects: vec![AspectCurve {
                name: "pronunciation".into(),
                exponent: 1.0,
            }],
            ..small()
        };
        let u = cfg.feature_direction();
        let corpus = generate_corpus(&cfg).unwrap();
        let mut per_speaker: Vec<(f64, f64)> = Vec::new();
        for chunk in corpus.chunks(cfg.sentences_per_speaker) {
            let (mut correct, mut rows) = (0usize, 0usize);
            for s in chunk {
                for r in 0..s.features.rows() {
                    let row = s.features.row(r);
                    if row == u.as_slice() {
                        correct += 1;
                    } else {
                        assert!(row.iter().all(|&x| x == 0.0));
                    }
                    rows += 1;
                }
            }
            let theta = (chunk[0].scores.as_ref().unwrap()["pronunciation"] - 1.0) / 9.0;
            per_speaker.push((theta, correct as f64 / rows as f64));
        }
        // ~300 rows per speaker: binomial error well under 0.1
        for (theta, frac) in &per_speaker {
            assert!((theta - frac).abs() < 0.1, "theta {theta} vs correct fraction {frac}");
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            GenConfig { n_speakers: 0, ..small() },
            GenConfig { alphabet_size: 3, ..small() },
            GenConfig { noise_std: -1.0, ..small() },
            GenConfig { min_len: 5, max_len: 4, ..small() },
        ] {
            assert!(matches!(generate_corpus(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn skewed_prior_concentrates_in_top_bands() {
        // Monte Carlo over 10k speakers with noiseless single-rater labels.
        let cfg = GenConfig {
            n_speakers: 10_000,
            sentences_per_speaker: 1,
            min_len: 1,
            max_len: 1,
            feature_dim: 1,
            rater_noise: 0.0,
            integer_scores: false,
            proficiency: Proficiency { alpha: 5.0, beta: 1.0 },
            ..GenConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        // Top 30% of ten equal-width bands on [1, 10] starts at 7.3.
        let top = corpus
            .iter()
            .filter(|s| s.scores.as_ref().unwrap()["pronunciation"] >= 7.3)
            .count() as f64
            / corpus.len() as f64;
        // P(theta >= 0.7) = 1 - 0.7^5 = 0.832 for Beta(5, 1).
        assert!(top >= 0.70, "{top}");
        assert!((top - 0.83193).abs() < 0.015, "{top}");
    }

    #[test]
    fn ood_cohort_is_shifted_and_rescaled() {
        let ind = generate_corpus(&GenConfig { n_speakers: 60, ..small() }).unwrap();
        let ood_cfg = GenConfig {
            n_speakers: 60,
            cohort: "ood".into(),
            seed: 5,
            ood: Some(OodConfig::default()),
            ..small()
        };
        let ood = generate_corpus(&ood_cfg).unwrap();
        assert!(ood.iter().all(|s| s.scale == ScoreScale::new(1.0, 5.0).unwrap()));
        assert!(ood.iter().all(|s| s.scores.as_ref().unwrap().values().all(|v| (1.0..=5.0).contains(v))));

        // Per-value means; the shift of 0.5 must exceed 3 sigma / sqrt(n).
        let stats = |c: &[Sample]| {
            let vals: Vec<f64> = c.iter().flat_map(|s| s.features.as_slice().to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, var.sqrt(), n)
        };
        let (m1, s1, n1) = stats(&ind);
        let (m2, _, n2) = stats(&ood);
        assert!((m2 - m1).abs() > 3.0 * s1 / n1.min(n2).sqrt());
    }
}
