//! Imbalance-robust proficiency scoring for phone sequences.
//!
//! The crate covers the whole two-stage workflow:
//!
//! ```text
//! (reference, hypothesis) --align--> confusion matrix --NMI--> pseudo-score
//! corpus --augment (noisy channel)--> pseudo-scored samples --train--> anchor
//! corpus + frozen anchor --interpolated MSE--> evaluation scorer --> reports
//! ```
//!
//! * [`phone_align`] edit-distance alignment and confusion matrices.
//! * [`info_metric`] entropy, mutual information and normalized mutual information.
//! * [`corpus`] samples, JSONL I/O, synthetic generation and augmentation.
//! * [`scorer`] transformer-encoder scorer with exact backpropagation.
//! * [`losses`] MSE, kernel-weighted MSE, interpolated MSE and the discrete
//!   cross-entropy / KL forms they reduce from.
//! * [`pipeline`] anchor pre-training, evaluation-model training, prediction.
//! * [`evalreport`] RMSE, PCC, band-wise RMSE and comparison tables.
//! * [`experiment`] the end-to-end robustness experiment.

pub mod corpus;
pub mod error;
pub mod evalreport;
pub mod experiment;
pub mod info_metric;
pub mod losses;
pub mod phone_align;
pub mod pipeline;
pub(crate) mod rng;
pub mod scorer;

pub use error::{Error, Result};
pub use phone_align::{align, Alignment, ConfusionMatrix, PhoneSeq, PLACEHOLDER};
pub use info_metric::{entropy, mutual_information, nmi, JointDistribution};
pub use corpus::{AugmentConfig, AugmentedSample, Channel, GenConfig, Matrix, Sample, ScoreScale};
pub use scorer::{ScorerConfig, ScorerModel};
pub use losses::LossConfig;
pub use pipeline::{LossKind, TrainConfig};
pub use evalreport::EvalReport;
