//! Entropy, mutual information and normalized mutual information over
//! sentence confusion matrices. All logarithms are natural.

use crate::error::{Error, Result};
use crate::phone_align::{align, ConfusionMatrix, PhoneSeq};

/// Normalized joint distribution of aligned tokens with its marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub probs: Vec<Vec<f64>>,
    pub marginal_ref: Vec<f64>,
    pub marginal_hyp: Vec<f64>,
}

pub fn normalize(matrix: &ConfusionMatrix) -> Result<JointDistribution> {
    if matrix.total() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let total = matrix.total() as f64;
    let c = matrix.cardinality();
    let probs: Vec<Vec<f64>> = matrix
        .counts()
        .iter()
        .map(|row| row.iter().map(|&n| n as f64 / total).collect())
        .collect();
    let marginal_ref = probs.iter().map(|row| row.iter().sum()).collect();
    let marginal_hyp = (0..c).map(|j| probs.iter().map(|row| row[j]).sum()).collect();
    Ok(JointDistribution {
        probs,
        marginal_ref,
        marginal_hyp,
    })
}

/// `Σ p ln(1/p)`, with zero-probability entries contributing nothing.
pub fn entropy(marginal: &[f64]) -> Result<f64> {
    if let Some(bad) = marginal.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution(format!("entry {bad} is not a probability")));
    }
    let sum: f64 = marginal.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}, not 1")));
    }
    Ok(marginal
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0))
}

pub fn mutual_information(joint: &JointDistribution) -> f64 {
    let mut mi = 0.0;
    for (i, row) in joint.probs.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (joint.marginal_ref[i] * joint.marginal_hyp[j])).ln();
            }
        }
    }
    // Rounding can leave a tiny negative value for independent variables.
    mi.max(0.0)
}

/// NMI of a confusion matrix: `2 I / (H(ref) + H(hyp))`.
///
/// When both marginals are degenerate the score is 1 if every aligned pair
/// matched and 0 otherwise.
pub fn nmi_from_matrix(matrix: &ConfusionMatrix) -> Result<f64> {
    let joint = normalize(matrix)?;
    let h_ref = entropy(&joint.marginal_ref)?;
    let h_hyp = entropy(&joint.marginal_hyp)?;
    let denom = h_ref + h_hyp;
    if denom <= 0.0 {
        let set = matrix.phone_set();
        let all_match = matrix.counts().iter().enumerate().all(|(i, row)| {
            row.iter()
                .enumerate()
                .all(|(j, &n)| n == 0 || (i == j && set[i] != crate::PLACEHOLDER))
        });
        return Ok(if all_match { 1.0 } else { 0.0 });
    }
    // A one-to-one joint has I = H_ref = H_hyp; report it exactly.
    let counts = matrix.counts();
    let row_single = counts.iter().all(|r| r.iter().filter(|&&n| n > 0).count() <= 1);
    let col_single = (0..counts.len()).all(|j| counts.iter().filter(|r| r[j] > 0).count() <= 1);
    if row_single && col_single {
        return Ok(1.0);
    }
    let mi = mutual_information(&joint);
    Ok((2.0 * mi / denom).clamp(0.0, 1.0))
}

/// Sentence-level NMI between a reference and a hypothesis phone sequence.
pub fn nmi(reference: &PhoneSeq, hypothesis: &PhoneSeq) -> Result<f64> {
    let alignment = align(reference, hypothesis)?;
    nmi_from_matrix(&ConfusionMatrix::from_alignment(&alignment))
}
