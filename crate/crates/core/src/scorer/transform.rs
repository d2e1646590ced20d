//! Affine map between a label scale `[a, b]` and the tanh range `[-1, 1]`.

use crate::corpus::ScoreScale;
use crate::error::{Error, Result};

/// `t = (2s - a - b) / (b - a)`, evaluated as `((s - a) - (b - s)) / (b - a)`
/// so that the end points map to exactly -1 and 1.
pub fn to_target(s: f64, scale: ScoreScale) -> Result<f64> {
    let (a, b) = (scale.lo(), scale.hi());
    if !(s >= a && s <= b) {
        return Err(Error::Range { value: s, lo: a, hi: b });
    }
    Ok((((s - a) - (b - s)) / (b - a)).clamp(-1.0, 1.0))
}

/// `s = (t (b - a) + a + b) / 2`.
pub fn from_target(t: f64, scale: ScoreScale) -> Result<f64> {
    if !(-1.0..=1.0).contains(&t) {
        return Err(Error::Range {
            value: t,
            lo: -1.0,
            hi: 1.0,
        });
    }
    let (a, b) = (scale.lo(), scale.hi());
    Ok((t * (b - a) + a + b) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreScaleTransform {
    pub scale: ScoreScale,
}

impl ScoreScaleTransform {
    pub fn new(scale: ScoreScale) -> Self {
        ScoreScaleTransform { scale }
    }

    pub fn to_target(&self, s: f64) -> Result<f64> {
        to_target(s, self.scale)
    }

    pub fn from_target(&self, t: f64) -> Result<f64> {
        from_target(t, self.scale)
    }
}
