//! Training objectives.
//!
//! The interpolated MSE
//!
//! ```text
//! iMSE = (1 - rho)/N * sum (y - s)^2  +  rho/N * sum exp(-(s_hat - s)^2 / 2) (y - s_hat)^2
//! ```
//!
//! is the Gaussian reduction of a cross-entropy regularized by the KL
//! divergence to an anchor distribution. The discrete forms are kept here to
//! check that reduction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub rho: f64,
    /// Kernel width; fixed at 1.
    pub sigma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { rho: 0.25, sigma: 1.0 }
    }
}

impl LossConfig {
    pub fn new(rho: f64) -> Result<Self> {
        let cfg = LossConfig { rho, sigma: 1.0 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.sigma != 1.0 {
            return Err(Error::Config("sigma is fixed at 1".into()));
        }
        Ok(())
    }
}

fn check_lengths(parts: &[&[f64]]) -> Result<usize> {
    let n = parts[0].len();
    if n == 0 {
        return Err(Error::Shape("empty loss input".into()));
    }
    if parts.iter().any(|p| p.len() != n) {
        return Err(Error::Shape(format!(
            "loss inputs have lengths {:?}",
            parts.iter().map(|p| p.len()).collect::<Vec<_>>()
        )));
    }
    Ok(n)
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    let n = check_lengths(&[pred, target])?;
    Ok(pred.iter().zip(target).map(|(y, s)| (y - s) * (y - s)).sum::<f64>() / n as f64)
}

/// MSE and its gradient with respect to `pred`.
pub fn mse_with_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = check_lengths(&[pred, target])? as f64;
    let grad = pred.iter().zip(target).map(|(y, s)| (2.0 / n) * (y - s)).collect();
    Ok((mse(pred, target)?, grad))
}

/// Gaussian kernel `exp(-(s_hat - s)^2 / 2)`.
pub fn kernel_weight(s: f64, s_hat: f64) -> f64 {
    let d = s_hat - s;
    (-d * d / 2.0).exp()
}

/// Kernel-weighted MSE against the pseudo-scores (the `rho = 1` limit).
pub fn weighted_mse(pred: &[f64], human: &[f64], pseudo: &[f64]) -> Result<f64> {
    let n = check_lengths(&[pred, human, pseudo])?;
    let sum: f64 = pred
        .iter()
        .zip(human)
        .zip(pseudo)
        .map(|((y, s), sh)| kernel_weight(*s, *sh) * (y - sh) * (y - sh))
        .sum();
    Ok(sum / n as f64)
}

/// Interpolated MSE and its exact gradient with respect to `pred`.
pub fn imse(pred: &[f64], human: &[f64], pseudo: &[f64], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let n = check_lengths(&[pred, human, pseudo])? as f64;
    let rho = cfg.rho;
    let mut fit = 0.0;
    let mut anchor = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for ((y, s), sh) in pred.iter().zip(human).zip(pseudo) {
        let k = kernel_weight(*s, *sh);
        fit += (y - s) * (y - s);
        anchor += k * (y - sh) * (y - sh);
        grad.push((2.0 * (1.0 - rho) / n) * (y - s) + (2.0 * rho / n) * k * (y - sh));
    }
    // At rho = 0 or 1 this is bitwise the plain or weighted MSE.
    Ok(((1.0 - rho) * (fit / n) + rho * (anchor / n), grad))
}

/// Unique minimizer of the per-sample iMSE:
/// `((1 - rho) s + rho k s_hat) / ((1 - rho) + rho k)`.
pub fn imse_minimizer(s: f64, s_hat: f64, rho: f64) -> f64 {
    let k = kernel_weight(s, s_hat);
    ((1.0 - rho) * s + rho * k * s_hat) / ((1.0 - rho) + rho * k)
}

/// Probabilities over an increasing grid of band values.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values.len() != probs.len() {
            return Err(Error::InvalidDistribution(
                "need at least two bands and one probability per band".into(),
            ));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidDistribution("band values must increase".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidDistribution("negative probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
        }
        Ok(DiscreteDistribution { values, probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let z: f64 = weights.iter().sum();
        if !(z > 0.0) {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Self::new(values, weights.into_iter().map(|w| w / z).collect())
    }

    pub fn one_hot(values: Vec<f64>, band: usize) -> Result<Self> {
        let mut probs = vec![0.0; values.len()];
        *probs
            .get_mut(band)
            .ok_or_else(|| Error::InvalidDistribution(format!("band {band} out of range")))? = 1.0;
        Self::new(values, probs)
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![1.0 / n as f64; n])
    }

    /// `N(mean, sigma)` restricted to the grid and renormalized.
    pub fn discretized_gaussian(values: Vec<f64>, mean: f64, sigma: f64) -> Result<Self> {
        let w = values.iter().map(|v| (-(v - mean).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
        Self::from_weights(values, w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.values != other.values {
            return Err(Error::Shape("distributions use different band grids".into()));
        }
        Ok(())
    }
}

/// `-sum target * ln(model)`.
pub fn cross_entropy(target: &DiscreteDistribution, model: &DiscreteDistribution) -> Result<f64> {
    target.same_grid(model)?;
    let mut ce = 0.0;
    for (t, p) in target.probs.iter().zip(&model.probs) {
        if *t > 0.0 {
            if *p <= 0.0 {
                return Err(Error::InfiniteLoss("model assigns zero probability to a target band".into()));
            }
            ce -= t * p.ln();
        }
    }
    Ok(ce)
}

/// `KL(p || q) = sum p ln(p / q)`.
pub fn kld(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    p.same_grid(q)?;
    let mut d = 0.0;
    for (a, b) in p.probs.iter().zip(&q.probs) {
        if *a > 0.0 {
            if *b <= 0.0 {
                return Err(Error::InfiniteLoss("anchor has zero mass where the model does not".into()));
            }
            d += a * (a / b).ln();
        }
    }
    Ok(d.max(0.0))
}

/// Cross-entropy to a one-hot target plus `rho` times `KL(model || anchor)`.
pub fn kld_regularized(
    target_band: usize,
    model: &DiscreteDistribution,
    anchor: &DiscreteDistribution,
    rho: f64,
) -> Result<f64> {
    let target = DiscreteDistribution::one_hot(model.values.clone(), target_band)?;
    Ok(cross_entropy(&target, model)? + rho * kld(model, anchor)?)
}

/// Term-wise expansion of the KL-regularized cross-entropy, evaluated at every
/// grid band as the prediction `y`, with model `p = N(s, 1)` and anchor
/// `q = N(s_hat, 1)` discretized on `grid`:
///
/// ```text
/// -ln p(y)  -  rho * w(s_hat) * ln q(y)  +  rho * w(s) * ln p(y)
/// ```
///
/// where `w(v) = p(v) / max p` weighs each log-likelihood by the model's mass
/// at the point it is anchored to, relative to its mode. `s` and `s_hat` are
/// evaluated at their nearest grid bands. Up to terms constant in `y` this is
/// `(1 - rho)(y - s)^2 / 2 + rho k (y - s_hat)^2 / 2`.
pub fn gaussian_expanded_loss(grid: &[f64], s: f64, s_hat: f64, rho: f64) -> Result<Vec<f64>> {
    let p = DiscreteDistribution::discretized_gaussian(grid.to_vec(), s, 1.0)?;
    let q = DiscreteDistribution::discretized_gaussian(grid.to_vec(), s_hat, 1.0)?;
    let nearest = |v: f64| -> usize {
        grid.iter()
            .enumerate()
            .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
            .map(|(k, _)| k)
            .expect("grid has at least two bands")
    };
    let mode = p.probs.iter().cloned().fold(0.0, f64::max);
    let w_s = p.probs[nearest(s)] / mode;
    let w_hat = p.probs[nearest(s_hat)] / mode;
    p.probs
        .iter()
        .zip(&q.probs)
        .map(|(pp, qq)| {
            let (lp, lq) = (pp.ln(), qq.ln());
            if !lp.is_finite() || !lq.is_finite() {
                return Err(Error::InfiniteLoss("grid band with zero probability".into()));
            }
            Ok(-lp - rho * w_hat * lq + rho * w_s * lp)
        })
        .collect()
}

/// Grid value minimizing [`gaussian_expanded_loss`].
pub fn gaussian_expanded_minimizer(grid: &[f64], s: f64, s_hat: f64, rho: f64) -> Result<f64> {
    let curve = gaussian_expanded_loss(grid, s, s_hat, rho)?;
    let best = (0..curve.len())
        .min_by(|&a, &b| curve[a].total_cmp(&curve[b]))
        .expect("non-empty curve");
    Ok(grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid2() -> Vec<f64> {
        vec![0.0, 1.0]
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        let base = mse(&[0.3, -0.2, 0.9], &[0.1, 0.1, 0.1]).unwrap();
        let doubled = mse(&[0.5, -0.5, 1.7], &[0.1, 0.1, 0.1]).unwrap();
        assert!((doubled - 4.0 * base).abs() < 1e-12);
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(kernel_weight(0.3, 0.3), 1.0);
        assert!((kernel_weight(0.0, 2.0) - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert_eq!(kernel_weight(0.1, 0.9), kernel_weight(0.9, 0.1));
    }

    #[test]
    fn imse_reductions() {
        let y = [0.5, -0.2, 0.9, 0.0];
        let s = [0.2, 0.1, 0.7, -0.6];
        let sh = [0.8, -0.5, 0.0, -0.6];
        let (l0, _) = imse(&y, &s, &sh, &LossConfig::new(0.0).unwrap()).unwrap();
        assert!((l0 - mse(&y, &s).unwrap()).abs() <= 1e-15);
        let (l1, _) = imse(&y, &s, &sh, &LossConfig::new(1.0).unwrap()).unwrap();
        assert!((l1 - weighted_mse(&y, &s, &sh).unwrap()).abs() <= 1e-15);
        for rho in [0.0, 0.25, 0.6, 1.0] {
            let (l, _) = imse(&y, &s, &s, &LossConfig::new(rho).unwrap()).unwrap();
            assert!((l - mse(&y, &s).unwrap()).abs() <= 1e-15);
        }
    }

    #[test]
    fn imse_point_value() {
        let (l, _) = imse(&[0.5], &[0.2], &[0.8], &LossConfig::new(0.25).unwrap()).unwrap();
        let expect = 0.75 * 0.09 + 0.25 * (-0.18f64).exp() * 0.09;
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.086294).abs() < 1e-6);
    }

    #[test]
    fn rho_zero_gradient_is_mse_gradient_bitwise() {
        let y = [0.5, -0.2, 0.9];
        let s = [0.2, 0.1, 0.7];
        let sh = [0.8, -0.5, 0.0];
        let (_, g) = imse(&y, &s, &sh, &LossConfig::new(0.0).unwrap()).unwrap();
        let (_, gm) = mse_with_grad(&y, &s).unwrap();
        assert!(g.iter().zip(&gm).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rho_out_of_range() {
        assert!(LossConfig::new(1.5).is_err());
        assert!(LossConfig::new(-0.1).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let p = DiscreteDistribution::new(grid2(), vec![0.5, 0.5]).unwrap();
        let t = DiscreteDistribution::one_hot(grid2(), 0).unwrap();
        assert!((cross_entropy(&t, &p).unwrap() - 2f64.ln()).abs() < 1e-15);

        let grid: Vec<f64> = (0..7).map(f64::from).collect();
        let u = DiscreteDistribution::uniform(grid).unwrap();
        assert!((cross_entropy(&u, &u).unwrap() - 7f64.ln()).abs() < 1e-14);

        let m = DiscreteDistribution::new(grid2(), vec![0.9, 0.1]).unwrap();
        assert!((cross_entropy(&t, &m).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);

        let z = DiscreteDistribution::new(grid2(), vec![0.0, 1.0]).unwrap();
        assert!(matches!(cross_entropy(&t, &z), Err(Error::InfiniteLoss(_))));
    }

    #[test]
    fn kld_examples() {
        let p = DiscreteDistribution::new(grid2(), vec![0.5, 0.5]).unwrap();
        let q = DiscreteDistribution::new(grid2(), vec![0.25, 0.75]).unwrap();
        assert_eq!(kld(&p, &p).unwrap(), 0.0);
        assert!((kld(&p, &q).unwrap() - 0.143_841_036_225_890_4).abs() < 1e-12);
        let z = DiscreteDistribution::new(grid2(), vec![1.0, 0.0]).unwrap();
        assert!(matches!(kld(&p, &z), Err(Error::InfiniteLoss(_))));
    }

    #[test]
    fn kld_regularized_reductions() {
        let grid: Vec<f64> = (0..5).map(f64::from).collect();
        let p = DiscreteDistribution::from_weights(grid.clone(), vec![1.0, 2.0, 3.0, 2.0, 1.0]).unwrap();
        let q = DiscreteDistribution::from_weights(grid.clone(), vec![3.0, 1.0, 1.0, 1.0, 3.0]).unwrap();
        let t = DiscreteDistribution::one_hot(grid, 2).unwrap();
        let ce = cross_entropy(&t, &p).unwrap();
        assert_eq!(kld_regularized(2, &p, &q, 0.0).unwrap(), ce);
        assert_eq!(kld_regularized(2, &p, &p, 0.7).unwrap(), ce);
        assert!(kld_regularized(2, &p, &q, 0.7).unwrap() > ce);
    }

    #[test]
    fn expanded_gaussian_minimizer_matches_imse() {
        let step = 1e-3;
        let grid: Vec<f64> = (0..=8000).map(|k| -4.0 + step * k as f64).collect();
        let snap = |v: f64| grid[((v + 4.0) / step).round() as usize];
        for &(s, sh, rho) in &[(0.2, 0.8, 0.25), (-0.6, 0.4, 0.5), (0.9, -0.9, 0.9), (0.3, 0.3, 1.0)] {
            let (s, sh) = (snap(s), snap(sh));
            let y = gaussian_expanded_minimizer(&grid, s, sh, rho).unwrap();
            assert!((y - imse_minimizer(s, sh, rho)).abs() <= step);
        }
    }

    #[test]
    fn plain_kl_regularization_does_not_give_kernel_weights() {
        // With a Gaussian model family, CE + rho KL(p_y || q) is minimized at
        // (s + rho s_hat) / (1 + rho), away from the kernel-weighted minimizer.
        let step = 1e-2;
        let grid: Vec<f64> = (0..=800).map(|k| -4.0 + step * k as f64).collect();
        let (s_band, sh) = (400usize, 1.0);
        let q = DiscreteDistribution::discretized_gaussian(grid.clone(), sh, 1.0).unwrap();
        let best = (300..500)
            .map(|c| {
                let p = DiscreteDistribution::discretized_gaussian(grid.clone(), grid[c], 1.0).unwrap();
                (grid[c], kld_regularized(s_band, &p, &q, 0.25).unwrap())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert!((best - 0.2).abs() <= step);
        assert!((best - imse_minimizer(0.0, sh, 0.25)).abs() > 0.02);
    }

    proptest! {
        #[test]
        fn imse_gradient_matches_finite_differences(
            y in prop::collection::vec(-1.0f64..1.0, 1..6),
            seed in 0u64..1000,
            rho in 0.0f64..=1.0,
        ) {
            let n = y.len();
            let s: Vec<f64> = (0..n).map(|k| ((seed + 7 * k as u64) % 19) as f64 / 9.5 - 1.0).collect();
            let sh: Vec<f64> = (0..n).map(|k| ((seed * 3 + 5 * k as u64) % 23) as f64 / 11.5 - 1.0).collect();
            let cfg = LossConfig::new(rho).unwrap();
            let (_, g) = imse(&y, &s, &sh, &cfg).unwrap();
            let h = 1e-6;
            for k in 0..n {
                let mut up = y.clone();
                up[k] += h;
                let mut down = y.clone();
                down[k] -= h;
                let num = (imse(&up, &s, &sh, &cfg).unwrap().0 - imse(&down, &s, &sh, &cfg).unwrap().0) / (2.0 * h);
                // Quadratic: central differences are exact up to rounding.
                prop_assert!((num - g[k]).abs() <= 1e-8 * g[k].abs().max(1.0));
            }
        }

        #[test]
        fn minimizer_is_stationary(s in -1.0f64..1.0, sh in -1.0f64..1.0, rho in 0.0f64..=1.0) {
            let y = imse_minimizer(s, sh, rho);
            let (_, g) = imse(&[y], &[s], &[sh], &LossConfig::new(rho).unwrap()).unwrap();
            prop_assert!(g[0].abs() < 1e-12);
        }

        #[test]
        fn kernel_decreases_with_distance(s in -1.0f64..1.0, d1 in 0.0f64..2.0, extra in 1e-3f64..2.0) {
            prop_assert!(kernel_weight(s, s + d1 + extra) < kernel_weight(s, s + d1));
        }

        #[test]
        fn imse_interpolates(y in -1.0f64..1.0, s in -1.0f64..1.0, sh in -1.0f64..1.0, rho in 0.0f64..=1.0) {
            let fit = mse(&[y], &[s]).unwrap();
            let anchor = weighted_mse(&[y], &[s], &[sh]).unwrap();
            let (l, _) = imse(&[y], &[s], &[sh], &LossConfig::new(rho).unwrap()).unwrap();
            prop_assert!(l >= fit.min(anchor) - 1e-15 && l <= fit.max(anchor) + 1e-15);
        }

        #[test]
        fn kld_is_non_negative(w1 in prop::collection::vec(0.01f64..1.0, 4), w2 in prop::collection::vec(0.01f64..1.0, 4)) {
            let grid = vec![1.0, 2.0, 3.0, 4.0];
            let p = DiscreteDistribution::from_weights(grid.clone(), w1).unwrap();
            let q = DiscreteDistribution::from_weights(grid, w2).unwrap();
            prop_assert!(kld(&p, &q).unwrap() >= 0.0);
        }
    }
}
