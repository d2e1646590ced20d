//! Transformer-encoder scorer.
//!
//! ```text
//! features (M x D) --linear--> M x E
//! [CLS_1 .. CLS_A ; embedded rows] + sinusoidal positions
//!   -> layers x { x + MHA(LN(x)) ; x + FFN(LN(x)) }      (pre-norm, GELU)
//!   -> LN -> row a feeds head a: tanh(w_a . z_a + c_a)
//! ```
//!
//! All parameters live in one flat `Vec<f64>`, laid out tensor by tensor in
//! the order reported by [`ScorerModel::tensors`].

mod checkpoint;
mod layout;
mod transform;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Matrix;
use crate::error::{Error, Result};
use crate::rng;

pub use checkpoint::{load_model, save_model, CHECKPOINT_VERSION};
pub use layout::TensorInfo;
use layout::{Layout, LayerLayout};
pub use transform::{from_target, to_target, ScoreScaleTransform};

/// Head name of a single-output pseudo-score (anchor) model.
pub const PSEUDO_ASPECT: &str = "pseudo";

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Number of [CLS] tokens and output heads.
    pub aspects: usize,
    /// Longest accepted feature sequence.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            input_dim: 16,
            embed_dim: 24,
            heads: 8,
            layers: 3,
            aspects: 3,
            max_len: 64,
            seed: 0,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.heads == 0 || self.max_len == 0 {
            return Err(Error::Config("scorer dimensions must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.aspects == 0 {
            return Err(Error::Config("a scorer needs at least one aspect".into()));
        }
        Ok(())
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    config: ScorerConfig,
    layout: Layout,
    params: Vec<f64>,
    aspect_names: Vec<String>,
    /// (aspects + max_len) x embed_dim
    positions: Vec<f64>,
}

struct LayerCache {
    ln1_hat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads x L x L
    probs: Vec<f64>,
    attn: Vec<f64>,
    ln2_hat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    h2: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Cache {
    len: usize,
    features: Vec<f64>,
    layers: Vec<LayerCache>,
    final_hat: Vec<f64>,
    final_rstd: Vec<f64>,
    final_out: Vec<f64>,
    outputs: Vec<f64>,
}

impl Cache {
    pub(crate) fn outputs(&self) -> &[f64] {
        &self.outputs
    }
}

fn default_aspect_names(n: usize) -> Vec<String> {
    match n {
        1 => vec![PSEUDO_ASPECT.to_string()],
        3 => crate::corpus::ASPECTS.iter().map(|s| s.to_string()).collect(),
        _ => (0..n).map(|k| format!("aspect{k}")).collect(),
    }
}

fn sinusoidal(len: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * dim];
    for pos in 0..len {
        for i in (0..dim).step_by(2) {
            let angle = pos as f64 / 10_000f64.powf(i as f64 / dim as f64);
            pe[pos * dim + i] = angle.sin();
            if i + 1 < dim {
                pe[pos * dim + i + 1] = angle.cos();
            }
        }
    }
    pe
}

/// `y = x W + b` for `x` of shape rows x din and `W` din x dout.
fn linear(x: &[f64], rows: usize, din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * dout);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * dout..(r + 1) * dout];
        for (i, &xv) in x[r * din..(r + 1) * din].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (yo, wo) in yr.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                *yo += xv * wo;
            }
        }
    }
    y
}

/// Accumulates weight/bias gradients of `y = x W + b`; returns `dx` when asked.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    rows: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Vec<f64> {
    let mut dx = if want_dx { vec![0.0; rows * din] } else { Vec::new() };
    for r in 0..rows {
        let dyr = &dy[r * dout..(r + 1) * dout];
        for (g, d) in db.iter_mut().zip(dyr) {
            *g += d;
        }
        for i in 0..din {
            let xv = x[r * din + i];
            let wrow = &w[i * dout..(i + 1) * dout];
            if xv != 0.0 {
                for (g, d) in dw[i * dout..(i + 1) * dout].iter_mut().zip(dyr) {
                    *g += xv * d;
                }
            }
            if want_dx {
                dx[r * din + i] = wrow.iter().zip(dyr).map(|(a, b)| a * b).sum();
            }
        }
    }
    dx
}

/// Row-wise layer norm; returns (output, normalized input, 1/std).
fn layer_norm(x: &[f64], rows: usize, dim: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; rows * dim];
    let mut hat = vec![0.0; rows * dim];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().sum::<f64>() / dim as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for c in 0..dim {
            let h = (xr[c] - mean) * s;
            hat[r * dim + c] = h;
            out[r * dim + c] = gamma[c] * h + beta[c];
        }
    }
    (out, hat, rstd)
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    hat: &[f64],
    rstd: &[f64],
    rows: usize,
    dim: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * dim];
    let mut dhat = vec![0.0; dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let hr = &hat[r * dim..(r + 1) * dim];
        let mut mean_d = 0.0;
        let mut mean_dh = 0.0;
        for c in 0..dim {
            dgamma[c] += dyr[c] * hr[c];
            dbeta[c] += dyr[c];
            dhat[c] = dyr[c] * gamma[c];
            mean_d += dhat[c];
            mean_dh += dhat[c] * hr[c];
        }
        mean_d /= dim as f64;
        mean_dh /= dim as f64;
        for c in 0..dim {
            dx[r * dim + c] = rstd[r] * (dhat[c] - mean_d - hr[c] * mean_dh);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

impl ScorerModel {
    /// Fresh model with fan-in scaled uniform weights drawn from `config.seed`.
    pub fn new(config: ScorerConfig) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut r = rng::stream(model.config.seed, 0);
        let tensors = model.layout.tensors();
        for t in &tensors {
            let slice = &mut model.params[t.range.clone()];
            match t.init {
                layout::Init::Zero => {}
                layout::Init::One => slice.fill(1.0),
                layout::Init::FanIn(fan_in) => {
                    let limit = (3.0 / fan_in as f64).sqrt();
                    for p in slice.iter_mut() {
                        *p = r.random_range(-limit..limit);
                    }
                }
            }
        }
        Ok(model)
    }

    /// Model with every parameter set to zero.
    pub fn zeros(config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![0.0; layout.total];
        let positions = sinusoidal(config.aspects + config.max_len, config.embed_dim);
        let aspect_names = default_aspect_names(config.aspects);
        Ok(ScorerModel {
            config,
            layout,
            params,
            aspect_names,
            positions,
        })
    }

    /// Labels of the output heads, in order.
    pub fn aspect_names(&self) -> &[String] {
        &self.aspect_names
    }

    pub fn set_aspect_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.config.aspects {
            return Err(Error::Shape(format!(
                "{} aspect names for {} heads",
                names.len(),
                self.config.aspects
            )));
        }
        self.aspect_names = names;
        Ok(())
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<TensorInfo> {
        self.layout.tensors()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters given, model has {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "feature dimension {} but model expects {}",
                features.cols(),
                self.config.input_dim
            )));
        }
        if features.rows() == 0 {
            return Err(Error::Shape("empty feature sequence".into()));
        }
        if features.rows() > self.config.max_len {
            return Err(Error::Length {
                len: features.rows(),
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    /// Per-aspect scores in (-1, 1).
    pub fn forward(&self, features: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward_cached(features)?.outputs)
    }

    pub(crate) fn forward_cached(&self, features: &Matrix) -> Result<Cache> {
        self.check_input(features)?;
        let cfg = &self.config;
        let p = &self.params;
        let lay = &self.layout;
        let (e, a, m) = (cfg.embed_dim, cfg.aspects, features.rows());
        let len = a + m;

        let embedded = linear(features.as_slice(), m, cfg.input_dim, &p[lay.in_w.clone()], &p[lay.in_b.clone()], e);
        let mut x = Vec::with_capacity(len * e);
        x.extend_from_slice(&p[lay.cls.clone()]);
        x.extend_from_slice(&embedded);
        for (v, pe) in x.iter_mut().zip(&self.positions) {
            *v += pe;
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in &lay.layers {
            let (cache, out) = self.layer_forward(l, x, len);
            layers.push(cache);
            x = out;
        }

        let cls_rows = &x[..a * e];
        let (final_out, final_hat, final_rstd) =
            layer_norm(cls_rows, a, e, &p[lay.lnf_g.clone()], &p[lay.lnf_b.clone()]);
        let hw = &p[lay.head_w.clone()];
        let hb = &p[lay.head_b.clone()];
        let outputs = (0..a)
            .map(|k| {
                let z = &final_out[k * e..(k + 1) * e];
                let pre = hb[k] + z.iter().zip(&hw[k * e..(k + 1) * e]).map(|(x, w)| x * w).sum::<f64>();
                pre.tanh()
            })
            .collect();
        Ok(Cache {
            len,
            features: features.as_slice().to_vec(),
            layers,
            final_hat,
            final_rstd,
            final_out,
            outputs,
        })
    }

    fn layer_forward(&self, l: &LayerLayout, input: Vec<f64>, len: usize) -> (LayerCache, Vec<f64>) {
        let cfg = &self.config;
        let p = &self.params;
        let (e, f, heads, dh) = (cfg.embed_dim, cfg.ff_dim(), cfg.heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        let (h1, ln1_hat, ln1_rstd) = layer_norm(&input, len, e, &p[l.ln1_g.clone()], &p[l.ln1_b.clone()]);
        let q = linear(&h1, len, e, &p[l.wq.clone()], &p[l.bq.clone()], e);
        let k = linear(&h1, len, e, &p[l.wk.clone()], &p[l.bk.clone()], e);
        let v = linear(&h1, len, e, &p[l.wv.clone()], &p[l.bv.clone()], e);

        let mut probs = vec![0.0; heads * len * len];
        let mut attn = vec![0.0; len * e];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..len {
                let qi = &q[i * e + off..i * e + off + dh];
                let row = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    let kj = &k[j * e + off..j * e + off + dh];
                    let s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    row[j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let out = &mut attn[i * e + off..i * e + off + dh];
                for j in 0..len {
                    row[j] /= z;
                    let pj = row[j];
                    for (o, vv) in out.iter_mut().zip(&v[j * e + off..j * e + off + dh]) {
                        *o += pj * vv;
                    }
                }
            }
        }
        let projected = linear(&attn, len, e, &p[l.wo.clone()], &p[l.bo.clone()], e);
        let mid: Vec<f64> = input.iter().zip(&projected).map(|(a, b)| a + b).collect();

        let (h2, ln2_hat, ln2_rstd) = layer_norm(&mid, len, e, &p[l.ln2_g.clone()], &p[l.ln2_b.clone()]);
        let ff_pre = linear(&h2, len, e, &p[l.w1.clone()], &p[l.b1.clone()], f);
        let ff_act: Vec<f64> = ff_pre.iter().map(|&x| gelu(x)).collect();
        let ff_out = linear(&ff_act, len, f, &p[l.w2.clone()], &p[l.b2.clone()], e);
        let out: Vec<f64> = mid.iter().zip(&ff_out).map(|(a, b)| a + b).collect();

        (
            LayerCache {
                ln1_hat,
                ln1_rstd,
                h1,
                q,
                k,
                v,
                probs,
                attn,
                ln2_hat,
                ln2_rstd,
                h2,
                ff_pre,
                ff_act,
            },
            out,
        )
    }

    /// Gradient of `sum_a d_out[a] * output[a]` with respect to every parameter.
    pub fn backward(&self, features: &Matrix, d_out: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(features)?;
        let mut grads = vec![0.0; self.params.len()];
        self.accumulate_gradient(&cache, d_out, &mut grads)?;
        Ok(grads)
    }

    pub(crate) fn accumulate_gradient(&self, cache: &Cache, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
        let cfg = &self.config;
        let lay = &self.layout;
        let p = &self.params;
        let (e, a) = (cfg.embed_dim, cfg.aspects);
        if d_out.len() != a {
            return Err(Error::Shape(format!("{} output gradients for {a} aspects", d_out.len())));
        }
        if d_out.iter().all(|&g| g == 0.0) {
            return Ok(());
        }
        let len = cache.len;

        // Heads.
        let mut d_final = vec![0.0; a * e];
        {
            let hw = &p[lay.head_w.clone()];
            for k in 0..a {
                let y = cache.outputs[k];
                let d_pre = d_out[k] * (1.0 - y * y);
                grads[lay.head_b.start + k] += d_pre;
                let z = &cache.final_out[k * e..(k + 1) * e];
                for c in 0..e {
                    grads[lay.head_w.start + k * e + c] += d_pre * z[c];
                    d_final[k * e + c] = d_pre * hw[k * e + c];
                }
            }
        }
        let (dg, db) = split_pair(grads, lay.lnf_g.clone(), lay.lnf_b.clone());
        let d_cls = layer_norm_backward(&d_final, &cache.final_hat, &cache.final_rstd, a, e, &p[lay.lnf_g.clone()], dg, db);
        let mut dx = vec![0.0; len * e];
        dx[..a * e].copy_from_slice(&d_cls);

        for (l, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(l, lc, len, dx, grads);
        }

        // Positions are fixed; the sum passes gradients straight through.
        for c in 0..a * e {
            grads[lay.cls.start + c] += dx[c];
        }
        let d_emb = &dx[a * e..];
        let m = len - a;
        let (dw, db) = split_pair(grads, lay.in_w.clone(), lay.in_b.clone());
        linear_backward(&cache.features, m, cfg.input_dim, &p[lay.in_w.clone()], e, d_emb, dw, db, false);
        Ok(())
    }

    fn layer_backward(&self, l: &LayerLayout, c: &LayerCache, len: usize, d_out: Vec<f64>, grads: &mut [f64]) -> Vec<f64> {
        let cfg = &self.config;
        let p = &self.params;
        let (e, f, heads, dh) = (cfg.embed_dim, cfg.ff_dim(), cfg.heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        // Feed-forward branch: out = mid + W2 gelu(W1 LN2(mid)).
        let mut d_mid = d_out.clone();
        let d_act = {
            let (dw, db) = split_pair(grads, l.w2.clone(), l.b2.clone());
            linear_backward(&c.ff_act, len, f, &p[l.w2.clone()], e, &d_out, dw, db, true)
        };
        let d_pre: Vec<f64> = d_act.iter().zip(&c.ff_pre).map(|(d, &x)| d * gelu_grad(x)).collect();
        let d_h2 = {
            let (dw, db) = split_pair(grads, l.w1.clone(), l.b1.clone());
            linear_backward(&c.h2, len, e, &p[l.w1.clone()], f, &d_pre, dw, db, true)
        };
        let d_ln2 = {
            let (dg, db) = split_pair(grads, l.ln2_g.clone(), l.ln2_b.clone());
            layer_norm_backward(&d_h2, &c.ln2_hat, &c.ln2_rstd, len, e, &p[l.ln2_g.clone()], dg, db)
        };
        for (a, b) in d_mid.iter_mut().zip(&d_ln2) {
            *a += b;
        }

        // Attention branch: mid = input + Wo attn(LN1(input)).
        let mut d_input = d_mid.clone();
        let d_attn = {
            let (dw, db) = split_pair(grads, l.wo.clone(), l.bo.clone());
            linear_backward(&c.attn, len, e, &p[l.wo.clone()], e, &d_mid, dw, db, true)
        };
        let mut dq = vec![0.0; len * e];
        let mut dk = vec![0.0; len * e];
        let mut dv = vec![0.0; len * e];
        let mut d_row = vec![0.0; len];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..len {
                let row = &c.probs[(h * len + i) * len..(h * len + i + 1) * len];
                let d_oi = &d_attn[i * e + off..i * e + off + dh];
                let mut dot = 0.0;
                for j in 0..len {
                    let vj = &c.v[j * e + off..j * e + off + dh];
                    let dp = d_oi.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                    d_row[j] = dp;
                    dot += row[j] * dp;
                    for (g, d) in dv[j * e + off..j * e + off + dh].iter_mut().zip(d_oi) {
                        *g += row[j] * d;
                    }
                }
                let qi_base = i * e + off;
                for j in 0..len {
                    let ds = row[j] * (d_row[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for t in 0..dh {
                        dq[qi_base + t] += ds * c.k[j * e + off + t];
                        dk[j * e + off + t] += ds * c.q[qi_base + t];
                    }
                }
            }
        }
        let mut d_h1 = vec![0.0; len * e];
        for (w, b, d) in [(&l.wq, &l.bq, &dq), (&l.wk, &l.bk, &dk), (&l.wv, &l.bv, &dv)] {
            let (dw, db) = split_pair(grads, w.clone(), b.clone());
            let part = linear_backward(&c.h1, len, e, &p[w.clone()], e, d, dw, db, true);
            for (a, b) in d_h1.iter_mut().zip(&part) {
                *a += b;
            }
        }
        let d_ln1 = {
            let (dg, db) = split_pair(grads, l.ln1_g.clone(), l.ln1_b.clone());
            layer_norm_backward(&d_h1, &c.ln1_hat, &c.ln1_rstd, len, e, &p[l.ln1_g.clone()], dg, db)
        };
        for (a, b) in d_input.iter_mut().zip(&d_ln1) {
            *a += b;
        }
        d_input
    }
}

/// Two disjoint mutable slices of the gradient buffer; `first` precedes `second`.
fn split_pair(buf: &mut [f64], first: std::ops::Range<usize>, second: std::ops::Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(first.end <= second.start);
    let (lo, hi) = buf.split_at_mut(second.start);
    (&mut lo[first], &mut hi[..second.end - second.start])
}

#[cfg(test)]
mod tests;
