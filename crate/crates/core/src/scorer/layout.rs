use std::ops::Range;

use super::ScorerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Zero,
    One,
    /// Uniform with variance `1 / fan_in`.
    FanIn(usize),
}

/// A named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
    pub(crate) init: Init,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub in_w: Range<usize>,
    pub in_b: Range<usize>,
    pub cls: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub total: usize,
    tensors: Vec<TensorInfo>,
}

struct Builder {
    next: usize,
    tensors: Vec<TensorInfo>,
}

impl Builder {
    fn take(&mut self, name: String, shape: &[usize], init: Init) -> Range<usize> {
        let n: usize = shape.iter().product();
        let range = self.next..self.next + n;
        self.next += n;
        self.tensors.push(TensorInfo {
            name,
            shape: shape.to_vec(),
            range: range.clone(),
            init,
        });
        range
    }
}

impl Layout {
    pub fn new(cfg: &ScorerConfig) -> Self {
        let (d, e, f, a) = (cfg.input_dim, cfg.embed_dim, cfg.ff_dim(), cfg.aspects);
        let mut b = Builder {
            next: 0,
            tensors: Vec::new(),
        };
        let in_w = b.take("input.weight".into(), &[d, e], Init::FanIn(d));
        let in_b = b.take("input.bias".into(), &[e], Init::Zero);
        let cls = b.take("cls".into(), &[a, e], Init::FanIn(e));
        let layers = (0..cfg.layers)
            .map(|l| {
                let name = |s: &str| format!("layers.{l}.{s}");
                LayerLayout {
                    ln1_g: b.take(name("ln1.gamma"), &[e], Init::One),
                    ln1_b: b.take(name("ln1.beta"), &[e], Init::Zero),
                    wq: b.take(name("attn.q.weight"), &[e, e], Init::FanIn(e)),
                    bq: b.take(name("attn.q.bias"), &[e], Init::Zero),
                    wk: b.take(name("attn.k.weight"), &[e, e], Init::FanIn(e)),
                    bk: b.take(name("attn.k.bias"), &[e], Init::Zero),
                    wv: b.take(name("attn.v.weight"), &[e, e], Init::FanIn(e)),
                    bv: b.take(name("attn.v.bias"), &[e], Init::Zero),
                    wo: b.take(name("attn.out.weight"), &[e, e], Init::FanIn(e)),
                    bo: b.take(name("attn.out.bias"), &[e], Init::Zero),
                    ln2_g: b.take(name("ln2.gamma"), &[e], Init::One),
                    ln2_b: b.take(name("ln2.beta"), &[e], Init::Zero),
                    w1: b.take(name("ff.1.weight"), &[e, f], Init::FanIn(e)),
                    b1: b.take(name("ff.1.bias"), &[f], Init::Zero),
                    w2: b.take(name("ff.2.weight"), &[f, e], Init::FanIn(f)),
                    b2: b.take(name("ff.2.bias"), &[e], Init::Zero),
                }
            })
            .collect();
        let lnf_g = b.take("final_ln.gamma".into(), &[e], Init::One);
        let lnf_b = b.take("final_ln.beta".into(), &[e], Init::Zero);
        let head_w = b.take("head.weight".into(), &[a, e], Init::FanIn(e));
        let head_b = b.take("head.bias".into(), &[a], Init::Zero);
        Layout {
            in_w,
            in_b,
            cls,
            layers,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            total: b.next,
            tensors: b.tensors,
        }
    }

    pub fn tensors(&self) -> Vec<TensorInfo> {
        self.tensors.clone()
    }
}
