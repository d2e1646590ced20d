use super::*;
use crate::rng;
use rand::Rng;

fn tiny() -> ScorerConfig {
    ScorerConfig {
        input_dim: 4,
        embed_dim: 8,
        heads: 2,
        layers: 1,
        aspects: 3,
        max_len: 8,
        seed: 3,
    }
}

fn random_features(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 99);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Model with every parameter perturbed, so LN gains and biases are not at
/// their trivial initial values.
fn perturbed(cfg: ScorerConfig) -> ScorerModel {
    let mut m = ScorerModel::new(cfg).unwrap();
    let mut r = rng::stream(17, 1);
    for p in m.params_mut() {
        *p += r.random_range(-0.3..0.3);
    }
    m
}

fn weighted_output(m: &ScorerModel, x: &Matrix, w: &[f64]) -> f64 {
    m.forward(x).unwrap().iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Largest relative error between analytic and central-difference gradients.
/// Gradients below 1e-6 in magnitude are compared absolutely.
pub(crate) fn gradient_check(cfg: ScorerConfig, rows: usize) -> (f64, String) {
    let mut m = perturbed(cfg);
    let x = random_features(rows, m.config().input_dim, 5);
    let w: Vec<f64> = (0..m.config().aspects).map(|k| 0.7 - 0.45 * k as f64).collect();
    let analytic = m.backward(&x, &w).unwrap();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for t in m.tensors() {
        for idx in t.range.clone() {
            let orig = m.params()[idx];
            m.params_mut()[idx] = orig + h;
            let up = weighted_output(&m, &x, &w);
            m.params_mut()[idx] = orig - h;
            let down = weighted_output(&m, &x, &w);
            m.params_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{}]: analytic {a:e} numeric {numeric:e}", t.name, idx - t.range.start));
            }
        }
    }
    worst
}

#[test]
fn zero_network_outputs_zero() {
    let m = ScorerModel::zeros(ScorerConfig::default()).unwrap();
    let x = random_features(5, 16, 1);
    assert_eq!(m.forward(&x).unwrap(), vec![0.0; 3]);
}

#[test]
fn outputs_within_open_interval() {
    for seed in 0..20 {
        let m = ScorerModel::new(ScorerConfig { seed, ..ScorerConfig::default() }).unwrap();
        let x = random_features(1 + seed as usize % 12, 16, seed);
        for y in m.forward(&x).unwrap() {
            assert!(y > -1.0 && y < 1.0);
        }
    }
}

#[test]
fn shape_and_length_errors() {
    let m = ScorerModel::new(tiny()).unwrap();
    assert!(matches!(m.forward(&random_features(3, 5, 0)), Err(Error::Shape(_))));
    assert!(matches!(m.forward(&random_features(9, 4, 0)), Err(Error::Length { len: 9, max: 8 })));
    assert!(matches!(m.backward(&random_features(3, 4, 0), &[1.0]), Err(Error::Shape(_))));
}

#[test]
fn invalid_configs() {
    assert!(ScorerModel::new(ScorerConfig { embed_dim: 10, heads: 3, ..tiny() }).is_err());
    assert!(ScorerModel::new(ScorerConfig { aspects: 0, ..tiny() }).is_err());
}

#[test]
fn parameter_count_is_a_function_of_config() {
    let cfg = ScorerConfig::default();
    let (d, e, f, a, l) = (16, 24, 96, 3, 3);
    let per_layer = 2 * e + 4 * (e * e + e) + 2 * e + (e * f + f) + (f * e + e);
    let expect = d * e + e + a * e + l * per_layer + 2 * e + a * e + a;
    assert_eq!(ScorerModel::new(cfg.clone()).unwrap().param_count(), expect);
    assert_eq!(
        ScorerModel::new(ScorerConfig { seed: 9, ..cfg.clone() }).unwrap().param_count(),
        ScorerModel::zeros(cfg).unwrap().param_count()
    );
}

#[test]
fn forward_is_deterministic() {
    let m = ScorerModel::new(ScorerConfig::default()).unwrap();
    let x = random_features(7, 16, 2);
    assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
    let again = ScorerModel::new(ScorerConfig::default()).unwrap();
    assert_eq!(m.forward(&x).unwrap(), again.forward(&x).unwrap());
}

#[test]
fn golden_forward_value() {
    let m = ScorerModel::new(ScorerConfig { seed: 42, ..ScorerConfig::default() }).unwrap();
    let x = random_features(6, 16, 42);
    let y = m.forward(&x).unwrap();
    let golden = GOLDEN;
    for (a, b) in y.iter().zip(golden) {
        assert!((a - b).abs() < 1e-12, "{y:?}");
    }
}

const GOLDEN: [f64; 3] = [0.23045622804819596, 0.7415927041138711, 0.5282603939330777];

#[test]
fn zero_output_gradient_gives_zero_gradients() {
    let m = perturbed(tiny());
    let g = m.backward(&random_features(3, 4, 0), &[0.0; 3]).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn untouched_heads_get_no_gradient() {
    let m = perturbed(tiny());
    let g = m.backward(&random_features(3, 4, 0), &[0.0, 1.0, 0.0]).unwrap();
    let e = m.config().embed_dim;
    let head_w = m.tensors().into_iter().find(|t| t.name == "head.weight").unwrap();
    let head_b = m.tensors().into_iter().find(|t| t.name == "head.bias").unwrap();
    for k in [0, 2] {
        let w = &g[head_w.range.start + k * e..head_w.range.start + (k + 1) * e];
        assert!(w.iter().all(|&v| v == 0.0));
        assert_eq!(g[head_b.range.start + k], 0.0);
    }
    assert!(g[head_b.range.start + 1] != 0.0);
}

#[test]
fn gradients_match_finite_differences() {
    let (worst, at) = gradient_check(tiny(), 3);
    assert!(worst < 1e-4, "worst relative error {worst:e} at {at}");
}

#[test]
fn gradients_match_finite_differences_multi_layer() {
    let cfg = ScorerConfig { layers: 2, aspects: 2, ..tiny() };
    let (worst, at) = gradient_check(cfg, 4);
    assert!(worst < 1e-4, "worst relative error {worst:e} at {at}");
}

#[test]
fn sensitive_to_row_order() {
    let m = perturbed(ScorerConfig { seed: 8, ..ScorerConfig::default() });
    let x = random_features(6, 16, 3);
    let mut rows = x.to_rows();
    rows.reverse();
    let shuffled = Matrix::from_rows(&rows).unwrap();
    let (a, b) = (m.forward(&x).unwrap(), m.forward(&shuffled).unwrap());
    assert!(a.iter().zip(&b).any(|(p, q)| (p - q).abs() > 1e-9));
}

#[test]
fn checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = perturbed(tiny());
    m.set_aspect_names(vec!["x".into(), "y".into(), "z".into()]).unwrap();
    let x = random_features(3, 4, 8);
    for name in ["m.ckpt", "m.json"] {
        let path = dir.path().join(name);
        save_model(&m, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.params(), m.params());
        assert_eq!(loaded.config(), m.config());
        assert_eq!(loaded.aspect_names(), m.aspect_names());
        let (a, b) = (m.forward(&x).unwrap(), loaded.forward(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn broken_checkpoints_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = perturbed(tiny());
    let path = dir.path().join("m.ckpt");
    save_model(&m, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [4, 11, 40, bytes.len() - 3] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Checkpoint(_))), "cut at {cut}");
    }

    let json = dir.path().join("m.json");
    save_model(&m, &json).unwrap();
    let text = std::fs::read_to_string(&json).unwrap().replace(CHECKPOINT_VERSION, "anchorscore-checkpoint/0");
    std::fs::write(&json, text).unwrap();
    assert!(matches!(load_model(&json), Err(Error::Checkpoint(_))));
}
