//! Finite-difference checks of every graph primitive and of the two
//! composed networks.

use hitframe::nn::gradcheck::{grad_check, grad_check_coords};
use hitframe::nn::layers::LAYER_NORM_EPS;
use hitframe::nn::{Graph, ParamVars, Tensor, Var};
use hitframe::transformer::playerwise_projection;
use hitframe::{PreprocessConfig, SaCnn, SaCnnConfig, TransformerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn probe(g: &mut Graph, y: Var) -> hitframe::Result<Var> {
    let n = g.value(y).len();
    let w = Tensor::new(vec![n], (0..n).map(|i| (1.3 * i as f64 - 0.4).cos()).collect())?;
    g.weighted_sum(y, &w)
}

fn check<F>(name: &str, point: &[Tensor], f: F)
where
    F: Fn(&mut Graph, &[Var]) -> hitframe::Result<Var>,
{
    let err = grad_check(f, point, EPS).unwrap();
    assert!(err <= TOL, "{name}: relative error {err:e}");
}

fn seeds() -> impl Iterator<Item = ChaCha8Rng> {
    (0..5).map(|s| ChaCha8Rng::seed_from_u64(77 + s))
}

#[test]
fn matmul_variants() {
    for mut rng in seeds() {
        let p = [random(&mut rng, &[3, 4], -1.0, 1.0), random(&mut rng, &[4, 2], -1.0, 1.0)];
        check("matmul", &p, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            probe(g, y)
        });
        let p = [random(&mut rng, &[3, 4], -1.0, 1.0), random(&mut rng, &[5, 4], -1.0, 1.0)];
        check("matmul_bt", &p, |g, v| {
            let y = g.matmul_bt(v[0], v[1])?;
            probe(g, y)
        });
    }
}

#[test]
fn elementwise_and_layout() {
    for mut rng in seeds() {
        let p = [random(&mut rng, &[3, 4], -1.0, 1.0), random(&mut rng, &[3, 4], -1.0, 1.0)];
        let c = random(&mut rng, &[3, 4], -1.0, 1.0);
        check("add/scale/add_const", &p, |g, v| {
            let s = g.add(v[0], v[1])?;
            let s = g.scale(s, -1.7);
            let y = g.add_const(s, &c)?;
            probe(g, y)
        });
        check("relu", &p[..1], |g, v| {
            let y = g.relu(v[0]);
            probe(g, y)
        });
        check("slice/concat", &p, |g, v| {
            let a = g.slice_cols(v[0], 1, 2)?;
            let b = g.slice_cols(v[1], 0, 3)?;
            let y = g.concat_cols(&[b, a])?;
            probe(g, y)
        });
        check("stack/reshape", &p, |g, v| {
            let s = g.stack(&[v[0], v[1]])?;
            let y = g.reshape(s, &[4, 6])?;
            probe(g, y)
        });
        let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 2.0 }).collect();
        check("dropout", &p[..1], |g, v| {
            let y = g.dropout(v[0], mask.clone())?;
            probe(g, y)
        });
    }
}

#[test]
fn softmax_and_normalization() {
    for mut rng in seeds() {
        let p = [random(&mut rng, &[4, 5], -2.0, 2.0)];
        check("softmax", &p, |g, v| {
            let y = g.masked_softmax(v[0], None)?;
            probe(g, y)
        });
        let masked = [false, true, false, false, true];
        check("masked_softmax", &p, |g, v| {
            let y = g.masked_softmax(v[0], Some(&masked))?;
            probe(g, y)
        });
        let p = [
            random(&mut rng, &[3, 6], -2.0, 2.0),
            random(&mut rng, &[6], 0.5, 1.5),
            random(&mut rng, &[6], -0.5, 0.5),
        ];
        check("layer_norm", &p, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)?;
            probe(g, y)
        });
        let p = [
            random(&mut rng, &[3, 2, 3, 3], -2.0, 2.0),
            random(&mut rng, &[2], 0.5, 1.5),
            random(&mut rng, &[2], -0.5, 0.5),
        ];
        check("batch_norm_train", &p, |g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            probe(g, y)
        });
        check("batch_norm_eval", &p, |g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.2, -0.1], &[1.5, 0.7], 1e-5)?;
            probe(g, y)
        });
    }
}

#[test]
fn convolution_and_pooling() {
    for mut rng in seeds() {
        let p = [
            random(&mut rng, &[2, 2, 5, 4], -1.0, 1.0),
            random(&mut rng, &[3, 2, 3, 3], -0.5, 0.5),
            random(&mut rng, &[3], -0.1, 0.1),
        ];
        check("conv2d", &p, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2])?;
            probe(g, y)
        });
        check("max_pool", &p[..1], |g, v| {
            let y = g.max_pool(v[0], 2, 2)?;
            probe(g, y)
        });
        check("max_pool overlapping", &p[..1], |g, v| {
            let y = g.max_pool(v[0], 2, 1)?;
            probe(g, y)
        });
    }
}

#[test]
fn tiny_sacnn_end_to_end() {
    let cfg = SaCnnConfig {
        preprocess: PreprocessConfig { resize_h: 8, resize_w: 8, crop: 8, ..PreprocessConfig::desk() },
        channels: vec![2, 3],
        fc_width: 4,
        ..SaCnnConfig::desk()
    };
    for (seed, mut rng) in seeds().enumerate() {
        let model = SaCnn::new(cfg.clone(), seed as u64).unwrap();
        let mut point: Vec<Tensor> = model.params.tensors().map(|(_, t)| t.clone()).collect();
        let n = point.len();
        point.push(random(&mut rng, &[3, 3, 8, 8], -2.0, 2.0));
        let labels = [0, 1, 1];
        check("sacnn", &point, |g, v| {
            let vars = ParamVars::from_leaves(&model.params, &v[..n])?;
            let (logits, _) = model.forward(g, &vars, v[n], true)?;
            g.softmax_cross_entropy(logits, &labels)
        });
    }
}

#[test]
fn playerwise_projection_gradients() {
    let cfg = TransformerConfig { d_model: 8, proj_hidden: 6, ..TransformerConfig::desk() };
    for (seed, mut rng) in seeds().enumerate() {
        let params = hitframe::transformer::init_params(&cfg, seed as u64).unwrap();
        // Only the projection layers take part.
        let mut proj = hitframe::nn::ParameterSet::new();
        for (k, l) in params.layers.iter().filter(|(k, _)| k.starts_with("proj.")) {
            proj.insert(k.clone(), l.weight.clone(), l.bias.clone());
        }
        let mut point: Vec<Tensor> = proj.tensors().map(|(_, t)| t.clone()).collect();
        let n = point.len();
        point.push(random(&mut rng, &[4, 68], -1.5, 1.5));
        check("projection", &point, |g, v| {
            let vars = ParamVars::from_leaves(&proj, &v[..n])?;
            let y = playerwise_projection(g, &vars, v[n])?;
            probe(g, y)
        });
    }
}

#[test]
fn projection_branches_are_independent() {
    let cfg = TransformerConfig { d_model: 8, proj_hidden: 6, ..TransformerConfig::desk() };
    let params = hitframe::transformer::init_params(&cfg, 3).unwrap();
    let mut g = Graph::new();
    let vars = params.register(&mut g);
    let x = g.leaf(random(&mut ChaCha8Rng::seed_from_u64(3), &[2, 68], -1.0, 1.0));
    let y = playerwise_projection(&mut g, &vars, x).unwrap();
    // Bottom half of the output only sees the bottom player's coordinates.
    let bottom = g.slice_cols(y, 0, 4).unwrap();
    let s = probe(&mut g, bottom).unwrap();
    let grads = g.backward(s).unwrap();
    let gx = grads.get(x).unwrap();
    for r in 0..2 {
        assert!(gx.row(r)[34..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn selected_coordinates_only() {
    let p = [Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
    let err = grad_check_coords(
        |g, v| {
            let y = g.relu(v[0]);
            probe(g, y)
        },
        &p,
        EPS,
        |_, c| c == 1,
    )
    .unwrap();
    assert!(err <= TOL);
}
