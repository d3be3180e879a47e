//! Deterministic fixture generators: random MLPs, linear binary classifiers
//! with closed-form minimal l-infinity distances, a two-moons dataset, and a
//! small adversarially trained MLP.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::Result;
use crate::loss::LossKind;
use crate::model::{LayerSpec, ModelSpec};
use crate::tensor::{argmax, norm_l1, Tensor};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Dense/ReLU chain with He-scaled Gaussian weights, e.g. `dims = [2, 16, 3]`.
pub fn random_mlp(dims: &[usize], seed: u64) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let scale = (2.0 / fan_in as f64).sqrt();
        let weights = (0..fan_out)
            .map(|_| (0..fan_in).map(|_| scale * gaussian(&mut rng)).collect())
            .collect();
        let bias = (0..fan_out).map(|_| 0.1 * gaussian(&mut rng)).collect();
        layers.push(LayerSpec::dense(weights, bias));
        if i + 2 < dims.len() {
            layers.push(LayerSpec::Relu);
        }
    }
    ModelSpec::new(layers, dims[0], *dims.last().expect("at least two dims")).expect("consistent dims")
}

/// A two-logit linear classifier, a correctly classified point, and the
/// exact minimal l-infinity distance from that point to the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCase {
    pub model: ModelSpec,
    pub x: Vec<f64>,
    pub label: usize,
    pub min_distance: f64,
}

/// Linear cases in `dim_range` dimensions. The point and distance are chosen
/// so the optimal perturbation stays inside `[0, 1]^d`, which makes
/// `|margin| / ||w_y - w_other||_1` the true constrained minimum.
pub fn linear_cases(count: usize, dim_range: (usize, usize), seed: u64) -> Vec<LinearCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let d = rng.random_range(dim_range.0..=dim_range.1);
            let w0: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
            let w1: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..0.7)).collect();
            let label = rng.random_range(0..2usize);
            let target: f64 = rng.random_range(0.02..0.2);
            let (wy, wo) = if label == 0 { (&w0, &w1) } else { (&w1, &w0) };
            let diff: Vec<f64> = wy.iter().zip(wo).map(|(a, b)| a - b).collect();
            let dot: f64 = diff.iter().zip(&x).map(|(a, b)| a * b).sum();
            // margin = dot + (b_y - b_o) = target * ||diff||_1
            let margin = target * norm_l1(&diff);
            let by_minus_bo = margin - dot;
            let bias = if label == 0 {
                vec![by_minus_bo, 0.0]
            } else {
                vec![0.0, by_minus_bo]
            };
            let model = ModelSpec::new(vec![LayerSpec::dense(vec![w0, w1], bias)], d, 2).expect("linear model");
            let logits = model.logits(&x).expect("finite");
            let realised = loss_margin(&logits, label);
            LinearCase {
                min_distance: realised / norm_l1(&diff),
                model,
                x,
                label,
            }
        })
        .collect()
}

fn loss_margin(logits: &[f64], y: usize) -> f64 {
    crate::loss::loss_value(LossKind::LL, logits, y)
}

/// Two interleaved half-moons mapped into the unit square.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % 2;
            let t = rng.random_range(0.0..std::f64::consts::PI);
            let (mut a, mut b) = if label == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            a += noise * gaussian(&mut rng);
            b += noise * gaussian(&mut rng);
            let u = ((a + 1.25) / 4.0).clamp(0.0, 1.0);
            let v = ((b + 1.25) / 2.5).clamp(0.0, 1.0);
            Sample {
                x: Tensor::vector(vec![u, v]).expect("finite"),
                label,
            }
        })
        .collect();
    Dataset::new(samples)
}

/// Settings for [`adversarial_training`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    /// l-infinity radius of the PGD examples mixed into training.
    pub epsilon: f64,
    pub pgd_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 60,
            batch: 32,
            lr: 0.05,
            momentum: 0.9,
            epsilon: 0.03,
            pgd_steps: 5,
            seed: 0,
        }
    }
}

struct Dense {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

fn to_model(layers: &[Dense], input_dim: usize) -> ModelSpec {
    let mut specs = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        specs.push(LayerSpec::dense(l.w.clone(), l.b.clone()));
        if i + 1 < layers.len() {
            specs.push(LayerSpec::Relu);
        }
    }
    let classes = layers.last().map(|l| l.b.len()).unwrap_or(0);
    ModelSpec::new(specs, input_dim, classes).expect("consistent dims")
}

/// l-infinity PGD on the cross-entropy, used to build training batches.
fn pgd(model: &ModelSpec, x: &[f64], y: usize, eps: f64, steps: usize) -> Result<Vec<f64>> {
    let step = 2.5 * eps / steps.max(1) as f64;
    let mut adv = x.to_vec();
    for _ in 0..steps {
        let e = model.evaluate(&adv, y, LossKind::CE)?;
        for ((a, &x0), g) in adv.iter_mut().zip(x).zip(&e.gradient) {
            // descend log p_y
            *a = (*a - step * g.signum()).clamp(x0 - eps, x0 + eps).clamp(0.0, 1.0);
        }
    }
    Ok(adv)
}

/// Trains a Dense/ReLU classifier with PGD adversarial training (half clean,
/// half adversarial loss) using minibatch SGD with momentum. Fully
/// deterministic given `cfg.seed`.
pub fn adversarial_training(data: &Dataset, num_classes: usize, cfg: &TrainConfig) -> Result<ModelSpec> {
    let input_dim = data.dim().unwrap_or(0);
    let mut dims = vec![input_dim];
    dims.extend(&cfg.hidden);
    dims.push(num_classes);
    let init = random_mlp(&dims, cfg.seed);
    let mut layers: Vec<Dense> = init
        .layers()
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Dense { weights, bias } => Some(Dense {
                w: weights.clone(),
                b: bias.clone(),
            }),
            LayerSpec::Relu => None,
        })
        .collect();
    let mut vel: Vec<Dense> = layers
        .iter()
        .map(|l| Dense {
            w: vec![vec![0.0; l.w[0].len()]; l.w.len()],
            b: vec![0.0; l.b.len()],
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / cfg.epochs as f64).cos());
        for chunk in order.chunks(cfg.batch) {
            let model = to_model(&layers, input_dim);
            let mut grads: Vec<Dense> = layers
                .iter()
                .map(|l| Dense {
                    w: vec![vec![0.0; l.w[0].len()]; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect();
            let mut count = 0.0;
            for &i in chunk {
                let s = &data.samples[i];
                let adv = pgd(&model, s.x.as_slice(), s.label, cfg.epsilon, cfg.pgd_steps)?;
                for input in [s.x.as_slice(), adv.as_slice()] {
                    accumulate_ce_grad(&layers, input, s.label, &mut grads);
                    count += 1.0;
                }
            }
            for ((l, v), g) in layers.iter_mut().zip(vel.iter_mut()).zip(&grads) {
                for ((wr, vr), gr) in l.w.iter_mut().zip(v.w.iter_mut()).zip(&g.w) {
                    for ((w, vv), gg) in wr.iter_mut().zip(vr.iter_mut()).zip(gr) {
                        *vv = cfg.momentum * *vv + gg / count;
                        *w -= lr * *vv;
                    }
                }
                for ((b, vv), gg) in l.b.iter_mut().zip(v.b.iter_mut()).zip(&g.b) {
                    *vv = cfg.momentum * *vv + gg / count;
                    *b -= lr * *vv;
                }
            }
        }
    }
    Ok(to_model(&layers, input_dim))
}

/// Adds the parameter gradient of the standard cross-entropy `-log p_y`.
fn accumulate_ce_grad(layers: &[Dense], x: &[f64], y: usize, grads: &mut [Dense]) {
    // acts[i] = input to dense layer i (post-ReLU)
    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut pre: Vec<Vec<f64>> = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        let input = acts.last().expect("non-empty");
        let z: Vec<f64> = l
            .w
            .iter()
            .zip(&l.b)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        if i + 1 < layers.len() {
            acts.push(z.iter().map(|v| v.max(0.0)).collect());
        }
        pre.push(z);
    }
    let logits = pre.last().expect("non-empty");
    // d(-log p_y)/dz = softmax - onehot
    let mut delta = crate::loss::loss_grad_logits(LossKind::CE, logits, y);
    delta.iter_mut().for_each(|d| *d = -*d);
    for i in (0..layers.len()).rev() {
        let input = &acts[i];
        for (o, &d) in delta.iter().enumerate() {
            grads[i].b[o] += d;
            for (gw, &a) in grads[i].w[o].iter_mut().zip(input) {
                *gw += d * a;
            }
        }
        if i > 0 {
            let mut back = vec![0.0; input.len()];
            for (row, &d) in layers[i].w.iter().zip(&delta) {
                for (bk, &w) in back.iter_mut().zip(row) {
                    *bk += w * d;
                }
            }
            for (bk, &z) in back.iter_mut().zip(&pre[i - 1]) {
                if z <= 0.0 {
                    *bk = 0.0;
                }
            }
            delta = back;
        }
    }
}

pub fn accuracy(model: &ModelSpec, data: &Dataset) -> f64 {
    let correct = data
        .samples
        .iter()
        .filter(|s| model.logits(s.x.as_slice()).map(|z| argmax(&z) == s.label).unwrap_or(false))
        .count();
    correct as f64 / data.len().max(1) as f64
}

/// The desk-scale robust model used by the trend and CLI tests: a 2-64-64-2
/// MLP adversarially trained on two moons, together with disjoint train,
/// tuning and evaluation splits.
pub struct MoonsFixture {
    pub model: ModelSpec,
    pub train: Dataset,
    pub tune: Dataset,
    pub eval: Dataset,
}

pub fn moons_fixture(seed: u64) -> Result<MoonsFixture> {
    let train = two_moons(1000, 0.1, seed);
    let tune = two_moons(100, 0.1, seed.wrapping_add(1));
    let eval = two_moons(200, 0.1, seed.wrapping_add(2));
    let model = adversarial_training(
        &train,
        2,
        &TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    )?;
    Ok(MoonsFixture {
        model,
        train,
        tune,
        eval,
    })
}
