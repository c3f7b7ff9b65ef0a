#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use fasttalker::frontend::synth_sample;
use fasttalker::model::{FastTalker, LossWeights, ModelOptions};
use fasttalker::nas::{
    ArchitectureConfig, Controller, ControllerConfig, ModuleConfig, SampleMode, SearchSpace,
};
use fasttalker::numerics::{ConvSpec, Graph, ParamStore, TransposedConvSpec};
use fasttalker::rng;
use fasttalker::speech::Discriminator;
use fasttalker::{Result, Tensor, Var};

pub const SEEDS: u64 = 20;
pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;

type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor>;
type Op = fn(&mut Graph, &[Var]) -> Result<Var>;

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn u(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(r, shape, -1.0, 1.0)
}

fn signed_away(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let t = uniform(r, shape, 0.2, 1.0);
    let signs: Vec<f64> = (0..t.len())
        .map(|_| if r.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(
        t.shape().to_vec(),
        t.data().iter().zip(&signs).map(|(a, s)| a * s).collect(),
    )
    .unwrap()
}

/// Scalar probe `Σ out ⊙ W` with fixed random `W`, evaluated in a fresh
/// graph whose dropout stream is reseeded identically every time.
fn probe(
    op: Op,
    xs: &[Tensor],
    weights: &mut Option<Tensor>,
    seed: u64,
    grads: bool,
) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new().with_dropout_rng(rng::stream(seed, "probe/dropout"));
    let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
    let out = op(&mut g, &vars).unwrap();
    let w = weights
        .get_or_insert_with(|| {
            let mut r = rng::stream(seed, "probe/weights");
            let shape = g.shape(out).to_vec();
            u(&mut r, &shape)
        })
        .clone();
    let wv = g.constant(w);
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod).unwrap();
    let value = g.value(loss).data()[0];
    if !grads {
        return (value, Vec::new());
    }
    g.backward(loss).unwrap();
    let gs = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).len()])
        })
        .collect();
    (value, gs)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-12 {
        diff
    } else {
        diff / na.max(nb)
    }
}

/// Worst relative error over all seeds.
pub fn op_error(name: &str, inputs: Inputs, op: Op) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng::stream(seed, &format!("grad/{name}"));
        let xs = inputs(&mut r);
        let mut w = None;
        let (_, analytic) = probe(op, &xs, &mut w, seed, true);
        let mut numeric = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let mut col = Vec::with_capacity(x.len());
            for j in 0..x.len() {
                let mut plus = xs.clone();
                plus[i].data_mut()[j] += STEP;
                let mut minus = xs.clone();
                minus[i].data_mut()[j] -= STEP;
                let fp = probe(op, &plus, &mut w, seed, false).0;
                let fm = probe(op, &minus, &mut w, seed, false).0;
                col.push((fp - fm) / (2.0 * STEP));
            }
            numeric.push(col);
        }
        let a: Vec<f64> = analytic.concat();
        let n: Vec<f64> = numeric.concat();
        worst = worst.max(relative_error(&a, &n));
    }
    worst
}

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Inputs,
    pub op: Op,
}

macro_rules! case {
    ($name:ident, $inputs:expr, $op:expr) => {
        OpCase {
            name: stringify!($name),
            inputs: $inputs,
            op: $op,
        }
    };
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        case!(add, |r| vec![u(r, &[3, 4]), u(r, &[3, 4])], |g, x| g
            .add(x[0], x[1])),
        case!(sub, |r| vec![u(r, &[3, 4]), u(r, &[3, 4])], |g, x| g
            .sub(x[0], x[1])),
        case!(mul, |r| vec![u(r, &[3, 4]), u(r, &[3, 4])], |g, x| g
            .mul(x[0], x[1])),
        case!(
            add_n,
            |r| vec![u(r, &[2, 3]), u(r, &[2, 3]), u(r, &[2, 3])],
            |g, x| g.add_n(x)
        ),
        case!(scale, |r| vec![u(r, &[5])], |g, x| g.scale(x[0], -1.7)),
        case!(add_scalar, |r| vec![u(r, &[5])], |g, x| g
            .add_scalar(x[0], 0.3)),
        case!(one_minus, |r| vec![u(r, &[5])], |g, x| g.one_minus(x[0])),
        case!(relu, |r| vec![signed_away(r, &[4, 3])], |g, x| g.relu(x[0])),
        case!(leaky_relu, |r| vec![signed_away(r, &[4, 3])], |g, x| g
            .leaky_relu(x[0], 0.2)),
        case!(sigmoid, |r| vec![uniform(r, &[6], -3.0, 3.0)], |g, x| g
            .sigmoid(x[0])),
        case!(tanh, |r| vec![uniform(r, &[6], -2.0, 2.0)], |g, x| g
            .tanh(x[0])),
        case!(exp, |r| vec![u(r, &[6])], |g, x| g.exp(x[0])),
        case!(ln_clamped, |r| vec![uniform(r, &[6], 0.1, 2.0)], |g, x| g
            .ln_clamped(x[0], 1e-3)),
        case!(abs, |r| vec![signed_away(r, &[6])], |g, x| g.abs(x[0])),
        case!(square, |r| vec![u(r, &[6])], |g, x| g.square(x[0])),
        case!(dropout, |r| vec![u(r, &[5, 4])], |g, x| g
            .dropout(x[0], 0.3)),
        case!(sum, |r| vec![u(r, &[3, 3])], |g, x| g.sum(x[0])),
        case!(mean, |r| vec![u(r, &[3, 3])], |g, x| g.mean(x[0])),
        case!(l2_norm, |r| vec![u(r, &[3, 4])], |g, x| g.l2_norm(x[0])),
        case!(mse, |r| vec![u(r, &[3, 4]), u(r, &[3, 4])], |g, x| g
            .mse(x[0], x[1])),
        case!(
            l1_mean,
            |r| {
                let a = u(r, &[3, 4]);
                let d = signed_away(r, &[3, 4]);
                let b = Tensor::new(
                    vec![3, 4],
                    a.data().iter().zip(d.data()).map(|(x, y)| x + y).collect(),
                )
                .unwrap();
                vec![a, b]
            },
            |g, x| g.l1_mean(x[0], x[1])
        ),
        case!(
            log_softmax_rows,
            |r| vec![uniform(r, &[3, 5], -2.0, 2.0)],
            |g, x| g.log_softmax_rows(x[0])
        ),
        case!(pick, |r| vec![u(r, &[3, 4])], |g, x| g
            .pick(x[0], &[2, 0, 3])),
        case!(
            cross_entropy,
            |r| vec![uniform(r, &[4, 6], -2.0, 2.0)],
            |g, x| g.cross_entropy(x[0], &[5, 0, 2, 2])
        ),
        case!(matmul, |r| vec![u(r, &[3, 4]), u(r, &[4, 5])], |g, x| g
            .matmul(x[0], x[1])),
        case!(add_row_bias, |r| vec![u(r, &[3, 4]), u(r, &[4])], |g, x| g
            .add_row_bias(x[0], x[1])),
        case!(
            mul_row_scalar,
            |r| vec![u(r, &[3, 4]), u(r, &[3, 1])],
            |g, x| g.mul_row_scalar(x[0], x[1])
        ),
        case!(transpose, |r| vec![u(r, &[3, 4])], |g, x| g.transpose(x[0])),
        case!(reshape, |r| vec![u(r, &[3, 4])], |g, x| g
            .reshape(x[0], &[2, 6])),
        case!(slice_cols, |r| vec![u(r, &[3, 5])], |g, x| g
            .slice_cols(x[0], 1, 3)),
        case!(
            concat_cols,
            |r| vec![u(r, &[3, 2]), u(r, &[3, 4])],
            |g, x| g.concat_cols(x)
        ),
        case!(gather_rows, |r| vec![u(r, &[4, 3])], |g, x| g.gather_rows(
            x[0],
            &[Some(1), None, Some(1), Some(3), Some(0)]
        )),
        case!(
            layer_norm_rows,
            |r| vec![u(r, &[3, 6]), uniform(r, &[6], 0.5, 1.5), u(r, &[6])],
            |g, x| g.layer_norm_rows(x[0], x[1], x[2], 1e-5)
        ),
        case!(
            causal_softmax,
            |r| vec![uniform(r, &[5, 5], -2.0, 2.0)],
            |g, x| g.causal_softmax(x[0])
        ),
        case!(
            conv1d_grouped_dilated,
            |r| {
                let spec = ConvSpec::new(4, 6, 3).groups(2).dilation(2);
                vec![u(r, &[4, 9]), u(r, &spec.weight_shape()), u(r, &[6])]
            },
            |g, x| g.conv1d(
                x[0],
                x[1],
                x[2],
                ConvSpec::new(4, 6, 3).groups(2).dilation(2)
            )
        ),
        case!(
            conv1d_centered,
            |r| {
                let spec = ConvSpec::new(3, 2, 5).centered();
                vec![u(r, &[3, 7]), u(r, &spec.weight_shape()), u(r, &[2])]
            },
            |g, x| g.conv1d(x[0], x[1], x[2], ConvSpec::new(3, 2, 5).centered())
        ),
        case!(
            conv_transpose1d,
            |r| {
                let spec = TransposedConvSpec::new(3, 2, 4, 4);
                vec![u(r, &[3, 5]), u(r, &spec.weight_shape()), u(r, &[2])]
            },
            |g, x| g.conv_transpose1d(x[0], x[1], x[2], TransposedConvSpec::new(3, 2, 4, 4))
        ),
        case!(stft_magnitude, |r| vec![u(r, &[300])], |g, x| g
            .stft_magnitude(x[0], 64, 32)),
    ]
}

/// Relative error of the analytic gradient over a random subset of scalar
/// parameters.
fn store_error(
    name: &str,
    seed: u64,
    store: &mut ParamStore,
    coords: usize,
    loss: &dyn Fn(&ParamStore) -> (f64, Option<fasttalker::numerics::Gradients>),
) -> f64 {
    let (_, grads) = loss(store);
    let grads = grads.unwrap();
    let mut r = rng::stream(seed, &format!("coords/{name}"));
    let ids: Vec<_> = store.ids().collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for _ in 0..coords {
        let id = ids[r.gen_range(0..ids.len())];
        let j = r.gen_range(0..store.get(id).len());
        let orig = store.get(id).data()[j];
        store.get_mut(id).data_mut()[j] = orig + STEP;
        let fp = loss(store).0;
        store.get_mut(id).data_mut()[j] = orig - STEP;
        let fm = loss(store).0;
        store.get_mut(id).data_mut()[j] = orig;
        analytic.push(grads.get(id).map_or(0.0, |g| g[j]));
        numeric.push((fp - fm) / (2.0 * STEP));
    }
    relative_error(&analytic, &numeric)
}

fn grad_arch() -> ArchitectureConfig {
    let mut a = ArchitectureConfig::uniform(ModuleConfig::new(8, 1, 2, 3));
    a.semantic_translator = ModuleConfig::new(8, 1, 1, 3);
    a
}

/// Full model loss, critic included, on a two-phoneme utterance.
pub fn model_error(seed: u64) -> f64 {
    let sample = synth_sample(seed, "grad", "at", 64).unwrap();
    assert_eq!(sample.phonemes.len(), 2);
    let options = ModelOptions {
        dropout: 0.0,
        ..Default::default()
    };
    let model = FastTalker::new(grad_arch(), options, seed).unwrap();
    let targets = model.targets(&sample).unwrap();
    let mut critic_store = ParamStore::new();
    let critic = Discriminator::new(&mut critic_store, &mut rng::stream(seed, "critic")).unwrap();
    let weights = LossWeights::default();
    let mut store = model.store.clone();
    let model = std::cell::RefCell::new(model);
    let loss = |s: &ParamStore| {
        let mut m = model.borrow_mut();
        m.store = s.clone();
        let mut g = Graph::new();
        let terms = m
            .losses(
                &mut g,
                &sample,
                &targets,
                &weights,
                Some((&critic, &critic_store)),
            )
            .unwrap();
        let v = g.value(terms.total).data()[0];
        g.backward(terms.total).unwrap();
        (v, Some(g.param_grads()))
    };
    store_error("model", seed, &mut store, 40, &loss)
}

/// REINFORCE surrogate of the controller.
pub fn controller_error(seed: u64) -> f64 {
    let c = Controller::new(
        SearchSpace::default(),
        ControllerConfig {
            hidden: 8,
            embedding: 4,
            lr: 1e-3,
        },
        seed,
    )
    .unwrap();
    let mut r = rng::stream(seed, "samples");
    let batch: Vec<(Vec<usize>, f64)> = (0..3)
        .map(|k| {
            (
                c.sample(SampleMode::Stochastic, &mut r).unwrap().indices,
                k as f64,
            )
        })
        .collect();
    let mut store = c.store.clone();
    let c = std::cell::RefCell::new(c);
    let loss = |s: &ParamStore| {
        let mut c = c.borrow_mut();
        c.store = s.clone();
        let grads = c.reinforce_gradients(&batch, 0.7).unwrap();
        // the surrogate value, recomputed from log-probabilities
        let mut v = 0.0;
        for (idx, reward) in &batch {
            let lp: f64 = c
                .distributions(idx)
                .unwrap()
                .iter()
                .zip(idx)
                .map(|(p, &i)| p[i].ln())
                .sum();
            v -= (reward - 0.7) * lp / batch.len() as f64;
        }
        (v, Some(grads))
    };
    store_error("controller", seed, &mut store, 40, &loss)
}
