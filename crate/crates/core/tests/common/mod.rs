//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s4t::graph::{
    backward, finite_diff_check, finite_diff_check_f32, forward_eval, Graph, GraphBuilder, NodeId,
};
use s4t::model::{
    make_mask, GraphKind, MaskStrategy, ModelConfig, ModelGraph, ModelParams, TaskKind, TaskSpec,
};
use s4t::objectives::LossWeights;
use s4t::tensor::{Tensor, TensorMap};

/// Differentiable primitives, each exercised through a random-weighted sum
/// of its output.
pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "batch_matmul",
    "batch_matmul_t",
    "add_suffix",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "abs",
    "square",
    "sqrt",
    "relu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "l2_normalize",
    "sum",
    "mean",
    "sum_last",
    "mean_leading",
    "patchify",
    "unpatchify",
    "upsample_nearest",
    "concat",
    "slice",
    "reshape",
    "permute",
    "mask_fill",
];

/// Central-difference steps. The 32-bit check still differences in 64-bit,
/// so it can afford a larger step with less rounding noise.
pub const F64_STEP: f64 = 1e-6;
pub const F32_STEP: f64 = 1e-5;

#[derive(Clone, Copy)]
enum Dist {
    Signed,
    /// Magnitudes in [0.2, 1]: keeps kinks of relu and abs out of reach.
    AwayFromZero,
    Positive,
}

pub struct Case {
    pub name: String,
    pub graph: Graph,
    pub loss: NodeId,
    pub inputs: TensorMap<f64>,
    pub params: TensorMap<f64>,
}

struct Maker<'a> {
    b: GraphBuilder,
    rng: &'a mut ChaCha8Rng,
    inputs: TensorMap<f64>,
    params: TensorMap<f64>,
}

impl Maker<'_> {
    fn draw(&mut self, shape: &[usize], dist: Dist) -> Tensor<f64> {
        let rng = &mut *self.rng;
        Tensor::from_fn(shape.to_vec(), |_| match dist {
            Dist::Signed => rng.gen_range(-1.0..1.0),
            Dist::AwayFromZero => {
                let m = rng.gen_range(0.2..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
            Dist::Positive => rng.gen_range(0.2..1.5),
        })
    }

    fn param(&mut self, name: &str, shape: &[usize], dist: Dist) -> NodeId {
        let t = self.draw(shape, dist);
        self.params.insert(name.into(), t);
        self.b.param(name, shape).unwrap()
    }

    fn input(&mut self, name: &str, t: Tensor<f64>) -> NodeId {
        let shape = t.shape().to_vec();
        self.inputs.insert(name.into(), t);
        self.b.input(name, &shape).unwrap()
    }

    fn finish(mut self, name: &str, out: NodeId) -> Case {
        let shape = self.b.shape(out).to_vec();
        let r = self.draw(&shape, Dist::Signed);
        let r = self.input("r", r);
        let m = self.b.mul(out, r).unwrap();
        let loss = self.b.sum(m).unwrap();
        self.b.output("loss", loss);
        Case {
            name: name.into(),
            graph: self.b.finish(),
            loss,
            inputs: self.inputs,
            params: self.params,
        }
    }
}

fn dims(rng: &mut ChaCha8Rng, n: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// One random instance of a primitive.
pub fn primitive_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    // Normalizing ops get a last axis of at least 3: at width 1 or 2 their
    // output is locally constant and the relative error is 0/0.
    let rank = rng.gen_range(1..=3);
    let shape = dims(rng, rank, 1, 4);
    let mut m = Maker {
        b: GraphBuilder::new(),
        rng,
        inputs: TensorMap::new(),
        params: TensorMap::new(),
    };
    use Dist::*;
    let out = match name {
        "matmul" => {
            let k = m.rng.gen_range(1..=5);
            let n = m.rng.gen_range(1..=5);
            let mut s = shape.clone();
            s.push(k);
            let a = m.param("a", &s, Signed);
            let w = m.param("w", &[k, n], Signed);
            m.b.matmul(a, w).unwrap()
        }
        "batch_matmul" | "batch_matmul_t" => {
            let d = dims(m.rng, 4, 1, 4);
            let t = name.ends_with("_t");
            let a = m.param("a", &[d[0], d[1], d[2]], Signed);
            let bs = if t {
                [d[0], d[3], d[2]]
            } else {
                [d[0], d[2], d[3]]
            };
            let b = m.param("b", &bs, Signed);
            let alpha = m.rng.gen_range(0.2..2.0);
            m.b.batch_matmul_scaled(a, b, t, alpha).unwrap()
        }
        "add_suffix" => {
            let a = m.param("a", &shape, Signed);
            let k = m.rng.gen_range(1..=shape.len());
            let suffix = shape[shape.len() - k..].to_vec();
            let b = m.param("b", &suffix, Signed);
            m.b.add_suffix(a, b).unwrap()
        }
        "add" | "sub" | "mul" => {
            let a = m.param("a", &shape, Signed);
            let b = m.param("b", &shape, Signed);
            match name {
                "add" => m.b.add(a, b),
                "sub" => m.b.sub(a, b),
                _ => m.b.mul(a, b),
            }
            .unwrap()
        }
        "scale" => {
            let a = m.param("a", &shape, Signed);
            let c = m.rng.gen_range(-2.0..2.0);
            m.b.scale(a, c).unwrap()
        }
        "add_scalar" => {
            let a = m.param("a", &shape, Signed);
            let c = m.rng.gen_range(-2.0..2.0);
            m.b.add_scalar(a, c).unwrap()
        }
        "abs" | "relu" => {
            let a = m.param("a", &shape, AwayFromZero);
            if name == "abs" {
                m.b.abs(a)
            } else {
                m.b.relu(a)
            }
            .unwrap()
        }
        "square" => {
            let a = m.param("a", &shape, Signed);
            m.b.square(a).unwrap()
        }
        "sqrt" => {
            let a = m.param("a", &shape, Positive);
            m.b.sqrt(a, 1e-3).unwrap()
        }
        "softmax" | "log_softmax" => {
            let a = m.param("a", &shape, Signed);
            let a = m.b.scale(a, 3.0).unwrap();
            if name == "softmax" {
                m.b.softmax(a)
            } else {
                m.b.log_softmax(a)
            }
            .unwrap()
        }
        "layer_norm" => {
            let mut s = shape.clone();
            *s.last_mut().unwrap() += 2;
            let c = *s.last().unwrap();
            let x = m.param("x", &s, Signed);
            let g = m.param("gamma", &[c], Positive);
            let be = m.param("beta", &[c], Signed);
            m.b.layer_norm(x, g, be, 1e-5).unwrap()
        }
        "l2_normalize" => {
            let mut s = shape.clone();
            *s.last_mut().unwrap() += 2;
            let a = m.param("a", &s, AwayFromZero);
            m.b.l2_normalize(a, 1e-12).unwrap()
        }
        "sum" | "mean" => {
            let a = m.param("a", &shape, Signed);
            if name == "sum" {
                m.b.sum(a)
            } else {
                m.b.mean(a)
            }
            .unwrap()
        }
        "sum_last" | "mean_leading" => {
            let a = m.param("a", &shape, Signed);
            if name == "sum_last" {
                m.b.sum_last(a)
            } else {
                m.b.mean_leading(a)
            }
            .unwrap()
        }
        "patchify" | "unpatchify" | "upsample_nearest" => {
            let p = m.rng.gen_range(1..=3);
            let d = dims(m.rng, 4, 1, 3);
            match name {
                "patchify" => {
                    let x = m.param("x", &[d[0], d[1] * p, d[2] * p, d[3]], Signed);
                    m.b.patchify(x, p).unwrap()
                }
                "unpatchify" => {
                    let x = m.param("x", &[d[0], d[1], d[2], d[3] * p * p], Signed);
                    m.b.unpatchify(x, p).unwrap()
                }
                _ => {
                    let x = m.param("x", &d, Signed);
                    m.b.upsample_nearest(x, p).unwrap()
                }
            }
        }
        "concat" => {
            let axis = m.rng.gen_range(0..shape.len());
            let parts = m.rng.gen_range(1..=3);
            let ids: Vec<NodeId> = (0..parts)
                .map(|i| {
                    let mut s = shape.clone();
                    s[axis] = m.rng.gen_range(1..=3);
                    m.param(&format!("p{i}"), &s, Signed)
                })
                .collect();
            m.b.concat(&ids, axis).unwrap()
        }
        "slice" => {
            let x = m.param("x", &shape, Signed);
            let axis = m.rng.gen_range(0..shape.len());
            let len = m.rng.gen_range(1..=shape[axis]);
            let start = m.rng.gen_range(0..=shape[axis] - len);
            m.b.slice(x, axis, start, len).unwrap()
        }
        "reshape" => {
            let x = m.param("x", &shape, Signed);
            let n: usize = shape.iter().product();
            m.b.reshape(x, &[1, n]).unwrap()
        }
        "permute" => {
            let d = dims(m.rng, 4, 1, 3);
            let x = m.param("x", &d, Signed);
            let mut perm = vec![0, 1, 2, 3];
            for i in (1..4).rev() {
                let j = m.rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            m.b.permute(x, &perm).unwrap()
        }
        "mask_fill" => {
            let d = dims(m.rng, 4, 1, 3);
            let x = m.param("x", &d, Signed);
            let tok = m.param("token", &[d[3]], Signed);
            let per_batch = m.rng.gen_bool(0.5);
            let ms: Vec<usize> = if per_batch {
                d[..3].to_vec()
            } else {
                d[1..3].to_vec()
            };
            let rng = &mut *m.rng;
            let mask = Tensor::from_fn(ms, |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
            let mk = m.input("mask", mask);
            m.b.mask_fill(x, mk, tok).unwrap()
        }
        other => panic!("unknown primitive {other}"),
    };
    m.finish(name, out)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst relative errors `(f64, f32)` over `shapes` random instances.
pub fn primitive_errors(name: &str, shapes: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    for _ in 0..shapes {
        let c = primitive_case(name, &mut r);
        let a = finite_diff_check(&c.graph, c.loss, &c.inputs, &c.params, F64_STEP).unwrap();
        let cast = |m: &TensorMap<f64>| -> TensorMap<f32> {
            m.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
        };
        let b = finite_diff_check_f32(
            &c.graph,
            c.loss,
            &cast(&c.inputs),
            &cast(&c.params),
            F32_STEP,
        )
        .unwrap();
        e64 = e64.max(a.max_rel_error);
        e32 = e32.max(b.max_rel_error);
    }
    (e64, e32)
}

/// Gradients through detach and argmax one-hot are exactly zero.
pub fn blocking_ops_have_zero_gradient(seed: u64) -> bool {
    let mut r = rng(seed);
    (0..10).all(|_| {
        let shape = dims(&mut r, 3, 1, 4);
        let mut b = GraphBuilder::new();
        let x = b.param("x", &shape).unwrap();
        let d = b.detach(x).unwrap();
        let h = b.argmax_one_hot(x).unwrap();
        let s = b.add(d, h).unwrap();
        let sq = b.square(s).unwrap();
        let l = b.sum(sq).unwrap();
        b.output("loss", l);
        let g = b.finish();
        let mut p = TensorMap::new();
        p.insert(
            "x".to_string(),
            Tensor::from_fn(shape.clone(), |_| r.gen_range(-1.0..1.0f64)),
        );
        let ev = forward_eval(&g, &TensorMap::new(), &p).unwrap();
        let gr = backward(&g, l, &ev).unwrap();
        gr.get("x")
            .is_none_or(|t| t.data().iter().all(|&v| v == 0.0))
    })
}

pub fn rand_targets(
    cfg: &ModelConfig,
    tasks: &[TaskSpec],
    batch: usize,
    seed: u64,
) -> Vec<Tensor<f64>> {
    let mut r = rng(seed);
    let s = cfg.image_size;
    tasks
        .iter()
        .map(|t| {
            let c = t.channels();
            let mut v: Vec<f64> = (0..batch * s * s * c)
                .map(|_| r.gen_range(-1.0..1.0))
                .collect();
            match t.kind {
                TaskKind::CategoricalMap { .. } => {
                    for row in v.chunks_mut(c) {
                        let k = r.gen_range(0..c);
                        row.iter_mut()
                            .enumerate()
                            .for_each(|(j, x)| *x = (j == k) as u8 as f64);
                    }
                }
                TaskKind::UnitVectorMap => {
                    for row in v.chunks_mut(3) {
                        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                        row.iter_mut().for_each(|x| *x /= n);
                    }
                }
                TaskKind::ScalarMap => {}
            }
            Tensor::from_f64([batch, s, s, c], &v).unwrap()
        })
        .collect()
}

/// Initialized parameters plus uniform jitter. Zero-initialized biases can
/// leave a decoder pixel with every hidden unit dead and an output of exactly
/// zero, where the normal head's normalization is singular; the jitter moves
/// the check to a generic point.
pub fn generic_params(cfg: &ModelConfig, tasks: &[TaskSpec], seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(cfg, tasks, seed);
    let mut r = rng(seed ^ 0x5eed);
    for (_, t) in p.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += r.gen_range(-0.05..0.05));
    }
    p
}

/// Worst relative errors `(f64, f32)` of the full training graph (encoder,
/// projections, decoders and synchronizer) at tiny sizes.
pub fn assembled_errors(seed: u64) -> (f64, f64) {
    let cfg = ModelConfig::tiny();
    let tasks = TaskSpec::default_tasks(3);
    let params = generic_params(&cfg, &tasks, seed);
    let mg = ModelGraph::build(&cfg, &tasks, 2, GraphKind::Train(LossWeights::default())).unwrap();
    let g = cfg.grid();
    let plan = make_mask(MaskStrategy::SameForAll, 0.5, g, g, tasks.len(), seed + 1).unwrap();
    let targets = rand_targets(&cfg, &tasks, 2, seed + 2);
    let mut r = rng(seed + 3);
    let s = cfg.image_size;
    let image = Tensor::from_fn([2, s, s, cfg.in_channels], |_| r.gen_range(0.0..1.0f64));
    let inputs = mg
        .inputs(&image, Some(&targets), Some(&plan), None)
        .unwrap();
    let loss = mg.graph.output("loss").unwrap();
    let a = finite_diff_check(&mg.graph, loss, &inputs, params.map(), F64_STEP).unwrap();
    let cast = |m: &TensorMap<f64>| -> TensorMap<f32> {
        m.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    };
    let b = finite_diff_check_f32(
        &mg.graph,
        loss,
        &cast(&inputs),
        &cast(params.map()),
        F32_STEP,
    )
    .unwrap();
    (a.max_rel_error, b.max_rel_error)
}
