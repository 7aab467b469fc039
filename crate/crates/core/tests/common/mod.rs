#![allow(dead_code)]

use maskrestore::rng::{stream, Purpose};
use maskrestore::tensor::finite_difference_gradient;
use maskrestore::{Graph, Tensor, Var};
use rand::Rng;

/// One step of a randomly generated composite program over `[2,4,4]` maps.
#[derive(Clone, Debug)]
pub enum Step {
    Conv,
    StridedConvUp,
    Sigmoid,
    Tanh,
    Relu,
    Abs,
    ExpTanh,
    LogSigmoid,
    MulPrev,
    AddPrev,
    SubLeaf,
    Scale(f64),
    Shift(f64),
    Softmax(usize),
    ConcatFuse,
    ChannelGate,
    MatmulMix,
    ResizeRoundTrip,
    PatchTokens,
}

pub struct Program {
    pub steps: Vec<Step>,
    pub leaves: Vec<Tensor<f64>>,
    pub mean_output: bool,
}

const LEAF_SHAPES: [&[usize]; 6] = [
    &[2, 4, 4],    // x
    &[2, 2, 3, 3], // conv weight
    &[2],          // conv bias
    &[2, 4, 1, 1], // 1x1 fusion weight
    &[16, 16],     // mixing matrix
    &[2, 4, 4],    // second map
];

pub fn random_program(seed: u64) -> Program {
    let mut rng = stream(seed, Purpose::Test, 0);
    let len = rng.random_range(3..9);
    let steps = (0..len)
        .map(|_| match rng.random_range(0..19) {
            0 => Step::Conv,
            1 => Step::StridedConvUp,
            2 => Step::Sigmoid,
            3 => Step::Tanh,
            4 => Step::Relu,
            5 => Step::Abs,
            6 => Step::ExpTanh,
            7 => Step::LogSigmoid,
            8 => Step::MulPrev,
            9 => Step::AddPrev,
            10 => Step::SubLeaf,
            11 => Step::Scale(rng.random_range(-2.0..2.0)),
            12 => Step::Shift(rng.random_range(-1.0..1.0)),
            13 => Step::Softmax(rng.random_range(0..3)),
            14 => Step::ConcatFuse,
            15 => Step::ChannelGate,
            16 => Step::MatmulMix,
            17 => Step::ResizeRoundTrip,
            _ => Step::PatchTokens,
        })
        .collect();
    let leaves = LEAF_SHAPES
        .iter()
        .map(|shape| {
            let scale = if shape.len() == 4 { 0.4 } else { 0.8 };
            Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0) * scale).with_requires_grad(true)
        })
        .collect();
    Program {
        steps,
        leaves,
        mean_output: rng.random_bool(0.5),
    }
}

/// Builds the program; returns the scalar output and every value that was
/// fed into a kinked op (ReLU/abs).
pub fn build(g: &mut Graph<f64>, p: &Program, leaves: &[Tensor<f64>]) -> (Var, Vec<Var>, Vec<Var>) {
    let l: Vec<Var> = leaves.iter().map(|t| g.leaf(t)).collect();
    let (x0, w, b, wf, mix, other) = (l[0], l[1], l[2], l[3], l[4], l[5]);
    let mut cur = x0;
    let mut prev = x0;
    let mut kinks = Vec::new();
    for step in &p.steps {
        let next = match step {
            Step::Conv => g.conv2d(cur, w, Some(b), 1, 1).unwrap(),
            Step::StridedConvUp => {
                let d = g.conv2d(cur, w, None, 2, 1).unwrap();
                g.resize_bilinear(d, 4, 4).unwrap()
            }
            Step::Sigmoid => g.sigmoid(cur),
            Step::Tanh => g.tanh(cur),
            Step::Relu => {
                kinks.push(cur);
                g.relu(cur)
            }
            Step::Abs => {
                kinks.push(cur);
                g.abs(cur)
            }
            Step::ExpTanh => {
                let t = g.tanh(cur);
                g.exp(t)
            }
            Step::LogSigmoid => {
                let s = g.sigmoid(cur);
                g.log(s)
            }
            Step::MulPrev => g.mul(cur, prev).unwrap(),
            Step::AddPrev => g.add(cur, prev).unwrap(),
            Step::SubLeaf => g.sub(cur, other).unwrap(),
            Step::Scale(c) => g.mul_scalar(cur, *c),
            Step::Shift(c) => g.add_scalar(cur, *c),
            Step::Softmax(axis) => g.softmax(cur, *axis).unwrap(),
            Step::ConcatFuse => {
                let c = g.concat(&[cur, prev], 0).unwrap();
                g.conv2d(c, wf, None, 1, 0).unwrap()
            }
            Step::ChannelGate => {
                let pooled = g.global_avg_pool(cur).unwrap();
                let gate = g.sigmoid(pooled);
                g.mul_channel(cur, gate).unwrap()
            }
            Step::MatmulMix => {
                let flat = g.reshape(cur, &[2, 16]).unwrap();
                let m = g.matmul(flat, mix).unwrap();
                g.reshape(m, &[2, 4, 4]).unwrap()
            }
            Step::ResizeRoundTrip => {
                let up = g.resize_bilinear(cur, 6, 5).unwrap();
                g.resize_bilinear(up, 4, 4).unwrap()
            }
            Step::PatchTokens => {
                let t = g.patchify(cur, 2).unwrap();
                let tt = g.transpose(t).unwrap();
                let head = g.narrow(tt, 0, 0, 4).unwrap();
                let tail = g.narrow(tt, 0, 4, 4).unwrap();
                let merged = g.add(head, tail).unwrap();
                let again = g.concat(&[merged, tail], 0).unwrap();
                g.reshape(again, &[2, 4, 4]).unwrap()
            }
        };
        prev = cur;
        cur = next;
    }
    let out = if p.mean_output { g.mean(cur) } else { g.sum(cur) };
    (out, kinks, l)
}

pub fn eval(p: &Program, leaves: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let (out, _, _) = build(&mut g, p, leaves);
    g.item(out)
}

/// Relative error with a unit floor: `|a−b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Max relative error between backward and central differences (h = 1e-3)
/// over every leaf coordinate, or `None` when a kinked op sees an input
/// within 0.02 of its kink (finite differences are meaningless there).
pub fn program_gradient_error(p: &Program) -> Option<f64> {
    let mut g = Graph::new();
    let (out, kinks, leaf_vars) = build(&mut g, p, &p.leaves);
    if kinks
        .iter()
        .any(|&k| g.value(k).iter().any(|v| v.abs() < 0.02))
    {
        return None;
    }
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (li, leaf) in p.leaves.iter().enumerate() {
        let ad = grads.wrt(leaf_vars[li]);
        let fd = finite_difference_gradient(
            |t| {
                let mut ls = p.leaves.clone();
                ls[li] = t.clone();
                eval(p, &ls)
            },
            leaf,
            1e-3,
        )
        .unwrap();
        let zeros = vec![0.0; leaf.numel()];
        let ad = ad.unwrap_or(&zeros);
        for (a, f) in ad.iter().zip(fd.data()) {
            worst = worst.max(rel_err(*a, *f));
        }
    }
    Some(worst)
}

pub mod nets;
pub mod data;
