mod common;

use maskrestore::rng::{stream, Purpose};
use maskrestore::tensor::finite_difference_gradient;
use maskrestore::{Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, Purpose::Test, 99);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct nested-loop cross-correlation with zero padding.
fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            let v = if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                0.0
                            } else {
                                x.data()[(c * h + iy as usize) * wd + ix as usize]
                            };
                            acc += w.data()[((o * c_in + c) * k + ky) * k + kx] * v;
                        }
                    }
                }
                if let Some(b) = b {
                    acc += b.data()[o];
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn sigmoid_and_relu_scalars() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&t(&[3], &[0.0, -3.0, 2.0]));
    let s = g.sigmoid(x);
    let r = g.relu(x);
    assert_eq!(g.value(s)[0], 0.5);
    assert_eq!(g.value(r), &[0.0, 0.0, 2.0]);
}

#[test]
fn matmul_against_ones_gives_row_sums() {
    // 2x3 identity padded with a zero column, times a 3x1 ones vector.
    let mut g = Graph::<f64>::new();
    let a = g.leaf(&t(&[2, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
    let b = g.leaf(&Tensor::ones(&[3, 1]));
    let m = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(m), &[2, 1]);
    assert_eq!(g.value(m), &[1.0, 1.0]);

    let bad = g.leaf(&Tensor::ones(&[2, 1]));
    let err = g.matmul(a, bad).unwrap_err().to_string();
    assert!(err.contains("[2, 3]") && err.contains("[2, 1]"), "{err}");
}

#[test]
fn elementwise_shape_mismatch_reports_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(&Tensor::zeros(&[2, 2]));
    let b = g.leaf(&Tensor::zeros(&[4]));
    let err = g.add(a, b).unwrap_err().to_string();
    assert!(err.contains("[2, 2]") && err.contains("[4]"), "{err}");
}

#[test]
fn conv_identity_kernels() {
    let x = random_tensor(&[1, 5, 6], 1);
    let mut g = Graph::<f64>::new();
    let xv = g.leaf(&x);
    let one = g.leaf(&Tensor::ones(&[1, 1, 1, 1]));
    let y = g.conv2d(xv, one, None, 1, 0).unwrap();
    assert_eq!(g.value(y), x.data());

    let mut delta = Tensor::zeros(&[1, 1, 3, 3]);
    delta.data_mut()[4] = 1.0;
    let d = g.leaf(&delta);
    let y = g.conv2d(xv, d, None, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 5, 6]);
    assert_eq!(g.value(y), x.data());
}

#[test]
fn conv_channel_mismatch_is_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&Tensor::zeros(&[2, 4, 4]));
    let w = g.leaf(&Tensor::zeros(&[1, 3, 3, 3]));
    assert!(g.conv2d(x, w, None, 1, 1).is_err());
}

#[test]
fn conv_matches_nested_loop_bit_for_bit() {
    for (seed, (c_in, c_out, h, w, k, stride)) in [
        (1, 3, 8, 8, 3, 1),
        (2, 2, 8, 7, 3, 2),
        (3, 4, 5, 8, 1, 1),
        (4, 1, 8, 8, 5, 1),
        (2, 3, 6, 6, 3, 2),
    ]
    .into_iter()
    .enumerate()
    {
        let x = random_tensor(&[c_in, h, w], seed as u64 * 3);
        let wt = random_tensor(&[c_out, c_in, k, k], seed as u64 * 3 + 1);
        let b = random_tensor(&[c_out], seed as u64 * 3 + 2);
        let pad = (k - 1) / 2;
        let mut g = Graph::<f64>::new();
        let (xv, wv, bv) = (g.leaf(&x), g.leaf(&wt), g.leaf(&b));
        let y = g.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let want = naive_conv(&x, &wt, Some(&b), stride, pad);
        assert_eq!(g.value(y), want.as_slice(), "case {seed}");
        if stride == 1 {
            assert_eq!(g.shape(y), &[c_out, h + 2 * pad - k + 1, w + 2 * pad - k + 1]);
        }
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let u = g.leaf(&Tensor::zeros(&[4]));
    let su = g.softmax(u, 0).unwrap();
    assert_eq!(g.value(su), &[0.25; 4]);

    for c in [-50.0, 0.0, 3.7, 700.0] {
        let x = g.leaf(&t(&[2], &[c, c + 3f64.ln()]));
        let s = g.softmax(x, 0).unwrap();
        assert!((g.value(s)[0] - 0.25).abs() < 1e-12);
        assert!((g.value(s)[1] - 0.75).abs() < 1e-12);
    }

    let x = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
    let s = g.softmax(x, 0).unwrap();
    let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
    for (i, v) in g.value(s).iter().enumerate() {
        assert!((v - ((i + 1) as f64).exp() / denom).abs() < 1e-15);
    }
    assert!(g.softmax(x, 1).is_err());
}

#[test]
fn global_avg_pool_examples() {
    let mut g = Graph::<f64>::new();
    let c = g.leaf(&Tensor::full(&[3, 4, 4], 0.7));
    let p = g.global_avg_pool(c).unwrap();
    assert!(g.value(p).iter().all(|&v| (v - 0.7).abs() < 1e-15));

    let x = g.leaf(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(p), &[2.5]);

    let r = random_tensor(&[3, 5, 7], 5);
    let x = g.leaf(&r);
    let p = g.global_avg_pool(x).unwrap();
    for ch in 0..3 {
        let want: f64 = r.data()[ch * 35..(ch + 1) * 35].iter().sum::<f64>() / 35.0;
        assert!((g.value(p)[ch] - want).abs() < 1e-14);
    }
}

#[test]
fn backward_basic_rules() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&random_tensor(&[5], 3).with_requires_grad(true));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[1.0; 5]);

    let mut g = Graph::<f64>::new();
    let a = g.leaf(&t(&[1], &[2.0]).with_requires_grad(true));
    let b = g.leaf(&t(&[1], &[3.0]).with_requires_grad(true));
    let p = g.mul(a, b).unwrap();
    let grads = g.backward(p).unwrap();
    assert_eq!(grads.wrt(a).unwrap(), &[3.0]);
    assert_eq!(grads.wrt(b).unwrap(), &[2.0]);
}

#[test]
fn backward_rejects_non_scalar_and_accumulates_twice() {
    let mut g = Graph::<f64>::new();
    let mut leaf = t(&[2], &[1.0, -2.0]).with_requires_grad(true);
    let x = g.leaf(&leaf);
    let sq = g.mul(x, x).unwrap();
    assert!(g.backward(sq).is_err());
    let s = g.sum(sq);
    let grads = g.backward(s).unwrap();
    leaf.accumulate_grad(&grads, x).unwrap();
    let grads = g.backward(s).unwrap();
    leaf.accumulate_grad(&grads, x).unwrap();
    assert_eq!(leaf.grad().unwrap(), &[4.0, -8.0]);
}

#[test]
fn detach_blocks_one_factor() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&t(&[1], &[3.0]).with_requires_grad(true));
    let d = g.detach(x);
    assert_eq!(g.value(d), g.value(x));
    let f = g.mul(x, d).unwrap();
    let grads = g.backward(f).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[3.0]);
    assert!(grads.wrt(d).is_none());
}

#[test]
fn leaf_reachable_only_through_detach_gets_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&random_tensor(&[4], 8).with_requires_grad(true));
    let y = g.leaf(&random_tensor(&[4], 9).with_requires_grad(true));
    let dx = g.detach(x);
    let e = g.exp(dx);
    let prod = g.mul(e, y).unwrap();
    let s = g.sum(prod);
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).is_none());
    assert!(grads.wrt(y).is_some());
}

#[test]
fn sigmoid_composite_matches_finite_differences() {
    let x0 = random_tensor(&[6], 4);
    let f = |x: &Tensor<f64>| {
        let mut g = Graph::<f64>::new();
        let v = g.leaf(x);
        let s = g.sigmoid(v);
        let p = g.mul(s, v).unwrap();
        let t = g.tanh(p);
        let out = g.sum(t);
        g.item(out)
    };
    let mut g = Graph::<f64>::new();
    let v = g.leaf(&x0.clone().with_requires_grad(true));
    let s = g.sigmoid(v);
    let p = g.mul(s, v).unwrap();
    let tt = g.tanh(p);
    let out = g.sum(tt);
    let grads = g.backward(out).unwrap();
    let fd = finite_difference_gradient(f, &x0, 1e-3).unwrap();
    for (a, b) in grads.wrt(v).unwrap().iter().zip(fd.data()) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn resize_is_identity_at_same_size_and_matches_reference_weights() {
    let r = random_tensor(&[2, 3, 5], 11);
    let mut g = Graph::<f64>::new();
    let x = g.leaf(&r);
    let same = g.resize_bilinear(x, 3, 5).unwrap();
    assert_eq!(g.value(same), r.data());

    // 2x upsampling of [a, b] along a row: [a, .75a+.25b, .25a+.75b, b].
    let row = g.leaf(&t(&[1, 1, 2], &[1.0, 5.0]));
    let up = g.resize_bilinear(row, 1, 4).unwrap();
    assert_eq!(g.value(up), &[1.0, 2.0, 4.0, 5.0]);
}

#[test]
fn patch_expand_broadcasts_tokens() {
    let mut g = Graph::<f64>::new();
    let s = g.leaf(&t(&[4], &[1.0, 2.0, 3.0, 4.0]));
    let m = g.patch_expand(s, 4, 4, 2).unwrap();
    assert_eq!(
        g.value(m),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
    );
}

#[test]
fn random_composite_graphs_match_finite_differences() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 30 {
        let p = common::random_program(seed);
        seed += 1;
        if let Some(err) = common::program_gradient_error(&p) {
            assert!(err < 1e-4, "seed {} steps {:?}: {err}", seed - 1, p.steps);
            checked += 1;
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let p = common::random_program(42);
    assert_eq!(
        common::eval(&p, &p.leaves).to_bits(),
        common::eval(&p, &p.leaves).to_bits()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::new(&[3, 4], values).unwrap());
        for axis in 0..2 {
            let s = g.softmax(x, axis).unwrap();
            let v = g.value(s);
            prop_assert!(v.iter().all(|&p| p > 0.0 && p < 1.0 || p == 1.0));
            if axis == 1 {
                for r in 0..3 {
                    let total: f64 = v[r * 4..r * 4 + 4].iter().sum();
                    prop_assert!((total - 1.0).abs() < 1e-9);
                }
            } else {
                for c in 0..4 {
                    let total: f64 = (0..3).map(|r| v[r * 4 + c]).sum();
                    prop_assert!((total - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn finite_forward_stays_finite(seed in 0u64..500) {
        let p = common::random_program(seed);
        prop_assert!(common::eval(&p, &p.leaves).is_finite());
    }
}
