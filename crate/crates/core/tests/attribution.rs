mod common;

use common::nets::{ConvNet, TwoLayer};
use maskrestore::attribution::{
    assign_path_times, integrated_gradients, layer_conductance, mac_layer, mac_layers,
    neuron_conductance, Aggregation, PathSpec, Quadrature,
};
use maskrestore::masking::sample_mask;
use maskrestore::rng::{stream, Purpose};
use maskrestore::{Graph, Tensor};
use rand::Rng;

fn random_vec(seed: u64, n: usize) -> Tensor<f64> {
    let mut rng = stream(seed, Purpose::Test, 300);
    Tensor::from_fn(&[n], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn ig_is_exact_on_linear_functions() {
    let f = |g: &mut Graph<f64>, x| {
        let c = g.constant(&[2], vec![2.0, 3.0])?;
        let p = g.mul(x, c)?;
        Ok(g.sum(p))
    };
    let x = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
    let zero = Tensor::zeros(&[2]);
    for n in [1, 3, 16] {
        let ig = integrated_gradients(f, &x, &zero, n).unwrap();
        assert!((ig[0] - 2.0).abs() < 1e-12 && (ig[1] - 3.0).abs() < 1e-12);
    }
    let same = integrated_gradients(f, &zero, &zero, 8).unwrap();
    assert!(same.iter().all(|&v| v == 0.0));
    assert!(integrated_gradients(f, &x, &zero, 0).is_err());
}

#[test]
fn ig_completeness_on_random_nets() {
    for seed in 0..5 {
        let net = TwoLayer::random(seed, 6, 5);
        let x = random_vec(seed, 6);
        let x0 = random_vec(seed + 100, 6);
        let ig = integrated_gradients(|g: &mut Graph<f64>, v| Ok(net.build(g, v)?.0), &x, &x0, 1024).unwrap();
        let gap = ig.iter().sum::<f64>() - (net.eval(&x) - net.eval(&x0));
        assert!(gap.abs() < 1e-3, "seed {seed}: {gap}");
    }
}

#[test]
fn sigmoid_of_sum_conductance() {
    let f = |g: &mut Graph<f64>, x| {
        let y = g.sum(x);
        let y = g.reshape(y, &[1])?;
        let s = g.sigmoid(y);
        Ok((g.sum(s), vec![y]))
    };
    let x = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
    let c = neuron_conductance(f, &x, &Tensor::zeros(&[2]), 10_000, 0).unwrap();
    let want = 1.0 / (1.0 + (-2.0f64).exp()) - 0.5;
    assert!((want - 0.3808).abs() < 1e-4);
    assert!((c - want).abs() < 1e-8, "{c}");
}

#[test]
fn unit_constant_along_path_has_zero_conductance() {
    let f = |g: &mut Graph<f64>, x| {
        let y = g.constant(&[1], vec![2.0])?;
        let s = g.sum(x);
        let s = g.reshape(s, &[1])?;
        let p = g.mul(s, y)?;
        Ok((g.sum(p), vec![y]))
    };
    let x = Tensor::new(&[2], vec![1.0, -3.0]).unwrap();
    let c = neuron_conductance(f, &x, &Tensor::zeros(&[2]), 16, 0).unwrap();
    assert_eq!(c, 0.0);
}

#[test]
fn foreign_node_is_rejected() {
    let f = |g: &mut Graph<f64>, x| {
        let s = g.sum(x);
        let later = g.exp(s);
        Ok((s, vec![later]))
    };
    let x = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
    assert!(layer_conductance(f, &x, &Tensor::zeros(&[2]), 4).is_err());
}

#[test]
fn layer_conductance_sums_to_output_change() {
    for seed in 0..5 {
        let net = TwoLayer::random(seed, 6, 5);
        let x = random_vec(seed, 6);
        let x0 = random_vec(seed + 100, 6);
        let c = layer_conductance(
            |g: &mut Graph<f64>, v| {
                let (o, h) = net.build(g, v)?;
                Ok((o, vec![h]))
            },
            &x,
            &x0,
            1024,
        )
        .unwrap();
        let gap = c[0].iter().sum::<f64>() - (net.eval(&x) - net.eval(&x0));
        assert!(gap.abs() < 1e-3, "seed {seed}: {gap}");
    }
}

fn image_spec(seed: u64, size: usize, ratio: f64, delta: f64, steps: usize) -> PathSpec<f64> {
    let mut rng = stream(seed, Purpose::Test, 400);
    let x = Tensor::from_fn(&[1, size, size], |_| rng.random_range(0.0..1.0));
    let pixels = size * size;
    let masked = if ratio < 1.0 {
        let m = sample_mask(&vec![1.0 / pixels as f64; pixels], size, size, ratio, &mut rng).unwrap();
        Some(m.bits().to_vec())
    } else {
        None
    };
    let times = assign_path_times(masked.as_deref(), pixels, ratio, delta, seed, 0).unwrap();
    PathSpec::new(Tensor::zeros(&[1, size, size]), x, times, delta, ratio, steps).unwrap()
}

#[test]
fn path_point_examples() {
    let spec = image_spec(1, 6, 0.5, 100.0, 64);
    let (x, b) = (spec.target.data().to_vec(), spec.baseline.data().to_vec());
    for (i, &a) in spec.times.iter().enumerate() {
        let mid = spec.point(a);
        assert!((mid.data()[i] - 0.5 * (x[i] + b[i])).abs() < 1e-15);
        if a + 0.2 <= 1.0 {
            let late = spec.point(a + 0.2);
            // 1 − σ(20) = 2.06e-9.
            let tail = 1.0 / (1.0 + 20f64.exp());
            assert!(tail < 2.1e-9);
            assert!((late.data()[i] - x[i]).abs() <= tail * (x[i] - b[i]).abs() * (1.0 + 1e-6) + 1e-16);
        }
    }
}

#[test]
fn path_endpoints_respect_sigmoid_tail() {
    for ratio in [0.5, 1.0] {
        let spec = image_spec(2, 8, ratio, 100.0, 64);
        let bound = spec.endpoint_bound();
        let p0 = spec.point(0.0);
        let p1 = spec.point(1.0);
        for i in 0..p0.numel() {
            let range = (spec.target.data()[i] - spec.baseline.data()[i]).abs();
            let e0 = (p0.data()[i] - spec.baseline.data()[i]).abs();
            let e1 = (p1.data()[i] - spec.target.data()[i]).abs();
            assert!(e0 < bound && e1 < bound);
            // The placement margin keeps every pixel within 1e-4 of its range.
            assert!(e0 <= 1e-4 * range && e1 <= 1e-4 * range);
        }
    }
}

#[test]
fn path_times_are_distinct_and_grouped() {
    let mut rng = stream(3, Purpose::Test, 0);
    let m = sample_mask(&[1.0 / 64.0; 64], 8, 8, 0.5, &mut rng).unwrap();
    let t = assign_path_times(Some(m.bits()), 64, 0.5, 100.0, 3, 0).unwrap();
    let mut sorted = t.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    assert_eq!(sorted.len(), 64);
    for i in 0..64 {
        if m.is_masked(i) {
            assert!(t[i] > 0.5 && t[i] <= 1.0);
        } else {
            assert!(t[i] > 0.0 && t[i] <= 0.5);
        }
    }
    // The start of the partial path is the masked image.
    let spec: PathSpec<f64> = PathSpec::new(Tensor::zeros(&[1, 8, 8]), Tensor::ones(&[1, 8, 8]), t, 100.0, 0.5, 16).unwrap();
    let start = spec.point(0.5);
    for i in 0..64 {
        let want = if m.is_masked(i) { 0.0 } else { 1.0 };
        assert!((start.data()[i] - want).abs() < 1e-4);
    }
}

#[test]
fn sharp_paths_approach_the_step_path() {
    let spec0 = image_spec(4, 6, 0.5, 100.0, 64);
    for alpha in [0.3, 0.55, 0.77, 0.95] {
        let mut prev = f64::INFINITY;
        for delta in [10.0, 100.0, 1000.0] {
            let spec = PathSpec { delta, ..spec0.clone() };
            let smooth = spec.point(alpha);
            let step = spec.step_point(alpha);
            let err = smooth
                .data()
                .iter()
                .zip(step.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < prev || err == 0.0, "alpha {alpha} delta {delta}: {err} vs {prev}");
            prev = err;
        }
        assert!(prev < 1e-3);
    }
}

#[test]
fn mac_is_zero_for_constant_layer() {
    let spec = image_spec(5, 6, 0.5, 100.0, 8);
    let f = |g: &mut Graph<f64>, x| {
        let c = g.constant(&[3], vec![1.0, 2.0, 3.0])?;
        let s = g.sum(x);
        let s = g.reshape(s, &[1])?;
        let cs = g.sum(c);
        let cs = g.reshape(cs, &[1])?;
        let p = g.mul(s, cs)?;
        Ok((g.sum(p), vec![c]))
    };
    let score = mac_layer(f, 0, &spec, Quadrature::Trapezoid, Aggregation::Absolute).unwrap();
    assert_eq!(score, 0.0);
}

#[test]
fn mac_rejects_coarse_quadrature() {
    let spec = image_spec(5, 6, 0.5, 100.0, 3);
    let f = |g: &mut Graph<f64>, x| {
        let s = g.sum(x);
        Ok((s, vec![s]))
    };
    assert!(mac_layers(f, &spec, Quadrature::Trapezoid).is_err());
}

/// `F = v · (W x)`: every unit's conductance along any path is
/// `v_n · (W (x − x′))_n`.
#[test]
fn mac_matches_linear_net_oracle() {
    for seed in 0..3 {
        let spec = image_spec(seed, 6, 1.0, 100.0, 256);
        let mut rng = stream(seed, Purpose::Test, 500);
        let w = Tensor::from_fn(&[8, 36], |_| rng.random_range(-1.0..1.0));
        let v = Tensor::from_fn(&[1, 8], |_| rng.random_range(-1.0..1.0));
        let f = |g: &mut Graph<f64>, x| {
            let xc = g.reshape(x, &[36, 1])?;
            let wv = g.leaf(&w);
            let vv = g.leaf(&v);
            let y = g.matmul(wv, xc)?;
            let o = g.matmul(vv, y)?;
            Ok((g.sum(o), vec![y]))
        };
        let units = &mac_layers(f, &spec, Quadrature::Trapezoid).unwrap()[0];
        let dx: Vec<f64> = spec.target.data().iter().zip(spec.baseline.data()).map(|(a, b)| a - b).collect();
        let oracle: Vec<f64> = (0..8)
            .map(|n| v.data()[n] * (0..36).map(|i| w.data()[n * 36 + i] * dx[i]).sum::<f64>())
            .collect();
        for (a, o) in units.iter().zip(&oracle) {
            assert!((a - o).abs() <= 0.01 * o.abs(), "{a} vs {o}");
        }
        let total: f64 = oracle.iter().map(|o| o.abs()).sum();
        let score = Aggregation::Absolute.apply(units);
        assert!((score - total).abs() <= 0.01 * total);
    }
}

fn refinement_diffs(seed: u64, quad: Quadrature) -> Vec<Vec<f64>> {
    let net = ConvNet::random(seed, 8);
    let scores: Vec<Vec<f64>> = [16, 32, 64, 128, 256]
        .iter()
        .map(|&n| {
            let spec = image_spec(seed, 8, 0.5, 100.0, n);
            mac_layers(|g: &mut Graph<f64>, x| net.build(g, x), &spec, quad)
                .unwrap()
                .iter()
                .map(|u| Aggregation::Absolute.apply(u))
                .collect()
        })
        .collect();
    (0..scores[0].len())
        .map(|l| scores.windows(2).map(|w| (w[1][l] - w[0][l]).abs()).collect())
        .collect()
}

#[test]
fn mac_refinement_is_monotone() {
    for seed in 0..10 {
        for diffs in refinement_diffs(seed, Quadrature::Trapezoid) {
            for w in diffs.windows(2) {
                assert!(w[1] <= w[0], "seed {seed}: {diffs:?}");

            }
        }
    }
}

#[test]
fn scaling_the_output_scales_every_score() {
    let spec = image_spec(6, 8, 0.5, 100.0, 16);
    let mut net = ConvNet::random(6, 8);
    let base: Vec<f64> = mac_layers(|g: &mut Graph<f64>, x| net.build(g, x), &spec, Quadrature::Trapezoid)
        .unwrap()
        .iter()
        .map(|u| Aggregation::Absolute.apply(u))
        .collect();
    net.scale = 3.5;
    let scaled: Vec<f64> = mac_layers(|g: &mut Graph<f64>, x| net.build(g, x), &spec, Quadrature::Trapezoid)
        .unwrap()
        .iter()
        .map(|u| Aggregation::Absolute.apply(u))
        .collect();
    for (a, b) in base.iter().zip(&scaled) {
        assert!((b - 3.5 * a).abs() <= 1e-12 * b.abs().max(1.0));
    }
}
