use std::collections::HashMap;

use maskrestore::degrade::blur::reflect;
use maskrestore::degrade::dataset::{read_dataset, write_dataset};
use maskrestore::degrade::{
    add_gaussian_noise, gaussian_blur, gaussian_kernel, gen_clean, jpeg_artifact, make_pair_batch,
    pepper, poisson, speckle, DegradationKind, DegradationSpec, Sampler, BLUR_KERNEL,
};
use maskrestore::Tensor;

fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.numel() as f64;
    10.0 * (1.0 / mse).log10()
}

fn gray(v: f64) -> Tensor<f64> {
    Tensor::full(&[3, 64, 64], v)
}

#[test]
fn clean_images_are_deterministic_and_bounded() {
    for seed in 0..5 {
        let a = gen_clean(seed, 32).unwrap();
        assert_eq!(a, gen_clean(seed, 32).unwrap());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    assert_ne!(gen_clean(1, 32).unwrap(), gen_clean(2, 32).unwrap());
}

/// Power of the luma DFT at radial frequencies above a quarter of the
/// sampling rate, relative to total AC power.
fn high_band_fraction(img: &Tensor<f64>) -> f64 {
    let n = img.shape()[1];
    let d = img.data();
    let luma: Vec<f64> = (0..n * n)
        .map(|i| 0.299 * d[i] + 0.587 * d[n * n + i] + 0.114 * d[2 * n * n + i])
        .collect();
    let (mut high, mut total) = (0.0, 0.0);
    for v in 0..n {
        for u in 0..n {
            if u == 0 && v == 0 {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..n {
                for x in 0..n {
                    let a = -2.0 * std::f64::consts::PI * ((u * x + v * y) as f64) / n as f64;
                    re += luma[y * n + x] * a.cos();
                    im += luma[y * n + x] * a.sin();
                }
            }
            let p = re * re + im * im;
            let fu = (u.min(n - u) as f64) / n as f64;
            let fv = (v.min(n - v) as f64) / n as f64;
            if (fu * fu + fv * fv).sqrt() > 0.25 {
                high += p;
            }
            total += p;
        }
    }
    high / total
}

#[test]
fn clean_images_carry_high_frequency_energy() {
    for seed in 0..3 {
        let f = high_band_fraction(&gen_clean(seed, 32).unwrap());
        assert!(f > 1e-4, "seed {seed}: {f}");
    }
}

#[test]
fn gaussian_noise_has_requested_std() {
    let img = gray(0.5);
    let noisy = add_gaussian_noise(&img, 15.0, 4).unwrap();
    let diffs: Vec<f64> = noisy.data().iter().zip(img.data()).map(|(a, b)| (a - b) * 255.0).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
    assert!((var.sqrt() - 15.0).abs() < 0.5, "{}", var.sqrt());
    assert!(add_gaussian_noise(&img, 0.0, 0).is_err());
    assert!(add_gaussian_noise(&img, 51.0, 0).is_err());
    let white = add_gaussian_noise(&gray(1.0), 50.0, 1).unwrap();
    assert!(white.data().iter().all(|&v| v <= 1.0));
}

#[test]
fn blur_kernel_has_unit_mass() {
    for sigma in [0.1, 0.5, 1.0, 2.0, 3.1] {
        let k = gaussian_kernel(BLUR_KERNEL, sigma).unwrap();
        let mass: f64 = k.iter().sum();
        assert!((mass - 1.0).abs() < 1e-9);
        let mass2: f64 = k.iter().flat_map(|a| k.iter().map(move |b| a * b)).sum();
        assert!((mass2 - 1.0).abs() < 1e-9);
    }
}

#[test]
fn blur_leaves_constant_images_alone() {
    let out = gaussian_blur(&gray(0.3), BLUR_KERNEL, 2.0).unwrap();
    assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
}

#[test]
fn tiny_sigma_blur_is_nearly_identity() {
    let img = gen_clean(3, 32).unwrap();
    let out = gaussian_blur(&img, BLUR_KERNEL, 0.1).unwrap();
    assert!(psnr(&img, &out) > 50.0);
}

#[test]
fn blur_matches_naive_2d_convolution() {
    let img = gen_clean(5, 32).unwrap();
    let out = gaussian_blur(&img, BLUR_KERNEL, 2.0).unwrap();
    let k = gaussian_kernel(BLUR_KERNEL, 2.0).unwrap();
    let r = (BLUR_KERNEL / 2) as isize;
    let d = img.data();
    for c in 0..3 {
        for y in 0..32isize {
            for x in 0..32isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = reflect(y + dy, 32);
                        let sx = reflect(x + dx, 32);
                        acc += k[(dy + r) as usize] * k[(dx + r) as usize] * d[c * 1024 + sy * 32 + sx];
                    }
                }
                let got = out.data()[c * 1024 + y as usize * 32 + x as usize];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
    assert!(gaussian_blur(&img, 14, 2.0).is_err());
    assert!(gaussian_blur(&img, BLUR_KERNEL, 0.05).is_err());
}

#[test]
fn jpeg_quality_100_is_nearly_lossless() {
    for seed in 0..3 {
        let img = gen_clean(seed, 32).unwrap();
        let out = jpeg_artifact(&img, 100).unwrap();
        assert!(psnr(&img, &out) >= 45.0, "{}", psnr(&img, &out));
    }
}

#[test]
fn jpeg_keeps_constant_images_within_dc_rounding() {
    use maskrestore::degrade::jpeg::{chroma_table, luma_table};
    let img = Tensor::<f64>::from_fn(&[3, 16, 16], |i| [0.2, 0.6, 0.9][i / 256]);
    for q in [30u32, 75, 100] {
        let out = jpeg_artifact(&img, q).unwrap();
        // Only the DC term survives; it moves by at most half a quantiser
        // step (DC gain is 8) in each of Y, Cb, Cr.
        let (qy, qc) = (luma_table(q)[0] as f64, chroma_table(q)[0] as f64);
        let bound = (qy / 16.0 + 1.772 * qc / 16.0) / 255.0 + 1e-9;
        for c in 0..3 {
            let plane = &out.data()[c * 256..(c + 1) * 256];
            assert!(plane.iter().all(|&v| (v - plane[0]).abs() < 1e-9));
            assert!((plane[0] - img.data()[c * 256]).abs() <= bound, "q={q} c={c}");
            if q == 100 {
                assert!((plane[0] - img.data()[c * 256]).abs() < 1.0 / 255.0);
            }
        }
    }
}

#[test]
fn lower_jpeg_quality_loses_more() {
    for seed in 0..3 {
        let img = gen_clean(seed, 32).unwrap();
        let lo = psnr(&img, &jpeg_artifact(&img, 20).unwrap());
        let hi = psnr(&img, &jpeg_artifact(&img, 90).unwrap());
        assert!(lo < hi, "{lo} {hi}");
    }
    assert!(jpeg_artifact(&gray(0.5), 0).is_err());
    assert!(jpeg_artifact(&gray(0.5), 101).is_err());
}

#[test]
fn pepper_alters_the_requested_fraction() {
    let img = gray(0.5);
    let d = 0.1;
    let out = pepper(&img, d, 8).unwrap();
    let hw = 64 * 64;
    let altered = (0..hw).filter(|&p| out.data()[p] != 0.5).count();
    for p in 0..hw {
        let v = out.data()[p];
        assert!(v == 0.5 || v == 0.0 || v == 1.0);
        assert_eq!(out.data()[hw + p], v);
    }
    let sigma = (d * (1.0 - d) * hw as f64).sqrt();
    assert!((altered as f64 - d * hw as f64).abs() < 3.0 * sigma, "{altered}");
    assert!(pepper(&img, 0.6, 0).is_err());
}

#[test]
fn multiplicative_and_count_noise_keep_black_black() {
    let black = gray(0.0);
    assert!(poisson(&black, 30.0, 1).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(speckle(&black, 0.5, 1).unwrap().data().iter().all(|&v| v == 0.0));
    let img = gen_clean(1, 32).unwrap();
    for out in [poisson(&img, 10.0, 2).unwrap(), speckle(&img, 1.0, 2).unwrap()] {
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(out, img);
    }
}

#[test]
fn every_kind_is_deterministic_and_bounded() {
    let img = gen_clean(9, 32).unwrap();
    for kind in DegradationKind::ALL {
        let (lo, hi) = kind.default_range();
        let spec = DegradationSpec::new(kind, if kind == DegradationKind::Jpeg { 50.0 } else { hi.max(lo) }, 77).unwrap();
        let a = spec.apply(&img).unwrap();
        assert_eq!(a, spec.apply(&img).unwrap(), "{kind}");
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)), "{kind}");
    }
}

#[test]
fn single_kind_mix_gives_that_kind() {
    let mix = [Sampler::default_for(DegradationKind::Jpeg)];
    let seeds: Vec<u64> = (0..20).collect();
    let pairs = make_pair_batch(&seeds, &mix, 16).unwrap();
    assert!(pairs.iter().all(|p| p.spec.kind == DegradationKind::Jpeg));
    assert_eq!(pairs, make_pair_batch(&seeds, &mix, 16).unwrap());
    assert!(make_pair_batch(&seeds, &[], 16).is_err());
}

#[test]
fn three_kind_mix_is_uniform() {
    let mix = [
        Sampler::default_for(DegradationKind::GaussianNoise),
        Sampler::default_for(DegradationKind::GaussianBlur),
        Sampler::default_for(DegradationKind::Jpeg),
    ];
    let n = 3000;
    let seeds: Vec<u64> = (0..n as u64).collect();
    let pairs = make_pair_batch(&seeds, &mix, 8).unwrap();
    let mut counts: HashMap<DegradationKind, usize> = HashMap::new();
    for p in &pairs {
        *counts.entry(p.spec.kind).or_default() += 1;
    }
    let p = 1.0 / 3.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for s in &mix {
        let c = counts[&s.kind] as f64;
        assert!((c - n as f64 * p).abs() < 3.0 * sigma, "{}: {c}", s.kind);
    }
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mix = [
        Sampler::default_for(DegradationKind::GaussianNoise),
        Sampler::default_for(DegradationKind::Jpeg),
    ];
    let pairs = make_pair_batch(&[1, 2, 3], &mix, 16).unwrap();
    write_dataset(dir.path(), &pairs).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in pairs.iter().zip(&back) {
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.seed, b.seed);
        for (x, y) in a.clean.data().iter().zip(b.clean.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
    std::fs::write(dir.path().join("manifest.tsv"), "a\tb\train\t1\t2\t3\n").unwrap();
    let err = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("rain") && err.contains("manifest.tsv:1"), "{err}");
}
