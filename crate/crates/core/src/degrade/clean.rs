//! Procedural clean images and texture-class samples.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Rng};
use crate::tensor::Tensor;

/// Frequency bands of the added sinusoids, in cycles per pixel.
pub const BANDS: [(f64, f64); 3] = [(0.02, 0.05), (0.08, 0.15), (0.25, 0.4)];

fn check_size(size: usize) -> Result<()> {
    if size == 0 || size % 8 != 0 {
        return Err(Error::invalid(
            "gen_clean",
            format!("size {size} is not a positive multiple of 8"),
        ));
    }
    Ok(())
}

fn color(rng: &mut Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

struct Canvas {
    size: usize,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas {
            size,
            px: vec![[0.0; 3]; size * size],
        }
    }

    fn into_tensor(self) -> Tensor<f64> {
        let n = self.size * self.size;
        let mut data = vec![0.0; 3 * n];
        for (i, p) in self.px.iter().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p[c].clamp(0.0, 1.0);
            }
        }
        Tensor::new(&[3, self.size, self.size], data).expect("canvas size")
    }

    fn gradient(&mut self, rng: &mut Rng) {
        let (a, b) = (color(rng), color(rng));
        let theta = rng.random_range(0.0..2.0 * PI);
        let (cx, cy) = (theta.cos(), theta.sin());
        let s = self.size as f64;
        // Project onto the direction and normalise to [0, 1].
        let span = (cx.abs() + cy.abs()) * s;
        let lo = (0.0f64).min(cx * s) + (0.0f64).min(cy * s);
        for y in 0..self.size {
            for x in 0..self.size {
                let t = ((x as f64 * cx + y as f64 * cy) - lo) / span;
                let p = &mut self.px[y * self.size + x];
                for c in 0..3 {
                    p[c] = a[c] + (b[c] - a[c]) * t;
                }
            }
        }
    }

    /// Star-shaped polygon blended over the canvas.
    fn polygon(&mut self, rng: &mut Rng) {
        let s = self.size as f64;
        let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let radius = rng.random_range(0.15 * s..0.45 * s);
        let n = rng.random_range(3..7);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        angles.sort_by(f64::total_cmp);
        let verts: Vec<(f64, f64)> = angles
            .iter()
            .map(|&a| {
                let r = radius * rng.random_range(0.5..1.0);
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        let fill = color(rng);
        let alpha = rng.random_range(0.6..1.0);
        for y in 0..self.size {
            for x in 0..self.size {
                if inside(&verts, x as f64 + 0.5, y as f64 + 0.5) {
                    let p = &mut self.px[y * self.size + x];
                    for c in 0..3 {
                        p[c] = (1.0 - alpha) * p[c] + alpha * fill[c];
                    }
                }
            }
        }
    }

    /// Oriented sinusoid in `band`, optionally confined to a disc.
    fn sinusoid(&mut self, rng: &mut Rng, band: (f64, f64), amplitude: f64, local: bool) {
        let f = rng.random_range(band.0..band.1);
        let theta = rng.random_range(0.0..PI);
        let phase = rng.random_range(0.0..2.0 * PI);
        let tint = color(rng);
        let s = self.size as f64;
        let (dx, dy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let r2 = (rng.random_range(0.25..0.5) * s).powi(2);
        let (kx, ky) = (2.0 * PI * f * theta.cos(), 2.0 * PI * f * theta.sin());
        for y in 0..self.size {
            for x in 0..self.size {
                let (xf, yf) = (x as f64, y as f64);
                if local && (xf - dx).powi(2) + (yf - dy).powi(2) > r2 {
                    continue;
                }
                let v = amplitude * (kx * xf + ky * yf + phase).sin();
                let p = &mut self.px[y * self.size + x];
                for c in 0..3 {
                    p[c] += v * (0.5 + tint[c]);
                }
            }
        }
    }
}

/// Even-odd point-in-polygon test.
fn inside(verts: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// A `[3,size,size]` image in `[0,1]`: a colour gradient, a few polygons and
/// sinusoidal textures in low, middle and high frequency bands.
pub fn gen_clean(seed: u64, size: usize) -> Result<Tensor<f64>> {
    check_size(size)?;
    let mut rng = stream(seed, Purpose::CleanImage, 0);
    let mut canvas = Canvas::new(size);
    canvas.gradient(&mut rng);
    for _ in 0..rng.random_range(2..5) {
        canvas.polygon(&mut rng);
    }
    for (b, &band) in BANDS.iter().enumerate() {
        let amplitude = rng.random_range(0.04..0.1);
        canvas.sinusoid(&mut rng, band, amplitude, b > 0);
    }
    Ok(canvas.into_tensor())
}

/// Flat colour on the left half, high-frequency texture on the right.
pub fn gen_half_textured(seed: u64, size: usize) -> Result<Tensor<f64>> {
    check_size(size)?;
    let mut rng = stream(seed, Purpose::CleanImage, 1);
    let base = color(&mut rng).map(|v| 0.25 + 0.5 * v);
    let mut canvas = Canvas::new(size);
    canvas.px.iter_mut().for_each(|p| *p = base);
    let mut tex = Canvas::new(size);
    tex.px.iter_mut().for_each(|p| *p = base);
    for _ in 0..3 {
        tex.sinusoid(&mut rng, BANDS[2], 0.12, false);
    }
    tex.sinusoid(&mut rng, BANDS[1], 0.08, false);
    for y in 0..size {
        for x in size / 2..size {
            canvas.px[y * size + x] = tex.px[y * size + x];
        }
    }
    Ok(canvas.into_tensor())
}

pub const TEXTURE_CLASSES: usize = 8;

/// A sample of procedural texture class `class` (0..8): stripes in three
/// orientations, checkerboard, dot grid, rings, smooth blobs and flat
/// polygons. Colours, frequency and phase vary with `seed`.
pub fn texture_class_image(class: usize, seed: u64, size: usize) -> Result<Tensor<f64>> {
    check_size(size)?;
    if class >= TEXTURE_CLASSES {
        return Err(Error::invalid("texture_class_image", format!("class {class} >= {TEXTURE_CLASSES}")));
    }
    let mut rng = stream(seed, Purpose::Texture, class as u64);
    let (a, b) = (color(&mut rng), color(&mut rng));
    let f = rng.random_range(0.08..0.2);
    let phase = rng.random_range(0.0..2.0 * PI);
    let s = size as f64;
    let (cx, cy) = (rng.random_range(0.3 * s..0.7 * s), rng.random_range(0.3 * s..0.7 * s));
    let blobs: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(0.1 * s..0.25 * s)))
        .collect();
    let mut canvas = Canvas::new(size);
    if class == 7 {
        canvas.px.iter_mut().for_each(|p| *p = a);
        for _ in 0..3 {
            canvas.polygon(&mut rng);
        }
        return Ok(canvas.into_tensor());
    }
    let w = 2.0 * PI * f;
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            let t = match class {
                0 => (w * yf + phase).sin(),
                1 => (w * xf + phase).sin(),
                2 => (w * (xf + yf) / 2f64.sqrt() + phase).sin(),
                3 => (w * xf + phase).sin().signum() * (w * yf).sin().signum(),
                4 => {
                    let d = (w * xf + phase).sin() * (w * yf + phase).sin();
                    if d > 0.5 { 1.0 } else { -1.0 }
                }
                5 => (w * ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt() + phase).sin(),
                _ => {
                    let v: f64 = blobs
                        .iter()
                        .map(|&(bx, by, r)| (-((xf - bx).powi(2) + (yf - by).powi(2)) / (2.0 * r * r)).exp())
                        .sum();
                    (2.0 * v - 1.0).tanh()
                }
            };
            let m = 0.5 + 0.5 * t;
            let p = &mut canvas.px[y * size + x];
            for c in 0..3 {
                p[c] = a[c] + (b[c] - a[c]) * m;
            }
        }
    }
    Ok(canvas.into_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_must_be_multiples_of_8() {
        assert!(gen_clean(0, 20).is_err());
        assert!(gen_clean(0, 0).is_err());
        assert_eq!(gen_clean(0, 16).unwrap().shape(), &[3, 16, 16]);
    }

    #[test]
    fn half_textured_left_is_flat() {
        let img = gen_half_textured(3, 32).unwrap();
        let d = img.data();
        for c in 0..3 {
            let first = d[c * 1024];
            for y in 0..32 {
                for x in 0..16 {
                    assert_eq!(d[c * 1024 + y * 32 + x], first);
                }
            }
        }
    }

    #[test]
    fn texture_classes_are_distinct() {
        let imgs: Vec<_> = (0..TEXTURE_CLASSES)
            .map(|c| texture_class_image(c, 1, 32).unwrap())
            .collect();
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                assert_ne!(imgs[i], imgs[j]);
            }
        }
        assert!(texture_class_image(8, 0, 32).is_err());
    }
}
