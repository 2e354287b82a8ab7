//! Synthetic elliptical-blob segmentation benchmark.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::scribble::{synthesize_scribble, ScribbleStyle};
use super::{BinaryMask, Image, ImageSample};
use crate::error::{Error, Result};

pub const IMAGE_CHANNELS: usize = 3;
const MIN_FG: f64 = 0.05;
const MAX_FG: f64 = 0.40;
const MAX_ATTEMPTS: usize = 1000;

/// Generates `n` samples; sample `i` is a pure function of `seed + i`.
pub fn generate_blob_dataset(n: usize, height: usize, width: usize, seed: u64) -> Result<Vec<ImageSample>> {
    if n == 0 {
        return Err(Error::Argument("dataset size must be at least 1".into()));
    }
    if height < 16 || width < 16 {
        return Err(Error::Argument(format!(
            "image size {height}x{width} is below the 16x16 minimum"
        )));
    }
    (0..n)
        .into_par_iter()
        .map(|i| generate_sample(i, height, width, seed.wrapping_add(i as u64)))
        .collect()
}

fn generate_sample(index: usize, h: usize, w: usize, seed: u64) -> Result<ImageSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let mask = blob_mask(&mut rng, h, w);
        let frac = mask.foreground_fraction();
        if !(MIN_FG..=MAX_FG).contains(&frac) {
            continue;
        }
        let Ok(scribble) = synthesize_scribble(&mask, rng.random(), ScribbleStyle::Curve) else {
            continue;
        };
        let image = render_image(&mut rng, &mask);
        return ImageSample::new(format!("blob_{index:05}"), image, mask, scribble);
    }
    Err(Error::DegenerateRegion(format!(
        "no valid blob layout for sample {index} after {MAX_ATTEMPTS} attempts"
    )))
}

fn blob_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    let n_blobs = rng.random_range(1..=3usize);
    let side = h.min(w) as f64;
    let mut data = vec![0u8; h * w];
    for _ in 0..n_blobs {
        let cy = rng.random_range(0.2..0.8) * h as f64;
        let cx = rng.random_range(0.2..0.8) * w as f64;
        let ra = rng.random_range(0.08..0.25) * side;
        let rb = rng.random_range(0.08..0.25) * side;
        let theta = rng.random_range(0.0..PI);
        let harmonics: Vec<(f64, f64, f64)> = (2..=4)
            .map(|k| (k as f64, rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI)))
            .collect();
        let (s, c) = theta.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let u = (c * dx + s * dy) / ra;
                let v = (-s * dx + c * dy) / rb;
                let phi = v.atan2(u);
                let radius = 1.0 + harmonics.iter().map(|&(k, a, p)| a * (k * phi + p).cos()).sum::<f64>();
                if (u * u + v * v).sqrt() <= radius {
                    data[y * w + x] = 1;
                }
            }
        }
    }
    BinaryMask::new(h, w, data).expect("mask shape")
}

fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .zip(&kernel)
                .map(|(d, k)| k * src[y * w + clamp(x as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .zip(&kernel)
                .map(|(d, k)| k * tmp[clamp(y as isize + d, h) * w + x])
                .sum();
        }
    }
    out
}

/// Blurred blob intensity over a textured background plus pixel noise,
/// quantized to 8-bit levels so it survives a PNG round trip.
fn render_image(rng: &mut ChaCha8Rng, mask: &BinaryMask) -> Image {
    let (h, w) = mask.hw();
    let sigma = rng.random_range(1.0..2.0);
    let soft = gaussian_blur(
        &mask.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
        h,
        w,
        sigma,
    );
    let contrast = rng.random_range(0.12..0.28);
    let base: Vec<f64> = (0..IMAGE_CHANNELS).map(|_| rng.random_range(0.3..0.6)).collect();
    let delta: Vec<f64> = (0..IMAGE_CHANNELS)
        .map(|c| {
            let sign = if c == 0 || rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * contrast * rng.random_range(0.5..1.0)
        })
        .collect();
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            [
                rng.random_range(0.02..0.05),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    let noise = Normal::new(0.0, 0.03).expect("valid sigma");
    let mut data = Vec::with_capacity(IMAGE_CHANNELS * h * w);
    for c in 0..IMAGE_CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let texture: f64 = waves
                    .iter()
                    .map(|&[a, fy, fx, p]| a * (2.0 * PI * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64) + p).sin())
                    .sum();
                let v = base[c] + delta[c] * soft[y * w + x] + texture + noise.sample(rng);
                data.push(((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32);
            }
        }
    }
    Image::new(IMAGE_CHANNELS, h, w, data).expect("image shape")
}
