//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use fbsdiff_core::diffusion::{ddim_invert_step, ddim_sample_step};
use fbsdiff_core::pipeline::gaussian_noise;
use fbsdiff_core::{
    AnalyticGaussianDenoiser, Band, Conditioning, Denoiser, LatentFeature, Schedule, Shape,
};

fn alpha(k: usize) -> f64 {
    if k == 0 {
        (0.5f64).sqrt()
    } else {
        1.0
    }
}

/// Literal 1D orthonormal DCT-II sum.
pub fn dct1d_literal(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(l, v)| v * (PI * (2 * l + 1) as f64 * k as f64 / (2 * n) as f64).cos())
                .sum();
            (2.0 / n as f64).sqrt() * alpha(k) * sum
        })
        .collect()
}

/// Literal 1D inverse (DCT-III) sum.
pub fn idct1d_literal(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|l| {
            (0..n)
                .map(|k| {
                    (2.0 / n as f64).sqrt()
                        * alpha(k)
                        * y[k]
                        * (PI * (2 * l + 1) as f64 * k as f64 / (2 * n) as f64).cos()
                })
                .sum()
        })
        .collect()
}

fn cos_term(i: usize, u: usize, n: usize) -> f64 {
    (PI * (2 * i + 1) as f64 * u as f64 / (2 * n) as f64).cos()
}

/// Literal double sum for one channel plane of the 2D DCT-II.
pub fn dct2d_literal(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let scale = 2.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    s += plane[i * w + j] * cos_term(i, u, h) * cos_term(j, v, w);
                }
            }
            out[u * w + v] = scale * alpha(u) * alpha(v) * s;
        }
    }
    out
}

/// Literal double sum for one channel plane of the 2D inverse.
pub fn idct2d_literal(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let scale = 2.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for u in 0..h {
                for v in 0..w {
                    s += alpha(u) * alpha(v) * plane[u * w + v] * cos_term(i, u, h) * cos_term(j, v, w);
                }
            }
            out[i * w + j] = scale * s;
        }
    }
    out
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Absolute-threshold membership by enumeration with integer thresholds.
pub fn abs_member(band: Band, i: usize, j: usize) -> bool {
    let s = (i + j) as i64;
    match band {
        Band::Low { cutoff } => s <= cutoff as i64,
        Band::High { cutoff } => s > cutoff as i64,
        Band::Mid { lower, upper } => s > lower as i64 && s <= upper as i64,
    }
}

/// Percentile membership in exact integer arithmetic; thresholds carry at
/// most one decimal place.
pub fn pct_member(band: Band, k: usize, len: usize) -> bool {
    let tenths = |p: f64| (p * 10.0).round() as i64;
    let lhs = 1000 * k as i64;
    let rhs = |p: f64| tenths(p) * len as i64;
    match band {
        Band::Low { cutoff } => lhs <= rhs(cutoff),
        Band::High { cutoff } => lhs > rhs(cutoff),
        Band::Mid { lower, upper } => lhs > rhs(lower) && lhs <= rhs(upper),
    }
}

pub fn rel_err(a: &LatentFeature, b: &LatentFeature) -> f64 {
    a.zip_map(b, |x, y| x - y).unwrap().frobenius_norm() / b.frobenius_norm()
}

/// Source latent drawn from the toy null-text prior `N(0, I)`.
pub fn toy_source(shape: Shape, seed: u64) -> LatentFeature {
    gaussian_noise(shape, seed ^ 0x5eed_0f50)
}

pub fn toy(shape: Shape) -> (LatentFeature, Schedule, AnalyticGaussianDenoiser) {
    let schedule = Schedule::default_with_steps(50).unwrap();
    let d = AnalyticGaussianDenoiser::toy(schedule.clone(), shape);
    (toy_source(shape, 11), schedule, d)
}

/// Null-text DDIM inversion over the `steps` grid followed by null-text
/// sampling back down the same grid.
pub fn invert_then_sample<D: Denoiser>(
    z0: &LatentFeature,
    steps: usize,
    schedule: &Schedule,
    d: &mut D,
) -> LatentFeature {
    let g = schedule.with_steps(steps).unwrap();
    let tau = g.tau().to_vec();
    let mut z = z0.clone();
    for w in tau.windows(2) {
        let eps = d.predict_eps(&z, w[0].max(1), Conditioning::NullText).unwrap();
        z = ddim_invert_step(&z, w[0], w[1], &eps, &g).unwrap();
    }
    for w in tau.windows(2).rev() {
        let eps = d.predict_eps(&z, w[1], Conditioning::NullText).unwrap();
        z = ddim_sample_step(&z, w[1], w[0], &eps, &g).unwrap();
    }
    z
}

/// The inversion trajectory `z_0..=z_T` on the `steps` grid.
pub fn inversion_trajectory<D: Denoiser>(
    z0: &LatentFeature,
    steps: usize,
    schedule: &Schedule,
    d: &mut D,
) -> Vec<LatentFeature> {
    let g = schedule.with_steps(steps).unwrap();
    let tau = g.tau().to_vec();
    let mut out = vec![z0.clone()];
    for w in tau.windows(2) {
        let z = out.last().unwrap();
        let eps = d.predict_eps(z, w[0].max(1), Conditioning::NullText).unwrap();
        out.push(ddim_invert_step(z, w[0], w[1], &eps, &g).unwrap());
    }
    out
}
