//! Orthonormal DCT-II and its inverse (DCT-III), per axis and in 2D.
//!
//! For a line of length `L` the forward transform is
//! `S[k] = sqrt(2/L) · c(k) · Σ_l z[l] · cos(π k (2l+1) / 2L)` with
//! `c(0) = 1/√2` and `c(k>0) = 1`. The 2D transform applies it along width
//! and height; its combined prefactor is `2/√(hw) · m(u) · m(v)`.
//!
//! Transforms are dense matrix products against a cached cosine basis per
//! length, which is exact to rounding for the latent sizes used here.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{LatentFeature, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Width,
    Height,
}

/// DCT coefficients with the same layout as the feature they came from.
/// Index `(c, 0, 0)` is the lowest frequency of channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum(LatentFeature);

impl Spectrum {
    pub fn from_feature(coefficients: LatentFeature) -> Self {
        Spectrum(coefficients)
    }

    pub fn as_feature(&self) -> &LatentFeature {
        &self.0
    }

    pub fn into_feature(self) -> LatentFeature {
        self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn get(&self, c: usize, u: usize, v: usize) -> f64 {
        self.0.get(c, u, v)
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }
}

/// Row-major `L × L` matrix with `B[k][l] = sqrt(2/L) c(k) cos(π k (2l+1) / 2L)`.
/// Orthogonal, so the inverse transform is multiplication by `Bᵀ`.
#[derive(Debug)]
pub struct CosineBasis {
    len: usize,
    matrix: Vec<f64>,
}

impl CosineBasis {
    fn build(len: usize) -> Self {
        let n = len as f64;
        let scale = (2.0 / n).sqrt();
        let mut matrix = Vec::with_capacity(len * len);
        for k in 0..len {
            let ck = if k == 0 { FRAC_1_SQRT_2 } else { 1.0 };
            for l in 0..len {
                let angle = PI * (k as f64) * (2 * l + 1) as f64 / (2.0 * n);
                matrix.push(scale * ck * angle.cos());
            }
        }
        Self { len, matrix }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn at(&self, k: usize, l: usize) -> f64 {
        self.matrix[k * self.len + l]
    }

    /// `out[k] = Σ_l B[k][l] · input[l·stride]`.
    fn forward_strided(&self, input: &[f64], stride: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[k * self.len..(k + 1) * self.len];
            *o = row
                .iter()
                .enumerate()
                .map(|(l, b)| b * input[l * stride])
                .sum();
        }
    }

    /// `out[l] = Σ_k B[k][l] · input[k·stride]`.
    fn inverse_strided(&self, input: &[f64], stride: usize, out: &mut [f64]) {
        for (l, o) in out.iter_mut().enumerate() {
            *o = (0..self.len)
                .map(|k| self.matrix[k * self.len + l] * input[k * stride])
                .sum();
        }
    }
}

fn basis_cache() -> &'static RwLock<HashMap<usize, Arc<CosineBasis>>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<CosineBasis>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Returns the shared basis for length `len`, building it on first use.
pub fn basis(len: usize) -> Arc<CosineBasis> {
    if let Some(b) = basis_cache()
        .read()
        .expect("dct basis cache poisoned")
        .get(&len)
    {
        return Arc::clone(b);
    }
    let mut cache = basis_cache().write().expect("dct basis cache poisoned");
    Arc::clone(
        cache
            .entry(len)
            .or_insert_with(|| Arc::new(CosineBasis::build(len))),
    )
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

fn transform_axis(data: &[f64], shape: Shape, axis: Axis, dir: Direction) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let mut out = vec![0.0; data.len()];
    match axis {
        Axis::Width => {
            let b = basis(w);
            for (src, dst) in data.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
                match dir {
                    Direction::Forward => b.forward_strided(src, 1, dst),
                    Direction::Inverse => b.inverse_strided(src, 1, dst),
                }
            }
        }
        Axis::Height => {
            let b = basis(h);
            let mut line = vec![0.0; h];
            for c in 0..shape.channels {
                let plane = c * h * w;
                for j in 0..w {
                    let src = &data[plane + j..];
                    match dir {
                        Direction::Forward => b.forward_strided(src, w, &mut line),
                        Direction::Inverse => b.inverse_strided(src, w, &mut line),
                    }
                    for (i, v) in line.iter().enumerate() {
                        out[plane + i * w + j] = *v;
                    }
                }
            }
        }
    }
    out
}

/// Orthonormal 2D DCT-II of every channel.
pub fn dct2d(z: &LatentFeature) -> Spectrum {
    let shape = z.shape();
    let rows = transform_axis(z.data(), shape, Axis::Width, Direction::Forward);
    let both = transform_axis(&rows, shape, Axis::Height, Direction::Forward);
    Spectrum(LatentFeature::from_parts_unchecked(shape, both))
}

/// Inverse of [`dct2d`].
pub fn idct2d(s: &Spectrum) -> LatentFeature {
    let shape = s.shape();
    let cols = transform_axis(s.data(), shape, Axis::Height, Direction::Inverse);
    let both = transform_axis(&cols, shape, Axis::Width, Direction::Inverse);
    LatentFeature::from_parts_unchecked(shape, both)
}

/// Orthonormal 1D DCT-II along `axis` for every line of every channel.
pub fn dct1d_axis(z: &LatentFeature, axis: Axis) -> Spectrum {
    let shape = z.shape();
    let data = transform_axis(z.data(), shape, axis, Direction::Forward);
    Spectrum(LatentFeature::from_parts_unchecked(shape, data))
}

/// Inverse of [`dct1d_axis`] along the same axis.
pub fn idct1d_axis(s: &Spectrum, axis: Axis) -> LatentFeature {
    let shape = s.shape();
    let data = transform_axis(s.data(), shape, axis, Direction::Inverse);
    LatentFeature::from_parts_unchecked(shape, data)
}

/// Builds a spectrum from raw coefficients (e.g. to synthesise a basis image).
pub fn spectrum_from_fn(shape: Shape, f: impl FnMut(usize, usize, usize) -> f64) -> Result<Spectrum> {
    Ok(Spectrum(LatentFeature::from_fn(shape, f)?))
}
