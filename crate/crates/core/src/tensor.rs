//! Latent feature container and binary feature masks.
//!
//! A [`LatentFeature`] is an immutable `c × h × w` block of `f64` values laid
//! out row-major in `(channel, row, column)` order. Every constructor rejects
//! non-finite data, so any feature that exists is finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels < 1 || height < 2 || width < 2 {
            return Err(Error::InvalidShape(format!(
                "{channels}x{height}x{width} (need channels >= 1, height >= 2, width >= 2)"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature {
    shape: Shape,
    data: Vec<f64>,
}

impl LatentFeature {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_shape(Shape::new(channels, height, width)?, data)
    }

    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds a feature from `f(channel, row, column)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for i in 0..shape.height {
                for j in 0..shape.width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::from_shape(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.shape.height + i) * self.shape.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Elementwise map; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_shape(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two equally shaped features.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_shape(self.shape, data)
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Mismatch(format!(
                "feature shapes differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Constructor for internal kernels whose arithmetic cannot leave the
    /// finite range given finite inputs.
    pub(crate) fn from_parts_unchecked(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { shape, data }
    }
}

pub(crate) fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// A binary `h × w` mask, broadcast over channels when applied to a feature.
///
/// The same type carries spectral masks (which DCT coefficients to take) and
/// spatial masks (which pixels or latent positions to take).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl FeatureMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidMask(format!("empty mask {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::InvalidMask(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|i| (0..width).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| true)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| false)
    }

    /// Reads a mask from real values, which must all be exactly 0 or 1.
    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let data = values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if v == 1.0 {
                    Ok(true)
                } else if v == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::InvalidMask(format!(
                        "non-binary value {v} at flat index {k}"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, data)
    }

    /// Reads a single-channel feature as a mask.
    pub fn from_feature(feature: &LatentFeature) -> Result<Self> {
        if feature.channels() != 1 {
            return Err(Error::InvalidMask(format!(
                "mask tensor must have one channel, got {}",
                feature.channels()
            )));
        }
        Self::from_values(feature.height(), feature.width(), feature.data())
    }

    pub fn to_feature(&self) -> Result<LatentFeature> {
        LatentFeature::new(
            1,
            self.height,
            self.width,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn ensure_matches(&self, shape: Shape) -> Result<()> {
        if self.height != shape.height || self.width != shape.width {
            return Err(Error::Mismatch(format!(
                "mask {}x{} does not match feature {shape}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Nearest-neighbour downscale sampling source pixel centres.
    ///
    /// Output `(i, j)` takes source `(⌊(2i+1)·H / 2h⌋, ⌊(2j+1)·W / 2w⌋)`.
    pub fn downsample(&self, target_h: usize, target_w: usize) -> Result<Self> {
        if target_h == 0 || target_w == 0 {
            return Err(Error::InvalidMask(format!(
                "empty target size {target_h}x{target_w}"
            )));
        }
        if target_h > self.height || target_w > self.width {
            return Err(Error::InvalidMask(format!(
                "cannot upsample {}x{} mask to {target_h}x{target_w}",
                self.height, self.width
            )));
        }
        let rows: Vec<usize> = (0..target_h)
            .map(|i| nearest_source(i, self.height, target_h))
            .collect();
        let cols: Vec<usize> = (0..target_w)
            .map(|j| nearest_source(j, self.width, target_w))
            .collect();
        Ok(Self::from_fn(target_h, target_w, |i, j| {
            self.get(rows[i], cols[j])
        }))
    }
}

#[inline]
pub(crate) fn nearest_source(dst: usize, src_len: usize, dst_len: usize) -> usize {
    ((2 * dst + 1) * src_len) / (2 * dst_len)
}

/// Free-function form of [`FeatureMask::downsample`].
pub fn downsample_mask(src: &FeatureMask, target_h: usize, target_w: usize) -> Result<FeatureMask> {
    src.downsample(target_h, target_w)
}
