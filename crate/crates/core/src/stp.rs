//! Spatial transformation pool: a fixed random rotation, flips, mirror
//! expansion and crop-resize applied to guiding features so that their
//! spatial layout is scrambled while their local statistics survive.
//!
//! Operations run in this order: rotate, horizontal flip, vertical flip,
//! mirror-expand to `3h' × 3w'`, crop, resize back to the input `h × w`.
//! `h' × w'` is the shape after rotation (swapped for 90° and 270°), and the
//! crop ranges `[h', 3h'] × [w', 3w']` are measured on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{nearest_source, LatentFeature, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    #[serde(rename = "0")]
    R0,
    #[serde(rename = "90")]
    R90,
    #[serde(rename = "180")]
    R180,
    #[serde(rename = "270")]
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    fn swaps_axes(self) -> bool {
        matches!(self, Rotation::R90 | Rotation::R270)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeKernel {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpatialTransformParams {
    pub rotation: Rotation,
    pub hflip: bool,
    pub vflip: bool,
    pub crop_top: usize,
    pub crop_left: usize,
    pub crop_h: usize,
    pub crop_w: usize,
}

impl SpatialTransformParams {
    /// No rotation or flips; crop is the centre tile of the expansion.
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            rotation: Rotation::R0,
            hflip: false,
            vflip: false,
            crop_top: height,
            crop_left: width,
            crop_h: height,
            crop_w: width,
        }
    }

    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let rotation = Rotation::ALL[rng.random_range(0..4)];
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        let (rh, rw) = rotated_dims(rotation, height, width);
        let crop_h = rng.random_range(rh..=3 * rh);
        let crop_w = rng.random_range(rw..=3 * rw);
        let crop_top = rng.random_range(0..=3 * rh - crop_h);
        let crop_left = rng.random_range(0..=3 * rw - crop_w);
        Self {
            rotation,
            hflip,
            vflip,
            crop_top,
            crop_left,
            crop_h,
            crop_w,
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let (rh, rw) = rotated_dims(self.rotation, height, width);
        let ok = (rh..=3 * rh).contains(&self.crop_h)
            && (rw..=3 * rw).contains(&self.crop_w)
            && self.crop_top + self.crop_h <= 3 * rh
            && self.crop_left + self.crop_w <= 3 * rw;
        if !ok {
            return Err(Error::Config(format!(
                "spatial transform {self:?} does not fit a {height}x{width} feature"
            )));
        }
        Ok(())
    }
}

fn rotated_dims(rotation: Rotation, h: usize, w: usize) -> (usize, usize) {
    if rotation.swaps_axes() {
        (w, h)
    } else {
        (h, w)
    }
}

/// Draws transform parameters from a ChaCha8 stream seeded with `seed`.
pub fn stp_sample(height: usize, width: usize, seed: u64) -> SpatialTransformParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpatialTransformParams::sample(height, width, &mut rng)
}

/// One channel plane with its own dimensions.
#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(f(i, j));
            }
        }
        Self { h, w, data }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.w + j]
    }

    fn rotate(&self, rotation: Rotation) -> Self {
        let (h, w) = (self.h, self.w);
        match rotation {
            Rotation::R0 => self.clone(),
            // Counter-clockwise quarter turn.
            Rotation::R90 => Plane::from_fn(w, h, |i, j| self.at(j, w - 1 - i)),
            Rotation::R180 => Plane::from_fn(h, w, |i, j| self.at(h - 1 - i, w - 1 - j)),
            Rotation::R270 => Plane::from_fn(w, h, |i, j| self.at(h - 1 - j, i)),
        }
    }

    fn hflip(&self) -> Self {
        Plane::from_fn(self.h, self.w, |i, j| self.at(i, self.w - 1 - j))
    }

    fn vflip(&self) -> Self {
        Plane::from_fn(self.h, self.w, |i, j| self.at(self.h - 1 - i, j))
    }

    fn mirror_expand(&self) -> Self {
        Plane::from_fn(3 * self.h, 3 * self.w, |i, j| {
            self.at(mirror_index(i, self.h), mirror_index(j, self.w))
        })
    }

    fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        Plane::from_fn(h, w, |i, j| self.at(top + i, left + j))
    }

    fn resize(&self, h: usize, w: usize, kernel: ResizeKernel) -> Self {
        match kernel {
            ResizeKernel::Nearest => Plane::from_fn(h, w, |i, j| {
                self.at(nearest_source(i, self.h, h), nearest_source(j, self.w, w))
            }),
            ResizeKernel::Bilinear => {
                let rows: Vec<(usize, usize, f64)> =
                    (0..h).map(|i| bilinear_taps(i, self.h, h)).collect();
                let cols: Vec<(usize, usize, f64)> =
                    (0..w).map(|j| bilinear_taps(j, self.w, w)).collect();
                Plane::from_fn(h, w, |i, j| {
                    let (r0, r1, fr) = rows[i];
                    let (c0, c1, fc) = cols[j];
                    let top = lerp(self.at(r0, c0), self.at(r0, c1), fc);
                    let bottom = lerp(self.at(r1, c0), self.at(r1, c1), fc);
                    lerp(top, bottom, fr)
                })
            }
        }
    }
}

/// Symmetric reflection into a 3×3 tiling: the centre tile is the original,
/// neighbouring tiles are mirrored so shared edges repeat the border value.
fn mirror_index(e: usize, n: usize) -> usize {
    let (tile, offset) = (e / n, e % n);
    if tile == 1 {
        offset
    } else {
        n - 1 - offset
    }
}

/// Half-pixel-centre source taps for output index `dst`.
fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Linear interpolation clamped to the endpoint range, so rounding can never
/// push a value outside `[min(a,b), max(a,b)]`.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (a + (b - a) * t).clamp(a.min(b), a.max(b))
}

/// Mirror-expands every channel of `z` to `3h × 3w`.
pub fn mirror_expand(z: &LatentFeature) -> LatentFeature {
    map_planes(z, |p| p.mirror_expand())
}

fn map_planes(z: &LatentFeature, f: impl Fn(&Plane) -> Plane) -> LatentFeature {
    let mut out = Vec::with_capacity(z.data().len());
    let mut dims = (0, 0);
    for c in 0..z.channels() {
        let p = Plane {
            h: z.height(),
            w: z.width(),
            data: z.channel(c).to_vec(),
        };
        let q = f(&p);
        dims = (q.h, q.w);
        out.extend(q.data);
    }
    let shape = Shape {
        channels: z.channels(),
        height: dims.0,
        width: dims.1,
    };
    LatentFeature::from_parts_unchecked(shape, out)
}

/// Applies the transform chain; the output has the input's shape.
pub fn stp_apply(
    z: &LatentFeature,
    params: &SpatialTransformParams,
    kernel: ResizeKernel,
) -> Result<LatentFeature> {
    let (h, w) = (z.height(), z.width());
    params.validate(h, w)?;
    Ok(map_planes(z, |p| {
        let mut q = p.rotate(params.rotation);
        if params.hflip {
            q = q.hflip();
        }
        if params.vflip {
            q = q.vflip();
        }
        q.mirror_expand()
            .crop(params.crop_top, params.crop_left, params.crop_h, params.crop_w)
            .resize(h, w, kernel)
    }))
}
