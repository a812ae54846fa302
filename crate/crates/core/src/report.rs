//! Band-energy and band-correlation measurements on DCT spectra.
//!
//! A [`BandPartition`] splits a 2D spectrum into low, mid and high bands with
//! two cutoffs `lower ≤ upper`:
//!
//! * absolute cutoffs compare the coordinate sum `u + v`:
//!   low `u+v ≤ lower`, high `u+v > upper`, mid otherwise;
//! * percentile cutoffs use the axis-proportional rectangle
//!   `R(p) = {100u ≤ p·h and 100v ≤ p·w}`: low `R(lower)`, high outside
//!   `R(upper)`, mid otherwise.
//!
//! The partition derived from a [`BandSpec`] is chosen so that the band the
//! spec substitutes always contains the matching report band.

use serde::{Deserialize, Serialize};

use crate::dct::Spectrum;
use crate::error::{Error, Result};
use crate::masks::{Band, BandSpec, ThresholdKind};
use crate::tensor::FeatureMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandClass {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPartition {
    pub kind: ThresholdKind,
    pub lower: f64,
    pub upper: f64,
}

impl BandPartition {
    pub fn new(kind: ThresholdKind, lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower <= upper) {
            return Err(Error::InvalidBand(format!(
                "partition needs finite lower <= upper, got ({lower}, {upper})"
            )));
        }
        if kind == ThresholdKind::Percentile && !(0.0 <= lower && upper <= 100.0) {
            return Err(Error::InvalidBand(format!(
                "percentile partition ({lower}, {upper}) outside [0, 100]"
            )));
        }
        Ok(Self { kind, lower, upper })
    }

    /// Low and high bands split at the cutoff; mid bands keep their edges.
    pub fn for_spec(spec: &BandSpec) -> Self {
        let (lower, upper) = match spec.band() {
            Band::Low { cutoff } | Band::High { cutoff } => (cutoff, cutoff),
            Band::Mid { lower, upper } => (lower, upper),
        };
        Self {
            kind: spec.kind(),
            lower,
            upper,
        }
    }

    pub fn classify(&self, u: usize, v: usize, h: usize, w: usize) -> BandClass {
        let (in_low, in_upper) = match self.kind {
            ThresholdKind::Absolute => {
                let s = (u + v) as f64;
                (s <= self.lower, s <= self.upper)
            }
            ThresholdKind::Percentile => {
                let inside = |p: f64| {
                    100.0 * u as f64 <= p * h as f64 && 100.0 * v as f64 <= p * w as f64
                };
                (inside(self.lower), inside(self.upper))
            }
        };
        if in_low {
            BandClass::Low
        } else if in_upper {
            BandClass::Mid
        } else {
            BandClass::High
        }
    }

    pub fn mask(&self, class: BandClass, h: usize, w: usize) -> FeatureMask {
        FeatureMask::from_fn(h, w, |u, v| self.classify(u, v, h, w) == class)
    }
}

/// Summed squared coefficients per band.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BandEnergies {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl BandEnergies {
    pub fn total(&self) -> f64 {
        self.low + self.mid + self.high
    }

    /// `[low, mid, high]` as fractions of the total; all zero for a zero spectrum.
    pub fn fractions(&self) -> [f64; 3] {
        let total = self.total();
        if total == 0.0 {
            return [0.0; 3];
        }
        [self.low / total, self.mid / total, self.high / total]
    }

    pub fn get(&self, class: BandClass) -> f64 {
        match class {
            BandClass::Low => self.low,
            BandClass::Mid => self.mid,
            BandClass::High => self.high,
        }
    }
}

pub fn band_energies(s: &Spectrum, partition: &BandPartition) -> BandEnergies {
    let shape = s.shape();
    let (h, w) = (shape.height, shape.width);
    let classes: Vec<BandClass> = (0..h)
        .flat_map(|u| (0..w).map(move |v| (u, v)))
        .map(|(u, v)| partition.classify(u, v, h, w))
        .collect();
    let mut e = BandEnergies::default();
    for (k, &x) in s.data().iter().enumerate() {
        let sq = x * x;
        match classes[k % (h * w)] {
            BandClass::Low => e.low += sq,
            BandClass::Mid => e.mid += sq,
            BandClass::High => e.high += sq,
        }
    }
    e
}

/// Pearson correlation of the coefficients of `a` and `b` inside one band,
/// pooled over channels. Zero when either side has no variance in the band.
pub fn band_correlation(
    a: &Spectrum,
    b: &Spectrum,
    partition: &BandPartition,
    class: BandClass,
) -> Result<f64> {
    a.as_feature().ensure_same_shape(b.as_feature())?;
    let shape = a.shape();
    let mask = partition.mask(class, shape.height, shape.width);
    let plane = shape.plane();
    let pairs: Vec<(f64, f64)> = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .filter(|(k, _)| mask.data()[k % plane])
        .map(|(_, (&x, &y))| (x, y))
        .collect();
    Ok(pearson(&pairs))
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}
