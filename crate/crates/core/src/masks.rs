//! Spectral band masks.
//!
//! Two families:
//!
//! * absolute 2D masks over the coordinate sum `i + j` of a 2D spectrum,
//! * percentile 1D mask pairs, one per axis, whose cutoff is a percentage of
//!   the axis length (`k ≤ pt·L/100` compared in real arithmetic, never
//!   rounded).
//!
//! Coordinates are zero-based, matching the DCT origin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureMask;

pub const DEFAULT_TH_LP: f64 = 80.0;
pub const DEFAULT_TH_HP: f64 = 5.0;
pub const DEFAULT_TH_MP: (f64, f64) = (5.0, 80.0);
pub const DEFAULT_PT_LP: f64 = 60.0;
pub const DEFAULT_PT_HP: f64 = 5.0;
pub const DEFAULT_PT_MP: (f64, f64) = (7.0, 50.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMode {
    Low,
    High,
    Mid,
}

impl std::str::FromStr for BandMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(BandMode::Low),
            "high" => Ok(BandMode::High),
            "mid" => Ok(BandMode::Mid),
            other => Err(Error::InvalidBand(format!("unknown band mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    /// Coordinate-sum units on a 2D spectrum.
    Absolute,
    /// Percent of each axis length, in `[0, 100]`.
    Percentile,
}

/// Which band to substitute and where its edges lie.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Band {
    Low { cutoff: f64 },
    High { cutoff: f64 },
    Mid { lower: f64, upper: f64 },
}

impl Band {
    pub fn mode(&self) -> BandMode {
        match self {
            Band::Low { .. } => BandMode::Low,
            Band::High { .. } => BandMode::High,
            Band::Mid { .. } => BandMode::Mid,
        }
    }

    fn thresholds(&self) -> Vec<f64> {
        match *self {
            Band::Low { cutoff } | Band::High { cutoff } => vec![cutoff],
            Band::Mid { lower, upper } => vec![lower, upper],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    kind: ThresholdKind,
    band: Band,
}

impl BandSpec {
    pub fn new(kind: ThresholdKind, band: Band) -> Result<Self> {
        let thresholds = band.thresholds();
        if let Some(t) = thresholds.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidBand(format!("threshold {t} is not finite")));
        }
        if kind == ThresholdKind::Percentile {
            if let Some(t) = thresholds.iter().find(|t| !(0.0..=100.0).contains(*t)) {
                return Err(Error::InvalidBand(format!(
                    "percentile {t} outside [0, 100]"
                )));
            }
        }
        if let Band::Mid { lower, upper } = band {
            if lower >= upper {
                return Err(Error::InvalidBand(format!(
                    "mid band needs lower < upper, got ({lower}, {upper})"
                )));
            }
        }
        Ok(Self { kind, band })
    }

    pub fn absolute(band: Band) -> Result<Self> {
        Self::new(ThresholdKind::Absolute, band)
    }

    pub fn percentile(band: Band) -> Result<Self> {
        Self::new(ThresholdKind::Percentile, band)
    }

    /// `th_lp = 80`, `th_hp = 5`, `(th_mp1, th_mp2) = (5, 80)`.
    pub fn default_absolute(mode: BandMode) -> Self {
        let band = match mode {
            BandMode::Low => Band::Low {
                cutoff: DEFAULT_TH_LP,
            },
            BandMode::High => Band::High {
                cutoff: DEFAULT_TH_HP,
            },
            BandMode::Mid => Band::Mid {
                lower: DEFAULT_TH_MP.0,
                upper: DEFAULT_TH_MP.1,
            },
        };
        Self {
            kind: ThresholdKind::Absolute,
            band,
        }
    }

    /// `pt_lp = 60`, `pt_hp = 5`, `(pt_mp1, pt_mp2) = (7, 50)`.
    pub fn default_percentile(mode: BandMode) -> Self {
        let band = match mode {
            BandMode::Low => Band::Low {
                cutoff: DEFAULT_PT_LP,
            },
            BandMode::High => Band::High {
                cutoff: DEFAULT_PT_HP,
            },
            BandMode::Mid => Band::Mid {
                lower: DEFAULT_PT_MP.0,
                upper: DEFAULT_PT_MP.1,
            },
        };
        Self {
            kind: ThresholdKind::Percentile,
            band,
        }
    }

    pub fn kind(&self) -> ThresholdKind {
        self.kind
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn mode(&self) -> BandMode {
        self.band.mode()
    }

    fn require(&self, kind: ThresholdKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidBand(format!(
                "expected {kind:?} thresholds, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Membership of coordinate-sum `s` in an absolute band.
#[inline]
pub fn absolute_passes(band: Band, s: usize) -> bool {
    let s = s as f64;
    match band {
        Band::Low { cutoff } => s <= cutoff,
        Band::High { cutoff } => s > cutoff,
        Band::Mid { lower, upper } => lower < s && s <= upper,
    }
}

/// Membership of index `k` on an axis of length `len` in a percentile band.
/// `k ≤ pt·len/100` is evaluated as `100·k ≤ pt·len` so integral cutoffs
/// such as `60·5/100 = 3` stay exact.
#[inline]
pub fn percentile_passes(band: Band, k: usize, len: usize) -> bool {
    let scaled = 100.0 * k as f64;
    let edge = |pt: f64| pt * len as f64;
    match band {
        Band::Low { cutoff } => scaled <= edge(cutoff),
        Band::High { cutoff } => scaled > edge(cutoff),
        Band::Mid { lower, upper } => edge(lower) < scaled && scaled <= edge(upper),
    }
}

/// 2D mask over coordinate sums; requires absolute thresholds.
pub fn make_mask_2d(spec: &BandSpec, h: usize, w: usize) -> Result<FeatureMask> {
    spec.require(ThresholdKind::Absolute)?;
    let band = spec.band;
    Ok(FeatureMask::from_fn(h, w, |i, j| absolute_passes(band, i + j)))
}

/// Per-axis mask pair `(mask_w, mask_h)`; requires percentile thresholds.
///
/// `mask_w` filters columns and is constant down each column; `mask_h`
/// filters rows and is constant along each row.
pub fn make_mask_pair_1d(spec: &BandSpec, h: usize, w: usize) -> Result<(FeatureMask, FeatureMask)> {
    spec.require(ThresholdKind::Percentile)?;
    let band = spec.band;
    let mask_w = FeatureMask::from_fn(h, w, |_, j| percentile_passes(band, j, w));
    let mask_h = FeatureMask::from_fn(h, w, |i, _| percentile_passes(band, i, h));
    Ok((mask_w, mask_h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pct(band: Band) -> BandSpec {
        BandSpec::percentile(band).unwrap()
    }

    fn abs(band: Band) -> BandSpec {
        BandSpec::absolute(band).unwrap()
    }

    #[test]
    fn low_pass_th2_on_4x4() {
        let m = make_mask_2d(&abs(Band::Low { cutoff: 2.0 }), 4, 4).unwrap();
        let ones: Vec<(usize, usize)> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|&(i, j)| m.get(i, j))
            .collect();
        assert_eq!(ones, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0)]);
    }

    #[test]
    fn mid_requires_ordered_bounds() {
        assert!(BandSpec::absolute(Band::Mid {
            lower: 5.0,
            upper: 5.0
        })
        .is_err());
        assert!(BandSpec::percentile(Band::Mid {
            lower: 50.0,
            upper: 7.0
        })
        .is_err());
    }

    #[test]
    fn percentile_range_checked() {
        assert!(BandSpec::percentile(Band::Low { cutoff: 100.5 }).is_err());
        assert!(BandSpec::percentile(Band::High { cutoff: -1.0 }).is_err());
        assert!(BandSpec::percentile(Band::Low { cutoff: f64::NAN }).is_err());
        assert!(BandSpec::percentile(Band::Low { cutoff: 0.0 }).is_ok());
    }

    #[test]
    fn wrong_kind_rejected() {
        let p = BandSpec::default_percentile(BandMode::Low);
        assert!(make_mask_2d(&p, 4, 4).is_err());
        let a = BandSpec::default_absolute(BandMode::Low);
        assert!(make_mask_pair_1d(&a, 4, 4).is_err());
    }

    #[test]
    fn pt60_on_width5_includes_column_3() {
        let (mw, mh) = make_mask_pair_1d(&pct(Band::Low { cutoff: 60.0 }), 5, 5).unwrap();
        for i in 0..5 {
            let row: Vec<bool> = (0..5).map(|j| mw.get(i, j)).collect();
            assert_eq!(row, vec![true, true, true, true, false]);
        }
        assert_eq!(mh, FeatureMask::from_fn(5, 5, |i, _| i <= 3));
    }

    #[test]
    fn boundary_percentiles() {
        let (mw, mh) = make_mask_pair_1d(&pct(Band::Low { cutoff: 100.0 }), 6, 9).unwrap();
        assert_eq!(mw.count_ones(), 54);
        assert_eq!(mh.count_ones(), 54);
        let (mw, mh) = make_mask_pair_1d(&pct(Band::High { cutoff: 100.0 }), 6, 9).unwrap();
        assert_eq!(mw.count_ones(), 0);
        assert_eq!(mh.count_ones(), 0);
        // pt = 0: only index 0 passes the low mask.
        let (mw, _) = make_mask_pair_1d(&pct(Band::Low { cutoff: 0.0 }), 6, 9).unwrap();
        assert_eq!(mw, FeatureMask::from_fn(6, 9, |_, j| j == 0));
    }

    #[test]
    fn defaults() {
        assert_eq!(
            BandSpec::default_absolute(BandMode::Mid).band(),
            Band::Mid {
                lower: 5.0,
                upper: 80.0
            }
        );
        assert_eq!(
            BandSpec::default_percentile(BandMode::Low).band(),
            Band::Low { cutoff: 60.0 }
        );
        assert_eq!(
            BandSpec::default_percentile(BandMode::High).band(),
            Band::High { cutoff: 5.0 }
        );
        assert_eq!(
            BandSpec::default_percentile(BandMode::Mid).band(),
            Band::Mid {
                lower: 7.0,
                upper: 50.0
            }
        );
    }
}
