//! Frequency band substitution operators.

use crate::dct::{dct1d_axis, dct2d, idct1d_axis, idct2d, Axis, Spectrum};
use crate::error::Result;
use crate::tensor::{FeatureMask, LatentFeature, Shape};

/// Per-element select, mask broadcast over channels: `mask ? a : b`.
fn select(mask: &FeatureMask, a: &[f64], b: &[f64], shape: Shape) -> Vec<f64> {
    let plane = shape.plane();
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (&x, &y))| if mask.data()[k % plane] { x } else { y })
        .collect()
}

fn check_pair(a: &LatentFeature, b: &LatentFeature, masks: &[&FeatureMask]) -> Result<()> {
    a.ensure_same_shape(b)?;
    for m in masks {
        m.ensure_matches(a.shape())?;
    }
    Ok(())
}

/// `IDCT2D(DCT2D(guide)·M + DCT2D(target)·(1−M))`.
pub fn fbs2d(
    guide: &LatentFeature,
    target: &LatentFeature,
    mask: &FeatureMask,
) -> Result<LatentFeature> {
    check_pair(guide, target, &[mask])?;
    let shape = guide.shape();
    let sg = dct2d(guide);
    let st = dct2d(target);
    let mixed = select(mask, sg.data(), st.data(), shape);
    let spectrum = Spectrum::from_feature(LatentFeature::from_parts_unchecked(shape, mixed));
    Ok(idct2d(&spectrum))
}

fn substitute_along(
    guide: &LatentFeature,
    target: &LatentFeature,
    mask: &FeatureMask,
    axis: Axis,
) -> LatentFeature {
    let shape = guide.shape();
    let sg = dct1d_axis(guide, axis);
    let st = dct1d_axis(target, axis);
    let mixed = select(mask, sg.data(), st.data(), shape);
    idct1d_axis(
        &Spectrum::from_feature(LatentFeature::from_parts_unchecked(shape, mixed)),
        axis,
    )
}

/// Cascaded per-axis substitution: first along width with `mask_w`, then
/// along height with `mask_h`. Both passes read the spectrum of the original
/// `guide`; the height pass writes into the width-updated target.
///
/// In 2D-DCT terms the result takes the guide's coefficient `(u, v)`
/// wherever row `u` passes `mask_h` or column `v` passes `mask_w`.
pub fn adafbs(
    guide: &LatentFeature,
    target: &LatentFeature,
    mask_w: &FeatureMask,
    mask_h: &FeatureMask,
) -> Result<LatentFeature> {
    check_pair(guide, target, &[mask_w, mask_h])?;
    let width_updated = substitute_along(guide, target, mask_w, Axis::Width);
    Ok(substitute_along(guide, &width_updated, mask_h, Axis::Height))
}

/// `a·M + b·(1−M)` in the spatial domain, mask broadcast over channels.
/// Binary masks make this an exact select.
pub fn blend_masked(
    a: &LatentFeature,
    b: &LatentFeature,
    mask: &FeatureMask,
) -> Result<LatentFeature> {
    check_pair(a, b, &[mask])?;
    let shape = a.shape();
    Ok(LatentFeature::from_parts_unchecked(
        shape,
        select(mask, a.data(), b.data(), shape),
    ))
}

/// Applies a spectral mask to a spectrum, zeroing everything outside it.
pub fn mask_spectrum(s: &Spectrum, mask: &FeatureMask) -> Result<Spectrum> {
    mask.ensure_matches(s.shape())?;
    let zeros = vec![0.0; s.data().len()];
    Ok(Spectrum::from_feature(LatentFeature::from_parts_unchecked(
        s.shape(),
        select(mask, s.data(), &zeros, s.shape()),
    )))
}
