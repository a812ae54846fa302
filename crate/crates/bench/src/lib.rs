//! Shared fixtures for the benchmarks.

use fbsdiff_core::pipeline::gaussian_noise;
use fbsdiff_core::{AnalyticGaussianDenoiser, GaussianPrior, LatentFeature, Schedule, Shape};

pub fn feature(c: usize, h: usize, w: usize, seed: u64) -> LatentFeature {
    gaussian_noise(Shape::new(c, h, w).expect("valid shape"), seed)
}

/// Source latent, schedule and analytic denoiser for pipeline benches.
pub fn toy_problem(c: usize, h: usize, w: usize) -> (LatentFeature, Schedule, AnalyticGaussianDenoiser) {
    let schedule = Schedule::default_with_steps(50).expect("default schedule");
    let mu_null = feature(c, h, w, 1);
    let mu_target = feature(c, h, w, 2);
    let z0 = mu_null.zip_map(&feature(c, h, w, 3), |m, e| m + 0.5 * e).expect("finite");
    let d = AnalyticGaussianDenoiser::new(
        schedule.clone(),
        GaussianPrior::new(mu_null, 0.25).expect("prior"),
        GaussianPrior::new(mu_target, 0.25).expect("prior"),
    )
    .expect("matching priors");
    (z0, schedule, d)
}
