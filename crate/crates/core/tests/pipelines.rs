mod common;

use common::{toy, toy_source};
use fbsdiff_core::pipeline::{expected_calls, gaussian_noise, sample_from};
use fbsdiff_core::*;

fn shape() -> Shape {
    Shape::new(2, 12, 10).unwrap()
}

#[test]
fn empty_fbs2d_mask_is_plain_guided_sampling() {
    let (z0, s, mut d) = toy(shape());
    let mut cfg = PipelineConfig::fbsdiff(BandMode::High);
    cfg.inversion_steps = 100;
    cfg.band = BandSpec::absolute(Band::High { cutoff: 100.0 }).unwrap();
    let out = run_fbsdiff(&z0, &cfg, &s, &mut d).unwrap().output;
    let plain = sample_from(&gaussian_noise(shape(), cfg.seed), 50, 50, cfg.omega, &s, &mut d).unwrap();
    assert!(out.max_abs_diff(&plain) < 1e-9);
}

#[test]
fn point_mass_low_band_matches_at_switch() {
    let s = Schedule::default_with_steps(50).unwrap();
    let (null, target) = toy_priors(shape());
    let null = GaussianPrior::new(null.mean, 0.0).unwrap();
    let mut d = AnalyticGaussianDenoiser::new(s.clone(), null, target).unwrap();
    let z0 = toy_source(shape(), 4);
    let mut cfg = PipelineConfig::fbsdiff(BandMode::Low);
    cfg.band = BandSpec::absolute(Band::Low { cutoff: 6.0 }).unwrap();
    cfg.inversion_steps = 100;
    let r = run_fbsdiff(&z0, &cfg, &s, &mut d).unwrap();
    let guide = r.guide_at_switch.as_ref().expect("substituted at the switch step");
    let (a, b) = (dct2d(&r.switch_latent), dct2d(guide));
    let m = make_mask_2d(&cfg.band, 12, 10).unwrap();
    for c in 0..2 {
        for u in 0..12 {
            for v in 0..10 {
                if m.get(u, v) {
                    assert!((a.get(c, u, v) - b.get(c, u, v)).abs() <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn late_section_replays_exactly() {
    let (z0, s, mut d) = toy(shape());
    let mut fbs = PipelineConfig::fbsdiff(BandMode::Mid);
    fbs.inversion_steps = 100;
    let pp = PipelineConfig::fbsdiffpp(BandMode::High);
    let reports = [
        run_fbsdiff(&z0, &fbs, &s, &mut d).unwrap(),
        run_fbsdiffpp(&z0, &pp, &s, &mut d).unwrap(),
    ];
    for r in &reports {
        assert_eq!(r.switch_step, 25);
        let replay = sample_from(&r.switch_latent, r.switch_step, 50, 7.5, &s, &mut d).unwrap();
        assert!(replay.bit_eq(&r.output));
    }
}

#[test]
fn seeds_control_diversity() {
    let (z0, s, mut d) = toy(shape());
    let mut cfg = PipelineConfig::fbsdiffpp(BandMode::Low);
    let a = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    let again = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    cfg.seed = 1;
    let b = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    assert!(a.output.bit_eq(&again.output));
    assert!(!a.output.bit_eq(&b.output));
}

#[test]
fn substituted_band_energy_tracks_guide() {
    let (z0, s, mut d) = toy(shape());
    let mut fbs = PipelineConfig::fbsdiff(BandMode::Low);
    fbs.band = BandSpec::absolute(Band::Low { cutoff: 8.0 }).unwrap();
    fbs.inversion_steps = 50;
    let pp = PipelineConfig::fbsdiffpp(BandMode::Low);
    for r in [run_fbsdiff(&z0, &fbs, &s, &mut d).unwrap(), run_fbsdiffpp(&z0, &pp, &s, &mut d).unwrap()] {
        let rows: Vec<_> = r.trace.iter().filter(|row| row.substituted).collect();
        assert_eq!(rows.len(), 25);
        for row in rows {
            let g = row.guide_energy.unwrap();
            assert!((row.energy.low - g.low).abs() <= 1e-9 * g.low.max(1.0), "step {}", row.step);
        }
    }
}

#[test]
fn trace_fractions_sum_to_one() {
    let (z0, s, mut d) = toy(shape());
    let r = run_fbsdiffpp(&z0, &PipelineConfig::fbsdiffpp(BandMode::Mid), &s, &mut d).unwrap();
    assert_eq!(r.trace.len(), 50);
    assert_eq!(r.trace.first().unwrap().step, 49);
    assert_eq!(r.trace.last().unwrap().step, 0);
    for row in &r.trace {
        assert!((row.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ablations_change_the_trace() {
    let (z0, s, mut d) = toy(shape());
    let mut cfg = PipelineConfig::fbsdiffpp(BandMode::Low);
    let base = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    for ablation in [Substitution::Once, Substitution::Full] {
        cfg.substitution = ablation;
        let r = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
        assert_eq!(r.calls, base.calls);
        assert_ne!(r.trace, base.trace, "{ablation:?}");
    }
    cfg.substitution = Substitution::Once;
    let once = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    assert_eq!(once.trace.iter().filter(|r| r.substituted).count(), 1);
    // Full substitution hands over the guide itself.
    cfg.substitution = Substitution::Full;
    let full = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    assert!(full.switch_latent.max_abs_diff(full.guide_at_switch.as_ref().unwrap()) < 1e-9);
}

#[test]
fn lambda_extremes() {
    let (z0, s, mut d) = toy(shape());
    let mut cfg = PipelineConfig::fbsdiffpp(BandMode::Low);
    cfg.lambda = 1.0;
    let none = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    assert!(none.trace.iter().all(|r| !r.substituted));
    assert!(none.switch_latent.bit_eq(&gaussian_noise(shape(), 0)));
    cfg.lambda = 0.0;
    cfg.substitution = Substitution::Full;
    let all = run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    assert!(all.output.max_abs_diff(&z0) < 1e-9);
}

#[test]
fn call_counts_match_closed_form() {
    let (z0, s, mut d) = toy(shape());
    for (steps, inv) in [(10, 10), (20, 37), (7, 1000)] {
        let mut cfg = PipelineConfig::fbsdiff(BandMode::High);
        cfg.steps = steps;
        cfg.inversion_steps = inv;
        let before = d.call_counts();
        let r = run_fbsdiff(&z0, &cfg, &s, &mut d).unwrap();
        assert_eq!(d.call_counts().since(&before), expected_calls(&cfg));
        assert_eq!(r.calls.total(), (inv + 3 * steps) as u64);
    }
    let mut cfg = PipelineConfig::fbsdiffpp(BandMode::High);
    cfg.steps = 13;
    let before = d.call_counts();
    run_fbsdiffpp(&z0, &cfg, &s, &mut d).unwrap();
    assert_eq!(d.call_counts().since(&before).total(), 39);
}

#[test]
fn localized_mask_validation() {
    let (z0, s, mut d) = toy(shape());
    let cfg = PipelineConfig::fbsdiffpp(BandMode::Low);
    // A mask smaller than the feature cannot be downsampled to it.
    assert!(run_localized(&z0, &FeatureMask::ones(6, 5), &cfg, &s, &mut d).is_err());
    assert!(FeatureMask::from_values(2, 2, &[0.0, 0.5, 1.0, 1.0]).is_err());
}

#[test]
fn failing_denoiser_aborts_the_run() {
    struct Broken;
    impl Denoiser for Broken {
        fn predict_eps(&mut self, _: &LatentFeature, _: usize, _: Conditioning) -> Result<LatentFeature> {
            Err(Error::Remote("model crashed".into()))
        }
        fn call_counts(&self) -> CallCounts {
            CallCounts::default()
        }
    }
    let (z0, s, _) = toy(shape());
    let err = run_fbsdiffpp(&z0, &PipelineConfig::fbsdiffpp(BandMode::Low), &s, &mut Broken).unwrap_err();
    assert!(matches!(err, Error::Remote(_)));
}
