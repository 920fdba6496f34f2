//! Order preservation of the normalization layers and EDAIN-KL fitting.

use edain::adaptive::edain::{edain_forward, EdainMode, EdainParams, RunningMean, Sublayers};
use edain::data::{rng_from_seed, Rng, TimeSeriesBatch};
use edain::flow_kl::{fit_kl, generate_direction, normalize_direction, KlBijectorParams, KlFitConfig};
use edain::static_norm::{FittedPipeline, KditConfig, StaticStep};
use edain::stats::skewness;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const DRAWS: usize = 10_000;

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_batch(rng: &mut Rng, n: usize, d: usize, t: usize, scale: f64) -> TimeSeriesBatch {
    TimeSeriesBatch::from_fn(n, d, t, |_, _, _| scale * normal(rng))
}

/// For every (feature, timestep) column, sorts series by input and checks the
/// outputs: strictly increasing when `strict`, otherwise non-decreasing.
/// `inside(k, x)` restricts the strict check to pairs of inputs it accepts.
pub fn check_order(
    x: &TimeSeriesBatch,
    y: &TimeSeriesBatch,
    strict: bool,
    inside: impl Fn(usize, f64) -> bool,
) -> Result<(), String> {
    let (n, d, t) = x.shape();
    for k in 0..d {
        for s in 0..t {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x.get(a, k, s).total_cmp(&x.get(b, k, s)));
            for w in idx.windows(2) {
                let (xa, xb) = (x.get(w[0], k, s), x.get(w[1], k, s));
                let (ya, yb) = (y.get(w[0], k, s), y.get(w[1], k, s));
                if xa == xb {
                    continue;
                }
                if yb < ya {
                    return Err(format!("feature {k}, t {s}: {xa} < {xb} but {ya} > {yb}"));
                }
                if strict && inside(k, xa) && inside(k, xb) && yb <= ya {
                    return Err(format!("feature {k}, t {s}: {xa} < {xb} but {ya} == {yb}"));
                }
            }
        }
    }
    Ok(())
}

pub fn global_edain_preserves_order_for_random_parameters() {
    let mut rng = rng_from_seed(17);
    for draw in 0..DRAWS {
        let d = rng.gen_range(1..=3);
        let mut p = EdainParams::new(d, EdainMode::GlobalAware);
        for k in 0..d {
            p.alpha[k] = rng.gen_range(0.0..=1.0);
            p.beta[k] = rng.gen_range(0.0..5.0f64).exp();
            p.m[k] = 3.0 * normal(&mut rng);
            p.s[k] = 10f64.powf(rng.gen_range(-1.0..1.0));
            p.lambda[k] = rng.gen_range(-2.0..4.0);
        }
        if draw % 4 == 0 {
            p.enabled = Sublayers {
                outlier: rng.gen(),
                shift: rng.gen(),
                scale: rng.gen(),
                power: rng.gen(),
            };
        }
        let mut running = RunningMean::new(d);
        running.mu_hat = (0..d).map(|_| normal(&mut rng)).collect();
        let x = random_batch(&mut rng, 16, d, 3, 3.0);
        let (y, _) = edain_forward(&x, &p, &running).unwrap();
        check_order(&x, &y, true, |_, _| true).unwrap_or_else(|e| panic!("draw {draw} ({p:?}): {e}"));
    }
}

pub fn local_edain_can_reverse_order() {
    // Feature 0 at t = 0: 2 < 3, but after per-series standardization the
    // first series is above its mean and the second below.
    let x = TimeSeriesBatch::new(2, 1, 3, vec![2.0, 0.0, 0.0, 3.0, 4.0, 5.0]).unwrap();
    let p = EdainParams::new(1, EdainMode::LocalAware);
    let (y, _) = edain_forward(&x, &p, &RunningMean::new(1)).unwrap();
    assert!(x.get(0, 0, 0) < x.get(1, 0, 0));
    assert!(y.get(0, 0, 0) > y.get(1, 0, 0), "got {:?}", y.as_slice());
    assert!(check_order(&x, &y, false, |_, _| true).is_err());
}

pub fn static_transforms_preserve_order() {
    let mut rng = rng_from_seed(23);
    let strict_steps = [StaticStep::Zscore, StaticStep::Minmax, StaticStep::YeoJohnson];
    for draw in 0..DRAWS {
        let d = rng.gen_range(1..=2);
        let shift = 5.0 * normal(&mut rng);
        let train = TimeSeriesBatch::from_fn(8, d, 4, |_, _, _| shift + (2.0 * normal(&mut rng)).exp() - 1.0);
        let x = TimeSeriesBatch::from_fn(16, d, 4, |_, _, _| shift + (2.0 * normal(&mut rng)).exp() - 1.0);

        let step = strict_steps[draw % strict_steps.len()];
        let fitted = FittedPipeline::fit(&[step], &train).unwrap();
        let y = fitted.apply(&x).unwrap();
        check_order(&x, &y, true, |_, _| true).unwrap_or_else(|e| panic!("{step:?}: {e}"));

        // Clipping and empirical-CDF maps are flat outside the fitted range
        // and strictly increasing inside it.
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..d)
            .map(|k| {
                let v = train.feature_values(k);
                (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            })
            .unzip();
        let winsor = StaticStep::Winsorize {
            lower_q: 0.05,
            upper_q: 0.95,
        };
        let fitted = FittedPipeline::fit(&[winsor], &train).unwrap();
        let y = fitted.apply(&x).unwrap();
        let clipped = fitted.apply(&train).unwrap();
        let (clo, chi): (Vec<f64>, Vec<f64>) = (0..d)
            .map(|k| {
                let v = clipped.feature_values(k);
                (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            })
            .unzip();
        check_order(&x, &y, true, |k, v| v > clo[k] && v < chi[k]).unwrap_or_else(|e| panic!("winsorize: {e}"));

        let fitted = FittedPipeline::fit(&[StaticStep::CdfInversion], &train).unwrap();
        let y = fitted.apply(&x).unwrap();
        check_order(&x, &y, true, |k, v| v >= lo[k] && v <= hi[k]).unwrap_or_else(|e| panic!("cdf inversion: {e}"));

        if draw % 10 == 0 {
            let kdit = StaticStep::Kdit(KditConfig {
                alpha: 0.5,
                grid_size: 256,
            });
            let y = FittedPipeline::fit(&[kdit], &train).unwrap().apply(&x).unwrap();
            check_order(&x, &y, false, |_, _| true).unwrap_or_else(|e| panic!("kdit: {e}"));
        }
    }
}

pub fn skewed_batch(seed: u64) -> TimeSeriesBatch {
    let mut rng = rng_from_seed(seed);
    TimeSeriesBatch::from_fn(1000, 1, 10, |_, _, _| normal(&mut rng).exp() - 1.0)
}

pub fn kl_fit_reduces_skew_and_nll() -> String {
    let x = skewed_batch(99);
    let fit = fit_kl(&x, &KlFitConfig::default()).unwrap();
    let (z, _) = normalize_direction(&x, &fit.params).unwrap();
    let (before, after) = (skewness(x.as_slice()), skewness(z.as_slice()));
    assert!(fit.params.lambda[0] < 1.0);
    assert!(fit.final_nll < fit.initial_nll);
    assert!(after.abs() < before.abs());

    let back = generate_direction(&z, &fit.params).unwrap();
    let worst = x
        .as_slice()
        .iter()
        .zip(back.as_slice())
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "round-trip error {worst}");
    format!(
        "lambda {:.3}, NLL {:.3} -> {:.3}, skewness {before:.2} -> {after:.2}, round trip {worst:.1e}",
        fit.params.lambda[0], fit.initial_nll, fit.final_nll
    )
}

pub fn random_kl(rng: &mut Rng, d: usize) -> KlBijectorParams {
    let mut p = KlBijectorParams::new(d);
    for k in 0..d {
        p.beta[k] = rng.gen_range(2.0..8.0);
        p.m[k] = normal(rng);
        p.s[k] = rng.gen_range(0.3..3.0);
        p.lambda[k] = rng.gen_range(-1.0..3.0);
        p.mu_hat[k] = normal(rng);
    }
    p
}

pub fn kl_round_trip_on_random_bijectors() -> f64 {
    let mut rng = rng_from_seed(31);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let p = random_kl(&mut rng, 2);
        let x = random_batch(&mut rng, 5, 2, 4, 2.0);
        let (z, _) = normalize_direction(&x, &p).unwrap();
        let back = generate_direction(&z, &p).unwrap();
        for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    assert!(worst < 1e-9, "round-trip error {worst}");
    worst
}
