//! Analytic backward passes against central finite differences, on random
//! shapes, parameters and inputs. Each check panics on the first mismatch.

use edain::adaptive::dain::{dain_backward, dain_forward, DainParams};
use edain::adaptive::edain::{
    edain_backward, edain_forward, outlier_backward, outlier_forward, power_backward, power_forward,
    shift_scale_backward, shift_scale_forward, Centers, EdainMode, EdainParams, RunningMean, Sublayers,
};
use edain::data::{rng_from_seed, Rng, TimeSeriesBatch};
use edain::flow_kl::{negative_log_likelihood, KlBijectorParams};
use edain::neural::gru::{gru_backward, gru_forward, GruStack, ModelConfig};
use edain::neural::loss::{bce_loss, cross_entropy_loss};
use edain::stats::sigmoid;
use ndarray::Array2;
use std::sync::Mutex;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const TRIALS: usize = 100;

/// `(name, worst relative error, tolerance)` of every finished check.
pub static WORST: Mutex<Vec<(&str, f64, f64)>> = Mutex::new(Vec::new());

const H: f64 = 1e-6;

struct Tracker {
    name: &'static str,
    tol: f64,
    worst: f64,
}

impl Tracker {
    fn new(name: &'static str, tol: f64) -> Self {
        Self { name, tol, worst: 0.0 }
    }

    fn check(&mut self, what: &str, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        self.worst = self.worst.max(err);
        assert!(
            err < self.tol,
            "{}: {what} analytic {analytic} numeric {numeric} (rel err {err:e})",
            self.name
        );
    }
}

impl Drop for Tracker {
    fn drop(&mut self) {
        if !std::thread::panicking() {
            println!("{}: worst relative error {:.3e} over {TRIALS} trials", self.name, self.worst);
            WORST.lock().unwrap().push((self.name, self.worst, self.tol));
        }
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_shape(rng: &mut Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(2..=5))
}

/// Heavy-ish tailed inputs so the tanh sublayer is exercised away from its
/// linear regime.
fn random_batch(rng: &mut Rng, (n, d, t): (usize, usize, usize)) -> TimeSeriesBatch {
    TimeSeriesBatch::from_fn(n, d, t, |_, _, _| {
        let v = 2.0 * normal(rng);
        if rng.gen_bool(0.1) {
            v * 4.0
        } else {
            v
        }
    })
}

fn weights_like(rng: &mut Rng, x: &TimeSeriesBatch) -> TimeSeriesBatch {
    let (n, d, t) = x.shape();
    TimeSeriesBatch::from_fn(n, d, t, |_, _, _| normal(rng))
}

fn dot(a: &TimeSeriesBatch, b: &TimeSeriesBatch) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn central(mut f: impl FnMut(f64) -> f64, x0: f64) -> f64 {
    (f(x0 + H) - f(x0 - H)) / (2.0 * H)
}

fn check_input_grad(
    tr: &mut Tracker,
    x: &TimeSeriesBatch,
    dx: &TimeSeriesBatch,
    mut loss: impl FnMut(&TimeSeriesBatch) -> f64,
) {
    for j in 0..x.len() {
        let mut xp = x.clone();
        let num = central(
            |v| {
                xp.as_mut_slice()[j] = v;
                loss(&xp)
            },
            x.as_slice()[j],
        );
        tr.check(&format!("dx[{j}]"), dx.as_slice()[j], num);
    }
}

fn random_edain(rng: &mut Rng, d: usize, mode: EdainMode, enabled: Sublayers) -> EdainParams {
    let mut p = EdainParams::new(d, mode);
    for k in 0..d {
        p.alpha[k] = rng.gen_range(0.05..0.95);
        p.beta[k] = rng.gen_range(1.0..5.0);
        p.m[k] = normal(rng);
        p.s[k] = rng.gen_range(0.5..2.0);
        p.lambda[k] = rng.gen_range(0.3..1.7);
    }
    p.enabled = enabled;
    p
}

fn edain_field(p: &mut EdainParams, which: usize) -> &mut Vec<f64> {
    match which {
        0 => &mut p.alpha,
        1 => &mut p.beta,
        2 => &mut p.m,
        3 => &mut p.s,
        _ => &mut p.lambda,
    }
}

fn dain_slot(p: &mut DainParams, which: usize, j: usize) -> &mut f64 {
    match which {
        0 => &mut p.w_a[j],
        1 => &mut p.w_b[j],
        2 => &mut p.w_c[j],
        _ => &mut p.bias[j],
    }
}

fn kl_slot(p: &mut KlBijectorParams, which: usize, k: usize) -> &mut f64 {
    match which {
        0 => &mut p.beta[k],
        1 => &mut p.m[k],
        2 => &mut p.s[k],
        _ => &mut p.lambda[k],
    }
}

pub fn outlier_sublayer_global_and_local() {
    for (name, local) in [("outlier/global", false), ("outlier/local", true)] {
        let mut tr = Tracker::new(name, 1e-5);
        let mut rng = rng_from_seed(11 + local as u64);
        for _ in 0..TRIALS {
            let shape = random_shape(&mut rng);
            let x = random_batch(&mut rng, shape);
            let w = weights_like(&mut rng, &x);
            let p = random_edain(&mut rng, shape.1, EdainMode::GlobalAware, Sublayers::ALL);
            let centers = if local {
                Centers::Local
            } else {
                Centers::Global((0..shape.1).map(|_| normal(&mut rng)).collect())
            };
            let f = |x: &TimeSeriesBatch, a: &[f64], b: &[f64]| dot(&outlier_forward(x, a, b, &centers).unwrap().0, &w);
            let (_, cache) = outlier_forward(&x, &p.alpha, &p.beta, &centers).unwrap();
            let (dx, da, db) = outlier_backward(&w, &cache, &p.alpha, &p.beta).unwrap();
            for k in 0..shape.1 {
                let mut a = p.alpha.clone();
                let num = central(|v| {
                    a[k] = v;
                    f(&x, &a, &p.beta)
                }, p.alpha[k]);
                tr.check("alpha", da[k], num);
                let mut b = p.beta.clone();
                let num = central(|v| {
                    b[k] = v;
                    f(&x, &p.alpha, &b)
                }, p.beta[k]);
                tr.check("beta", db[k], num);
            }
            check_input_grad(&mut tr, &x, &dx, |xp| f(xp, &p.alpha, &p.beta));
        }
    }
}

pub fn shift_scale_sublayer_global_and_local() {
    for (name, mode) in [("shift_scale/global", EdainMode::GlobalAware), ("shift_scale/local", EdainMode::LocalAware)] {
        let mut tr = Tracker::new(name, 1e-5);
        let mut rng = rng_from_seed(21 + mode as u64);
        for trial in 0..TRIALS {
            let (shift, scale) = [(true, true), (true, false), (false, true)][trial % 3];
            let shape = random_shape(&mut rng);
            let x = random_batch(&mut rng, shape);
            let w = weights_like(&mut rng, &x);
            let p = random_edain(&mut rng, shape.1, mode, Sublayers::ALL);
            let f = |x: &TimeSeriesBatch, m: &[f64], s: &[f64]| {
                dot(&shift_scale_forward(x, m, s, mode, shift, scale).unwrap().0, &w)
            };
            let (_, cache) = shift_scale_forward(&x, &p.m, &p.s, mode, shift, scale).unwrap();
            let (dx, dm, ds) = shift_scale_backward(&w, &cache, &p.m, &p.s).unwrap();
            for k in 0..shape.1 {
                let mut m = p.m.clone();
                let num = central(|v| {
                    m[k] = v;
                    f(&x, &m, &p.s)
                }, p.m[k]);
                tr.check("m", dm[k], num);
                let mut s = p.s.clone();
                let num = central(|v| {
                    s[k] = v;
                    f(&x, &p.m, &s)
                }, p.s[k]);
                tr.check("s", ds[k], num);
            }
            check_input_grad(&mut tr, &x, &dx, |xp| f(xp, &p.m, &p.s));
        }
    }
}

pub fn power_sublayer() {
    let mut tr = Tracker::new("power", 1e-5);
    let mut rng = rng_from_seed(31);
    for trial in 0..TRIALS {
        let shape = random_shape(&mut rng);
        let x = random_batch(&mut rng, shape);
        let w = weights_like(&mut rng, &x);
        // Include the special-cased exponents 0 and 2 every few trials.
        let lambda: Vec<f64> = (0..shape.1)
            .map(|_| match trial % 5 {
                0 => 0.0,
                1 => 2.0,
                _ => rng.gen_range(-0.5..2.5),
            })
            .collect();
        let f = |x: &TimeSeriesBatch, l: &[f64]| dot(&power_forward(x, l).unwrap().0, &w);
        let (_, cache) = power_forward(&x, &lambda).unwrap();
        let (dx, dl) = power_backward(&w, &cache, &lambda).unwrap();
        for k in 0..shape.1 {
            let mut l = lambda.clone();
            let num = central(|v| {
                l[k] = v;
                f(&x, &l)
            }, lambda[k]);
            tr.check("lambda", dl[k], num);
        }
        check_input_grad(&mut tr, &x, &dx, |xp| f(xp, &lambda));
    }
}

pub fn full_edain_both_modes() {
    for (name, mode) in [("edain/global", EdainMode::GlobalAware), ("edain/local", EdainMode::LocalAware)] {
        let mut tr = Tracker::new(name, 1e-5);
        let mut rng = rng_from_seed(41 + mode as u64);
        for trial in 0..TRIALS {
            let enabled = if trial % 2 == 0 {
                Sublayers::ALL
            } else {
                Sublayers {
                    outlier: rng.gen(),
                    shift: rng.gen(),
                    scale: rng.gen(),
                    power: rng.gen(),
                }
            };
            let shape = random_shape(&mut rng);
            let x = random_batch(&mut rng, shape);
            let w = weights_like(&mut rng, &x);
            let p = random_edain(&mut rng, shape.1, mode, enabled);
            let mut running = RunningMean::new(shape.1);
            running.mu_hat = (0..shape.1).map(|_| normal(&mut rng)).collect();
            running.n = 10;
            let f = |x: &TimeSeriesBatch, p: &EdainParams| dot(&edain_forward(x, p, &running).unwrap().0, &w);
            let (_, cache) = edain_forward(&x, &p, &running).unwrap();
            let g = edain_backward(&w, &cache, &p).unwrap();
            let analytic = [&g.alpha, &g.beta, &g.m, &g.s, &g.lambda];
            for (which, grads) in analytic.iter().enumerate() {
                for k in 0..shape.1 {
                    let mut q = p.clone();
                    let x0 = edain_field(&mut q, which)[k];
                    let num = central(|v| {
                        edain_field(&mut q, which)[k] = v;
                        f(&x, &q)
                    }, x0);
                    tr.check(["alpha", "beta", "m", "s", "lambda"][which], grads[k], num);
                }
            }
            check_input_grad(&mut tr, &x, &g.input, |xp| f(xp, &p));
        }
    }
}

pub fn dain_layer() {
    let mut tr = Tracker::new("dain", 1e-5);
    let mut rng = rng_from_seed(51);
    for _ in 0..TRIALS {
        let shape = random_shape(&mut rng);
        let d = shape.1;
        let x = random_batch(&mut rng, shape);
        let w = weights_like(&mut rng, &x);
        let mut p = DainParams::new(d, normal(&mut rng));
        for j in 0..d * d {
            p.w_a[j] += 0.3 * normal(&mut rng);
            // Keep the scale map well away from zero.
            p.w_b[j] += 0.1 * normal(&mut rng);
            p.w_c[j] = 0.5 * normal(&mut rng);
        }
        let f = |x: &TimeSeriesBatch, p: &DainParams| dot(&dain_forward(x, p).unwrap().0, &w);
        let (_, cache) = dain_forward(&x, &p).unwrap();
        let g = dain_backward(&w, &cache, &p).unwrap();
        for (which, grads) in [&g.w_a, &g.w_b, &g.w_c, &g.bias].into_iter().enumerate() {
            for j in 0..grads.len() {
                let mut q = p.clone();
                let x0 = *dain_slot(&mut q, which, j);
                let num = central(|v| {
                    *dain_slot(&mut q, which, j) = v;
                    f(&x, &q)
                }, x0);
                tr.check(["w_a", "w_b", "w_c", "bias"][which], grads[j], num);
            }
        }
        check_input_grad(&mut tr, &x, &g.input, |xp| f(xp, &p));
    }
}

pub fn gru_with_classification_losses() {
    let mut tr = Tracker::new("gru", 1e-4);
    let mut rng = rng_from_seed(61);
    for trial in 0..TRIALS {
        let classes = if trial % 2 == 0 { 1 } else { 3 };
        let shape = random_shape(&mut rng);
        let config = ModelConfig {
            hidden: if trial % 3 == 0 { vec![3] } else { vec![3, 2] },
            dropout: 0.0,
            head: vec![4],
        };
        let model = GruStack::new(shape.1, classes, &config, &mut rng).unwrap();
        let x = random_batch(&mut rng, shape);
        let k = classes.max(2);
        let labels: Vec<usize> = (0..shape.0).map(|_| rng.gen_range(0..k)).collect();
        let loss_of = |x: &TimeSeriesBatch, m: &GruStack| {
            let probs = gru_forward(x, m, None).unwrap().probs;
            if classes == 1 {
                bce_loss(&probs, &labels).unwrap().0
            } else {
                cross_entropy_loss(&probs, &labels).unwrap().0
            }
        };
        let cache = gru_forward(&x, &model, None).unwrap();
        let grad_logits = if classes == 1 {
            bce_loss(&cache.probs, &labels).unwrap().1
        } else {
            cross_entropy_loss(&cache.probs, &labels).unwrap().1
        };
        let (grads, dx) = gru_backward(&grad_logits, &cache, &model).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        for (ti, tensor) in analytic.iter().enumerate() {
            for j in 0..tensor.len() {
                let mut m = model.clone();
                let x0 = m.tensors_mut()[ti][j];
                let num = central(|v| {
                    m.tensors_mut()[ti][j] = v;
                    loss_of(&x, &m)
                }, x0);
                tr.check(&format!("tensor {ti}[{j}]"), tensor[j], num);
            }
        }
        check_input_grad(&mut tr, &x, &dx, |xp| loss_of(xp, &model));
    }
}

pub fn losses_against_logit_perturbation() {
    let mut tr = Tracker::new("losses", 1e-6);
    let mut rng = rng_from_seed(71);
    for _ in 0..TRIALS {
        let n = rng.gen_range(1..8);
        let z: Vec<f64> = (0..n).map(|_| 3.0 * normal(&mut rng)).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let bce = |z: &[f64]| {
            let p = Array2::from_shape_fn((n, 1), |(i, _)| sigmoid(z[i]));
            bce_loss(&p, &y).unwrap()
        };
        let g = bce(&z).1;
        for i in 0..n {
            let mut zz = z.clone();
            let num = central(|v| {
                zz[i] = v;
                bce(&zz).0
            }, z[i]);
            tr.check("bce", g[[i, 0]], num);
        }

        let c = rng.gen_range(2..5);
        let logits = Array2::from_shape_fn((n, c), |_| 2.0 * normal(&mut rng));
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let ce = |l: &Array2<f64>| {
            let mut p = l.clone();
            for mut row in p.rows_mut() {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - mx).exp());
                let s = row.sum();
                row /= s;
            }
            cross_entropy_loss(&p, &y).unwrap()
        };
        let g = ce(&logits).1;
        for i in 0..n {
            for j in 0..c {
                let mut l = logits.clone();
                let num = central(|v| {
                    l[[i, j]] = v;
                    ce(&l).0
                }, logits[[i, j]]);
                tr.check("cross-entropy", g[[i, j]], num);
            }
        }
    }
}

pub fn kl_negative_log_likelihood() {
    let mut tr = Tracker::new("kl_nll", 1e-5);
    let mut rng = rng_from_seed(81);
    for _ in 0..TRIALS {
        let shape = random_shape(&mut rng);
        let d = shape.1;
        let x = random_batch(&mut rng, shape);
        let mut p = KlBijectorParams::new(d);
        for k in 0..d {
            p.beta[k] = rng.gen_range(1.0..6.0);
            p.m[k] = normal(&mut rng);
            p.s[k] = rng.gen_range(0.5..3.0);
            p.lambda[k] = rng.gen_range(0.2..1.8);
            p.mu_hat[k] = normal(&mut rng);
        }
        let (_, g) = negative_log_likelihood(&x, &p).unwrap();
        let names = ["beta", "m", "s", "lambda"];
        for (which, grads) in [&g.beta, &g.m, &g.s, &g.lambda].into_iter().enumerate() {
            for k in 0..d {
                let mut q = p.clone();
                let x0 = *kl_slot(&mut q, which, k);
                let num = central(|v| {
                    *kl_slot(&mut q, which, k) = v;
                    negative_log_likelihood(&x, &q).unwrap().0
                }, x0);
                tr.check(names[which], grads[k], num);
            }
        }
    }
}

pub const ALL: [fn(); 8] = [outlier_sublayer_global_and_local, shift_scale_sublayer_global_and_local, power_sublayer, full_edain_both_modes, dain_layer, gru_with_classification_losses, losses_against_logit_perturbation, kl_negative_log_likelihood];
