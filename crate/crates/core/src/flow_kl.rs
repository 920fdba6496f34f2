//! EDAIN-KL: an invertible outlier/shift/scale/power stack fitted by maximum
//! likelihood under a standard normal base distribution.
//!
//! The normalizing direction is `z = h4(h3(h2(h1(x))))` with
//! `h1(x) = beta tanh((x - mu) / beta) + mu`, `h2(x) = x - m`, `h3(x) = x / s`
//! and `h4` the Yeo-Johnson transform. The generating direction applies the
//! inverses in reverse order.

use serde::{Deserialize, Serialize};

use crate::adaptive::edain::{BETA_MIN, S_FLOOR};
use crate::data::{rng_from_seed, minibatches, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::neural::optim::{LrCorrections, Optimizer, OptimizerConfig, ParamGroup, ParamSlot};
use crate::power::{
    yeo_johnson, yeo_johnson_dlambda, yeo_johnson_dx, yeo_johnson_inverse, yeo_johnson_inverse_log_dz,
    yeo_johnson_log_dx,
};
use crate::stats::{log_sech2, mean_std};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlBijectorParams {
    pub beta: Vec<f64>,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu_hat: Vec<f64>,
}

impl KlBijectorParams {
    /// `beta = 3`, `m = 0`, `s = 1`, `lambda = 1`, `mu_hat = 0`.
    pub fn new(d: usize) -> Self {
        Self {
            beta: vec![3.0; d],
            m: vec![0.0; d],
            s: vec![1.0; d],
            lambda: vec![1.0; d],
            mu_hat: vec![0.0; d],
        }
    }

    pub fn d(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if d == 0 {
            return Err(Error::Empty("EDAIN-KL parameters"));
        }
        for v in [&self.m, &self.s, &self.lambda, &self.mu_hat] {
            if v.len() != d {
                return Err(Error::Shape("EDAIN-KL parameter vectors differ in length".into()));
            }
        }
        if self.beta.iter().any(|&b| !(b >= BETA_MIN)) || self.s.iter().any(|&s| !(s >= S_FLOOR)) {
            return Err(Error::InvalidArgument("EDAIN-KL needs beta >= 1 and s >= 1e-6".into()));
        }
        Ok(())
    }

    pub fn project(&mut self) {
        for b in &mut self.beta {
            *b = b.max(BETA_MIN);
        }
        for s in &mut self.s {
            *s = s.max(S_FLOOR);
        }
    }

    fn check(&self, x: &TimeSeriesBatch) -> Result<()> {
        if x.d() != self.d() {
            return Err(Error::Shape(format!("bijector has {} features, batch has {}", self.d(), x.d())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlSublayer {
    Outlier,
    Shift,
    Scale,
    Power,
}

/// `log |d h^{-1} / dv|` of one sublayer's inverse at `v`, a value in that
/// sublayer's output space, for feature `k`.
pub fn log_det_terms(value: f64, params: &KlBijectorParams, sublayer: KlSublayer, k: usize) -> f64 {
    match sublayer {
        KlSublayer::Shift => 0.0,
        KlSublayer::Scale => params.s[k].abs().ln(),
        KlSublayer::Outlier => {
            let r = (value - params.mu_hat[k]) / params.beta[k];
            -(1.0 - r * r).abs().ln()
        }
        KlSublayer::Power => yeo_johnson_inverse_log_dz(value, params.lambda[k]),
    }
}

/// Forward (normalizing) map of one coordinate and the log of its derivative.
#[inline]
fn normalize_scalar(x: f64, p: &KlBijectorParams, k: usize) -> (f64, f64) {
    let (mu, beta, m, s, lam) = (p.mu_hat[k], p.beta[k], p.m[k], p.s[k], p.lambda[k]);
    let u = (x - mu) / beta;
    let a = beta * u.tanh() + mu;
    let b = (a - m) / s;
    let z = yeo_johnson(b, lam);
    let ld = log_sech2(u) - s.ln() + yeo_johnson_log_dx(b, lam);
    (z, ld)
}

/// Returns the normalized batch and, per series, the log-determinant of the
/// normalizing map's Jacobian.
pub fn normalize_direction(x: &TimeSeriesBatch, params: &KlBijectorParams) -> Result<(TimeSeriesBatch, Vec<f64>)> {
    params.check(x)?;
    let (n, d, t) = x.shape();
    let mut z = x.clone();
    let mut log_det = vec![0.0; n];
    for i in 0..n {
        for k in 0..d {
            for v in z.row_mut(i, k).iter_mut().take(t) {
                let (zz, ld) = normalize_scalar(*v, params, k);
                *v = zz;
                log_det[i] += ld;
            }
        }
    }
    Ok((z, log_det))
}

/// Exact inverse of [`normalize_direction`].
pub fn generate_direction(z: &TimeSeriesBatch, params: &KlBijectorParams) -> Result<TimeSeriesBatch> {
    params.check(z)?;
    let (n, d, t) = z.shape();
    let mut x = z.clone();
    for i in 0..n {
        for k in 0..d {
            let row = x.row_mut(i, k);
            for (step, v) in row.iter_mut().enumerate().take(t) {
                let b = yeo_johnson_inverse(*v, params.lambda[k]);
                if b.is_nan() {
                    return Err(Error::Domain {
                        series: i,
                        feature: k,
                        timestep: step,
                        msg: format!("{} is outside the range of the power transform", *v),
                    });
                }
                let a = b * params.s[k] + params.m[k];
                let r = (a - params.mu_hat[k]) / params.beta[k];
                if !(r.abs() < 1.0) {
                    return Err(Error::Domain {
                        series: i,
                        feature: k,
                        timestep: step,
                        msg: format!("|value - mu_hat| / beta = {} is not below 1", r.abs()),
                    });
                }
                *v = params.beta[k] * r.atanh() + params.mu_hat[k];
            }
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlGradients {
    pub beta: Vec<f64>,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl KlGradients {
    fn zeros(d: usize) -> Self {
        Self {
            beta: vec![0.0; d],
            m: vec![0.0; d],
            s: vec![0.0; d],
            lambda: vec![0.0; d],
        }
    }

    fn scale(&mut self, f: f64) {
        for v in self.beta.iter_mut().chain(&mut self.m).chain(&mut self.s).chain(&mut self.lambda) {
            *v *= f;
        }
    }
}

/// Total negative log-likelihood `-sum_i [log p_Z(z_i) + log_det_i]` over the
/// batch, with its gradient with respect to every parameter (`mu_hat` is a
/// constant).
pub fn negative_log_likelihood(batch: &TimeSeriesBatch, params: &KlBijectorParams) -> Result<(f64, KlGradients)> {
    params.check(batch)?;
    let (n, d, _) = batch.shape();
    let mut g = KlGradients::zeros(d);
    let mut total = 0.0;
    for i in 0..n {
        let mut series_nll = 0.0;
        for k in 0..d {
            let (mu, beta, m, s, lam) = (params.mu_hat[k], params.beta[k], params.m[k], params.s[k], params.lambda[k]);
            for &x in batch.row(i, k) {
                let u = (x - mu) / beta;
                let th = u.tanh();
                let sech2 = 1.0 - th * th;
                let a = beta * th + mu;
                let b = (a - m) / s;
                let z = yeo_johnson(b, lam);
                series_nll += 0.5 * z * z + HALF_LN_2PI - log_sech2(u) + s.ln() - yeo_johnson_log_dx(b, lam);

                let (dlogd_db, dlogd_dl) = if b >= 0.0 {
                    ((lam - 1.0) / (1.0 + b), b.ln_1p())
                } else {
                    ((lam - 1.0) / (1.0 - b), -(-b).ln_1p())
                };
                g.lambda[k] += z * yeo_johnson_dlambda(b, lam) - dlogd_dl;
                let d_b = z * yeo_johnson_dx(b, lam) - dlogd_db;
                g.m[k] -= d_b / s;
                g.s[k] += -d_b * b / s + 1.0 / s;
                g.beta[k] += d_b / s * (th - u * sech2) - 2.0 * u * th / beta;
            }
        }
        if !series_nll.is_finite() {
            return Err(Error::NonFinite(format!("negative log-likelihood of series {i}")));
        }
        total += series_nll;
    }
    Ok((total, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlFitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub corrections: LrCorrections,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Initialise `m`, `s` from the pooled mean and standard deviation and
    /// `beta` from a multiple of the standard deviation.
    pub warm_start: bool,
    pub beta_init_sigmas: f64,
}

impl Default for KlFitConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            base_lr: 1e-2,
            corrections: LrCorrections::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            warm_start: true,
            beta_init_sigmas: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlFitResult {
    pub params: KlBijectorParams,
    /// Per-coordinate NLL of the whole training set before the first step.
    pub initial_nll: f64,
    /// Per-coordinate NLL at the returned (best) parameters.
    pub final_nll: f64,
    /// Per-coordinate NLL after every epoch.
    pub history: Vec<f64>,
}

fn per_coordinate_nll(x: &TimeSeriesBatch, p: &KlBijectorParams) -> Result<f64> {
    Ok(negative_log_likelihood(x, p)?.0 / x.len() as f64)
}

pub fn fit_kl(train: &TimeSeriesBatch, config: &KlFitConfig) -> Result<KlFitResult> {
    if train.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let d = train.d();
    let mut params = KlBijectorParams::new(d);
    for k in 0..d {
        let (mean, sd) = mean_std(&train.feature_values(k));
        params.mu_hat[k] = mean;
        if config.warm_start {
            params.m[k] = mean;
            params.s[k] = sd.max(S_FLOOR);
            params.beta[k] = (config.beta_init_sigmas * sd).max(BETA_MIN);
        }
    }
    let initial_nll = per_coordinate_nll(train, &params)?;
    let mut best = (initial_nll, params.clone());
    let mut history = Vec::with_capacity(config.epochs);
    let mut opt = Optimizer::new(config.optimizer);
    let mut rng = rng_from_seed(config.seed);
    for _ in 0..config.epochs {
        for idx in minibatches(train.n(), config.batch_size, &mut rng, true)? {
            let batch = train.select(&idx);
            let (_, mut g) = match negative_log_likelihood(&batch, &params) {
                Ok(v) => v,
                Err(_) => return finish(best, initial_nll, history),
            };
            g.scale(1.0 / batch.len() as f64);
            let mut slots = [
                ParamSlot {
                    group: ParamGroup::Outlier,
                    value: &mut params.beta,
                    grad: &g.beta,
                },
                ParamSlot {
                    group: ParamGroup::Shift,
                    value: &mut params.m,
                    grad: &g.m,
                },
                ParamSlot {
                    group: ParamGroup::Scale,
                    value: &mut params.s,
                    grad: &g.s,
                },
                ParamSlot {
                    group: ParamGroup::Power,
                    value: &mut params.lambda,
                    grad: &g.lambda,
                },
            ];
            opt.step(&mut slots, config.base_lr, &config.corrections)?;
            params.project();
        }
        let nll = match per_coordinate_nll(train, &params) {
            Ok(v) if v.is_finite() => v,
            _ => return finish(best, initial_nll, history),
        };
        history.push(nll);
        if nll < best.0 {
            best = (nll, params.clone());
        }
    }
    finish(best, initial_nll, history)
}

fn finish(best: (f64, KlBijectorParams), initial_nll: f64, history: Vec<f64>) -> Result<KlFitResult> {
    Ok(KlFitResult {
        params: best.1,
        initial_nll,
        final_nll: best.0,
        history,
    })
}
