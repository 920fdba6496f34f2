//! EDAIN: outlier mitigation, shift, scale and power-transform sublayers,
//! each with an analytic backward pass.

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesBatch;
use crate::error::{Error, Result};
use crate::neural::optim::{ParamGroup, ParamSlot};
use crate::power::{yeo_johnson, yeo_johnson_dlambda, yeo_johnson_dx};

pub const BETA_MIN: f64 = 1.0;
pub const S_FLOOR: f64 = 1e-6;
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdainMode {
    GlobalAware,
    LocalAware,
}

/// Which sublayers are active. A disabled sublayer is the identity and
/// receives no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sublayers {
    pub outlier: bool,
    pub shift: bool,
    pub scale: bool,
    pub power: bool,
}

impl Sublayers {
    pub const ALL: Sublayers = Sublayers {
        outlier: true,
        shift: true,
        scale: true,
        power: true,
    };
}

impl Default for Sublayers {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdainParams {
    pub mode: EdainMode,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub enabled: Sublayers,
}

impl EdainParams {
    /// `alpha = 0, beta = 3, s = 1, lambda = 1`; `m = 0` in global mode
    /// (identity layer) and `m = 1` in local mode (per-series z-score).
    pub fn new(d: usize, mode: EdainMode) -> Self {
        let m0 = match mode {
            EdainMode::GlobalAware => 0.0,
            EdainMode::LocalAware => 1.0,
        };
        Self {
            mode,
            alpha: vec![0.0; d],
            beta: vec![3.0; d],
            m: vec![m0; d],
            s: vec![1.0; d],
            lambda: vec![1.0; d],
            enabled: Sublayers::ALL,
        }
    }

    pub fn d(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if d == 0 {
            return Err(Error::Empty("EDAIN parameters"));
        }
        for (name, v) in [("beta", &self.beta), ("m", &self.m), ("s", &self.s), ("lambda", &self.lambda)] {
            if v.len() != d {
                return Err(Error::Shape(format!("{name} has {} entries, alpha has {d}", v.len())));
            }
        }
        let all = self.alpha.iter().chain(&self.beta).chain(&self.m).chain(&self.s).chain(&self.lambda);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("EDAIN parameter".into()));
        }
        Ok(())
    }

    /// Clamps `alpha` into `[0, 1]`, `beta` to at least 1 and `s` to at
    /// least `1e-6`.
    pub fn project(&mut self) {
        for a in &mut self.alpha {
            *a = a.clamp(0.0, 1.0);
        }
        for b in &mut self.beta {
            *b = b.max(BETA_MIN);
        }
        for s in &mut self.s {
            *s = s.max(S_FLOOR);
        }
    }
}

/// Cumulative moving average of the per-feature mean, one update per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMean {
    pub mu_hat: Vec<f64>,
    pub n: u64,
}

impl RunningMean {
    pub fn new(d: usize) -> Self {
        Self {
            mu_hat: vec![0.0; d],
            n: 0,
        }
    }

    pub fn update(&mut self, batch: &TimeSeriesBatch) -> Result<()> {
        if batch.d() != self.mu_hat.len() {
            return Err(Error::Shape(format!(
                "running mean has {} features, batch has {}",
                self.mu_hat.len(),
                batch.d()
            )));
        }
        let t = batch.t() as f64;
        for i in 0..batch.n() {
            let n = self.n as f64;
            for (k, mu) in self.mu_hat.iter_mut().enumerate() {
                let sum: f64 = batch.row(i, k).iter().sum();
                *mu = (n * t * *mu + sum) / ((n + 1.0) * t);
            }
            self.n += 1;
        }
        Ok(())
    }
}

pub fn update_running_mean(state: &RunningMean, batch: &TimeSeriesBatch) -> Result<RunningMean> {
    let mut next = state.clone();
    next.update(batch)?;
    Ok(next)
}

/// Per-series temporal summaries with the `1/T` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSummary {
    pub n: usize,
    pub d: usize,
    pub mu_x: Vec<f64>,
    pub sigma_x: Vec<f64>,
}

impl LocalSummary {
    pub fn compute(x: &TimeSeriesBatch) -> Self {
        let (n, d, _) = x.shape();
        let mut mu_x = Vec::with_capacity(n * d);
        let mut sigma_x = Vec::with_capacity(n * d);
        for i in 0..n {
            for k in 0..d {
                let (mu, sd) = crate::stats::mean_std(x.row(i, k));
                mu_x.push(mu);
                sigma_x.push(sd);
            }
        }
        Self { n, d, mu_x, sigma_x }
    }

    /// Per-series outlier centres; identical to `mu_x` by definition.
    pub fn mu_hat_local(&self) -> &[f64] {
        &self.mu_x
    }
}

/// Centre used by the outlier sublayer.
#[derive(Debug, Clone, PartialEq)]
pub enum Centers {
    /// One value per feature, treated as a constant.
    Global(Vec<f64>),
    /// The mean of each series, differentiated through.
    Local,
}

#[derive(Debug, Clone)]
pub struct OutlierCache {
    x: TimeSeriesBatch,
    mu: Vec<f64>,
    local: bool,
}

fn check_d(x: &TimeSeriesBatch, d: usize) -> Result<()> {
    if x.d() != d {
        return Err(Error::Shape(format!("layer has {d} features, batch has {}", x.d())));
    }
    Ok(())
}

pub fn outlier_forward(
    x: &TimeSeriesBatch,
    alpha: &[f64],
    beta: &[f64],
    centers: &Centers,
) -> Result<(TimeSeriesBatch, OutlierCache)> {
    let (n, d, _) = x.shape();
    check_d(x, alpha.len())?;
    let mu: Vec<f64> = match centers {
        Centers::Global(g) => {
            check_d(x, g.len())?;
            (0..n).flat_map(|_| g.iter().copied()).collect()
        }
        Centers::Local => LocalSummary::compute(x).mu_x,
    };
    let mut out = x.clone();
    for i in 0..n {
        for k in 0..d {
            let (a, b, c) = (alpha[k], beta[k], mu[i * d + k]);
            for v in out.row_mut(i, k) {
                let u = (*v - c) / b;
                *v = a * (b * u.tanh() + c) + (1.0 - a) * *v;
            }
        }
    }
    let cache = OutlierCache {
        x: x.clone(),
        mu,
        local: matches!(centers, Centers::Local),
    };
    Ok((out, cache))
}

/// Returns `(dx, dalpha, dbeta)`.
pub fn outlier_backward(
    grad_out: &TimeSeriesBatch,
    cache: &OutlierCache,
    alpha: &[f64],
    beta: &[f64],
) -> Result<(TimeSeriesBatch, Vec<f64>, Vec<f64>)> {
    if !grad_out.same_shape(&cache.x) {
        return Err(Error::StaleCache);
    }
    let (n, d, t) = grad_out.shape();
    let mut dx = TimeSeriesBatch::zeros(n, d, t);
    let mut da = vec![0.0; d];
    let mut db = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            let (a, b, c) = (alpha[k], beta[k], cache.mu[i * d + k]);
            let xs = cache.x.row(i, k);
            let gs = grad_out.row(i, k);
            let mut dmu = 0.0;
            let row = dx.row_mut(i, k);
            for s in 0..t {
                let u = (xs[s] - c) / b;
                let th = u.tanh();
                let sech2 = 1.0 - th * th;
                let g = gs[s];
                row[s] = g * (a * sech2 + 1.0 - a);
                da[k] += g * (b * th + c - xs[s]);
                db[k] += g * a * (th - u * sech2);
                dmu += g * a * (1.0 - sech2);
            }
            if cache.local {
                let share = dmu / t as f64;
                for v in row.iter_mut() {
                    *v += share;
                }
            }
        }
    }
    Ok((dx, da, db))
}

#[derive(Debug, Clone)]
pub struct ShiftScaleCache {
    x: TimeSeriesBatch,
    y: TimeSeriesBatch,
    /// Local mode only: per (series, feature) mean and (floored) std.
    summary: Option<LocalSummary>,
    shift: bool,
    scale: bool,
}

/// Global: `(x - m) / s`. Local: `(x - m mu_x) / (s sigma_x)` with the
/// summaries computed from `x` itself.
pub fn shift_scale_forward(
    x: &TimeSeriesBatch,
    m: &[f64],
    s: &[f64],
    mode: EdainMode,
    shift: bool,
    scale: bool,
) -> Result<(TimeSeriesBatch, ShiftScaleCache)> {
    let (n, d, _) = x.shape();
    check_d(x, m.len())?;
    check_d(x, s.len())?;
    let summary = match mode {
        EdainMode::GlobalAware => None,
        EdainMode::LocalAware => Some(LocalSummary::compute(x)),
    };
    let mut y = x.clone();
    for i in 0..n {
        for k in 0..d {
            let (mu, sd) = summary
                .as_ref()
                .map(|sm| (sm.mu_x[i * d + k], sm.sigma_x[i * d + k].max(SIGMA_FLOOR)))
                .unwrap_or((1.0, 1.0));
            let a = if shift { m[k] * mu } else { 0.0 };
            let b = if scale { s[k] * sd } else { 1.0 };
            for v in y.row_mut(i, k) {
                *v = (*v - a) / b;
            }
        }
    }
    let cache = ShiftScaleCache {
        x: x.clone(),
        y: y.clone(),
        summary,
        shift,
        scale,
    };
    Ok((y, cache))
}

/// Returns `(dx, dm, ds)`.
pub fn shift_scale_backward(
    grad_out: &TimeSeriesBatch,
    cache: &ShiftScaleCache,
    m: &[f64],
    s: &[f64],
) -> Result<(TimeSeriesBatch, Vec<f64>, Vec<f64>)> {
    if !grad_out.same_shape(&cache.x) {
        return Err(Error::StaleCache);
    }
    let (n, d, t) = grad_out.shape();
    let tf = t as f64;
    let mut dx = TimeSeriesBatch::zeros(n, d, t);
    let mut dm = vec![0.0; d];
    let mut ds = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            let gs = grad_out.row(i, k);
            let ys = cache.y.row(i, k);
            let (mu, sd_raw) = cache
                .summary
                .as_ref()
                .map(|sm| (sm.mu_x[i * d + k], sm.sigma_x[i * d + k]))
                .unwrap_or((1.0, 1.0));
            let sd = sd_raw.max(SIGMA_FLOOR);
            let b = if cache.scale { s[k] * sd } else { 1.0 };
            let mut d_a = 0.0;
            let mut d_b = 0.0;
            for s_ in 0..t {
                d_a -= gs[s_] / b;
                d_b -= gs[s_] * ys[s_] / b;
            }
            if !cache.shift {
                d_a = 0.0;
            }
            if !cache.scale {
                d_b = 0.0;
            }
            dm[k] += d_a * mu;
            ds[k] += d_b * sd;
            let row = dx.row_mut(i, k);
            for s_ in 0..t {
                row[s_] = gs[s_] / b;
            }
            if cache.summary.is_some() {
                let dmu = d_a * m[k];
                let dsigma = if sd_raw > SIGMA_FLOOR { d_b * s[k] } else { 0.0 };
                let xs = cache.x.row(i, k);
                for s_ in 0..t {
                    row[s_] += dmu / tf;
                    if dsigma != 0.0 {
                        row[s_] += dsigma * (xs[s_] - mu) / (tf * sd_raw);
                    }
                }
            }
        }
    }
    Ok((dx, dm, ds))
}

#[derive(Debug, Clone)]
pub struct PowerCache {
    x: TimeSeriesBatch,
}

pub fn power_forward(x: &TimeSeriesBatch, lambda: &[f64]) -> Result<(TimeSeriesBatch, PowerCache)> {
    check_d(x, lambda.len())?;
    let out = x.map_features(|k, v| yeo_johnson(v, lambda[k]));
    Ok((out, PowerCache { x: x.clone() }))
}

/// Returns `(dx, dlambda)`.
pub fn power_backward(
    grad_out: &TimeSeriesBatch,
    cache: &PowerCache,
    lambda: &[f64],
) -> Result<(TimeSeriesBatch, Vec<f64>)> {
    if !grad_out.same_shape(&cache.x) {
        return Err(Error::StaleCache);
    }
    let (n, d, t) = grad_out.shape();
    let mut dx = TimeSeriesBatch::zeros(n, d, t);
    let mut dl = vec![0.0; d];
    for i in 0..n {
        for k in 0..d {
            let xs = cache.x.row(i, k);
            let gs = grad_out.row(i, k);
            let row = dx.row_mut(i, k);
            for s in 0..t {
                row[s] = gs[s] * yeo_johnson_dx(xs[s], lambda[k]);
                dl[k] += gs[s] * yeo_johnson_dlambda(xs[s], lambda[k]);
            }
        }
    }
    Ok((dx, dl))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdainGradients {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub input: TimeSeriesBatch,
}

#[derive(Debug, Clone)]
pub struct EdainCache {
    shape: (usize, usize, usize),
    outlier: Option<OutlierCache>,
    shift_scale: Option<ShiftScaleCache>,
    power: Option<PowerCache>,
}

/// Trainable EDAIN layer: parameters plus the running mean used by the
/// global-aware outlier sublayer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdainLayer {
    pub params: EdainParams,
    pub running: RunningMean,
}

impl EdainLayer {
    pub fn new(params: EdainParams) -> Result<Self> {
        params.validate()?;
        let d = params.d();
        Ok(Self {
            params,
            running: RunningMean::new(d),
        })
    }

    /// In training mode the running mean absorbs the batch before the outlier
    /// sublayer is applied (global mode only).
    pub fn forward(&mut self, x: &TimeSeriesBatch, training: bool) -> Result<(TimeSeriesBatch, EdainCache)> {
        if training && self.params.mode == EdainMode::GlobalAware && self.params.enabled.outlier {
            self.running.update(x)?;
        }
        edain_forward(x, &self.params, &self.running)
    }

    pub fn backward(&self, grad_out: &TimeSeriesBatch, cache: &EdainCache) -> Result<EdainGradients> {
        edain_backward(grad_out, cache, &self.params)
    }

    pub fn slots<'a>(&'a mut self, grads: &'a EdainGradients) -> Vec<ParamSlot<'a>> {
        let p = &mut self.params;
        let on = p.enabled;
        let mut slots = Vec::with_capacity(5);
        let mut push = |cond: bool, group, value: &'a mut Vec<f64>, grad: &'a Vec<f64>| {
            if cond {
                slots.push(ParamSlot { group, value, grad });
            }
        };
        push(on.outlier, ParamGroup::Outlier, &mut p.alpha, &grads.alpha);
        push(on.outlier, ParamGroup::Outlier, &mut p.beta, &grads.beta);
        push(on.shift, ParamGroup::Shift, &mut p.m, &grads.m);
        push(on.scale, ParamGroup::Scale, &mut p.s, &grads.s);
        push(on.power, ParamGroup::Power, &mut p.lambda, &grads.lambda);
        slots
    }
}

/// Applies `h4 . h3 . h2 . h1` with the given (already updated) running mean.
pub fn edain_forward(
    x: &TimeSeriesBatch,
    params: &EdainParams,
    running: &RunningMean,
) -> Result<(TimeSeriesBatch, EdainCache)> {
    check_d(x, params.d())?;
    let on = params.enabled;
    let mut cur = x.clone();
    let outlier = if on.outlier {
        let centers = match params.mode {
            EdainMode::GlobalAware => Centers::Global(running.mu_hat.clone()),
            EdainMode::LocalAware => Centers::Local,
        };
        let (y, c) = outlier_forward(&cur, &params.alpha, &params.beta, &centers)?;
        cur = y;
        Some(c)
    } else {
        None
    };
    let shift_scale = if on.shift || on.scale {
        let (y, c) = shift_scale_forward(&cur, &params.m, &params.s, params.mode, on.shift, on.scale)?;
        cur = y;
        Some(c)
    } else {
        None
    };
    let power = if on.power {
        let (y, c) = power_forward(&cur, &params.lambda)?;
        cur = y;
        Some(c)
    } else {
        None
    };
    let cache = EdainCache {
        shape: x.shape(),
        outlier,
        shift_scale,
        power,
    };
    Ok((cur, cache))
}

pub fn edain_backward(grad_out: &TimeSeriesBatch, cache: &EdainCache, params: &EdainParams) -> Result<EdainGradients> {
    if grad_out.shape() != cache.shape {
        return Err(Error::StaleCache);
    }
    let d = params.d();
    let mut g = EdainGradients {
        alpha: vec![0.0; d],
        beta: vec![0.0; d],
        m: vec![0.0; d],
        s: vec![0.0; d],
        lambda: vec![0.0; d],
        input: grad_out.clone(),
    };
    if let Some(c) = &cache.power {
        let (dx, dl) = power_backward(&g.input, c, &params.lambda)?;
        g.input = dx;
        g.lambda = dl;
    }
    if let Some(c) = &cache.shift_scale {
        let (dx, dm, ds) = shift_scale_backward(&g.input, c, &params.m, &params.s)?;
        g.input = dx;
        g.m = dm;
        g.s = ds;
    }
    if let Some(c) = &cache.outlier {
        let (dx, da, db) = outlier_backward(&g.input, c, &params.alpha, &params.beta)?;
        g.input = dx;
        g.alpha = da;
        g.beta = db;
    }
    Ok(g)
}
