//! Fixed preprocessing baselines fitted by one pass over training data.
//!
//! Every statistic uses the population (divide by `N*T`) convention and pools
//! all series and timesteps of a feature. Quantiles interpolate linearly
//! between order statistics.

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesBatch;
use crate::error::{Error, Result};
use crate::power::yeo_johnson;
use crate::stats::{mean_std, normal_cdf, normal_quantile, quantile_sorted};

/// Probabilities fed to the inverse normal CDF are clipped to `[EPS, 1-EPS]`.
pub const CDF_CLIP: f64 = 1e-5;

/// Per-feature statistics of a training batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose standard deviation is zero; they are never divided.
    pub constant: Vec<bool>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub lower_clip: Vec<f64>,
    pub upper_clip: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Sorted distinct values paired with their mid-rank empirical CDF.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub quantile_grid: Vec<Vec<(f64, f64)>>,
}

impl StaticStats {
    pub fn d(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &TimeSeriesBatch) -> Result<()> {
        if x.d() != self.d() {
            return Err(Error::Shape(format!(
                "statistics fitted for d={}, batch has d={}",
                self.d(),
                x.d()
            )));
        }
        Ok(())
    }
}

fn check_nonempty(train: &TimeSeriesBatch) -> Result<()> {
    if train.n() == 0 {
        Err(Error::Empty("training batch has no series"))
    } else {
        Ok(())
    }
}

fn fit_basic(train: &TimeSeriesBatch) -> Result<StaticStats> {
    check_nonempty(train)?;
    let d = train.d();
    let mut s = StaticStats {
        mean: Vec::with_capacity(d),
        std: Vec::with_capacity(d),
        constant: Vec::with_capacity(d),
        min: Vec::with_capacity(d),
        max: Vec::with_capacity(d),
        lower_clip: Vec::with_capacity(d),
        upper_clip: Vec::with_capacity(d),
        lambda: vec![1.0; d],
        quantile_grid: Vec::new(),
    };
    for k in 0..d {
        let v = train.feature_values(k);
        let (mean, std) = mean_std(&v);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s.mean.push(mean);
        s.std.push(std);
        s.constant.push(std == 0.0 || min == max);
        s.min.push(min);
        s.max.push(max);
        s.lower_clip.push(min);
        s.upper_clip.push(max);
    }
    Ok(s)
}

pub fn fit_zscore(train: &TimeSeriesBatch) -> Result<StaticStats> {
    fit_basic(train)
}

pub fn apply_zscore(x: &TimeSeriesBatch, stats: &StaticStats) -> Result<TimeSeriesBatch> {
    stats.check(x)?;
    Ok(x.map_features(|k, v| {
        let c = v - stats.mean[k];
        if stats.constant[k] {
            c
        } else {
            c / stats.std[k]
        }
    }))
}

pub fn apply_minmax(x: &TimeSeriesBatch, stats: &StaticStats) -> Result<TimeSeriesBatch> {
    stats.check(x)?;
    Ok(x.map_features(|k, v| {
        let range = stats.max[k] - stats.min[k];
        if range > 0.0 {
            (v - stats.min[k]) / range
        } else {
            0.5
        }
    }))
}

/// Min-max scaling to the training range. Values outside it extrapolate
/// linearly (no clipping).
pub fn fit_apply_minmax(train: &TimeSeriesBatch, x: &TimeSeriesBatch) -> Result<TimeSeriesBatch> {
    apply_minmax(x, &fit_basic(train)?)
}

pub fn fit_winsorize(train: &TimeSeriesBatch, lower_q: f64, upper_q: f64) -> Result<StaticStats> {
    if !(0.0..=1.0).contains(&lower_q) || !(0.0..=1.0).contains(&upper_q) || lower_q >= upper_q {
        return Err(Error::InvalidArgument(format!(
            "winsorization quantiles must satisfy 0 <= lower < upper <= 1, got ({lower_q}, {upper_q})"
        )));
    }
    let mut s = fit_basic(train)?;
    for k in 0..train.d() {
        let mut v = train.feature_values(k);
        v.sort_by(f64::total_cmp);
        s.lower_clip[k] = quantile_sorted(&v, lower_q);
        s.upper_clip[k] = quantile_sorted(&v, upper_q);
    }
    Ok(s)
}

pub fn apply_winsorize(x: &TimeSeriesBatch, stats: &StaticStats) -> Result<TimeSeriesBatch> {
    stats.check(x)?;
    Ok(x.map_features(|k, v| v.clamp(stats.lower_clip[k], stats.upper_clip[k])))
}

/// Gaussian profile log-likelihood of the Yeo-Johnson transformed sample.
pub fn yeo_johnson_log_likelihood(values: &[f64], lambda: f64) -> f64 {
    let n = values.len() as f64;
    let transformed: Vec<f64> = values.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let (_, std) = mean_std(&transformed);
    let jacobian: f64 = values.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    -0.5 * n * (std * std).ln() + (lambda - 1.0) * jacobian
}

const YJ_SEARCH: (f64, f64) = (-5.0, 5.0);
const YJ_TOL: f64 = 1e-6;

/// Maximizes [`yeo_johnson_log_likelihood`] over `[-5, 5]` by golden-section
/// search.
pub fn fit_yeo_johnson_lambda(values: &[f64]) -> Result<f64> {
    let objective = |l: f64| yeo_johnson_log_likelihood(values, l);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = YJ_SEARCH;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = objective(c);
    let mut fd = objective(d);
    while b - a > YJ_TOL {
        if !fc.is_finite() || !fd.is_finite() {
            return Err(Error::NonFinite(format!(
                "Yeo-Johnson likelihood at lambda in [{a}, {b}]"
            )));
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    Ok(0.5 * (a + b))
}

pub fn fit_yeo_johnson_static(train: &TimeSeriesBatch) -> Result<StaticStats> {
    let mut s = fit_basic(train)?;
    for k in 0..train.d() {
        if s.constant[k] {
            continue;
        }
        s.lambda[k] = fit_yeo_johnson_lambda(&train.feature_values(k)).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("feature {k}: {msg}")),
            other => other,
        })?;
    }
    Ok(s)
}

pub fn apply_yeo_johnson(x: &TimeSeriesBatch, stats: &StaticStats) -> Result<TimeSeriesBatch> {
    stats.check(x)?;
    Ok(x.map_features(|k, v| yeo_johnson(v, stats.lambda[k])))
}

pub fn fit_quantiles(train: &TimeSeriesBatch) -> Result<StaticStats> {
    let mut s = fit_basic(train)?;
    let total = (train.n() * train.t()) as f64;
    for k in 0..train.d() {
        let mut v = train.feature_values(k);
        v.sort_by(f64::total_cmp);
        let mut grid: Vec<(f64, f64)> = Vec::new();
        let mut start = 0;
        while start < v.len() {
            let mut end = start + 1;
            while end < v.len() && v[end] == v[start] {
                end += 1;
            }
            let count = (end - start) as f64;
            grid.push((v[start], (start as f64 + 0.5 * count) / total));
            start = end;
        }
        s.quantile_grid.push(grid);
    }
    Ok(s)
}

/// Empirical CDF of the grid, linear between grid points and clipped to
/// `[CDF_CLIP, 1 - CDF_CLIP]`; values below the minimum map to `CDF_CLIP`.
pub fn empirical_cdf(grid: &[(f64, f64)], x: f64) -> f64 {
    let first = grid[0];
    let last = grid[grid.len() - 1];
    let p = if x < first.0 {
        0.0
    } else if x > last.0 {
        1.0
    } else {
        let j = grid.partition_point(|&(v, _)| v <= x);
        if j == 0 {
            first.1
        } else if j >= grid.len() {
            last.1
        } else {
            let (x0, p0) = grid[j - 1];
            let (x1, p1) = grid[j];
            p0 + (x - x0) / (x1 - x0) * (p1 - p0)
        }
    };
    p.clamp(CDF_CLIP, 1.0 - CDF_CLIP)
}

pub fn apply_cdf_inversion(x: &TimeSeriesBatch, stats: &StaticStats) -> Result<TimeSeriesBatch> {
    stats.check(x)?;
    if stats.quantile_grid.len() != stats.d() {
        return Err(Error::InvalidArgument("statistics carry no quantile grid".into()));
    }
    Ok(x.map_features(|k, v| normal_quantile(empirical_cdf(&stats.quantile_grid[k], v))))
}

pub fn fit_apply_cdf_inversion(train: &TimeSeriesBatch, x: &TimeSeriesBatch) -> Result<TimeSeriesBatch> {
    apply_cdf_inversion(x, &fit_quantiles(train)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KditConfig {
    pub alpha: f64,
    pub grid_size: usize,
}

impl Default for KditConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            grid_size: 2048,
        }
    }
}

/// Fitted kernel-smoothed CDF of one feature, tabulated on a grid spanning
/// `[min - 3h, max + 3h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KditFeature {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Kernel CDF at the training minimum and maximum, used to rescale the
    /// output onto `[0, 1]` over the training range.
    pub cdf_min: f64,
    pub cdf_max: f64,
    pub constant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KditModel {
    pub config: KditConfig,
    pub features: Vec<KditFeature>,
}

fn kernel_cdf(sorted: &[f64], h: f64, x: f64) -> f64 {
    let lo = sorted.partition_point(|&v| v < x - 9.0 * h);
    let hi = sorted.partition_point(|&v| v <= x + 9.0 * h);
    let smooth: f64 = sorted[lo..hi].iter().map(|&v| normal_cdf((x - v) / h)).sum();
    (lo as f64 + smooth) / sorted.len() as f64
}

pub fn fit_kdit(train: &TimeSeriesBatch, config: KditConfig) -> Result<KditModel> {
    if !(config.alpha > 0.0) || config.grid_size < 2 {
        return Err(Error::InvalidArgument(
            "KDIT needs alpha > 0 and grid_size >= 2".into(),
        ));
    }
    let basic = fit_basic(train)?;
    let count = (train.n() * train.t()) as f64;
    let mut features = Vec::with_capacity(train.d());
    for k in 0..train.d() {
        if basic.constant[k] {
            features.push(KditFeature {
                bandwidth: 0.0,
                grid: vec![],
                cdf: vec![],
                cdf_min: 0.0,
                cdf_max: 1.0,
                constant: true,
            });
            continue;
        }
        let mut v = train.feature_values(k);
        v.sort_by(f64::total_cmp);
        let h = config.alpha * basic.std[k] * count.powf(-0.2);
        let (lo, hi) = (basic.min[k] - 3.0 * h, basic.max[k] + 3.0 * h);
        let step = (hi - lo) / (config.grid_size - 1) as f64;
        let grid: Vec<f64> = (0..config.grid_size).map(|j| lo + step * j as f64).collect();
        let cdf = grid.iter().map(|&g| kernel_cdf(&v, h, g)).collect();
        features.push(KditFeature {
            bandwidth: h,
            grid,
            cdf,
            cdf_min: kernel_cdf(&v, h, basic.min[k]),
            cdf_max: kernel_cdf(&v, h, basic.max[k]),
            constant: false,
        });
    }
    Ok(KditModel { config, features })
}

impl KditFeature {
    fn eval(&self, x: f64) -> f64 {
        if self.constant {
            return 0.5;
        }
        let n = self.grid.len();
        let raw = if x <= self.grid[0] {
            self.cdf[0]
        } else if x >= self.grid[n - 1] {
            self.cdf[n - 1]
        } else {
            let j = self.grid.partition_point(|&g| g <= x).min(n - 1);
            let (x0, x1) = (self.grid[j - 1], self.grid[j]);
            let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
            c0 + (x - x0) / (x1 - x0) * (c1 - c0)
        };
        (raw - self.cdf_min) / (self.cdf_max - self.cdf_min)
    }
}

pub fn apply_kdit(x: &TimeSeriesBatch, model: &KditModel) -> Result<TimeSeriesBatch> {
    if model.features.len() != x.d() {
        return Err(Error::Shape("KDIT model fitted for a different d".into()));
    }
    Ok(x.map_features(|k, v| model.features[k].eval(v)))
}

pub fn fit_apply_kdit(train: &TimeSeriesBatch, x: &TimeSeriesBatch, config: KditConfig) -> Result<TimeSeriesBatch> {
    apply_kdit(x, &fit_kdit(train, config)?)
}

/// One stage of a static preprocessing pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StaticStep {
    Zscore,
    Minmax,
    Winsorize { lower_q: f64, upper_q: f64 },
    YeoJohnson,
    CdfInversion,
    Kdit(KditConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedStep {
    Zscore { stats: StaticStats },
    Minmax { stats: StaticStats },
    Winsorize { stats: StaticStats },
    YeoJohnson { stats: StaticStats },
    CdfInversion { stats: StaticStats },
    Kdit { model: KditModel },
}

impl FittedStep {
    pub fn apply(&self, x: &TimeSeriesBatch) -> Result<TimeSeriesBatch> {
        match self {
            FittedStep::Zscore { stats } => apply_zscore(x, stats),
            FittedStep::Minmax { stats } => apply_minmax(x, stats),
            FittedStep::Winsorize { stats } => apply_winsorize(x, stats),
            FittedStep::YeoJohnson { stats } => apply_yeo_johnson(x, stats),
            FittedStep::CdfInversion { stats } => apply_cdf_inversion(x, stats),
            FittedStep::Kdit { model } => apply_kdit(x, model),
        }
    }
}

impl StaticStep {
    pub fn fit(&self, train: &TimeSeriesBatch) -> Result<FittedStep> {
        Ok(match *self {
            StaticStep::Zscore => FittedStep::Zscore { stats: fit_zscore(train)? },
            StaticStep::Minmax => FittedStep::Minmax { stats: fit_basic(train)? },
            StaticStep::Winsorize { lower_q, upper_q } => FittedStep::Winsorize {
                stats: fit_winsorize(train, lower_q, upper_q)?,
            },
            StaticStep::YeoJohnson => FittedStep::YeoJohnson {
                stats: fit_yeo_johnson_static(train)?,
            },
            StaticStep::CdfInversion => FittedStep::CdfInversion {
                stats: fit_quantiles(train)?,
            },
            StaticStep::Kdit(config) => FittedStep::Kdit {
                model: fit_kdit(train, config)?,
            },
        })
    }
}

/// Stages applied in order; each is fitted on the training data as transformed
/// by the stages before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub steps: Vec<FittedStep>,
    /// Number of training series the pipeline was fitted on.
    pub fit_rows: usize,
}

impl FittedPipeline {
    pub fn fit(steps: &[StaticStep], train: &TimeSeriesBatch) -> Result<Self> {
        let mut current = train.clone();
        let mut fitted = Vec::with_capacity(steps.len());
        for step in steps {
            let f = step.fit(&current)?;
            current = f.apply(&current)?;
            fitted.push(f);
        }
        Ok(Self {
            steps: fitted,
            fit_rows: train.n(),
        })
    }

    pub fn apply(&self, x: &TimeSeriesBatch) -> Result<TimeSeriesBatch> {
        let mut current = x.clone();
        for step in &self.steps {
            current = step.apply(&current)?;
        }
        Ok(current)
    }
}
