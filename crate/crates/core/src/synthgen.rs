//! Synthetic multivariate time series with prescribed marginals, moving-average
//! temporal correlation and a noisy linear response.
//!
//! Each dataset draws a covariance over all `d * T` coordinates (flattened as
//! `j * T + t`), a single set of response coefficients, and then per series a
//! correlated Gaussian vector that is mapped to uniforms, to a label, and to
//! observations through numeric inverse CDFs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use evalexpr::{
    build_operator_tree, ContextWithMutableFunctions, ContextWithMutableVariables, DefaultNumericTypes,
    Function, HashMapContext, Node, Value,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{rng_from_seed, LabelKind, LabeledDataset, Rng, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::stats::{normal_cdf, normal_pdf};

const CHOLESKY_JITTER: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinPdf {
    F1,
    F2,
    F3,
}

impl BuiltinPdf {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            BuiltinPdf::F1 => {
                let bump = if x > 8.0 && x < 9.5 { (x - 8.0).exp() / 10.0 } else { 0.0 };
                10.0 * normal_cdf(10.0 * (x + 4.0)) * normal_pdf(x + 4.0) + bump
            }
            BuiltinPdf::F2 => {
                if x > std::f64::consts::PI {
                    20.0 * normal_pdf(x - 20.0)
                } else {
                    (x / 6.0).exp() * (10.0 * x.sin() + 10.0)
                }
            }
            BuiltinPdf::F3 => 2.0 * normal_cdf(-4.0 * (x - 4.0)) * normal_pdf(x - 4.0),
        }
    }
}

/// An unnormalised density, either built in or a closed-form expression in
/// `x`. Expressions may use the `math::*` functions of `evalexpr` plus
/// `norm_pdf(x)`, `norm_cdf(x)` and the constant `pi`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PdfSpec {
    Builtin { name: BuiltinPdf },
    Expression { expr: String },
}

enum CompiledPdf {
    Builtin(BuiltinPdf),
    Expr(Node<DefaultNumericTypes>, HashMapContext<DefaultNumericTypes>),
}

fn expr_error(spec: &str, e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("pdf expression `{spec}`: {e}"))
}

fn unary(f: fn(f64) -> f64) -> Function<DefaultNumericTypes> {
    Function::new(move |v: &Value<DefaultNumericTypes>| Ok(Value::Float(f(v.as_number()?))))
}

impl CompiledPdf {
    fn new(spec: &PdfSpec) -> Result<Self> {
        match spec {
            PdfSpec::Builtin { name } => Ok(CompiledPdf::Builtin(*name)),
            PdfSpec::Expression { expr } => {
                let node = build_operator_tree::<DefaultNumericTypes>(expr).map_err(|e| expr_error(expr, e))?;
                let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
                ctx.set_function("norm_pdf".into(), unary(normal_pdf))
                    .and_then(|_| ctx.set_function("norm_cdf".into(), unary(normal_cdf)))
                    .and_then(|_| ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI)))
                    .map_err(|e| expr_error(expr, e))?;
                Ok(CompiledPdf::Expr(node, ctx))
            }
        }
    }

    fn eval(&mut self, x: f64) -> Result<f64> {
        match self {
            CompiledPdf::Builtin(b) => Ok(b.eval(x)),
            CompiledPdf::Expr(node, ctx) => {
                ctx.set_value("x".into(), Value::Float(x)).map_err(|e| expr_error(&node.to_string(), e))?;
                node.eval_number_with_context(ctx).map_err(|e| expr_error(&node.to_string(), e))
            }
        }
    }
}

/// Evaluates an unnormalised density at `x`.
pub fn eval_pdf(spec: &PdfSpec, x: f64) -> Result<f64> {
    CompiledPdf::new(spec)?.eval(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub pdf: PdfSpec,
    pub lower: f64,
    pub upper: f64,
    /// Grid step of the inverse-CDF table; `None` means `1e-3 * (upper - lower)`.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Moving-average coefficients with `theta[0] = -1`.
    pub theta: Vec<f64>,
    #[serde(default = "one")]
    pub sigma_eps: f64,
}

fn one() -> f64 {
    1.0
}

impl FeatureSpec {
    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(1e-3 * (self.upper - self.lower))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub t: usize,
    pub features: Vec<FeatureSpec>,
    pub sigma_cor: f64,
    pub sigma_zeta: f64,
    pub sigma_beta: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// The three-feature setup with densities f1, f2, f3 and `T = 10`.
    pub fn builtin(n: usize, seed: u64) -> Self {
        let feature = |name, lower, upper, theta: [f64; 4]| FeatureSpec {
            pdf: PdfSpec::Builtin { name },
            lower,
            upper,
            delta: None,
            theta: theta.to_vec(),
            sigma_eps: 1.0,
        };
        Self {
            n,
            t: 10,
            features: vec![
                feature(BuiltinPdf::F1, -8.0, 10.0, [-1.0, 0.5, -0.2, 0.8]),
                feature(BuiltinPdf::F2, -30.0, 30.0, [-1.0, 0.3, 0.9, 0.0]),
                feature(BuiltinPdf::F3, -1.0, 7.0, [-1.0, 0.8, 0.3, -0.9]),
            ],
            sigma_cor: 1.4,
            sigma_zeta: 0.5,
            sigma_beta: 2.0,
            seed,
        }
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 || self.features.is_empty() {
            return Err(Error::InvalidArgument("N, T and d must be positive".into()));
        }
        for (j, f) in self.features.iter().enumerate() {
            if !(f.lower < f.upper) {
                return Err(Error::InvalidArgument(format!("feature {j}: lower bound must be below upper")));
            }
            if !(f.delta() > 0.0) {
                return Err(Error::InvalidArgument(format!("feature {j}: grid step must be positive")));
            }
            if f.theta.first() != Some(&-1.0) {
                return Err(Error::InvalidArgument(format!("feature {j}: theta[0] must be -1")));
            }
            if f.theta[1..].iter().any(|v| !(v.abs() < 1.0)) {
                return Err(Error::InvalidArgument(format!("feature {j}: MA coefficients must lie in (-1, 1)")));
            }
            if !(f.sigma_eps > 0.0) {
                return Err(Error::InvalidArgument(format!("feature {j}: sigma_eps must be positive")));
            }
        }
        if !(self.sigma_cor > 0.0 && self.sigma_zeta > 0.0 && self.sigma_beta > 0.0) {
            return Err(Error::InvalidArgument("noise scales must be positive".into()));
        }
        Ok(())
    }
}

/// Lag-`tau` autocovariance of an MA(q) process with coefficients `theta`.
pub fn ma_autocovariance(theta: &[f64], sigma_eps: f64, tau: usize) -> f64 {
    if tau >= theta.len() {
        return 0.0;
    }
    sigma_eps * sigma_eps * (0..theta.len() - tau).map(|j| theta[j] * theta[j + tau]).sum::<f64>()
}

/// Covariance over the flattened coordinates: MA blocks along the diagonal,
/// every other entry drawn `N(0, sigma_cor^2)` on the upper triangle and
/// mirrored.
pub fn build_covariance(config: &SynthConfig, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let (d, t) = (config.d(), config.t);
    let noise = Normal::new(0.0, config.sigma_cor).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let dim = d * t;
    let mut sigma = DMatrix::zeros(dim, dim);
    for r in 0..dim {
        for c in r..dim {
            let (jr, tr) = (r / t, r % t);
            let (jc, tc) = (c / t, c % t);
            let v = if jr == jc {
                let f = &config.features[jr];
                ma_autocovariance(&f.theta, f.sigma_eps, tr.abs_diff(tc))
            } else {
                noise.sample(rng)
            };
            sigma[(r, c)] = v;
            sigma[(c, r)] = v;
        }
    }
    Ok(sigma)
}

/// Frobenius-nearest positive semidefinite matrix: negative eigenvalues are
/// clipped to zero.
pub fn nearest_psd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::Shape("covariance must be square".into()));
    }
    let scale = sigma.amax().max(1.0);
    if (sigma - sigma.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument("nearest_psd needs a symmetric matrix".into()));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Draws `n_samples` rows of `Phi(N_i / sqrt(Sigma_ii))` with
/// `N ~ N(0, sigma_psd)`, row-major `n_samples x dim`. Coordinates with zero
/// variance map to 0.5.
pub fn sample_correlated_uniforms(sigma_psd: &DMatrix<f64>, n_samples: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let dim = sigma_psd.nrows();
    let jittered = sigma_psd + DMatrix::identity(dim, dim) * CHOLESKY_JITTER;
    let chol = nalgebra::Cholesky::new(jittered.clone()).ok_or_else(|| {
        let min = SymmetricEigen::new(jittered).eigenvalues.min();
        Error::Numerical(format!("Cholesky factorisation failed, min eigenvalue {min:e}"))
    })?;
    let l = chol.l();
    let sd: Vec<f64> = (0..dim).map(|i| sigma_psd[(i, i)].max(0.0).sqrt()).collect();
    let mut out = Vec::with_capacity(n_samples * dim);
    let mut z = DVector::zeros(dim);
    for _ in 0..n_samples {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let g = &l * &z;
        out.extend(g.iter().zip(&sd).map(|(&g, &s)| if s > 0.0 { normal_cdf(g / s) } else { 0.5 }));
    }
    Ok(out)
}

/// Normalised cumulative trapezoid integral of a density on an even grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseCdfTable {
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl InverseCdfTable {
    pub fn build(pdf: &PdfSpec, lower: f64, upper: f64, delta: f64) -> Result<Self> {
        if !(lower < upper) || !(delta > 0.0) {
            return Err(Error::InvalidArgument("inverse CDF needs lower < upper and a positive step".into()));
        }
        let steps = ((upper - lower) / delta).round().max(1.0) as usize;
        let h = (upper - lower) / steps as f64;
        let grid: Vec<f64> = (0..=steps)
            .map(|i| if i == steps { upper } else { lower + i as f64 * h })
            .collect();
        let mut f = CompiledPdf::new(pdf)?;
        let mut dens = Vec::with_capacity(grid.len());
        for &x in &grid {
            let v = f.eval(x)?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("density is {v} at x = {x}")));
            }
            dens.push(v);
        }
        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..grid.len() {
            acc += 0.5 * (dens[i] + dens[i - 1]) * (grid[i] - grid[i - 1]);
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidArgument("density has zero total mass on its bounds".into()));
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Ok(Self { grid, cdf })
    }

    /// Smallest grid point whose CDF value reaches `u`.
    pub fn lookup(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u);
        self.grid[i.min(self.grid.len() - 1)]
    }
}

type TableKey = (PdfSpec, u64, u64, u64);

fn table_cache() -> &'static Mutex<HashMap<TableKey, Arc<InverseCdfTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<InverseCdfTable>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Process-wide memoised [`InverseCdfTable::build`].
pub fn cached_inverse_cdf(pdf: &PdfSpec, lower: f64, upper: f64, delta: f64) -> Result<Arc<InverseCdfTable>> {
    let key = (pdf.clone(), lower.to_bits(), upper.to_bits(), delta.to_bits());
    if let Some(t) = table_cache().lock().expect("table cache poisoned").get(&key) {
        return Ok(Arc::clone(t));
    }
    let table = Arc::new(InverseCdfTable::build(pdf, lower, upper, delta)?);
    table_cache()
        .lock()
        .expect("table cache poisoned")
        .insert(key, Arc::clone(&table));
    Ok(table)
}

/// A dataset together with its latent uniforms (`n x dT`, coordinate
/// `j * T + t`) and response coefficients.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub dataset: LabeledDataset,
    pub uniforms: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn generate_with_latents(config: &SynthConfig) -> Result<SynthSample> {
    config.validate()?;
    let (n, d, t) = (config.n, config.d(), config.t);
    let dim = d * t;
    let tables = config
        .features
        .iter()
        .map(|f| cached_inverse_cdf(&f.pdf, f.lower, f.upper, f.delta()))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = rng_from_seed(config.seed);
    let sigma = nearest_psd(&build_covariance(config, &mut rng)?)?;
    let beta_dist =
        Normal::new(1.0 / dim as f64, config.sigma_beta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let beta: Vec<f64> = (0..dim).map(|_| beta_dist.sample(&mut rng)).collect();
    let uniforms = sample_correlated_uniforms(&sigma, n, &mut rng)?;
    let zeta = Normal::new(0.0, config.sigma_zeta).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut labels = Vec::with_capacity(n);
    let mut batch = TimeSeriesBatch::zeros(n, d, t);
    for i in 0..n {
        let u = &uniforms[i * dim..(i + 1) * dim];
        let score: f64 = beta.iter().zip(u).map(|(b, u)| b * u).sum::<f64>() + zeta.sample(&mut rng);
        labels.push(usize::from(score > 0.5));
        for j in 0..d {
            for s in 0..t {
                batch.set(i, j, s, tables[j].lookup(u[j * t + s]));
            }
        }
    }
    let dataset = LabeledDataset::new(batch, labels, LabelKind::Binary)?;
    Ok(SynthSample {
        dataset,
        uniforms,
        beta,
    })
}

pub fn generate_dataset(config: &SynthConfig) -> Result<LabeledDataset> {
    Ok(generate_with_latents(config)?.dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ma_autocovariance_values() {
        assert_eq!(ma_autocovariance(&[-1.0], 1.0, 0), 1.0);
        let th = [-1.0, 0.5, -0.2, 0.8];
        assert!((ma_autocovariance(&th, 1.0, 0) - 1.93).abs() < 1e-12);
        assert!((ma_autocovariance(&th, 1.0, 1) + 0.76).abs() < 1e-12);
        assert_eq!(ma_autocovariance(&th, 1.0, 4), 0.0);
    }

    #[test]
    fn f1_closed_form() {
        assert!((BuiltinPdf::F1.eval(-4.0) - 1.994_711_402).abs() < 1e-8);
        let without_bump = 10.0 * normal_cdf(125.0) * normal_pdf(12.5);
        assert!((BuiltinPdf::F1.eval(8.5) - without_bump - 0.5f64.exp() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn expression_matches_builtin() {
        let spec = PdfSpec::Expression {
            expr: "2 * norm_cdf(-4 * (x - 4)) * norm_pdf(x - 4)".into(),
        };
        for x in [-1.0, 0.3, 4.0, 6.9] {
            assert!((eval_pdf(&spec, x).unwrap() - BuiltinPdf::F3.eval(x)).abs() < 1e-15);
        }
        let bad = PdfSpec::Expression { expr: "x +".into() };
        assert!(eval_pdf(&bad, 0.0).is_err());
    }

    #[test]
    fn nearest_psd_clips() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = nearest_psd(&m).unwrap();
        assert!((p - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-15);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(nearest_psd(&asym).is_err());
    }

    #[test]
    fn uniform_table_lookup() {
        let spec = PdfSpec::Expression { expr: "1.0".into() };
        let t = InverseCdfTable::build(&spec, 0.0, 1.0, 1e-3).unwrap();
        assert!((t.lookup(0.25) - 0.25).abs() <= 1e-3);
        let zero = PdfSpec::Expression { expr: "0.0".into() };
        assert!(InverseCdfTable::build(&zero, 0.0, 1.0, 1e-3).is_err());
    }

    #[test]
    fn zero_variance_maps_to_half() {
        let mut rng = rng_from_seed(1);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let u = sample_correlated_uniforms(&s, 5, &mut rng).unwrap();
        assert!(u.chunks(2).all(|r| r[1] == 0.5 && r[0] > 0.0 && r[0] < 1.0));
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset(&SynthConfig::builtin(50, 3)).unwrap();
        let b = generate_dataset(&SynthConfig::builtin(50, 3)).unwrap();
        assert_eq!(a, b);
    }
}
