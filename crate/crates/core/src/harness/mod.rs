//! Experiment orchestration: preprocessing selection, cross-validation,
//! training, evaluation and report assembly.

pub mod cv;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveLayer, DainLayer, DainParams, EdainLayer, EdainMode, EdainParams, Sublayers};
use crate::data::{derive_seed, load_csv, rng_from_seed, LabelKind, LabeledDataset, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::flow_kl::{fit_kl, normalize_direction, KlBijectorParams, KlFitConfig};
use crate::metrics::{accuracy, amex_metric, cohen_kappa, macro_f1, predicted_labels, AmexInputs};
use crate::neural::gru::{GruStack, ModelConfig};
use crate::neural::loss::classification_loss;
use crate::neural::optim::{LrCorrections, OptimizerConfig, OptimizerKind};
use crate::neural::train::{predict, train_loop, Preprocessing, TrainConfig};
use crate::static_norm::{FittedPipeline, KditConfig, StaticStep};
use crate::stats::mean_std;
use crate::synthgen::{generate_dataset, SynthConfig};

pub use cv::{anchored_folds, even_boundaries, holdout_indices, kfold_indices, plan_folds, CvScheme, Fold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "zscore")]
    Zscore,
    #[serde(rename = "minmax")]
    Minmax,
    #[serde(rename = "winsorize+zscore")]
    WinsorizeZscore,
    #[serde(rename = "zscore+yj")]
    ZscoreYj,
    #[serde(rename = "winsorize+zscore+yj")]
    WinsorizeZscoreYj,
    #[serde(rename = "cdf_inversion")]
    CdfInversion,
    #[serde(rename = "kdit")]
    Kdit,
    #[serde(rename = "dain")]
    Dain,
    #[serde(rename = "edain_global")]
    EdainGlobal,
    #[serde(rename = "edain_local")]
    EdainLocal,
    #[serde(rename = "edain_kl")]
    EdainKl,
}

impl Method {
    pub const ALL: [Method; 12] = [
        Method::None,
        Method::Zscore,
        Method::Minmax,
        Method::WinsorizeZscore,
        Method::ZscoreYj,
        Method::WinsorizeZscoreYj,
        Method::CdfInversion,
        Method::Kdit,
        Method::Dain,
        Method::EdainGlobal,
        Method::EdainLocal,
        Method::EdainKl,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Zscore => "zscore",
            Method::Minmax => "minmax",
            Method::WinsorizeZscore => "winsorize+zscore",
            Method::ZscoreYj => "zscore+yj",
            Method::WinsorizeZscoreYj => "winsorize+zscore+yj",
            Method::CdfInversion => "cdf_inversion",
            Method::Kdit => "kdit",
            Method::Dain => "dain",
            Method::EdainGlobal => "edain_global",
            Method::EdainLocal => "edain_local",
            Method::EdainKl => "edain_kl",
        }
    }

    pub fn is_edain(self) -> bool {
        matches!(self, Method::EdainGlobal | Method::EdainLocal)
    }

    /// Static pipeline stages, or `None` for methods that are not a static
    /// pipeline.
    pub fn static_steps(self, opts: &PreprocessOptions) -> Option<Vec<StaticStep>> {
        let w = StaticStep::Winsorize {
            lower_q: opts.winsorize_lower,
            upper_q: opts.winsorize_upper,
        };
        Some(match self {
            Method::Zscore => vec![StaticStep::Zscore],
            Method::Minmax => vec![StaticStep::Minmax],
            Method::WinsorizeZscore => vec![w, StaticStep::Zscore],
            Method::ZscoreYj => vec![StaticStep::Zscore, StaticStep::YeoJohnson],
            Method::WinsorizeZscoreYj => vec![w, StaticStep::Zscore, StaticStep::YeoJohnson],
            Method::CdfInversion => vec![StaticStep::CdfInversion],
            Method::Kdit => vec![StaticStep::Kdit(opts.kdit)],
            _ => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preprocessing method {s:?}")))
    }
}

/// Tuned learning-rate setups for the three experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Synthetic,
    /// Synthetic setup adjusted for datasets of a few thousand series: no
    /// learning-rate milestones, sublayer corrections of 10 and a pooled
    /// warm start for global-aware EDAIN.
    SyntheticDesk,
    DefaultPrediction,
    Lob,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Preset::Synthetic),
            "synthetic_desk" | "synthetic-desk" => Ok(Preset::SyntheticDesk),
            "default_prediction" | "default-prediction" | "amex" => Ok(Preset::DefaultPrediction),
            "lob" => Ok(Preset::Lob),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }
}

fn corrections(outlier: f64, shift: f64, scale: f64, power: f64) -> LrCorrections {
    LrCorrections {
        outlier,
        shift,
        scale,
        power,
        gate: 1.0,
    }
}

impl Preset {
    /// Sublayer learning-rate corrections for `method` under this preset.
    pub fn corrections(self, method: Method) -> LrCorrections {
        match (self, method) {
            (Preset::Synthetic, _) => LrCorrections::uniform(0.1),
            (Preset::SyntheticDesk, _) => LrCorrections::uniform(10.0),
            (Preset::DefaultPrediction, Method::Dain) => corrections(1.0, 1.0, 1.0, 1.0),
            (Preset::DefaultPrediction, Method::EdainGlobal) => corrections(1e2, 1e-2, 1e-2, 10.0),
            (Preset::DefaultPrediction, Method::EdainLocal) => corrections(10.0, 1.0, 1.0, 10.0),
            (Preset::DefaultPrediction, Method::EdainKl) => corrections(1e2, 10.0, 10.0, 1e-7),
            (Preset::Lob, Method::Dain) => corrections(1.0, 1e-2, 1e-8, 1.0),
            (Preset::Lob, Method::EdainGlobal) => corrections(1e-6, 10.0, 10.0, 1e-3),
            (Preset::Lob, Method::EdainLocal) => corrections(10.0, 1e-2, 1e-4, 10.0),
            (Preset::Lob, Method::EdainKl) => corrections(10.0, 1e-2, 1e-4, 1e-3),
            _ => LrCorrections::uniform(1.0),
        }
    }

    pub fn train_config(self, method: Method) -> TrainConfig {
        let base = TrainConfig {
            corrections: self.corrections(method),
            ..TrainConfig::default()
        };
        match self {
            Preset::Synthetic => base,
            Preset::SyntheticDesk => TrainConfig {
                lr_milestones: Vec::new(),
                ..base
            },
            Preset::DefaultPrediction => TrainConfig {
                batch_size: 1024,
                max_epochs: 40,
                ..base
            },
            Preset::Lob => TrainConfig {
                base_lr: 1e-4,
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::RmsProp,
                    ..OptimizerConfig::default()
                },
                batch_size: 128,
                max_epochs: 20,
                lr_milestones: Vec::new(),
                early_stop_patience: None,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// A fresh dataset per repetition, seeded from the generator seed and the
    /// repetition index.
    Synthetic(SynthConfig),
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    pub winsorize_lower: f64,
    pub winsorize_upper: f64,
    pub kdit: KditConfig,
    /// Start global-aware EDAIN at `m`, `s` equal to the pooled training
    /// mean and standard deviation instead of the identity.
    pub edain_warm_start: bool,
    pub dain_gate_bias: f64,
    pub kl: KlFitConfig,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            winsorize_lower: 0.01,
            winsorize_upper: 0.99,
            kdit: KditConfig::default(),
            edain_warm_start: false,
            dain_gate_bias: 0.0,
            kl: KlFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub method: Method,
    /// EDAIN sublayer subset; all four when absent.
    #[serde(default)]
    pub sublayers: Option<Sublayers>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub preprocess: PreprocessOptions,
    #[serde(default)]
    pub cv: CvScheme,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(data: DataSource, method: Method, preset: Preset) -> Self {
        Self {
            data,
            method,
            sublayers: None,
            model: ModelConfig::default(),
            train: preset.train_config(method),
            preprocess: PreprocessOptions {
                kl: KlFitConfig {
                    corrections: match preset {
                        Preset::Synthetic | Preset::SyntheticDesk => LrCorrections::uniform(1.0),
                        _ => preset.corrections(Method::EdainKl),
                    },
                    ..KlFitConfig::default()
                },
                edain_warm_start: preset == Preset::SyntheticDesk,
                ..PreprocessOptions::default()
            },
            cv: CvScheme::default(),
            repetitions: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sublayers.is_some() && !self.method.is_edain() {
            return Err(Error::InvalidArgument(format!(
                "sublayer flags need an EDAIN method, not {}",
                self.method
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.train.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

/// Fitted preprocessing state, serialisable so that it can be re-applied to
/// new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "snake_case")]
pub enum Checkpoint {
    Identity,
    Static(FittedPipeline),
    Adaptive(AdaptiveLayer),
    Kl(KlBijectorParams),
}

impl Checkpoint {
    /// Applies the preprocessing in evaluation mode.
    pub fn apply(&self, x: &TimeSeriesBatch) -> Result<TimeSeriesBatch> {
        match self {
            Checkpoint::Identity => Ok(x.clone()),
            Checkpoint::Static(p) => p.apply(x),
            Checkpoint::Adaptive(l) => Ok(l.clone().forward(x, false)?.0),
            Checkpoint::Kl(p) => Ok(normalize_direction(x, p)?.0),
        }
    }
}

/// Fits (or, for adaptive layers, initialises) the preprocessing of `method`
/// on the training batch only.
pub fn fit_preprocessing(
    method: Method,
    sublayers: Option<Sublayers>,
    opts: &PreprocessOptions,
    train: &TimeSeriesBatch,
    seed: u64,
) -> Result<Checkpoint> {
    if let Some(steps) = method.static_steps(opts) {
        return Ok(Checkpoint::Static(FittedPipeline::fit(&steps, train)?));
    }
    let d = train.d();
    Ok(match method {
        Method::None => Checkpoint::Identity,
        Method::Dain => Checkpoint::Adaptive(AdaptiveLayer::Dain(DainLayer::new(DainParams::new(
            d,
            opts.dain_gate_bias,
        ))?)),
        Method::EdainGlobal | Method::EdainLocal => {
            let mode = if method == Method::EdainGlobal {
                EdainMode::GlobalAware
            } else {
                EdainMode::LocalAware
            };
            let mut params = EdainParams::new(d, mode);
            params.enabled = sublayers.unwrap_or_default();
            if opts.edain_warm_start && mode == EdainMode::GlobalAware {
                for k in 0..d {
                    let (mean, sd) = mean_std(&train.feature_values(k));
                    params.m[k] = mean;
                    params.s[k] = sd.max(crate::adaptive::edain::S_FLOOR);
                }
            }
            Checkpoint::Adaptive(AdaptiveLayer::Edain(EdainLayer::new(params)?))
        }
        Method::EdainKl => {
            let config = KlFitConfig {
                seed,
                ..opts.kl.clone()
            };
            Checkpoint::Kl(fit_kl(train, &config)?.params)
        }
        _ => unreachable!("static methods handled above"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repetition: usize,
    pub fold: usize,
    pub train_rows: usize,
    pub valid_rows: usize,
    /// FNV-1a hash of the validation indices; equal across runs sharing a
    /// split.
    pub split_fingerprint: u64,
    /// Series count the static preprocessing was fitted on.
    pub preprocess_fit_rows: Option<usize>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation across folds (0 for a single fold).
    pub std: f64,
    /// `1.96 * std / sqrt(k)`.
    pub half_width: f64,
    pub k: usize,
}

impl Aggregate {
    pub fn from_values(v: &[f64]) -> Option<Self> {
        let k = v.len();
        if k == 0 {
            return None;
        }
        let mean = v.iter().sum::<f64>() / k as f64;
        let std = if k > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            half_width: 1.96 * std / (k as f64).sqrt(),
            k,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub folds: Vec<FoldResult>,
    pub aggregate: BTreeMap<String, Aggregate>,
    pub incomplete_folds: usize,
}

impl MetricsReport {
    pub fn from_folds(config: ExperimentConfig, folds: Vec<FoldResult>) -> Self {
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for f in folds.iter().filter(|f| f.error.is_none()) {
            for (name, v) in &f.metrics {
                values.entry(name.clone()).or_default().push(*v);
            }
        }
        let aggregate = values
            .into_iter()
            .filter_map(|(k, v)| Aggregate::from_values(&v).map(|a| (k, a)))
            .collect();
        let incomplete_folds = folds.iter().filter(|f| f.error.is_some()).count();
        Self {
            config,
            folds,
            aggregate,
            incomplete_folds,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).map(|a| a.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table(&self) -> String {
        let mut s = format!("method: {}\n", self.config.method);
        let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>4}", "metric", "mean", "+-95%", "k");
        for (name, a) in &self.aggregate {
            let _ = writeln!(s, "{:<12} {:>12.6} {:>12.6} {:>4}", name, a.mean, a.half_width, a.k);
        }
        if self.incomplete_folds > 0 {
            let _ = writeln!(s, "incomplete folds: {}", self.incomplete_folds);
        }
        s
    }
}

fn fingerprint(idx: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &i in idx {
        for b in (i as u64).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Validation metrics from class probabilities.
pub fn evaluate_predictions(probs: &ndarray::Array2<f64>, data: &LabeledDataset) -> Result<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    m.insert("loss".into(), classification_loss(probs, &data.labels)?.0);
    let pred = predicted_labels(probs);
    m.insert("accuracy".into(), accuracy(&pred, &data.labels)?);
    match data.label_kind {
        LabelKind::Binary => {
            let p = probs.column(0).to_vec();
            let inputs = match &data.weights {
                Some(w) => AmexInputs::with_weights(p, data.labels.clone(), w.clone())?,
                None => AmexInputs::new(p, data.labels.clone())?,
            };
            // Undefined without positives; the metric is simply omitted.
            if let Ok(score) = amex_metric(&inputs) {
                m.insert("amex".into(), score.m);
            }
        }
        LabelKind::Ternary => {
            m.insert("kappa".into(), cohen_kappa(&pred, &data.labels, 3)?);
            m.insert("macro_f1".into(), macro_f1(&pred, &data.labels, 3)?);
        }
    }
    Ok(m)
}

/// Output of one trained fold.
#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub checkpoint: Checkpoint,
    pub model: GruStack,
    pub result: FoldResult,
}

fn train_fold(config: &ExperimentConfig, data: &LabeledDataset, fold: &Fold, seed: u64) -> Result<TrainedFold> {
    let train = data.select(&fold.train);
    let valid = data.select(&fold.valid);
    let classes = match data.label_kind {
        LabelKind::Binary => 1,
        LabelKind::Ternary => 3,
    };
    let mut model = GruStack::new(data.batch.d(), classes, &config.model, &mut rng_from_seed(derive_seed(seed, 7)))?;
    let train_config = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let mut checkpoint = fit_preprocessing(config.method, config.sublayers, &config.preprocess, &train.batch, seed)?;
    let mut fit_rows = None;
    let outcome = match &mut checkpoint {
        Checkpoint::Identity => train_loop(&train, &valid, Preprocessing::None, &mut model, &train_config)?,
        Checkpoint::Static(p) => {
            fit_rows = Some(p.fit_rows);
            train_loop(&train, &valid, Preprocessing::Static(p), &mut model, &train_config)?
        }
        Checkpoint::Kl(p) => {
            fit_rows = Some(train.n());
            let tr = train.with_batch(normalize_direction(&train.batch, p)?.0)?;
            let va = valid.with_batch(normalize_direction(&valid.batch, p)?.0)?;
            train_loop(&tr, &va, Preprocessing::None, &mut model, &train_config)?
        }
        Checkpoint::Adaptive(layer) => {
            train_loop(&train, &valid, Preprocessing::Adaptive(layer), &mut model, &train_config)?
        }
    };
    let probs = match &checkpoint {
        Checkpoint::Adaptive(layer) => predict(&model, Some(layer), &valid.batch)?,
        other => predict(&model, None, &other.apply(&valid.batch)?)?,
    };
    let metrics = evaluate_predictions(&probs, &valid)?;
    Ok(TrainedFold {
        checkpoint,
        model,
        result: FoldResult {
            repetition: 0,
            fold: 0,
            train_rows: train.n(),
            valid_rows: valid.n(),
            split_fingerprint: fingerprint(&fold.valid),
            preprocess_fit_rows: fit_rows,
            best_epoch: Some(outcome.best_epoch),
            epochs_run: Some(outcome.history.len()),
            metrics,
            error: None,
        },
    })
}

/// Datasets and split plans for every repetition; fixed by the seeds alone.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub datasets: Vec<LabeledDataset>,
    pub folds: Vec<Vec<Fold>>,
}

pub fn plan_experiment(config: &ExperimentConfig) -> Result<ExperimentPlan> {
    config.validate()?;
    let mut datasets = Vec::with_capacity(config.repetitions);
    let mut folds = Vec::with_capacity(config.repetitions);
    let csv = match &config.data {
        DataSource::Csv { path } => Some(load_csv(path)?),
        DataSource::Synthetic(_) => None,
    };
    for r in 0..config.repetitions {
        let data = match (&config.data, &csv) {
            (DataSource::Synthetic(s), _) => generate_dataset(&SynthConfig {
                seed: derive_seed(s.seed, r as u64),
                ..s.clone()
            })?,
            (_, Some(d)) => d.clone(),
            _ => unreachable!("csv loaded above"),
        };
        let mut rng = rng_from_seed(derive_seed(derive_seed(config.seed, r as u64), 0));
        folds.push(plan_folds(&config.cv, data.n(), &mut rng)?);
        datasets.push(data);
    }
    Ok(ExperimentPlan { datasets, folds })
}

/// Runs every fold of a prepared plan. Fold failures are recorded in the
/// report rather than aborting the run.
pub fn run_with_plan(config: &ExperimentConfig, plan: &ExperimentPlan) -> Result<(MetricsReport, Vec<TrainedFold>)> {
    config.validate()?;
    let mut results = Vec::new();
    let mut trained = Vec::new();
    for (r, (data, folds)) in plan.datasets.iter().zip(&plan.folds).enumerate() {
        let rep_seed = derive_seed(config.seed, r as u64);
        for (f, fold) in folds.iter().enumerate() {
            match train_fold(config, data, fold, derive_seed(rep_seed, 1 + f as u64)) {
                Ok(mut t) => {
                    t.result.repetition = r;
                    t.result.fold = f;
                    results.push(t.result.clone());
                    trained.push(t);
                }
                Err(e) => results.push(FoldResult {
                    repetition: r,
                    fold: f,
                    train_rows: fold.train.len(),
                    valid_rows: fold.valid.len(),
                    split_fingerprint: fingerprint(&fold.valid),
                    preprocess_fit_rows: None,
                    best_epoch: None,
                    epochs_run: None,
                    metrics: BTreeMap::new(),
                    error: Some(e.to_string()),
                }),
            }
        }
    }
    Ok((MetricsReport::from_folds(config.clone(), results), trained))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    let plan = plan_experiment(config)?;
    Ok(run_with_plan(config, &plan)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<20} {:>12} {:>12} {:>4}\n", "configuration", "loss", "+-95%", "k");
        for row in &self.rows {
            match row.report.aggregate.get("loss") {
                Some(a) => {
                    let _ = writeln!(s, "{:<20} {:>12.6} {:>12.6} {:>4}", row.name, a.mean, a.half_width, a.k);
                }
                None => {
                    let _ = writeln!(s, "{:<20} {:>12} {:>12} {:>4}", row.name, "-", "-", 0);
                }
            }
        }
        s
    }
}

/// The seven sublayer configurations compared in the ablation, in order.
pub fn ablation_rows() -> Vec<(&'static str, Option<Sublayers>)> {
    let sub = |outlier, shift, scale, power| {
        Some(Sublayers {
            outlier,
            shift,
            scale,
            power,
        })
    };
    vec![
        ("zscore", None),
        ("scale", sub(false, false, true, false)),
        ("shift", sub(false, true, false, false)),
        ("shift+scale", sub(false, true, true, false)),
        ("shift+scale+pt", sub(false, true, true, true)),
        ("om+shift+scale", sub(true, true, true, false)),
        ("om+shift+scale+pt", sub(true, true, true, true)),
    ]
}

/// Runs the z-score baseline and six EDAIN sublayer subsets on one shared
/// plan. The EDAIN mode follows `config.method` (global-aware unless it is
/// `edain_local`).
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationReport> {
    let base = ExperimentConfig {
        sublayers: None,
        method: Method::Zscore,
        ..config.clone()
    };
    let plan = plan_experiment(&base)?;
    let edain = if config.method == Method::EdainLocal {
        Method::EdainLocal
    } else {
        Method::EdainGlobal
    };
    let mut rows = Vec::new();
    for (name, sublayers) in ablation_rows() {
        let c = ExperimentConfig {
            method: if sublayers.is_some() { edain } else { Method::Zscore },
            sublayers,
            ..config.clone()
        };
        rows.push(AblationRow {
            name: name.to_string(),
            report: run_with_plan(&c, &plan)?.0,
        });
    }
    Ok(AblationReport { rows })
}
