//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use crate::data::{load_csv, save_csv, LabelKind, LabeledDataset};
use crate::error::{Error, Result};
use crate::flow_kl::{fit_kl, KlFitConfig, KlFitResult};
use crate::harness::{
    evaluate_predictions, even_boundaries, fit_preprocessing, plan_experiment, run_ablation, run_with_plan,
    Checkpoint, CvScheme, DataSource, ExperimentConfig, Method, Preset,
};
use crate::synthgen::{generate_dataset, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "edain", version, about = "Adaptive normalization experiments for multivariate time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    Generate(GenerateArgs),
    /// Train and evaluate a model with cross-validation.
    Train(RunArgs),
    /// Score a file of predicted probabilities against labels.
    Evaluate(EvaluateArgs),
    /// Run the seven-row sublayer ablation on shared folds.
    Ablate(RunArgs),
    /// Fit the EDAIN-KL bijector by maximum likelihood.
    KlFit(KlFitArgs),
    /// Apply (optionally after fitting) a preprocessing checkpoint to a CSV.
    Preprocess(PreprocessArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Built-in setup `synthK` with the first K of the densities f1, f2, f3.
    #[arg(long, conflicts_with = "config")]
    builtin: Option<String>,
    /// Generator configuration as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    /// Number of features; built-in densities are reused cyclically.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment configuration as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV; overrides the configured data source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// synthetic | synthetic_desk | default_prediction | lob
    #[arg(long)]
    preset: Option<String>,
    /// holdout | holdout:FRACTION | kfold:K | anchored:SEGMENTS
    #[arg(long)]
    cv: Option<String>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to save the fitted preprocessing of the first fold.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// CSV with a `label` column, probability columns and optional `weight`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KlFitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fit configuration as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fit this method on `--data` and write `--checkpoint` first.
    #[arg(long)]
    fit: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::KlFit(a) => kl_fit(a),
        Command::Preprocess(a) => preprocess(a),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_string(path, &s)
}

fn builtin_config(name: &str, n: usize, seed: u64) -> Result<SynthConfig> {
    let k: usize = name
        .strip_prefix("synth")
        .and_then(|k| k.parse().ok())
        .filter(|k| (1..=3).contains(k))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown built-in {name:?}; use synth1, synth2 or synth3")))?;
    let mut c = SynthConfig::builtin(n, seed);
    c.features.truncate(k);
    Ok(c)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => serde_json::from_str::<SynthConfig>(&read_to_string(p)?)?,
        None => builtin_config(a.builtin.as_deref().unwrap_or("synth3"), 1000, 0)?,
    };
    if let Some(n) = a.n {
        config.n = n;
    }
    if let Some(t) = a.t {
        config.t = t;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(d) = a.d {
        if d == 0 {
            return Err(Error::InvalidArgument("d must be positive".into()));
        }
        let base = config.features.clone();
        config.features = (0..d).map(|j| base[j % base.len()].clone()).collect();
    }
    let data = generate_dataset(&config)?;
    save_csv(&data, &a.out)?;
    let positives: usize = data.labels.iter().sum();
    println!(
        "wrote {} series (d = {}, T = {}), positive rate {:.4}, to {}",
        data.n(),
        data.batch.d(),
        data.batch.t(),
        positives as f64 / data.n() as f64,
        a.out.display()
    );
    Ok(())
}

fn parse_cv(s: &str, n_hint: Option<usize>) -> Result<CvScheme> {
    let (kind, arg) = s.split_once(':').map_or((s, None), |(k, v)| (k, Some(v)));
    let bad = || Error::InvalidArgument(format!("cannot parse cross-validation scheme {s:?}"));
    match kind {
        "holdout" => Ok(CvScheme::Holdout {
            valid_fraction: arg.map(str::parse).transpose().map_err(|_| bad())?.unwrap_or(0.2),
        }),
        "kfold" => Ok(CvScheme::Kfold {
            k: arg.ok_or_else(bad)?.parse().map_err(|_| bad())?,
        }),
        "anchored" => {
            let segments: usize = arg.ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let n = n_hint.ok_or_else(|| Error::InvalidArgument("anchored CV needs a CSV dataset".into()))?;
            Ok(CvScheme::Anchored {
                boundaries: even_boundaries(n, segments)?,
            })
        }
        _ => Err(bad()),
    }
}

/// Builds the experiment configuration from `--config` and flag overrides.
fn run_config(a: &RunArgs, default_method: Method) -> Result<ExperimentConfig> {
    let method = a.method.as_deref().map(str::parse::<Method>).transpose()?;
    let preset = a.preset.as_deref().map(str::parse::<Preset>).transpose()?;
    let mut config = match &a.config {
        Some(p) => {
            let mut c: ExperimentConfig = serde_json::from_str(&read_to_string(p)?)?;
            if let Some(m) = method {
                c.method = m;
            }
            if let Some(p) = preset {
                c.train = p.train_config(c.method);
            }
            c
        }
        None => {
            let data = match &a.data {
                Some(path) => DataSource::Csv { path: path.clone() },
                None => return Err(Error::InvalidArgument("give --data or --config".into())),
            };
            ExperimentConfig::new(data, method.unwrap_or(default_method), preset.unwrap_or(Preset::SyntheticDesk))
        }
    };
    if let Some(path) = &a.data {
        config.data = DataSource::Csv { path: path.clone() };
    }
    if let Some(cv) = &a.cv {
        let n = match &config.data {
            DataSource::Csv { path } => Some(load_csv(path)?.n()),
            DataSource::Synthetic(s) => Some(s.n),
        };
        config.cv = parse_cv(cv, n)?;
    }
    if let Some(r) = a.repetitions {
        config.repetitions = r;
    }
    if let Some(e) = a.epochs {
        config.train.max_epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn train(a: RunArgs) -> Result<()> {
    let config = run_config(&a, Method::Zscore)?;
    let start = Instant::now();
    let plan = plan_experiment(&config)?;
    let (report, trained) = run_with_plan(&config, &plan)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    write_json(&out, &report)?;
    if let Some(path) = &a.checkpoint {
        let first = trained
            .first()
            .ok_or_else(|| Error::NonFinite("no fold finished; nothing to checkpoint".into()))?;
        write_json(path, &first.checkpoint)?;
    }
    print!("{}", report.table());
    println!("runtime: {:.1}s", start.elapsed().as_secs_f64());
    println!("report: {}", out.display());
    if report.incomplete_folds == report.folds.len() {
        let msg = report.folds.first().and_then(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::Numerical(format!("every fold failed: {msg}")));
    }
    Ok(())
}

fn ablate(a: RunArgs) -> Result<()> {
    let config = run_config(&a, Method::EdainGlobal)?;
    let start = Instant::now();
    let report = run_ablation(&config)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("ablation.json"));
    write_json(&out, &report)?;
    print!("{}", report.table());
    println!("runtime: {:.1}s", start.elapsed().as_secs_f64());
    println!("report: {}", out.display());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<(Array2<f64>, LabeledDataset)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let label_col = col("label").ok_or_else(|| parse_err(1, "missing `label` column".into()))?;
    let weight_col = col("weight");
    let prob_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_col && Some(i) != weight_col)
        .collect();
    let kind = match prob_cols.len() {
        1 => LabelKind::Binary,
        3 => LabelKind::Ternary,
        k => return Err(parse_err(1, format!("expected 1 or 3 probability columns, found {k}"))),
    };
    let (mut probs, mut labels, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| parse_err(line, format!("column {} is not a number", c + 1)))
        };
        let y = num(label_col)?;
        if y.fract() != 0.0 || y < 0.0 {
            return Err(parse_err(line, format!("label {y} is not a class index")));
        }
        labels.push(y as usize);
        for &c in &prob_cols {
            probs.push(num(c)?);
        }
        if let Some(c) = weight_col {
            weights.push(num(c)?);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Empty("prediction file"));
    }
    let probs = Array2::from_shape_vec((n, prob_cols.len()), probs).map_err(|e| Error::Shape(e.to_string()))?;
    let batch = crate::data::TimeSeriesBatch::zeros(n, 1, 1);
    let mut data = LabeledDataset::new(batch, labels, kind)?;
    if weight_col.is_some() {
        let total: f64 = weights.iter().sum();
        data = data.with_weights(weights.iter().map(|w| w / total).collect())?;
    }
    Ok((probs, data))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (probs, data) = read_predictions(&a.predictions)?;
    let metrics = evaluate_predictions(&probs, &data)?;
    if let Some(out) = &a.out {
        write_json(out, &metrics)?;
    }
    for (k, v) in &metrics {
        println!("{k:<12} {v:.6}");
    }
    Ok(())
}

#[derive(Serialize)]
struct KlFitOutput<'a> {
    config: &'a KlFitConfig,
    #[serde(flatten)]
    result: &'a KlFitResult,
}

fn kl_fit(a: KlFitArgs) -> Result<()> {
    let data = load_csv(&a.data)?;
    let mut config = match &a.config {
        Some(p) => serde_json::from_str(&read_to_string(p)?)?,
        None => KlFitConfig::default(),
    };
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let result = fit_kl(&data.batch, &config)?;
    write_json(
        &a.out,
        &KlFitOutput {
            config: &config,
            result: &result,
        },
    )?;
    println!("initial NLL {:.6}", result.initial_nll);
    println!("final NLL   {:.6}", result.final_nll);
    println!("{:<8} {:>12} {:>12} {:>12} {:>12}", "feature", "beta", "m", "s", "lambda");
    let p = &result.params;
    for k in 0..p.d() {
        println!("{:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6}", k + 1, p.beta[k], p.m[k], p.s[k], p.lambda[k]);
    }
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let data = load_csv(&a.data)?;
    let checkpoint = match &a.fit {
        Some(m) => {
            let method: Method = m.parse()?;
            let opts = ExperimentConfig::new(DataSource::Csv { path: a.data.clone() }, method, Preset::SyntheticDesk).preprocess;
            let c = fit_preprocessing(method, None, &opts, &data.batch, a.seed)?;
            write_json(&a.checkpoint, &c)?;
            c
        }
        None => serde_json::from_str::<Checkpoint>(&read_to_string(&a.checkpoint)?)?,
    };
    let out = data.with_batch(checkpoint.apply(&data.batch)?)?;
    save_csv(&out, &a.out)?;
    let (n, d, t) = out.batch.shape();
    println!("wrote {n} x {d} x {t} to {}", a.out.display());
    Ok(())
}
