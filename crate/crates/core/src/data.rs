//! Labeled multivariate time series, CSV IO and batch iteration.
//!
//! Values are stored row-major as `[series][feature][timestep]`. Callers go
//! through the accessors rather than computing offsets themselves.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random generator used everywhere in the crate. ChaCha8 gives the same
/// stream for a seed on every platform.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed for independent work items (folds, repetitions), mixed with
/// the SplitMix64 finaliser so that nearby parents and indices do not collide.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesBatch {
    n: usize,
    d: usize,
    t: usize,
    values: Vec<f64>,
}

impl TimeSeriesBatch {
    pub fn new(n: usize, d: usize, t: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 || t == 0 {
            return Err(Error::Shape(format!(
                "feature and time dimensions must be positive, got d={d}, T={t}"
            )));
        }
        if values.len() != n * d * t {
            return Err(Error::Shape(format!(
                "expected {} values for N={n}, d={d}, T={t}, got {}",
                n * d * t,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, k, s) = (pos / (d * t), (pos / t) % d, pos % t);
            return Err(Error::NonFinite(format!(
                "series {i}, feature {k}, timestep {s}"
            )));
        }
        Ok(Self { n, d, t, values })
    }

    pub fn zeros(n: usize, d: usize, t: usize) -> Self {
        Self {
            n,
            d,
            t,
            values: vec![0.0; n * d * t],
        }
    }

    /// Builds a batch from a closure `(series, feature, timestep) -> value`.
    pub fn from_fn(n: usize, d: usize, t: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * d * t);
        for i in 0..n {
            for k in 0..d {
                for s in 0..t {
                    values.push(f(i, k, s));
                }
            }
        }
        Self { n, d, t, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.d, self.t)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    fn offset(&self, i: usize, k: usize, s: usize) -> usize {
        debug_assert!(i < self.n && k < self.d && s < self.t);
        (i * self.d + k) * self.t + s
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, s: usize) -> f64 {
        self.values[self.offset(i, k, s)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, s: usize, v: f64) {
        let o = self.offset(i, k, s);
        self.values[o] = v;
    }

    /// The `T` observations of feature `k` in series `i`.
    #[inline]
    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        let o = self.offset(i, k, 0);
        &self.values[o..o + self.t]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize, k: usize) -> &mut [f64] {
        let o = self.offset(i, k, 0);
        &mut self.values[o..o + self.t]
    }

    /// All values in storage order.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Pooled values of feature `k` across all series and timesteps.
    pub fn feature_values(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.t);
        for i in 0..self.n {
            out.extend_from_slice(self.row(i, k));
        }
        out
    }

    /// New batch holding the given series, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let stride = self.d * self.t;
        let mut values = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            values.extend_from_slice(&self.values[i * stride..(i + 1) * stride]);
        }
        Self {
            n: idx.len(),
            d: self.d,
            t: self.t,
            values,
        }
    }

    /// Applies `f(feature, value)` to every entry.
    pub fn map_features(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in 0..self.d {
                for v in out.row_mut(i, k) {
                    *v = f(k, *v);
                }
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Binary,
    Ternary,
}

impl LabelKind {
    pub fn classes(self) -> usize {
        match self {
            LabelKind::Binary => 2,
            LabelKind::Ternary => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub batch: TimeSeriesBatch,
    pub labels: Vec<usize>,
    pub label_kind: LabelKind,
    pub weights: Option<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(batch: TimeSeriesBatch, labels: Vec<usize>, label_kind: LabelKind) -> Result<Self> {
        if labels.len() != batch.n() {
            return Err(Error::Shape(format!(
                "{} labels for {} series",
                labels.len(),
                batch.n()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= label_kind.classes()) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {label_kind:?}"
            )));
        }
        Ok(Self {
            batch,
            labels,
            label_kind,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.labels.len() {
            return Err(Error::Shape("weights length differs from labels".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "weights must sum to 1, got {total}"
            )));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.batch.n()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let weights = self.weights.as_ref().map(|w| {
            let sub: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
            let total: f64 = sub.iter().sum();
            if total > 0.0 {
                sub.iter().map(|v| v / total).collect()
            } else {
                vec![1.0 / idx.len() as f64; idx.len()]
            }
        });
        Self {
            batch: self.batch.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            label_kind: self.label_kind,
            weights,
        }
    }

    pub fn with_batch(&self, batch: TimeSeriesBatch) -> Result<Self> {
        if batch.n() != self.n() {
            return Err(Error::Shape("replacement batch has a different N".into()));
        }
        Ok(Self {
            batch,
            labels: self.labels.clone(),
            label_kind: self.label_kind,
            weights: self.weights.clone(),
        })
    }
}

/// Reads the `series_id,timestep,f1..fd,label` format.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

fn read_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<LabeledDataset> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 4
        || names[0] != "series_id"
        || names[1] != "timestep"
        || names[names.len() - 1] != "label"
    {
        return Err(parse_err(
            1,
            "header must be series_id,timestep,f1..fd,label with d >= 1".into(),
        ));
    }
    let d = names.len() - 3;
    for (k, name) in names[2..2 + d].iter().enumerate() {
        if *name != format!("f{}", k + 1) {
            return Err(parse_err(1, format!("expected column f{}, found {name:?}", k + 1)));
        }
    }

    // series id -> (timestep -> (features, label, line))
    let mut rows: BTreeMap<i64, BTreeMap<i64, (Vec<f64>, usize, u64)>> = BTreeMap::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != d + 3 {
            return Err(parse_err(
                line,
                format!("expected {} cells, found {}", d + 3, record.len()),
            ));
        }
        let cell = |c: usize| -> Result<&str> {
            let v = record[c].trim();
            if v.is_empty() {
                Err(parse_err(line, format!("missing cell in column {}", names[c])))
            } else {
                Ok(v)
            }
        };
        let sid: i64 = cell(0)?
            .parse()
            .map_err(|_| parse_err(line, format!("series_id {:?} is not an integer", &record[0])))?;
        let step: i64 = cell(1)?
            .parse()
            .map_err(|_| parse_err(line, format!("timestep {:?} is not an integer", &record[1])))?;
        let mut feats = Vec::with_capacity(d);
        for c in 2..2 + d {
            let raw = cell(c)?;
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric feature {}: {raw:?}", names[c])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature {}: {raw:?}", names[c])));
            }
            feats.push(v);
        }
        let raw = cell(d + 2)?;
        let label: usize = raw
            .parse()
            .map_err(|_| parse_err(line, format!("label {raw:?} is not a nonnegative integer")))?;
        if label > 2 {
            return Err(parse_err(line, format!("label {label} outside {{0,1,2}}")));
        }
        let series = rows.entry(sid).or_default();
        if let Some((_, _, first)) = series.get(&step) {
            return Err(parse_err(
                line,
                format!("duplicate (series {sid}, timestep {step}), first seen on line {first}"),
            ));
        }
        series.insert(step, (feats, label, line));
    }

    if rows.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    let t = rows.values().next().map(BTreeMap::len).unwrap_or(0);
    let n = rows.len();
    let mut values = Vec::with_capacity(n * d * t);
    let mut labels = Vec::with_capacity(n);
    for (sid, steps) in &rows {
        if steps.len() != t {
            let line = steps.values().map(|r| r.2).max().unwrap_or(0);
            return Err(parse_err(
                line,
                format!(
                    "ragged series: series {sid} has {} timesteps, expected {t}",
                    steps.len()
                ),
            ));
        }
        let mut label = None;
        for (_, lab, line) in steps.values() {
            match label {
                None => label = Some(*lab),
                Some(l) if l != *lab => {
                    return Err(parse_err(
                        *line,
                        format!("series {sid} has conflicting labels {l} and {lab}"),
                    ))
                }
                _ => {}
            }
        }
        let base = values.len();
        values.resize(base + d * t, 0.0);
        for (s, (feats, _, _)) in steps.values().enumerate() {
            for (k, v) in feats.iter().enumerate() {
                values[base + k * t + s] = *v;
            }
        }
        labels.push(label.unwrap_or(0));
    }
    let kind = if labels.iter().any(|&y| y == 2) {
        LabelKind::Ternary
    } else {
        LabelKind::Binary
    };
    LabeledDataset::new(TimeSeriesBatch::new(n, d, t, values)?, labels, kind)
}

/// Writes the format [`load_csv`] reads. Floats use the shortest
/// representation that parses back to the same bits.
pub fn save_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let batch = &dataset.batch;
    if batch.d() == 0 {
        return Err(Error::Shape("cannot write a dataset with no features".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv(dataset, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_csv<W: Write>(dataset: &LabeledDataset, w: &mut W) -> std::io::Result<()> {
    let batch = &dataset.batch;
    let (n, d, t) = batch.shape();
    write!(w, "series_id,timestep")?;
    for k in 1..=d {
        write!(w, ",f{k}")?;
    }
    writeln!(w, ",label")?;
    for i in 0..n {
        for s in 0..t {
            write!(w, "{i},{s}")?;
            for k in 0..d {
                write!(w, ",{}", batch.get(i, k, s))?;
            }
            writeln!(w, ",{}", dataset.labels[i])?;
        }
    }
    Ok(())
}

/// Index slices covering `0..n` once per epoch; the last may be short.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut Rng, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
