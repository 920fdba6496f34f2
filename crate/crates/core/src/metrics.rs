//! Classification metrics: accuracy, the Amex default-prediction metric,
//! Cohen's kappa and macro-F1.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of total weight defining the top segment for the captured default rate.
pub const TOP_SHARE: f64 = 0.04;
const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AmexInputs {
    pub predictions: Vec<f64>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl AmexInputs {
    /// Uniform weights `1/N`.
    pub fn new(predictions: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let n = predictions.len();
        let weights = vec![1.0 / n as f64; n];
        Self::with_weights(predictions, labels, weights)
    }

    /// Weights are normalised to sum to one; they must be nonnegative with a
    /// positive total.
    pub fn with_weights(predictions: Vec<f64>, labels: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let n = predictions.len();
        if n == 0 {
            return Err(Error::Empty("metric inputs"));
        }
        if labels.len() != n || weights.len() != n {
            return Err(Error::Shape("predictions, labels and weights differ in length".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("Amex metric needs binary labels".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidArgument("weights must be nonnegative with a positive sum".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            predictions,
            labels,
            weights,
        })
    }

    fn len(&self) -> usize {
        self.predictions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GiniOrdering {
    /// Non-decreasing by true label.
    Labels,
    /// Non-decreasing by prediction.
    Predictions,
}

/// Indices sorted by `key`, ties broken by original index.
fn stable_order(key: impl Fn(usize) -> f64, n: usize, descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let o = key(a).total_cmp(&key(b));
        let o = if descending { o.reverse() } else { o };
        o.then(a.cmp(&b))
    });
    idx
}

/// Fraction of all positives found among the top-ranked predictions holding
/// at most 4% of the total weight.
pub fn default_rate_captured(inputs: &AmexInputs) -> Result<f64> {
    let positives: usize = inputs.labels.iter().sum();
    if positives == 0 {
        return Err(Error::InvalidArgument("captured default rate needs at least one positive".into()));
    }
    let order = stable_order(|i| inputs.predictions[i], inputs.len(), true);
    let mut cum = 0.0;
    let mut captured = 0;
    for &i in &order {
        cum += inputs.weights[i];
        if cum > TOP_SHARE + WEIGHT_TOL {
            break;
        }
        captured += inputs.labels[i];
    }
    Ok(captured as f64 / positives as f64)
}

/// Weighted Gini coefficient of the labels under the requested ordering,
/// `2 sum_j w_j (y_j - ybar)/ybar (F_j - Fbar)` with mid-point cumulative
/// weights `F_j = w_j/2 + sum_{l<j} w_l`.
pub fn weighted_gini(inputs: &AmexInputs, ordering: GiniOrdering) -> Result<f64> {
    let n = inputs.len();
    let order = match ordering {
        GiniOrdering::Labels => stable_order(|i| inputs.labels[i] as f64, n, false),
        GiniOrdering::Predictions => stable_order(|i| inputs.predictions[i], n, false),
    };
    let ybar: f64 = (0..n).map(|i| inputs.weights[i] * inputs.labels[i] as f64).sum();
    if ybar == 0.0 {
        return Err(Error::InvalidArgument("weighted label mean is zero".into()));
    }
    let mut f = Vec::with_capacity(n);
    let mut prefix = 0.0;
    for &i in &order {
        let w = inputs.weights[i];
        f.push(prefix + w / 2.0);
        prefix += w;
    }
    let fbar: f64 = order.iter().zip(&f).map(|(&i, fj)| inputs.weights[i] * fj).sum();
    let g: f64 = order
        .iter()
        .zip(&f)
        .map(|(&i, fj)| inputs.weights[i] * (inputs.labels[i] as f64 - ybar) / ybar * (fj - fbar))
        .sum();
    Ok(2.0 * g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmexScore {
    pub m: f64,
    pub d: f64,
    pub g: f64,
}

/// `M = (G_1 / G_0 + D) / 2`.
pub fn amex_metric(inputs: &AmexInputs) -> Result<AmexScore> {
    let d = default_rate_captured(inputs)?;
    let g0 = weighted_gini(inputs, GiniOrdering::Labels)?;
    let g1 = weighted_gini(inputs, GiniOrdering::Predictions)?;
    if g0 == 0.0 {
        return Err(Error::InvalidArgument("label-ordered Gini is zero".into()));
    }
    let g = g1 / g0;
    Ok(AmexScore { m: 0.5 * (g + d), d, g })
}

fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::Shape("prediction and label counts differ".into()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("label arrays"));
    }
    let mut c = vec![vec![0usize; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::InvalidArgument(format!("label outside 0..{classes}")));
        }
        c[t][p] += 1;
    }
    Ok(c)
}

/// Cohen's kappa; 1 when both raters put everything in one shared class.
pub fn cohen_kappa(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    let c = confusion(pred, truth, classes)?;
    let n = pred.len() as f64;
    let po = (0..classes).map(|k| c[k][k] as f64).sum::<f64>() / n;
    let pe = (0..classes)
        .map(|k| {
            let row: usize = c[k].iter().sum();
            let col: usize = c.iter().map(|r| r[k]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (n * n);
    if pe >= 1.0 {
        return Ok(if po >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Unweighted mean of per-class F1; a class absent from both predictions
/// and labels scores 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    let c = confusion(pred, truth, classes)?;
    let mut total = 0.0;
    for k in 0..classes {
        let tp = c[k][k] as f64;
        let fnn = c[k].iter().sum::<usize>() as f64 - tp;
        let fp = c.iter().map(|r| r[k]).sum::<usize>() as f64 - tp;
        let denom = 2.0 * tp + fp + fnn;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    Ok(total / classes as f64)
}

/// Hard labels: threshold 0.5 for a single probability column, argmax
/// otherwise (first maximum wins).
pub fn predicted_labels(probs: &Array2<f64>) -> Vec<usize> {
    if probs.ncols() == 1 {
        probs.column(0).iter().map(|&p| usize::from(p >= 0.5)).collect()
    } else {
        probs
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape("prediction and label counts differ".into()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("label arrays"));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}
