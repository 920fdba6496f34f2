//! Train/validation split plans.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum CvScheme {
    /// One random split with `valid_fraction` of the series held out.
    Holdout {
        #[serde(default = "default_valid_fraction")]
        valid_fraction: f64,
    },
    Kfold {
        k: usize,
    },
    /// Series are taken in file order; `boundaries` are the exclusive end
    /// offsets of consecutive segments (e.g. trading days).
    Anchored {
        boundaries: Vec<usize>,
    },
}

fn default_valid_fraction() -> f64 {
    0.2
}

impl Default for CvScheme {
    fn default() -> Self {
        CvScheme::Holdout {
            valid_fraction: default_valid_fraction(),
        }
    }
}

/// Random split; the validation part has `round(n * valid_fraction)` series.
pub fn holdout_indices(n: usize, valid_fraction: f64, rng: &mut Rng) -> Result<Fold> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("valid_fraction {valid_fraction} not in (0, 1)")));
    }
    let n_valid = (n as f64 * valid_fraction).round() as usize;
    if n_valid == 0 || n_valid >= n {
        return Err(Error::InvalidArgument(format!("cannot hold out {valid_fraction} of {n} series")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut valid = order[..n_valid].to_vec();
    let mut train = order[n_valid..].to_vec();
    valid.sort_unstable();
    train.sort_unstable();
    Ok(Fold { train, valid })
}

/// `k` disjoint validation folds covering `0..n` after a random permutation;
/// sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, rng: &mut Rng) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument("k-fold needs k >= 2".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut valid = order[start..start + len].to_vec();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + len..]).copied().collect();
        valid.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, valid });
        start += len;
    }
    Ok(folds)
}

/// Fold `i` trains on segments `0..=i` and validates on segment `i + 1`.
pub fn anchored_folds(boundaries: &[usize]) -> Result<Vec<Fold>> {
    if boundaries.len() < 2 {
        return Err(Error::InvalidArgument("anchored CV needs at least two segments".into()));
    }
    if boundaries[0] == 0 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("segment boundaries must be positive and increasing".into()));
    }
    Ok(boundaries
        .windows(2)
        .map(|w| Fold {
            train: (0..w[0]).collect(),
            valid: (w[0]..w[1]).collect(),
        })
        .collect())
}

/// Equal-length segment boundaries for `n` series, the last segment taking
/// the remainder.
pub fn even_boundaries(n: usize, segments: usize) -> Result<Vec<usize>> {
    if segments == 0 || segments > n {
        return Err(Error::InvalidArgument(format!("cannot cut {n} series into {segments} segments")));
    }
    let len = n / segments;
    Ok((1..=segments).map(|s| if s == segments { n } else { s * len }).collect())
}

pub fn plan_folds(scheme: &CvScheme, n: usize, rng: &mut Rng) -> Result<Vec<Fold>> {
    match scheme {
        CvScheme::Holdout { valid_fraction } => Ok(vec![holdout_indices(n, *valid_fraction, rng)?]),
        CvScheme::Kfold { k } => kfold_indices(n, *k, rng),
        CvScheme::Anchored { boundaries } => {
            if boundaries.last().is_some_and(|&b| b > n) {
                return Err(Error::InvalidArgument(format!("segment boundary beyond n = {n}")));
            }
            anchored_folds(boundaries)
        }
    }
}
