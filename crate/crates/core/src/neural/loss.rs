//! Losses on predicted probabilities. Gradients are taken with respect to
//! the output pre-activations (logit for sigmoid, logits for softmax).

use ndarray::Array2;

use crate::error::{Error, Result};

pub const PROB_CLIP: f64 = 1e-12;

fn check_labels(probs: &Array2<f64>, labels: &[usize], classes: usize) -> Result<()> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", probs.nrows(), labels.len())));
    }
    if probs.nrows() == 0 {
        return Err(Error::Empty("loss batch"));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!("label {y} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean binary cross-entropy of `N x 1` probabilities.
pub fn bce_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(probs, labels, 2)?;
    if probs.ncols() != 1 {
        return Err(Error::Shape("binary loss needs one output column".into()));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(probs.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let p = probs[[i, 0]];
        let pc = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        loss -= if y == 1 { pc.ln() } else { (1.0 - pc).ln() };
        grad[[i, 0]] = (p - y as f64) / n;
    }
    Ok((loss / n, grad))
}

/// Mean categorical cross-entropy of `N x C` probabilities.
pub fn cross_entropy_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let classes = probs.ncols();
    check_labels(probs, labels, classes)?;
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss -= probs[[i, y]].clamp(PROB_CLIP, 1.0).ln();
        grad[[i, y]] -= 1.0;
    }
    grad /= n;
    Ok((loss / n, grad))
}

/// Dispatches on the number of output columns.
pub fn classification_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if probs.ncols() == 1 {
        bce_loss(probs, labels)
    } else {
        cross_entropy_loss(probs, labels)
    }
}
