//! Adaptive preprocessing layers trained jointly with the downstream model.

pub mod dain;
pub mod edain;

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesBatch;
use crate::error::{Error, Result};
use crate::neural::optim::ParamSlot;

pub use dain::{dain_backward, dain_forward, DainCache, DainGradients, DainLayer, DainParams};
pub use edain::{
    edain_backward, edain_forward, outlier_backward, outlier_forward, power_backward, power_forward,
    shift_scale_backward, shift_scale_forward, update_running_mean, Centers, EdainCache, EdainGradients,
    EdainLayer, EdainMode, EdainParams, LocalSummary, RunningMean, Sublayers,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum AdaptiveLayer {
    Edain(EdainLayer),
    Dain(DainLayer),
}

#[derive(Debug, Clone)]
pub enum AdaptiveCache {
    Edain(EdainCache),
    Dain(DainCache),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdaptiveGradients {
    Edain(EdainGradients),
    Dain(DainGradients),
}

impl AdaptiveGradients {
    pub fn input(&self) -> &TimeSeriesBatch {
        match self {
            AdaptiveGradients::Edain(g) => &g.input,
            AdaptiveGradients::Dain(g) => &g.input,
        }
    }

    /// Parameter gradients, excluding the input gradient.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            AdaptiveGradients::Edain(g) => vec![&mut g.alpha, &mut g.beta, &mut g.m, &mut g.s, &mut g.lambda],
            AdaptiveGradients::Dain(g) => vec![&mut g.w_a, &mut g.w_b, &mut g.w_c, &mut g.bias],
        }
    }
}

impl AdaptiveLayer {
    pub fn d(&self) -> usize {
        match self {
            AdaptiveLayer::Edain(l) => l.params.d(),
            AdaptiveLayer::Dain(l) => l.params.d,
        }
    }

    pub fn forward(&mut self, x: &TimeSeriesBatch, training: bool) -> Result<(TimeSeriesBatch, AdaptiveCache)> {
        match self {
            AdaptiveLayer::Edain(l) => l.forward(x, training).map(|(y, c)| (y, AdaptiveCache::Edain(c))),
            AdaptiveLayer::Dain(l) => dain_forward(x, &l.params).map(|(y, c)| (y, AdaptiveCache::Dain(c))),
        }
    }

    pub fn backward(&self, grad_out: &TimeSeriesBatch, cache: &AdaptiveCache) -> Result<AdaptiveGradients> {
        match (self, cache) {
            (AdaptiveLayer::Edain(l), AdaptiveCache::Edain(c)) => l.backward(grad_out, c).map(AdaptiveGradients::Edain),
            (AdaptiveLayer::Dain(l), AdaptiveCache::Dain(c)) => {
                dain_backward(grad_out, c, &l.params).map(AdaptiveGradients::Dain)
            }
            _ => Err(Error::StaleCache),
        }
    }

    pub fn slots<'a>(&'a mut self, grads: &'a AdaptiveGradients) -> Result<Vec<ParamSlot<'a>>> {
        match (self, grads) {
            (AdaptiveLayer::Edain(l), AdaptiveGradients::Edain(g)) => Ok(l.slots(g)),
            (AdaptiveLayer::Dain(l), AdaptiveGradients::Dain(g)) => Ok(l.slots(g)),
            _ => Err(Error::StaleCache),
        }
    }

    pub fn project(&mut self) {
        if let AdaptiveLayer::Edain(l) = self {
            l.params.project();
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let layer: AdaptiveLayer = serde_json::from_str(s)?;
        match &layer {
            AdaptiveLayer::Edain(l) => l.params.validate()?,
            AdaptiveLayer::Dain(l) => l.params.validate()?,
        }
        Ok(layer)
    }
}
