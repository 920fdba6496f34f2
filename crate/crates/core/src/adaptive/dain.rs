//! DAIN baseline: adaptive shift, adaptive scale and a sigmoid gate, all
//! driven by per-series summaries.

use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesBatch;
use crate::error::{Error, Result};
use crate::neural::optim::{ParamGroup, ParamSlot};
use crate::stats::sigmoid;

pub const B_FLOOR: f64 = 1e-6;

/// Matrices are `d x d`, row-major: `(W v)_k = sum_j W[k * d + j] v_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DainParams {
    pub d: usize,
    pub w_a: Vec<f64>,
    pub w_b: Vec<f64>,
    pub w_c: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DainParams {
    /// `W_a = W_b = I`, `W_c = 0`, gate bias `gate_bias` (0 gives an initial
    /// gate of one half).
    pub fn new(d: usize, gate_bias: f64) -> Self {
        let mut eye = vec![0.0; d * d];
        for k in 0..d {
            eye[k * d + k] = 1.0;
        }
        Self {
            d,
            w_a: eye.clone(),
            w_b: eye,
            w_c: vec![0.0; d * d],
            bias: vec![gate_bias; d],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dd = self.d * self.d;
        if self.d == 0 {
            return Err(Error::Empty("DAIN parameters"));
        }
        if self.w_a.len() != dd || self.w_b.len() != dd || self.w_c.len() != dd || self.bias.len() != self.d {
            return Err(Error::Shape("DAIN parameter sizes do not match d".into()));
        }
        Ok(())
    }
}

fn matvec(w: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = (0..d).map(|j| w[k * d + j] * v[j]).sum();
    }
}

/// `out_j = sum_k W[k, j] v_k`.
fn matvec_t(w: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = (0..d).map(|k| w[k * d + j] * v[k]).sum();
    }
}

fn floor_signed(q: f64) -> (f64, bool) {
    if q.abs() < B_FLOOR {
        (if q < 0.0 { -B_FLOOR } else { B_FLOOR }, true)
    } else {
        (q, false)
    }
}

#[derive(Debug, Clone)]
pub struct DainCache {
    shape: (usize, usize, usize),
    /// Per series: a, b (floored), b-floored flag, q, c, gamma.
    a: Vec<f64>,
    b: Vec<f64>,
    b_floored: Vec<bool>,
    q: Vec<f64>,
    q_floored: Vec<bool>,
    c: Vec<f64>,
    gamma: Vec<f64>,
    shifted: TimeSeriesBatch,
    scaled: TimeSeriesBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DainGradients {
    pub w_a: Vec<f64>,
    pub w_b: Vec<f64>,
    pub w_c: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: TimeSeriesBatch,
}

pub fn dain_forward(x: &TimeSeriesBatch, params: &DainParams) -> Result<(TimeSeriesBatch, DainCache)> {
    let (n, d, t) = x.shape();
    if d != params.d {
        return Err(Error::Shape(format!("DAIN has {} features, batch has {d}", params.d)));
    }
    let tf = t as f64;
    let mut cache = DainCache {
        shape: x.shape(),
        a: vec![0.0; n * d],
        b: vec![0.0; n * d],
        b_floored: vec![false; n * d],
        q: vec![0.0; n * d],
        q_floored: vec![false; n * d],
        c: vec![0.0; n * d],
        gamma: vec![0.0; n * d],
        shifted: x.clone(),
        scaled: x.clone(),
    };
    let mut p = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut out = x.clone();
    for i in 0..n {
        let r = i * d..(i + 1) * d;
        for k in 0..d {
            cache.a[i * d + k] = x.row(i, k).iter().sum::<f64>() / tf;
        }
        matvec(&params.w_a, &cache.a[r.clone()], &mut p);
        for k in 0..d {
            let row = cache.shifted.row_mut(i, k);
            let mut ss = 0.0;
            for v in row.iter_mut() {
                *v -= p[k];
                ss += *v * *v;
            }
            let b = (ss / tf).sqrt();
            cache.b_floored[i * d + k] = b < B_FLOOR;
            cache.b[i * d + k] = b.max(B_FLOOR);
        }
        let mut q = vec![0.0; d];
        matvec(&params.w_b, &cache.b[r.clone()], &mut q);
        for k in 0..d {
            let (qk, fl) = floor_signed(q[k]);
            cache.q[i * d + k] = qk;
            cache.q_floored[i * d + k] = fl;
            let src = cache.shifted.row(i, k).to_vec();
            let dst = cache.scaled.row_mut(i, k);
            let mut sum = 0.0;
            for (o, v) in dst.iter_mut().zip(&src) {
                *o = v / qk;
                sum += *o;
            }
            cache.c[i * d + k] = sum / tf;
        }
        matvec(&params.w_c, &cache.c[r], &mut z);
        for k in 0..d {
            let g = sigmoid(z[k] + params.bias[k]);
            cache.gamma[i * d + k] = g;
            let src = cache.scaled.row(i, k);
            for (o, v) in out.row_mut(i, k).iter_mut().zip(src) {
                *o = v * g;
            }
        }
    }
    Ok((out, cache))
}

pub fn dain_backward(grad_out: &TimeSeriesBatch, cache: &DainCache, params: &DainParams) -> Result<DainGradients> {
    if grad_out.shape() != cache.shape {
        return Err(Error::StaleCache);
    }
    let (n, d, t) = grad_out.shape();
    let tf = t as f64;
    let mut g = DainGradients {
        w_a: vec![0.0; d * d],
        w_b: vec![0.0; d * d],
        w_c: vec![0.0; d * d],
        bias: vec![0.0; d],
        input: TimeSeriesBatch::zeros(n, d, t),
    };
    let mut dxhat = vec![0.0; t];
    let mut dxt = vec![vec![0.0; t]; d];
    let mut dz = vec![0.0; d];
    let mut dc = vec![0.0; d];
    let mut dq = vec![0.0; d];
    let mut db = vec![0.0; d];
    let mut dp = vec![0.0; d];
    let mut da = vec![0.0; d];
    for i in 0..n {
        let off = i * d;
        for k in 0..d {
            let gamma = cache.gamma[off + k];
            let dgamma: f64 = grad_out
                .row(i, k)
                .iter()
                .zip(cache.scaled.row(i, k))
                .map(|(a, b)| a * b)
                .sum();
            dz[k] = dgamma * gamma * (1.0 - gamma);
            g.bias[k] += dz[k];
            for j in 0..d {
                g.w_c[k * d + j] += dz[k] * cache.c[off + j];
            }
        }
        matvec_t(&params.w_c, &dz, &mut dc);
        for k in 0..d {
            let gamma = cache.gamma[off + k];
            let q = cache.q[off + k];
            let go = grad_out.row(i, k);
            let xt = cache.shifted.row(i, k);
            let mut acc = 0.0;
            for s in 0..t {
                dxhat[s] = go[s] * gamma + dc[k] / tf;
                acc += dxhat[s] * xt[s];
                dxt[k][s] = dxhat[s] / q;
            }
            dq[k] = if cache.q_floored[off + k] { 0.0 } else { -acc / (q * q) };
            for j in 0..d {
                g.w_b[k * d + j] += dq[k] * cache.b[off + j];
            }
        }
        matvec_t(&params.w_b, &dq, &mut db);
        for j in 0..d {
            if !cache.b_floored[off + j] {
                let b = cache.b[off + j];
                let xt = cache.shifted.row(i, j);
                for s in 0..t {
                    dxt[j][s] += db[j] * xt[s] / (tf * b);
                }
            }
        }
        for k in 0..d {
            dp[k] = -dxt[k].iter().sum::<f64>();
            for j in 0..d {
                g.w_a[k * d + j] += dp[k] * cache.a[off + j];
            }
        }
        matvec_t(&params.w_a, &dp, &mut da);
        for k in 0..d {
            let row = g.input.row_mut(i, k);
            for s in 0..t {
                row[s] = dxt[k][s] + da[k] / tf;
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DainLayer {
    pub params: DainParams,
}

impl DainLayer {
    pub fn new(params: DainParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn slots<'a>(&'a mut self, grads: &'a DainGradients) -> Vec<ParamSlot<'a>> {
        let p = &mut self.params;
        vec![
            ParamSlot {
                group: ParamGroup::Shift,
                value: &mut p.w_a,
                grad: &grads.w_a,
            },
            ParamSlot {
                group: ParamGroup::Scale,
                value: &mut p.w_b,
                grad: &grads.w_b,
            },
            ParamSlot {
                group: ParamGroup::Gate,
                value: &mut p.w_c,
                grad: &grads.w_c,
            },
            ParamSlot {
                group: ParamGroup::Gate,
                value: &mut p.bias,
                grad: &grads.bias,
            },
        ]
    }
}
