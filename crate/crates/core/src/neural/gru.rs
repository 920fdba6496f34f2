//! Stacked GRU encoder with a dense classification head.
//!
//! Gate layout follows the common `[reset | update | candidate]` convention:
//!
//! ```text
//! r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
//! z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
//! n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Rng, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::stats::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { rows, cols, data }
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        // Length is rows * cols by construction.
        ArrayView2::from_shape((self.rows, self.cols), &self.data).expect("matrix storage")
    }
}

fn uniform_vec(len: usize, bound: f64, rng: &mut Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub hidden: usize,
    /// `in x 3H`.
    pub w_i: Matrix,
    /// `H x 3H`.
    pub w_h: Matrix,
    pub b_i: Vec<f64>,
    pub b_h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub head: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            dropout: 0.2,
            head: vec![64, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruStack {
    pub input_dim: usize,
    pub classes: usize,
    pub dropout: f64,
    pub cells: Vec<GruCell>,
    pub head: Vec<Dense>,
}

impl GruStack {
    /// Uniform initialisation in `+-1/sqrt(fan_in)`. `classes` is 1 for a
    /// sigmoid output or the number of softmax classes.
    pub fn new(input_dim: usize, classes: usize, config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        if input_dim == 0 || classes == 0 || config.hidden.is_empty() {
            return Err(Error::InvalidArgument("model needs d > 0, classes > 0 and one GRU cell".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", config.dropout)));
        }
        if config.hidden.iter().chain(&config.head).any(|&h| h == 0) {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        let mut cells = Vec::with_capacity(config.hidden.len());
        let mut fan_in = input_dim;
        for &h in &config.hidden {
            let bh = 1.0 / (h as f64).sqrt();
            cells.push(GruCell {
                hidden: h,
                w_i: Matrix::uniform(fan_in, 3 * h, 1.0 / (fan_in as f64).sqrt(), rng),
                w_h: Matrix::uniform(h, 3 * h, bh, rng),
                b_i: uniform_vec(3 * h, bh, rng),
                b_h: uniform_vec(3 * h, bh, rng),
            });
            fan_in = h;
        }
        let mut head = Vec::with_capacity(config.head.len() + 1);
        for &out in config.head.iter().chain(std::iter::once(&classes)) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            head.push(Dense {
                w: Matrix::uniform(fan_in, out, bound, rng),
                b: uniform_vec(out, bound, rng),
            });
            fan_in = out;
        }
        Ok(Self {
            input_dim,
            classes,
            dropout: config.dropout,
            cells,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.cells {
            out.extend([&c.w_i.data[..], &c.w_h.data[..], &c.b_i[..], &c.b_h[..]]);
        }
        for l in &self.head {
            out.extend([&l.w.data[..], &l.b[..]]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.cells {
            out.push(&mut c.w_i.data);
            out.push(&mut c.w_h.data);
            out.push(&mut c.b_i);
            out.push(&mut c.b_h);
        }
        for l in &mut self.head {
            out.push(&mut l.w.data);
            out.push(&mut l.b);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

struct LayerCache {
    /// `T*N x in`, row `t*N + i`.
    input: Array2<f64>,
    /// `(T+1)*N x H`; block `t` holds the state before step `t`.
    h: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    ghn: Array2<f64>,
}

pub struct GruCache {
    shape: (usize, usize, usize),
    layers: Vec<LayerCache>,
    /// Dropout masks applied to the input of cells `1..`, already scaled.
    masks: Vec<Option<Array2<f64>>>,
    /// Inputs to each dense layer.
    head_in: Vec<Array2<f64>>,
    /// Output probabilities, `N x C`.
    pub probs: Array2<f64>,
}

fn to_time_major(x: &TimeSeriesBatch) -> Array2<f64> {
    let (n, d, t) = x.shape();
    let mut out = Array2::zeros((t * n, d));
    for i in 0..n {
        for k in 0..d {
            for (s, &v) in x.row(i, k).iter().enumerate() {
                out[[s * n + i, k]] = v;
            }
        }
    }
    out
}

/// Copies in logical (row-major) order regardless of memory layout.
fn fill(dst: &mut [f64], src: &Array2<f64>) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d = *s;
    }
}

fn add_row(m: &mut Array2<f64>, b: &[f64]) {
    for mut row in m.rows_mut() {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn cell_forward(cell: &GruCell, input: Array2<f64>, n: usize, t: usize) -> LayerCache {
    let hdim = cell.hidden;
    let mut gi = input.dot(&cell.w_i.view());
    add_row(&mut gi, &cell.b_i);
    let mut h = Array2::zeros(((t + 1) * n, hdim));
    let mut r = Array2::zeros((t * n, hdim));
    let mut z = Array2::zeros((t * n, hdim));
    let mut nn = Array2::zeros((t * n, hdim));
    let mut ghn = Array2::zeros((t * n, hdim));
    let w_h = cell.w_h.view();
    for step in 0..t {
        let mut gh = h.slice(s![step * n..(step + 1) * n, ..]).dot(&w_h);
        add_row(&mut gh, &cell.b_h);
        for i in 0..n {
            let row = step * n + i;
            for j in 0..hdim {
                let rv = sigmoid(gi[[row, j]] + gh[[i, j]]);
                let zv = sigmoid(gi[[row, hdim + j]] + gh[[i, hdim + j]]);
                let hn = gh[[i, 2 * hdim + j]];
                let nv = (gi[[row, 2 * hdim + j]] + rv * hn).tanh();
                let hp = h[[row, j]];
                r[[row, j]] = rv;
                z[[row, j]] = zv;
                nn[[row, j]] = nv;
                ghn[[row, j]] = hn;
                h[[row + n, j]] = (1.0 - zv) * nv + zv * hp;
            }
        }
    }
    LayerCache {
        input,
        h,
        r,
        z,
        n: nn,
        ghn,
    }
}

/// Forward pass. Dropout is applied between cells only when `dropout_rng` is
/// given (training mode).
pub fn gru_forward(x: &TimeSeriesBatch, model: &GruStack, mut dropout_rng: Option<&mut Rng>) -> Result<GruCache> {
    let (n, d, t) = x.shape();
    if d != model.input_dim {
        return Err(Error::Shape(format!("model expects {} features, batch has {d}", model.input_dim)));
    }
    let mut layers = Vec::with_capacity(model.cells.len());
    let mut masks = Vec::with_capacity(model.cells.len());
    let mut input = to_time_major(x);
    masks.push(None);
    for (l, cell) in model.cells.iter().enumerate() {
        if l > 0 {
            let prev: &LayerCache = &layers[l - 1];
            let mut next = prev.h.slice(s![n.., ..]).to_owned();
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if model.dropout > 0.0 => {
                    let keep = 1.0 - model.dropout;
                    let m = Array2::from_shape_fn(next.raw_dim(), |_| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    next *= &m;
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            input = next;
        }
        layers.push(cell_forward(cell, input.clone(), n, t));
    }
    let last = layers.last().expect("at least one cell");
    let mut a = last.h.slice(s![t * n.., ..]).to_owned();
    let mut head_in = Vec::with_capacity(model.head.len());
    for (l, dense) in model.head.iter().enumerate() {
        let mut out = a.dot(&dense.w.view());
        add_row(&mut out, &dense.b);
        if l + 1 < model.head.len() {
            out.mapv_inplace(|v| v.max(0.0));
        }
        head_in.push(a);
        a = out;
    }
    let probs = if model.classes == 1 {
        a.mapv(sigmoid)
    } else {
        let mut p = a;
        for mut row in p.rows_mut() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - mx).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        p
    };
    Ok(GruCache {
        shape: x.shape(),
        layers,
        masks,
        head_in,
        probs,
    })
}

/// Backward pass from the gradient of the loss with respect to the output
/// pre-activations (`N x C`). Returns parameter gradients and the gradient
/// with respect to the input batch.
pub fn gru_backward(grad_logits: &Array2<f64>, cache: &GruCache, model: &GruStack) -> Result<(GruStack, TimeSeriesBatch)> {
    let (n, d, t) = cache.shape;
    if grad_logits.dim() != (n, model.classes) || cache.layers.len() != model.cells.len() {
        return Err(Error::StaleCache);
    }
    let mut grads = model.zeros_like();

    // Dense head, last layer first.
    let mut g = grad_logits.clone();
    for l in (0..model.head.len()).rev() {
        let input = &cache.head_in[l];
        let gw = input.t().dot(&g);
        fill(&mut grads.head[l].w.data, &gw);
        grads.head[l].b = g.sum_axis(Axis(0)).to_vec();
        let mut gin = g.dot(&model.head[l].w.view().t());
        if l > 0 {
            // `input` is the ReLU output of the previous dense layer.
            gin.zip_mut_with(input, |gv, &a| {
                if a <= 0.0 {
                    *gv = 0.0
                }
            });
        }
        g = gin;
    }

    // Gradient w.r.t. each cell's output sequence, time-major.
    let top = model.cells.len() - 1;
    let mut d_out = Array2::<f64>::zeros((t * n, model.cells[top].hidden));
    d_out.slice_mut(s![(t - 1) * n.., ..]).assign(&g);

    let mut d_input = Array2::zeros((0, 0));
    for l in (0..model.cells.len()).rev() {
        let cell = &model.cells[l];
        let c = &cache.layers[l];
        let hdim = cell.hidden;
        let mut dgi = Array2::<f64>::zeros((t * n, 3 * hdim));
        let mut dgh = Array2::<f64>::zeros((t * n, 3 * hdim));
        let mut dh = Array2::<f64>::zeros((n, hdim));
        let w_h_t = cell.w_h.view().reversed_axes();
        for step in (0..t).rev() {
            for i in 0..n {
                let row = step * n + i;
                for j in 0..hdim {
                    let dhv = dh[[i, j]] + d_out[[row, j]];
                    let (rv, zv, nv, hn) = (c.r[[row, j]], c.z[[row, j]], c.n[[row, j]], c.ghn[[row, j]]);
                    let hp = c.h[[row, j]];
                    let dn = dhv * (1.0 - zv);
                    let dz = dhv * (hp - nv);
                    let dan = dn * (1.0 - nv * nv);
                    let dr = dan * hn;
                    let dar = dr * rv * (1.0 - rv);
                    let daz = dz * zv * (1.0 - zv);
                    dgi[[row, j]] = dar;
                    dgi[[row, hdim + j]] = daz;
                    dgi[[row, 2 * hdim + j]] = dan;
                    dgh[[row, j]] = dar;
                    dgh[[row, hdim + j]] = daz;
                    dgh[[row, 2 * hdim + j]] = dan * rv;
                    dh[[i, j]] = dhv * zv;
                }
            }
            let blk = dgh.slice(s![step * n..(step + 1) * n, ..]);
            dh += &blk.dot(&w_h_t);
        }
        let h_prev = c.h.slice(s![..t * n, ..]);
        let gw_h = h_prev.t().dot(&dgh);
        let gw_i = c.input.t().dot(&dgi);
        let gc = &mut grads.cells[l];
        fill(&mut gc.w_h.data, &gw_h);
        fill(&mut gc.w_i.data, &gw_i);
        gc.b_h = dgh.sum_axis(Axis(0)).to_vec();
        gc.b_i = dgi.sum_axis(Axis(0)).to_vec();
        let mut din = dgi.dot(&cell.w_i.view().t());
        if l > 0 {
            if let Some(mask) = &cache.masks[l] {
                din *= mask;
            }
            d_out = din;
        } else {
            d_input = din;
        }
    }

    let mut gx = TimeSeriesBatch::zeros(n, d, t);
    for i in 0..n {
        for k in 0..d {
            let row = gx.row_mut(i, k);
            for (step, v) in row.iter_mut().enumerate() {
                *v = d_input[[step * n + i, k]];
            }
        }
    }
    Ok((grads, gx))
}
