//! Differentiable classifiers: a small CNN / MLP with hand-written backprop.
//!
//! Losses are expressed over the softmax outputs of one or more forward
//! passes. A loss closure receives the probability matrices and returns its
//! value together with the gradient with respect to each pass's logits; the
//! classifier then backpropagates each pass and sums the parameter gradients.

mod arch;
pub mod checkpoint;
mod net;
mod optim;
mod params;

pub use arch::{Architecture, Dims, LayerSpec};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{sgd_step, Layout, ParameterVector, Segment};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, tag};

/// Dense row-major `rows × cols` matrix; rows are samples, columns classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged matrix rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Index of the largest entry per row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.iter_rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect()
    }
}

/// Value of a loss and its gradient with respect to the logits of each pass.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub d_logits: Vec<Matrix>,
}

/// Counts per-sample forward and backward passes through a classifier.
#[derive(Debug, Default)]
pub struct PassCounter {
    forward: AtomicU64,
    backward: AtomicU64,
}

impl PassCounter {
    pub fn new() -> Arc<Self> {
        Arc::new(PassCounter::default())
    }

    pub fn forward(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn backward(&self) -> u64 {
        self.backward.load(Ordering::Relaxed)
    }

    fn add_forward(&self, n: usize) {
        self.forward.fetch_add(n as u64, Ordering::Relaxed);
    }

    fn add_backward(&self, n: usize) {
        self.backward.fetch_add(n as u64, Ordering::Relaxed);
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pulls a gradient with respect to probabilities back through softmax:
/// `∂L/∂z_i = p_i (g_i − Σ_j g_j p_j)`.
pub fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pi, gi)| pi * (gi - inner)).collect()
}

#[derive(Debug, Clone)]
pub struct Classifier {
    arch: Arc<Architecture>,
    params: ParameterVector,
    counter: Option<Arc<PassCounter>>,
}

impl Classifier {
    pub fn new(arch: Arc<Architecture>, params: ParameterVector) -> Result<Self> {
        if params.layout().as_ref() != arch.layout().as_ref() {
            return Err(Error::LayoutMismatch);
        }
        Ok(Classifier {
            arch,
            params,
            counter: None,
        })
    }

    pub fn zeros(arch: Arc<Architecture>) -> Self {
        let params = ParameterVector::zeros(arch.layout().clone());
        Classifier {
            arch,
            params,
            counter: None,
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init(arch: Arc<Architecture>, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut params = ParameterVector::zeros(arch.layout().clone());
        let segments = arch.layout().segments().to_vec();
        for seg in segments.iter().filter(|s| s.name.ends_with(".weight")) {
            let fan_in: usize = seg.dims[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut params.values_mut()[seg.offset..seg.offset + seg.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Classifier {
            arch,
            params,
            counter: None,
        }
    }

    /// Shares `counter` with this classifier and its clones.
    pub fn with_counter(mut self, counter: Arc<PassCounter>) -> Self {
        self.counter = Some(counter);
        self
    }

    pub fn architecture(&self) -> &Arc<Architecture> {
        &self.arch
    }

    pub fn params(&self) -> &ParameterVector {
        &self.params
    }

    pub fn into_params(self) -> ParameterVector {
        self.params
    }

    pub fn set_params(&mut self, params: ParameterVector) -> Result<()> {
        if !params.same_layout(&self.params) {
            return Err(Error::LayoutMismatch);
        }
        self.params = params;
        Ok(())
    }

    /// Same architecture and counter, different weights.
    pub fn with_params(&self, params: ParameterVector) -> Result<Classifier> {
        let mut c = self.clone();
        c.set_params(params)?;
        Ok(c)
    }

    fn to_input(&self, img: &Image) -> Result<Vec<f64>> {
        let shape = self.arch.input();
        if img.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "image {} does not match model input {shape}",
                img.shape()
            )));
        }
        let (h, w, c) = (shape.height, shape.width, shape.channels);
        let px = img.pixels();
        let mut out = vec![0.0; px.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = px[(y * w + x) * c + ch] as f64;
                }
            }
        }
        Ok(out)
    }

    fn count_forward(&self, n: usize) {
        if let Some(c) = &self.counter {
            c.add_forward(n);
        }
    }

    pub fn logits(&self, batch: &[Image]) -> Result<Matrix> {
        let mut out = Matrix::zeros(batch.len(), self.arch.classes());
        for (i, img) in batch.iter().enumerate() {
            let trace = net::forward(&self.arch, self.params.values(), self.to_input(img)?);
            out.row_mut(i).copy_from_slice(trace.logits());
        }
        self.count_forward(batch.len());
        Ok(out)
    }

    /// Softmax outputs, one row per image.
    pub fn predict_proba(&self, batch: &[Image]) -> Result<Matrix> {
        let mut out = self.logits(batch)?;
        for i in 0..out.rows() {
            let p = softmax(out.row(i));
            out.row_mut(i).copy_from_slice(&p);
        }
        Ok(out)
    }

    /// Runs one forward pass per entry of `batches`, evaluates `loss` on the
    /// resulting probabilities and backpropagates every pass.
    pub fn loss_and_grad<F>(&self, batches: &[&[Image]], loss: F) -> Result<(f64, ParameterVector)>
    where
        F: FnOnce(&[Matrix]) -> Result<LossGrad>,
    {
        let mut traces = Vec::with_capacity(batches.len());
        let mut probs = Vec::with_capacity(batches.len());
        for batch in batches {
            let mut p = Matrix::zeros(batch.len(), self.arch.classes());
            let mut ts = Vec::with_capacity(batch.len());
            for (i, img) in batch.iter().enumerate() {
                let trace = net::forward(&self.arch, self.params.values(), self.to_input(img)?);
                p.row_mut(i).copy_from_slice(&softmax(trace.logits()));
                ts.push(trace);
            }
            self.count_forward(batch.len());
            traces.push(ts);
            probs.push(p);
        }
        let lg = loss(&probs)?;
        if !lg.value.is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", lg.value)));
        }
        if lg.d_logits.len() != batches.len() {
            return Err(Error::ShapeMismatch(format!(
                "loss returned {} gradients for {} passes",
                lg.d_logits.len(),
                batches.len()
            )));
        }
        let mut grad = ParameterVector::zeros(self.params.layout().clone());
        for (ts, d) in traces.iter().zip(&lg.d_logits) {
            if d.rows() != ts.len() || d.cols() != self.arch.classes() {
                return Err(Error::ShapeMismatch("logit gradient shape".into()));
            }
            for (i, trace) in ts.iter().enumerate() {
                net::backward(&self.arch, self.params.values(), trace, d.row(i), grad.values_mut());
            }
            if let Some(c) = &self.counter {
                c.add_backward(ts.len());
            }
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((lg.value, grad))
    }

    /// Gradient of a single-pass loss.
    pub fn grad<F>(&self, batch: &[Image], loss: F) -> Result<ParameterVector>
    where
        F: FnOnce(&Matrix) -> Result<LossGrad>,
    {
        Ok(self.loss_and_grad(&[batch], |p| loss(&p[0]))?.1)
    }
}
