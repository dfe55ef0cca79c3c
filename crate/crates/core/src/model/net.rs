//! Per-sample forward and backward passes over a resolved layer plan.
//! Activations are CHW `f64`.

use super::arch::{Architecture, LayerPlan, LayerSpec};

pub(crate) struct Trace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    /// Argmax input index for each pooled output; empty for other layers.
    pool_idx: Vec<Vec<u32>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("non-empty trace")
    }
}

pub(crate) fn forward(arch: &Architecture, params: &[f64], input: Vec<f64>) -> Trace {
    let plan = arch.plan();
    let mut acts = Vec::with_capacity(plan.len() + 1);
    let mut pool_idx = Vec::with_capacity(plan.len());
    acts.push(input);
    for layer in plan {
        let x = acts.last().expect("input present");
        let mut out = vec![0.0; layer.output.len()];
        let mut idx = Vec::new();
        match layer.spec {
            LayerSpec::Conv { kernel, padding, .. } => conv_forward(layer, kernel, padding, params, x, &mut out),
            LayerSpec::Relu => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.max(0.0);
                }
            }
            LayerSpec::MaxPool2 => idx = pool_forward(layer, x, &mut out),
            LayerSpec::Dense { units } => {
                let n = layer.input.len();
                let w = &params[layer.weight_offset..layer.weight_offset + units * n];
                let b = &params[layer.bias_offset..layer.bias_offset + units];
                for (j, o) in out.iter_mut().enumerate() {
                    *o = b[j] + dot(&w[j * n..(j + 1) * n], x);
                }
            }
        }
        acts.push(out);
        pool_idx.push(idx);
    }
    Trace { acts, pool_idx }
}

/// Accumulates `∂L/∂params` into `grad` given `∂L/∂logits`.
pub(crate) fn backward(arch: &Architecture, params: &[f64], trace: &Trace, d_logits: &[f64], grad: &mut [f64]) {
    let plan = arch.plan();
    let mut dy = d_logits.to_vec();
    for (i, layer) in plan.iter().enumerate().rev() {
        let x = &trace.acts[i];
        let need_dx = i > 0;
        let mut dx = if need_dx { vec![0.0; layer.input.len()] } else { Vec::new() };
        match layer.spec {
            LayerSpec::Conv { kernel, padding, .. } => {
                conv_backward(layer, kernel, padding, params, x, &dy, grad, need_dx.then_some(&mut dx[..]))
            }
            LayerSpec::Relu => {
                if need_dx {
                    let y = &trace.acts[i + 1];
                    for ((d, &g), &o) in dx.iter_mut().zip(&dy).zip(y) {
                        *d = if o > 0.0 { g } else { 0.0 };
                    }
                }
            }
            LayerSpec::MaxPool2 => {
                if need_dx {
                    for (&src, &g) in trace.pool_idx[i].iter().zip(&dy) {
                        dx[src as usize] += g;
                    }
                }
            }
            LayerSpec::Dense { units } => {
                let n = layer.input.len();
                let w_off = layer.weight_offset;
                for j in 0..units {
                    let g = dy[j];
                    grad[layer.bias_offset + j] += g;
                    if g == 0.0 {
                        continue;
                    }
                    axpy(g, x, &mut grad[w_off + j * n..w_off + (j + 1) * n]);
                    if need_dx {
                        axpy(g, &params[w_off + j * n..w_off + (j + 1) * n], &mut dx);
                    }
                }
            }
        }
        dy = dx;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Output row/column range whose kernel tap `k` lands inside the input.
#[inline]
fn valid_range(tap: usize, pad: usize, input_len: usize, output_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap);
    let hi = output_len.min((input_len + pad).saturating_sub(tap));
    (lo, hi.max(lo))
}

fn conv_forward(layer: &LayerPlan, k: usize, pad: usize, params: &[f64], x: &[f64], out: &mut [f64]) {
    let (ci, h, w) = (layer.input.c, layer.input.h, layer.input.w);
    let (co, ho, wo) = (layer.output.c, layer.output.h, layer.output.w);
    let weights = &params[layer.weight_offset..layer.weight_offset + co * ci * k * k];
    let bias = &params[layer.bias_offset..layer.bias_offset + co];
    for o in 0..co {
        let out_o = &mut out[o * ho * wo..(o + 1) * ho * wo];
        out_o.fill(bias[o]);
        for c in 0..ci {
            let x_c = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, pad, h, ho);
                for kx in 0..k {
                    let wv = weights[((o * ci + c) * k + ky) * k + kx];
                    let (x0, x1) = valid_range(kx, pad, w, wo);
                    for yy in y0..y1 {
                        let iy = yy + ky - pad;
                        let src = iy * w + x0 + kx - pad;
                        axpy(wv, &x_c[src..src + (x1 - x0)], &mut out_o[yy * wo + x0..yy * wo + x1]);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    layer: &LayerPlan,
    k: usize,
    pad: usize,
    params: &[f64],
    x: &[f64],
    dy: &[f64],
    grad: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let (ci, h, w) = (layer.input.c, layer.input.h, layer.input.w);
    let (co, ho, wo) = (layer.output.c, layer.output.h, layer.output.w);
    for o in 0..co {
        let dy_o = &dy[o * ho * wo..(o + 1) * ho * wo];
        grad[layer.bias_offset + o] += dy_o.iter().sum::<f64>();
        for c in 0..ci {
            let x_c = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = valid_range(ky, pad, h, ho);
                for kx in 0..k {
                    let wi = layer.weight_offset + ((o * ci + c) * k + ky) * k + kx;
                    let wv = params[wi];
                    let (x0, x1) = valid_range(kx, pad, w, wo);
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        let iy = yy + ky - pad;
                        let src = iy * w + x0 + kx - pad;
                        let g_row = &dy_o[yy * wo + x0..yy * wo + x1];
                        acc += dot(g_row, &x_c[src..src + (x1 - x0)]);
                        if let Some(dx) = dx.as_deref_mut() {
                            axpy(wv, g_row, &mut dx[c * h * w + src..c * h * w + src + (x1 - x0)]);
                        }
                    }
                    grad[wi] += acc;
                }
            }
        }
    }
}

fn pool_forward(layer: &LayerPlan, x: &[f64], out: &mut [f64]) -> Vec<u32> {
    let (c, h, w) = (layer.input.c, layer.input.h, layer.input.w);
    let (ho, wo) = (layer.output.h, layer.output.w);
    let mut idx = vec![0u32; out.len()];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = ch * h * w + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                let o = (ch * ho + oy) * wo + ox;
                out[o] = x[best];
                idx[o] = best as u32;
            }
        }
    }
    idx
}
