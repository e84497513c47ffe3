//! Forward and backward passes for the individual layer types.
//!
//! Every function here is pure. Backward functions take the forward inputs
//! and the upstream gradient and return gradients with respect to every
//! input of the forward call.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, WeightTensor};

/// Spatial output size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn conv_dims(
    input: &FeatureMap,
    w: &WeightTensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let s = w.shape();
    if input.c != s.c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, kernel expects {}", input.c, s.c),
        ));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be >= 1"));
    }
    let oh = conv_out_dim(input.h, s.kh, stride, padding);
    let ow = conv_out_dim(input.w, s.kw, stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::shape(
            "conv2d",
            format!(
                "{}x{} input with padding {padding} is smaller than {}x{} kernel",
                input.h, input.w, s.kh, s.kw
            ),
        )),
    }
}

/// Cross-correlation of `input` with `w` (no kernel flip), zero padding.
pub fn conv2d_forward(
    input: &FeatureMap,
    w: &WeightTensor,
    stride: usize,
    padding: usize,
) -> Result<FeatureMap> {
    let (oh, ow) = conv_dims(input, w, stride, padding)?;
    let s = w.shape();
    let wv = w.values();
    let mut out = FeatureMap::zeros(input.batch, oh, ow, s.n);
    for b in 0..input.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = out.index(b, oy, ox, 0);
                let acc = &mut out.values[o..o + s.n];
                for ky in 0..s.kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= input.h as isize {
                        continue;
                    }
                    for kx in 0..s.kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= input.w as isize {
                            continue;
                        }
                        let i = input.index(b, iy as usize, ix as usize, 0);
                        for ci in 0..s.c {
                            let v = input.values[i + ci];
                            if v == 0.0 {
                                continue;
                            }
                            let k = s.index(ky, kx, ci, 0);
                            for (a, wk) in acc.iter_mut().zip(&wv[k..k + s.n]) {
                                *a += v * wk;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its input and kernel.
pub fn conv2d_backward(
    grad_out: &FeatureMap,
    input: &FeatureMap,
    w: &WeightTensor,
    stride: usize,
    padding: usize,
) -> Result<(FeatureMap, WeightTensor)> {
    let (oh, ow) = conv_dims(input, w, stride, padding)?;
    let s = w.shape();
    if grad_out.batch != input.batch || grad_out.h != oh || grad_out.w != ow || grad_out.c != s.n {
        return Err(Error::shape(
            "conv2d backward",
            format!(
                "upstream gradient {}x{}x{}x{} does not match output {}x{oh}x{ow}x{}",
                grad_out.batch, grad_out.h, grad_out.w, grad_out.c, input.batch, s.n
            ),
        ));
    }
    let wv = w.values();
    let mut grad_in = FeatureMap::zeros(input.batch, input.h, input.w, input.c);
    let mut grad_w = WeightTensor::zeros(s);
    for b in 0..input.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = grad_out.index(b, oy, ox, 0);
                let g = &grad_out.values[o..o + s.n];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for ky in 0..s.kh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= input.h as isize {
                        continue;
                    }
                    for kx in 0..s.kw {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= input.w as isize {
                            continue;
                        }
                        let i = input.index(b, iy as usize, ix as usize, 0);
                        for ci in 0..s.c {
                            let k = s.index(ky, kx, ci, 0);
                            let v = input.values[i + ci];
                            let gw = &mut grad_w.values_mut()[k..k + s.n];
                            let mut gi = 0.0;
                            for f in 0..s.n {
                                gw[f] += v * g[f];
                                gi += wv[k + f] * g[f];
                            }
                            grad_in.values[i + ci] += gi;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_in, grad_w))
}

/// Fully connected layer; `weight` is `inputs × outputs` with outputs fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::shape("dense", "sizes must be >= 1"));
        }
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape(
                "dense",
                format!(
                    "{} weights / {} biases for {inputs}->{outputs}",
                    weight.len(),
                    bias.len()
                ),
            ));
        }
        Ok(Dense {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    /// Keeps only the listed input rows.
    pub fn select_inputs(&self, rows: &[usize]) -> Result<Dense> {
        let mut weight = Vec::with_capacity(rows.len() * self.outputs);
        for &r in rows {
            if r >= self.inputs {
                return Err(Error::shape(
                    "dense select",
                    format!("row {r} out of range"),
                ));
            }
            weight.extend_from_slice(&self.weight[r * self.outputs..(r + 1) * self.outputs]);
        }
        Dense::new(rows.len(), self.outputs, weight, self.bias.clone())
    }
}

pub fn dense_forward(input: &FeatureMap, layer: &Dense) -> Result<FeatureMap> {
    if input.sample_len() != layer.inputs {
        return Err(Error::shape(
            "dense",
            format!(
                "input has {} features, layer expects {}",
                input.sample_len(),
                layer.inputs
            ),
        ));
    }
    let mut out = FeatureMap::zeros(input.batch, 1, 1, layer.outputs);
    for b in 0..input.batch {
        let x = input.sample(b);
        let y = &mut out.values[b * layer.outputs..(b + 1) * layer.outputs];
        y.copy_from_slice(&layer.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &layer.weight[i * layer.outputs..(i + 1) * layer.outputs];
            for (yo, w) in y.iter_mut().zip(row) {
                *yo += xi * w;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward(
    grad_out: &FeatureMap,
    input: &FeatureMap,
    layer: &Dense,
) -> Result<(FeatureMap, Vec<f64>, Vec<f64>)> {
    if input.sample_len() != layer.inputs
        || grad_out.sample_len() != layer.outputs
        || grad_out.batch != input.batch
    {
        return Err(Error::shape(
            "dense backward",
            "gradient/input size mismatch",
        ));
    }
    let mut grad_in = FeatureMap::zeros(input.batch, input.h, input.w, input.c);
    let mut gw = vec![0.0; layer.weight.len()];
    let mut gb = vec![0.0; layer.outputs];
    for b in 0..input.batch {
        let x = input.sample(b);
        let g = grad_out.sample(b);
        for (gbo, go) in gb.iter_mut().zip(g) {
            *gbo += go;
        }
        let gi = &mut grad_in.values[b * layer.inputs..(b + 1) * layer.inputs];
        for i in 0..layer.inputs {
            let row = &layer.weight[i * layer.outputs..(i + 1) * layer.outputs];
            let grow = &mut gw[i * layer.outputs..(i + 1) * layer.outputs];
            let mut acc = 0.0;
            for o in 0..layer.outputs {
                grow[o] += x[i] * g[o];
                acc += row[o] * g[o];
            }
            gi[i] = acc;
        }
    }
    Ok((grad_in, gw, gb))
}

pub fn relu_forward(input: &FeatureMap) -> FeatureMap {
    let mut out = input.clone();
    out.values.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// The derivative at exactly zero is taken as 0.
pub fn relu_backward(grad_out: &FeatureMap, input: &FeatureMap) -> Result<FeatureMap> {
    if !grad_out.same_dims(input) {
        return Err(Error::shape(
            "relu backward",
            "gradient/input size mismatch",
        ));
    }
    let mut g = grad_out.clone();
    for (gv, &x) in g.values.iter_mut().zip(&input.values) {
        if x <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

fn maxpool_argmax(input: &FeatureMap, b: usize, oy: usize, ox: usize, ch: usize) -> usize {
    let mut best = input.index(b, 2 * oy, 2 * ox, ch);
    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
        let i = input.index(b, 2 * oy + dy, 2 * ox + dx, ch);
        if input.values[i] > input.values[best] {
            best = i;
        }
    }
    best
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn maxpool2_forward(input: &FeatureMap) -> Result<FeatureMap> {
    if input.h < 2 || input.w < 2 {
        return Err(Error::shape(
            "maxpool2",
            format!(
                "{}x{} input is smaller than the 2x2 window",
                input.h, input.w
            ),
        ));
    }
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = FeatureMap::zeros(input.batch, oh, ow, input.c);
    for b in 0..input.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..input.c {
                    let o = out.index(b, oy, ox, ch);
                    out.values[o] = input.values[maxpool_argmax(input, b, oy, ox, ch)];
                }
            }
        }
    }
    Ok(out)
}

/// Routes each upstream gradient to the first maximal element of its window.
pub fn maxpool2_backward(grad_out: &FeatureMap, input: &FeatureMap) -> Result<FeatureMap> {
    let (oh, ow) = (input.h / 2, input.w / 2);
    if grad_out.batch != input.batch
        || grad_out.h != oh
        || grad_out.w != ow
        || grad_out.c != input.c
    {
        return Err(Error::shape(
            "maxpool2 backward",
            "gradient/input size mismatch",
        ));
    }
    let mut g = FeatureMap::zeros(input.batch, input.h, input.w, input.c);
    for b in 0..input.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..input.c {
                    let i = maxpool_argmax(input, b, oy, ox, ch);
                    g.values[i] += grad_out.get(b, oy, ox, ch);
                }
            }
        }
    }
    Ok(g)
}

pub fn flatten_forward(input: &FeatureMap) -> FeatureMap {
    FeatureMap {
        batch: input.batch,
        h: 1,
        w: 1,
        c: input.sample_len(),
        values: input.values.clone(),
    }
}

pub fn flatten_backward(grad_out: &FeatureMap, input: &FeatureMap) -> Result<FeatureMap> {
    if grad_out.values.len() != input.values.len() {
        return Err(Error::shape(
            "flatten backward",
            "gradient/input size mismatch",
        ));
    }
    Ok(FeatureMap {
        batch: input.batch,
        h: input.h,
        w: input.w,
        c: input.c,
        values: grad_out.values.clone(),
    })
}

pub fn residual_add_forward(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if !a.same_dims(b) {
        return Err(Error::shape(
            "residual-add",
            format!(
                "operands {}x{}x{} and {}x{}x{} differ",
                a.h, a.w, a.c, b.h, b.w, b.c
            ),
        ));
    }
    let mut out = a.clone();
    for (o, v) in out.values.iter_mut().zip(&b.values) {
        *o += v;
    }
    Ok(out)
}

/// Both operands receive the upstream gradient unchanged.
pub fn residual_add_backward(grad_out: &FeatureMap) -> (FeatureMap, FeatureMap) {
    (grad_out.clone(), grad_out.clone())
}

/// Mean softmax cross-entropy over the batch.
///
/// `logits` holds one row of class scores per sample. The returned gradient
/// is that of the batch mean, i.e. `(softmax - onehot) / batch` per row.
pub fn softmax_cross_entropy(logits: &FeatureMap, labels: &[usize]) -> Result<(f64, FeatureMap)> {
    let k = logits.sample_len();
    if labels.len() != logits.batch {
        return Err(Error::shape(
            "softmax-ce",
            format!("{} labels for batch of {}", labels.len(), logits.batch),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let batch = logits.batch as f64;
    let mut grad = FeatureMap::zeros(logits.batch, logits.h, logits.w, logits.c);
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let z = logits.sample(b);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - z[label];
        let g = &mut grad.values[b * k..(b + 1) * k];
        for (gi, zi) in g.iter_mut().zip(z) {
            *gi = (zi - log_sum).exp() / batch;
        }
        g[label] -= 1.0 / batch;
    }
    Ok((loss / batch, grad))
}
