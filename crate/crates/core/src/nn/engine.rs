//! Layer arithmetic, generic over the scalar type.
//!
//! Every loop here runs in a fixed order so that results are bit-identical
//! across runs and across thread counts (callers parallelize over whole
//! batch items or instances, never inside a reduction).

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

use super::{LayerSpec, NetworkSpec, NnError};

/// Per-layer bookkeeping captured during the forward pass.
pub(crate) enum Aux<S> {
    None,
    /// Flat index into the layer input for each output element.
    MaxPool(Vec<usize>),
    /// Multiplicative mask, 0 or 1/(1-rate) per element.
    Dropout(Tensor<S>),
}

pub(crate) struct Cache<S> {
    /// Input to each layer, in layer order.
    pub inputs: Vec<Tensor<S>>,
    pub aux: Vec<Aux<S>>,
    /// Input to the final softmax layer.
    pub logits: Tensor<S>,
    pub probs: Tensor<S>,
}

/// Dropout configuration for a training-mode forward pass. Masks are a pure
/// function of (seed, layer index, element count) so that a shadow-precision
/// or finite-difference re-evaluation sees the identical masked network.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DropoutPlan {
    pub seed: u64,
    pub rate_override: Option<f32>,
}

pub(crate) fn forward_cached<S: Scalar>(
    spec: &NetworkSpec,
    params: &BTreeMap<String, Tensor<S>>,
    batch: &Tensor<S>,
    dropout: Option<DropoutPlan>,
) -> Result<Cache<S>, NnError> {
    let (c, h, w) = spec.input;
    let want = [batch.shape().first().copied().unwrap_or(0), c, h, w];
    if batch.shape().len() != 4 || batch.shape()[1..] != want[1..] || want[0] == 0 {
        return Err(NnError::ShapeMismatch {
            context: "forward batch",
            expected: vec![0, c, h, w],
            got: batch.shape().to_vec(),
        });
    }

    let mut inputs = Vec::with_capacity(spec.layers.len());
    let mut aux = Vec::with_capacity(spec.layers.len());
    let mut current = batch.clone();
    let mut conv_idx = 0usize;
    let mut dense_idx = 0usize;
    let mut logits = None;

    for (layer_idx, layer) in spec.layers.iter().enumerate() {
        inputs.push(current.clone());
        let next = match layer {
            LayerSpec::Conv { .. } => {
                let weight = &params[&format!("conv{conv_idx}.weight")];
                let bias = &params[&format!("conv{conv_idx}.bias")];
                conv_idx += 1;
                aux.push(Aux::None);
                conv_forward(&current, weight, bias)
            }
            LayerSpec::MaxPool { size, stride } => {
                let (out, argmax) = maxpool_forward(&current, *size, *stride);
                aux.push(Aux::MaxPool(argmax));
                out
            }
            LayerSpec::Relu => {
                aux.push(Aux::None);
                current.map(|v| v.maximum(S::ZERO))
            }
            LayerSpec::Dropout { rate } => match dropout {
                Some(plan) => {
                    let rate = f64::from(plan.rate_override.unwrap_or(*rate));
                    let mask = dropout_mask(plan.seed, layer_idx, current.shape(), rate);
                    let out = elementwise_mul(&current, &mask);
                    aux.push(Aux::Dropout(mask));
                    out
                }
                None => {
                    aux.push(Aux::None);
                    current.clone()
                }
            },
            LayerSpec::Flatten => {
                aux.push(Aux::None);
                let n = current.shape()[0];
                let rest: usize = current.shape()[1..].iter().product();
                current.clone().reshaped(vec![n, rest])
            }
            LayerSpec::Dense { .. } => {
                let weight = &params[&format!("dense{dense_idx}.weight")];
                let bias = &params[&format!("dense{dense_idx}.bias")];
                dense_idx += 1;
                aux.push(Aux::None);
                dense_forward(&current, weight, bias)
            }
            LayerSpec::Softmax => {
                aux.push(Aux::None);
                logits = Some(current.clone());
                softmax_rows(&current)
            }
        };
        current = next;
    }

    Ok(Cache {
        inputs,
        aux,
        logits: logits.expect("validated spec ends in softmax"),
        probs: current,
    })
}

/// Backpropagate from a gradient seeded at the logits (the softmax input).
/// Returns per-parameter gradients plus the gradient w.r.t. the batch.
pub(crate) fn backward_from_logits<S: Scalar>(
    spec: &NetworkSpec,
    params: &BTreeMap<String, Tensor<S>>,
    cache: &Cache<S>,
    logit_grad: Tensor<S>,
) -> (BTreeMap<String, Tensor<S>>, Tensor<S>) {
    let mut grads: BTreeMap<String, Tensor<S>> = BTreeMap::new();
    let mut grad = logit_grad;
    let mut conv_idx = spec.layers.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count();
    let mut dense_idx = spec
        .layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Dense { .. }))
        .count();

    for (layer_idx, layer) in spec.layers.iter().enumerate().rev() {
        let input = &cache.inputs[layer_idx];
        grad = match layer {
            LayerSpec::Softmax => grad, // seed already lives at the logits
            LayerSpec::Conv { .. } => {
                conv_idx -= 1;
                let weight = &params[&format!("conv{conv_idx}.weight")];
                let (gin, gw, gb) = conv_backward(input, weight, &grad);
                grads.insert(format!("conv{conv_idx}.weight"), gw);
                grads.insert(format!("conv{conv_idx}.bias"), gb);
                gin
            }
            LayerSpec::MaxPool { .. } => {
                let Aux::MaxPool(argmax) = &cache.aux[layer_idx] else {
                    unreachable!("maxpool layer recorded no argmax");
                };
                maxpool_backward(&grad, argmax, input.shape())
            }
            LayerSpec::Relu => {
                let mut out = grad.clone();
                for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
                    if x <= S::ZERO {
                        *g = S::ZERO;
                    }
                }
                out
            }
            LayerSpec::Dropout { .. } => match &cache.aux[layer_idx] {
                Aux::Dropout(mask) => elementwise_mul(&grad, mask),
                _ => grad,
            },
            LayerSpec::Flatten => grad.reshaped(input.shape().to_vec()),
            LayerSpec::Dense { .. } => {
                dense_idx -= 1;
                let weight = &params[&format!("dense{dense_idx}.weight")];
                let (gin, gw, gb) = dense_backward(input, weight, &grad);
                grads.insert(format!("dense{dense_idx}.weight"), gw);
                grads.insert(format!("dense{dense_idx}.bias"), gb);
                gin
            }
        };
    }
    (grads, grad)
}

/// Mean cross-entropy gradient at the logits: (probs - onehot) / n.
pub(crate) fn cross_entropy_logit_grad<S: Scalar>(probs: &Tensor<S>, labels: &[usize]) -> Tensor<S> {
    let n = probs.shape()[0];
    let k = probs.shape()[1];
    let inv_n = S::ONE / S::from_f64(n as f64);
    let mut grad = probs.clone();
    for (row, &label) in labels.iter().enumerate() {
        let d = grad.data_mut();
        for col in 0..k {
            let idx = row * k + col;
            let target = if col == label { S::ONE } else { S::ZERO };
            d[idx] = (d[idx] - target) * inv_n;
        }
    }
    grad
}

/// Mean over the batch of -ln(prob of the true class), probability floored
/// at 1e-12 for stability.
pub(crate) fn cross_entropy<S: Scalar>(probs: &Tensor<S>, labels: &[usize]) -> Result<S, NnError> {
    let n = probs.shape()[0];
    let k = probs.shape()[1];
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            context: "loss labels",
            expected: vec![n],
            got: vec![labels.len()],
        });
    }
    let floor = S::from_f64(1e-12);
    let mut total = S::ZERO;
    for (row, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(NnError::InvalidLabel { label, classes: k });
        }
        let p = probs.data()[row * k + label].maximum(floor);
        total = total - p.ln();
    }
    Ok(total / S::from_f64(n as f64))
}

fn elementwise_mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &m)| x * m).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn dropout_mask<S: Scalar>(seed: u64, layer_idx: usize, shape: &[usize], rate: f64) -> Tensor<S> {
    let mut rng = Rng::new(seed).derive(layer_idx as u64 + 1);
    let keep_scale = S::from_f64(1.0 / (1.0 - rate));
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            if rng.next_f64() < rate {
                S::ZERO
            } else {
                keep_scale
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// 3x3 convolution, stride 1, zero padding 1 ("same").
fn conv_forward<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Tensor<S> {
    let [n, ic, h, w] = *input.shape() else { panic!("conv input must be 4-d") };
    let oc = weight.shape()[0];
    let mut out = Tensor::zeros(vec![n, oc, h, w]);
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let od = out.data_mut();
    for item in 0..n {
        for o in 0..oc {
            let bias_o = b[o];
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = bias_o;
                    for i in 0..ic {
                        let wbase = ((o * ic) + i) * 9;
                        let ibase = (item * ic + i) * h * w;
                        for ky in 0..3 {
                            let iy = (oy + ky).wrapping_sub(1);
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox + kx).wrapping_sub(1);
                                if ix >= w {
                                    continue;
                                }
                                acc = acc + wt[wbase + ky * 3 + kx] * x[ibase + iy * w + ix];
                            }
                        }
                    }
                    od[((item * oc + o) * h + oy) * w + ox] = acc;
                }
            }
        }
    }
    out
}

fn conv_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let [n, ic, h, w] = *input.shape() else { panic!("conv input must be 4-d") };
    let oc = weight.shape()[0];
    let mut grad_in = Tensor::zeros(input.shape().to_vec());
    let mut grad_w = Tensor::zeros(weight.shape().to_vec());
    let mut grad_b = Tensor::zeros(vec![oc]);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let gi = grad_in.data_mut();
    let gw = grad_w.data_mut();
    let gb = grad_b.data_mut();

    for item in 0..n {
        for o in 0..oc {
            for oy in 0..h {
                for ox in 0..w {
                    let g = go[((item * oc + o) * h + oy) * w + ox];
                    gb[o] = gb[o] + g;
                    for i in 0..ic {
                        let wbase = ((o * ic) + i) * 9;
                        let ibase = (item * ic + i) * h * w;
                        for ky in 0..3 {
                            let iy = (oy + ky).wrapping_sub(1);
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox + kx).wrapping_sub(1);
                                if ix >= w {
                                    continue;
                                }
                                let widx = wbase + ky * 3 + kx;
                                let iidx = ibase + iy * w + ix;
                                gw[widx] = gw[widx] + g * x[iidx];
                                gi[iidx] = gi[iidx] + g * wt[widx];
                            }
                        }
                    }
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

/// Max pooling with windows clipped at the lower/right edges, so the output
/// extent is ceil(input / stride) in each axis.
fn maxpool_forward<S: Scalar>(input: &Tensor<S>, size: usize, stride: usize) -> (Tensor<S>, Vec<usize>) {
    let [n, c, h, w] = *input.shape() else { panic!("maxpool input must be 4-d") };
    let oh = h.div_ceil(stride);
    let ow = w.div_ceil(stride);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let x = input.data();
    let od = out.data_mut();
    for item in 0..n {
        for ch in 0..c {
            let base = (item * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let y0 = oy * stride;
                    let x0 = ox * stride;
                    let y1 = (y0 + size).min(h);
                    let x1 = (x0 + size).min(w);
                    let mut best_idx = base + y0 * w + x0;
                    let mut best = x[best_idx];
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            let idx = base + yy * w + xx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oidx = ((item * c + ch) * oh + oy) * ow + ox;
                    od[oidx] = best;
                    argmax[oidx] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

fn maxpool_backward<S: Scalar>(grad_out: &Tensor<S>, argmax: &[usize], input_shape: &[usize]) -> Tensor<S> {
    let mut grad_in = Tensor::zeros(input_shape.to_vec());
    let gi = grad_in.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        gi[idx] = gi[idx] + *g;
    }
    grad_in
}

fn dense_forward<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Tensor<S> {
    let n = input.shape()[0];
    let in_dim = input.shape()[1];
    let out_dim = weight.shape()[0];
    let mut out = Tensor::zeros(vec![n, out_dim]);
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let od = out.data_mut();
    for item in 0..n {
        for o in 0..out_dim {
            let mut acc = b[o];
            let wrow = o * in_dim;
            let xrow = item * in_dim;
            for i in 0..in_dim {
                acc = acc + wt[wrow + i] * x[xrow + i];
            }
            od[item * out_dim + o] = acc;
        }
    }
    out
}

fn dense_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let n = input.shape()[0];
    let in_dim = input.shape()[1];
    let out_dim = weight.shape()[0];
    let mut grad_in = Tensor::zeros(input.shape().to_vec());
    let mut grad_w = Tensor::zeros(weight.shape().to_vec());
    let mut grad_b = Tensor::zeros(vec![out_dim]);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let gi = grad_in.data_mut();
    let gw = grad_w.data_mut();
    let gb = grad_b.data_mut();
    for item in 0..n {
        for o in 0..out_dim {
            let g = go[item * out_dim + o];
            gb[o] = gb[o] + g;
            let wrow = o * in_dim;
            let xrow = item * in_dim;
            for i in 0..in_dim {
                gw[wrow + i] = gw[wrow + i] + g * x[xrow + i];
                gi[xrow + i] = gi[xrow + i] + g * wt[wrow + i];
            }
        }
    }
    (grad_in, grad_w, grad_b)
}

/// Numerically stable row-wise softmax.
pub(crate) fn softmax_rows<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let n = logits.shape()[0];
    let k = logits.shape()[1];
    let mut out = logits.clone();
    let d = out.data_mut();
    for row in 0..n {
        let slice = &mut d[row * k..(row + 1) * k];
        let mut m = slice[0];
        for &v in slice.iter() {
            m = m.maximum(v);
        }
        let mut total = S::ZERO;
        for v in slice.iter_mut() {
            *v = (*v - m).exp();
            total = total + *v;
        }
        for v in slice.iter_mut() {
            *v = *v / total;
        }
    }
    out
}
