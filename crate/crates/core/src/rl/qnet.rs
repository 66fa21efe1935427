//! Backpropagation of the Huber Q-loss and an Adam optimiser.

use crate::network::{layer_preactivation, LayerKind, NetworkSpec, WeightSet};
use crate::tensor::{BitMask, Tensor};

/// Pre- and post-activation values of every layer for one input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    grad_a: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn new(spec: &NetworkSpec) -> Self {
        let sizes: Vec<usize> = spec.geometry().iter().map(|g| g.output_len()).collect();
        ForwardCache {
            pre: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            post: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            grad_a: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn forward_cached<'c>(spec: &NetworkSpec, ws: &WeightSet, x: &[f64], cache: &'c mut ForwardCache) -> &'c [f64] {
    for k in 0..spec.num_layers() {
        let (done, rest) = cache.post.split_at_mut(k);
        let input: &[f64] = if k == 0 { x } else { &done[k - 1] };
        let pre = &mut cache.pre[k];
        layer_preactivation(&spec.layers()[k], &spec.geometry()[k], &ws.layers[k], input, pre);
        let act = spec.layers()[k].activation;
        for (o, &p) in rest[0].iter_mut().zip(pre.iter()) {
            *o = act.apply(p);
        }
    }
    cache.output()
}

/// Accumulates `d(output . grad_out) / d(params)` into `grads`, using the
/// activations stored by the last [`forward_cached`] call on `x`.
pub fn backward(
    spec: &NetworkSpec,
    ws: &WeightSet,
    x: &[f64],
    cache: &mut ForwardCache,
    grad_out: &[f64],
    grads: &mut WeightSet,
) {
    let n = spec.num_layers();
    if n == 0 {
        return;
    }
    cache.grad_a[n - 1].copy_from_slice(grad_out);
    for k in (0..n).rev() {
        let layer = &spec.layers()[k];
        let geom = &spec.geometry()[k];
        // d(loss)/d(pre-activation), stored in place of grad_a[k]
        {
            let act = layer.activation;
            let pre = &cache.pre[k];
            for (g, &p) in cache.grad_a[k].iter_mut().zip(pre) {
                *g *= act.derivative(p);
            }
        }
        let (lower, upper) = cache.grad_a.split_at_mut(k);
        let delta = &upper[0];
        let input: &[f64] = if k == 0 { x } else { &cache.post[k - 1] };
        let w = ws.layers[k].weights.data();
        let grad_layer = &mut grads.layers[k];
        let gw = grad_layer.weights.data_mut();
        let gb = grad_layer.bias.data_mut();
        let mut d_in = lower.last_mut();
        if let Some(d) = d_in.as_mut() {
            d.fill(0.0);
        }
        match layer.kind {
            LayerKind::Dense { in_size, out_size } => {
                for j in 0..out_size {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    let row = j * in_size..(j + 1) * in_size;
                    for (g, &xi) in gw[row.clone()].iter_mut().zip(input) {
                        *g += dj * xi;
                    }
                    if let Some(d) = d_in.as_mut() {
                        for (di, &wv) in d.iter_mut().zip(&w[row]) {
                            *di += wv * dj;
                        }
                    }
                }
            }
            LayerKind::Conv2d {
                in_channels,
                out_filters,
                kernel_x,
                kernel_y,
                stride,
            } => {
                let (in_h, in_w) = (geom.input[1], geom.input[2]);
                let (out_h, out_w) = (geom.output[1], geom.output[2]);
                for f in 0..out_filters {
                    let plane = &delta[f * out_h * out_w..(f + 1) * out_h * out_w];
                    gb[f] += plane.iter().sum::<f64>();
                    for c in 0..in_channels {
                        let in_plane = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
                        for ky in 0..kernel_y {
                            for kx in 0..kernel_x {
                                let widx = ((f * in_channels + c) * kernel_y + ky) * kernel_x + kx;
                                let mut acc = 0.0;
                                for oy in 0..out_h {
                                    let row = &in_plane[(oy * stride + ky) * in_w..];
                                    let drow = &plane[oy * out_w..(oy + 1) * out_w];
                                    for (ox, &dv) in drow.iter().enumerate() {
                                        acc += dv * row[ox * stride + kx];
                                    }
                                }
                                gw[widx] += acc;
                                if let Some(d) = d_in.as_mut() {
                                    let wv = w[widx];
                                    if wv != 0.0 {
                                        let dplane = &mut d[c * in_h * in_w..(c + 1) * in_h * in_w];
                                        for oy in 0..out_h {
                                            for ox in 0..out_w {
                                                dplane[(oy * stride + ky) * in_w + ox * stride + kx] +=
                                                    wv * plane[oy * out_w + ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Huber loss with unit transition point.
pub fn huber(td: f64) -> f64 {
    if td.abs() <= 1.0 {
        0.5 * td * td
    } else {
        td.abs() - 0.5
    }
}

pub fn huber_grad(td: f64) -> f64 {
    td.clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct QSample<'a> {
    pub state: &'a Tensor,
    pub action: usize,
    pub target: f64,
}

pub fn zero_grads(ws: &WeightSet) -> WeightSet {
    let mut g = ws.clone();
    for p in g.layers.iter_mut() {
        p.weights.data_mut().fill(0.0);
        p.bias.data_mut().fill(0.0);
    }
    g
}

/// Mean Huber loss of `Q(s, a) - target` over the batch.
pub fn q_loss(spec: &NetworkSpec, ws: &WeightSet, batch: &[QSample<'_>], cache: &mut ForwardCache) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|s| huber(forward_cached(spec, ws, s.state.data(), cache)[s.action] - s.target))
        .sum();
    total / batch.len() as f64
}

/// Mean Huber loss and its gradient, written into `grads` (overwritten).
pub fn q_loss_and_grad(
    spec: &NetworkSpec,
    ws: &WeightSet,
    batch: &[QSample<'_>],
    cache: &mut ForwardCache,
    grads: &mut WeightSet,
) -> f64 {
    for p in grads.layers.iter_mut() {
        p.weights.data_mut().fill(0.0);
        p.bias.data_mut().fill(0.0);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad_out = vec![0.0; spec.n_output()];
    let mut total = 0.0;
    for s in batch {
        let q = forward_cached(spec, ws, s.state.data(), cache)[s.action];
        let td = q - s.target;
        total += huber(td);
        grad_out.fill(0.0);
        grad_out[s.action] = huber_grad(td) * scale;
        backward(spec, ws, s.state.data(), cache, &grad_out, grads);
    }
    total * scale
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: WeightSet,
    v: WeightSet,
    t: i32,
}

impl Adam {
    pub fn new(params: AdamParams, like: &WeightSet) -> Self {
        Adam {
            params,
            m: zero_grads(like),
            v: zero_grads(like),
            t: 0,
        }
    }

    /// One update. Entries whose mask bit is false get no update and are
    /// left at exactly zero.
    pub fn step(&mut self, ws: &mut WeightSet, grads: &WeightSet, masks: &[BitMask]) {
        self.t += 1;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let update = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], mask: Option<&BitMask>| {
            for i in 0..w.len() {
                if let Some(mask) = mask {
                    if !mask.get(i) {
                        w[i] = 0.0;
                        continue;
                    }
                }
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                w[i] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
            }
        };
        for (k, layer) in ws.layers.iter_mut().enumerate() {
            update(
                layer.weights.data_mut(),
                grads.layers[k].weights.data(),
                self.m.layers[k].weights.data_mut(),
                self.v.layers[k].weights.data_mut(),
                masks.get(k),
            );
            update(
                layer.bias.data_mut(),
                grads.layers[k].bias.data(),
                self.m.layers[k].bias.data_mut(),
                self.v.layers[k].bias.data_mut(),
                None,
            );
        }
    }
}
