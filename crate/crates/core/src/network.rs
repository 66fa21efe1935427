//! Declarative conv/dense networks, the dense forward pass and static
//! multiplication counting.
//!
//! Convolutions are "valid" (no padding, no dilation). Conv weights are laid
//! out `[filters, in_channels, kernel_y, kernel_x]`, dense weights
//! `[out_size, in_size]`, both row-major. A flatten in channel-major order is
//! implied between the last conv layer and the first dense layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Identity => v,
        }
    }

    /// Derivative at `v`; ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_filters: usize,
        kernel_x: usize,
        kernel_y: usize,
        stride: usize,
    },
    Dense {
        in_size: usize,
        out_size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv2d(
        in_channels: usize,
        out_filters: usize,
        kernel: (usize, usize),
        stride: usize,
        activation: Activation,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d {
                in_channels,
                out_filters,
                kernel_x: kernel.0,
                kernel_y: kernel.1,
                stride,
            },
            activation,
        }
    }

    pub fn dense(in_size: usize, out_size: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { in_size, out_size },
            activation,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d { .. })
    }

    /// Shape of the weight tensor.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv2d {
                in_channels,
                out_filters,
                kernel_x,
                kernel_y,
                ..
            } => vec![out_filters, in_channels, kernel_y, kernel_x],
            LayerKind::Dense { in_size, out_size } => vec![out_size, in_size],
        }
    }

    pub fn bias_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { out_filters, .. } => out_filters,
            LayerKind::Dense { out_size, .. } => out_size,
        }
    }

    /// Number of incoming connections per output neuron.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d {
                in_channels,
                kernel_x,
                kernel_y,
                ..
            } => in_channels * kernel_x * kernel_y,
            LayerKind::Dense { in_size, .. } => in_size,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.bias_len()
    }

    fn validate_extents(&self) -> Result<()> {
        let ok = match self.kind {
            LayerKind::Conv2d {
                in_channels,
                out_filters,
                kernel_x,
                kernel_y,
                stride,
            } => [in_channels, out_filters, kernel_x, kernel_y, stride]
                .iter()
                .all(|&v| v >= 1),
            LayerKind::Dense { in_size, out_size } => in_size >= 1 && out_size >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArchitecture(format!(
                "all extents must be >= 1 in {:?}",
                self.kind
            )))
        }
    }
}

/// Input and output shapes of one layer inside a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerGeometry {
    /// `[channels, height, width]` for conv layers, `[size]` for dense.
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl LayerGeometry {
    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output.iter().product()
    }
}

fn conv_out_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if input < kernel {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetworkSpec", into = "RawNetworkSpec")]
pub struct NetworkSpec {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    geometry: Vec<LayerGeometry>,
}

#[derive(Serialize, Deserialize)]
struct RawNetworkSpec {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

impl TryFrom<RawNetworkSpec> for NetworkSpec {
    type Error = Error;
    fn try_from(raw: RawNetworkSpec) -> Result<Self> {
        NetworkSpec::new(raw.input_shape, raw.layers)
    }
}

impl From<NetworkSpec> for RawNetworkSpec {
    fn from(spec: NetworkSpec) -> Self {
        RawNetworkSpec {
            input_shape: spec.input_shape,
            layers: spec.layers,
        }
    }
}

impl NetworkSpec {
    /// Validates that the layer shapes chain from `input_shape`
    /// (`[channels, height, width]`).
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "input shape {input_shape:?} has a zero extent"
            )));
        }
        let mut geometry = Vec::with_capacity(layers.len());
        let mut current: Vec<usize> = input_shape.to_vec();
        for (k, layer) in layers.iter().enumerate() {
            layer.validate_extents()?;
            let output = match layer.kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_filters,
                    kernel_x,
                    kernel_y,
                    stride,
                } => {
                    if current.len() != 3 {
                        return Err(Error::InvalidArchitecture(format!(
                            "layer {}: convolution after a dense layer",
                            k + 1
                        )));
                    }
                    if current[0] != in_channels {
                        return Err(Error::InvalidArchitecture(format!(
                            "layer {}: expects {} input channels, previous layer yields {}",
                            k + 1,
                            in_channels,
                            current[0]
                        )));
                    }
                    let out_h = conv_out_extent(current[1], kernel_y, stride);
                    let out_w = conv_out_extent(current[2], kernel_x, stride);
                    match (out_h, out_w) {
                        (Some(h), Some(w)) => vec![out_filters, h, w],
                        _ => {
                            return Err(Error::InvalidArchitecture(format!(
                                "layer {}: kernel {}x{} larger than input {}x{}",
                                k + 1,
                                kernel_x,
                                kernel_y,
                                current[2],
                                current[1]
                            )))
                        }
                    }
                }
                LayerKind::Dense { in_size, out_size } => {
                    let flat: usize = current.iter().product();
                    if flat != in_size {
                        return Err(Error::InvalidArchitecture(format!(
                            "layer {}: expects {} inputs, previous layer yields {}",
                            k + 1,
                            in_size,
                            flat
                        )));
                    }
                    current = vec![flat];
                    vec![out_size]
                }
            };
            geometry.push(LayerGeometry {
                input: current.clone(),
                output: output.clone(),
            });
            current = output;
        }
        Ok(NetworkSpec {
            input_shape,
            layers,
            geometry,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn geometry(&self) -> &[LayerGeometry] {
        &self.geometry
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Output shape of the final layer (the input shape for an empty network).
    pub fn output_shape(&self) -> Vec<usize> {
        self.geometry
            .last()
            .map(|g| g.output.clone())
            .unwrap_or_else(|| self.input_shape.to_vec())
    }

    pub fn n_output(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::parameter_count).sum()
    }

    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight_shape().iter().product::<usize>())
            .sum()
    }

    /// Display names in the `Conv2d-k` / `Dense-k` style.
    pub fn layer_names(&self) -> Vec<String> {
        let (mut conv, mut dense) = (0, 0);
        self.layers
            .iter()
            .map(|l| {
                if l.is_conv() {
                    conv += 1;
                    format!("Conv2d-{conv}")
                } else {
                    dense += 1;
                    format!("Dense-{dense}")
                }
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let ok = x.shape() == self.input_shape || x.shape() == [self.input_len()];
        if ok {
            Ok(())
        } else {
            Err(Error::shape(&self.input_shape, x.shape()))
        }
    }
}

/// The reference Atari DQN: three valid convolutions and two dense layers on
/// a `4x84x84` input.
pub fn build_reference_dqn(n_output: usize) -> Result<NetworkSpec> {
    if n_output == 0 {
        return Err(Error::InvalidArgument("n_output must be >= 1".into()));
    }
    NetworkSpec::new(
        [4, 84, 84],
        vec![
            LayerSpec::conv2d(4, 32, (8, 8), 4, Activation::Relu),
            LayerSpec::conv2d(32, 64, (4, 4), 2, Activation::Relu),
            LayerSpec::conv2d(64, 64, (3, 3), 1, Activation::Relu),
            LayerSpec::dense(3136, 512, Activation::Relu),
            LayerSpec::dense(512, n_output, Activation::Identity),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub layers: Vec<LayerParams>,
}

impl WeightSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        WeightSet {
            layers: spec
                .layers()
                .iter()
                .map(|l| LayerParams {
                    weights: Tensor::zeros(l.weight_shape()),
                    bias: Tensor::zeros(vec![l.bias_len()]),
                })
                .collect(),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation for weights and biases.
    pub fn init_uniform(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ws = WeightSet::zeros(spec);
        for (layer, params) in spec.layers().iter().zip(ws.layers.iter_mut()) {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for v in params.weights.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            for v in params.bias.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        ws
    }

    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.num_layers() {
            return Err(Error::shape(&[spec.num_layers()], &[self.layers.len()]));
        }
        for (layer, params) in spec.layers().iter().zip(&self.layers) {
            let ws = layer.weight_shape();
            if params.weights.shape() != ws.as_slice() {
                return Err(Error::shape(&ws, params.weights.shape()));
            }
            if params.bias.shape() != [layer.bias_len()] {
                return Err(Error::shape(&[layer.bias_len()], params.bias.shape()));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|p| p.weights.all_finite() && p.bias.all_finite())
    }
}

/// Computes one layer's pre-activation `W x + b` into `out`.
pub(crate) fn layer_preactivation(
    layer: &LayerSpec,
    geom: &LayerGeometry,
    params: &LayerParams,
    input: &[f64],
    out: &mut [f64],
) {
    let w = params.weights.data();
    let b = params.bias.data();
    match layer.kind {
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
                let plane = &mut out[f * out_h * out_w..(f + 1) * out_h * out_w];
                plane.fill(b[f]);
                for c in 0..in_channels {
                    let in_plane = &input[c * in_h * in_w..(c + 1) * in_h * in_w];
                    for ky in 0..kernel_y {
                        for kx in 0..kernel_x {
                            let wv = w[((f * in_channels + c) * kernel_y + ky) * kernel_x + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            for oy in 0..out_h {
                                let row = &in_plane[(oy * stride + ky) * in_w..];
                                let dst = &mut plane[oy * out_w..(oy + 1) * out_w];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d += wv * row[ox * stride + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        LayerKind::Dense { in_size, out_size } => {
            for j in 0..out_size {
                let row = &w[j * in_size..(j + 1) * in_size];
                let mut acc = 0.0;
                for (wv, xv) in row.iter().zip(input) {
                    acc += wv * xv;
                }
                out[j] = b[j] + acc;
            }
        }
    }
}

/// Dense (non-delta) forward pass; returns the final layer's activations.
pub fn forward(spec: &NetworkSpec, weights: &WeightSet, x: &Tensor) -> Result<Tensor> {
    spec.check_input(x)?;
    weights.check_against(spec)?;
    let mut current = x.data().to_vec();
    for ((layer, geom), params) in spec.layers().iter().zip(spec.geometry()).zip(&weights.layers) {
        let mut out = vec![0.0; geom.output_len()];
        layer_preactivation(layer, geom, params, &current, &mut out);
        for v in out.iter_mut() {
            *v = layer.activation.apply(*v);
        }
        current = out;
    }
    Tensor::new(spec.output_shape(), current)
}

pub fn static_conv_multiplications(layer: &LayerSpec, out_x: usize, out_y: usize) -> Result<u64> {
    match layer.kind {
        LayerKind::Conv2d {
            in_channels,
            out_filters,
            kernel_x,
            kernel_y,
            ..
        } => Ok((out_x * out_y * out_filters * kernel_x * kernel_y * in_channels) as u64),
        LayerKind::Dense { .. } => Err(Error::InvalidArgument(
            "static_conv_multiplications called on a dense layer".into(),
        )),
    }
}

pub fn static_dense_multiplications(layer: &LayerSpec) -> Result<u64> {
    match layer.kind {
        LayerKind::Dense { in_size, out_size } => Ok((in_size * out_size) as u64),
        LayerKind::Conv2d { .. } => Err(Error::InvalidArgument(
            "static_dense_multiplications called on a conv layer".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticRow {
    pub name: String,
    /// Index into the network's weighted layers; `None` for the flatten row.
    pub layer: Option<usize>,
    pub multiplications: u64,
    pub parameters: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticReport {
    pub rows: Vec<StaticRow>,
    pub total_multiplications: u64,
    pub total_parameters: u64,
}

impl StaticReport {
    /// Per weighted layer multiplication counts, flatten excluded.
    pub fn layer_multiplications(&self) -> Vec<u64> {
        self.rows
            .iter()
            .filter(|r| r.layer.is_some())
            .map(|r| r.multiplications)
            .collect()
    }
}

/// Multiplications of an unoptimised dense pass, per layer and in total.
/// A zero-cost `Flatten` row sits between the last conv and first dense layer.
pub fn static_network_multiplications(spec: &NetworkSpec) -> StaticReport {
    let names = spec.layer_names();
    let mut rows = Vec::new();
    for (k, (layer, geom)) in spec.layers().iter().zip(spec.geometry()).enumerate() {
        if !layer.is_conv() && k > 0 && spec.layers()[k - 1].is_conv() {
            rows.push(StaticRow {
                name: "Flatten".into(),
                layer: None,
                multiplications: 0,
                parameters: 0,
            });
        }
        let mults = match layer.kind {
            LayerKind::Conv2d { .. } => static_conv_multiplications(layer, geom.output[2], geom.output[1]),
            LayerKind::Dense { .. } => static_dense_multiplications(layer),
        }
        .expect("kind checked by match");
        rows.push(StaticRow {
            name: names[k].clone(),
            layer: Some(k),
            multiplications: mults,
            parameters: layer.parameter_count() as u64,
        });
    }
    StaticReport {
        total_multiplications: rows.iter().map(|r| r.multiplications).sum(),
        total_parameters: rows.iter().map(|r| r.parameters).sum(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight nested-loop oracle, independent of `layer_preactivation`.
    fn naive_forward(spec: &NetworkSpec, ws: &WeightSet, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for ((layer, geom), p) in spec.layers().iter().zip(spec.geometry()).zip(&ws.layers) {
            let w = p.weights.data();
            let b = p.bias.data();
            let mut out = vec![0.0; geom.output_len()];
            match layer.kind {
                LayerKind::Conv2d {
                    in_channels: c_in,
                    out_filters,
                    kernel_x,
                    kernel_y,
                    stride,
                } => {
                    let (ih, iw) = (geom.input[1], geom.input[2]);
                    let (oh, ow) = (geom.output[1], geom.output[2]);
                    for f in 0..out_filters {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut s = b[f];
                                for c in 0..c_in {
                                    for ky in 0..kernel_y {
                                        for kx in 0..kernel_x {
                                            let iy = oy * stride + ky;
                                            let ix = ox * stride + kx;
                                            s += w[f * c_in * kernel_y * kernel_x
                                                + c * kernel_y * kernel_x
                                                + ky * kernel_x
                                                + kx]
                                                * cur[c * ih * iw + iy * iw + ix];
                                        }
                                    }
                                }
                                out[f * oh * ow + oy * ow + ox] = layer.activation.apply(s);
                            }
                        }
                    }
                }
                LayerKind::Dense { in_size, out_size } => {
                    for j in 0..out_size {
                        let mut s = b[j];
                        for i in 0..in_size {
                            s += w[j * in_size + i] * cur[i];
                        }
                        out[j] = layer.activation.apply(s);
                    }
                }
            }
            cur = out;
        }
        cur
    }

    #[test]
    fn reference_dqn_parameters_and_shapes() {
        let spec = build_reference_dqn(4).unwrap();
        let params: Vec<usize> = spec.layers().iter().map(|l| l.parameter_count()).collect();
        assert_eq!(params, vec![8_224, 32_832, 36_928, 1_606_144, 2_052]);
        let g = spec.geometry();
        assert_eq!(g[0].input, vec![4, 84, 84]);
        assert_eq!(g[0].output, vec![32, 20, 20]);
        assert_eq!(g[1].output, vec![64, 9, 9]);
        assert_eq!(g[2].output, vec![64, 7, 7]);
        assert_eq!(g[3].input, vec![3136]);

        let one = build_reference_dqn(1).unwrap();
        assert_eq!(one.layers()[4].parameter_count(), 513);
        assert!(build_reference_dqn(0).is_err());
    }

    #[test]
    fn reference_dqn_static_counts() {
        let spec = build_reference_dqn(4).unwrap();
        let report = static_network_multiplications(&spec);
        let mults: Vec<u64> = report.rows.iter().map(|r| r.multiplications).collect();
        assert_eq!(mults, vec![3_276_800, 2_654_208, 1_806_336, 0, 1_605_632, 2_048]);
        assert_eq!(report.rows[3].name, "Flatten");
        // Sum of the rows above.
        assert_eq!(report.total_multiplications, 9_345_024);

        let wide = static_network_multiplications(&build_reference_dqn(18).unwrap());
        assert_eq!(wide.rows[5].multiplications, 9_216);
        assert_eq!(wide.total_multiplications, 9_342_976 + 9_216);
    }

    #[test]
    fn degenerate_counts() {
        let conv = LayerSpec::conv2d(1, 1, (1, 1), 1, Activation::Relu);
        assert_eq!(static_conv_multiplications(&conv, 1, 1).unwrap(), 1);
        let dense = LayerSpec::dense(1, 1, Activation::Identity);
        assert_eq!(static_dense_multiplications(&dense).unwrap(), 1);
        assert!(static_dense_multiplications(&conv).is_err());
        let empty = NetworkSpec::new([1, 2, 2], vec![]).unwrap();
        assert_eq!(static_network_multiplications(&empty).total_multiplications, 0);
    }

    #[test]
    fn shape_chain_errors() {
        assert!(NetworkSpec::new([3, 5, 5], vec![LayerSpec::conv2d(2, 4, (3, 3), 1, Activation::Relu)]).is_err());
        assert!(NetworkSpec::new([1, 5, 5], vec![LayerSpec::conv2d(1, 4, (6, 3), 1, Activation::Relu)]).is_err());
        assert!(NetworkSpec::new([1, 5, 5], vec![LayerSpec::dense(24, 4, Activation::Relu)]).is_err());
        assert!(NetworkSpec::new(
            [1, 5, 5],
            vec![
                LayerSpec::dense(25, 4, Activation::Relu),
                LayerSpec::conv2d(1, 1, (1, 1), 1, Activation::Relu)
            ]
        )
        .is_err());
        assert!(NetworkSpec::new([1, 5, 5], vec![LayerSpec::conv2d(1, 4, (3, 3), 0, Activation::Relu)]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = NetworkSpec::new(
            [2, 6, 6],
            vec![
                LayerSpec::conv2d(2, 3, (3, 3), 1, Activation::Relu),
                LayerSpec::dense(48, 5, Activation::Identity),
            ],
        )
        .unwrap();
        let ws = WeightSet::zeros(&spec);
        let x = Tensor::new(vec![2, 6, 6], vec![1.5; 72]).unwrap();
        let out = forward(&spec, &ws, &x).unwrap();
        assert_eq!(out.data(), &[0.0; 5]);
    }

    #[test]
    fn one_by_one_conv() {
        let spec = NetworkSpec::new(
            [1, 1, 1],
            vec![LayerSpec::conv2d(1, 1, (1, 1), 1, Activation::Identity)],
        )
        .unwrap();
        let mut ws = WeightSet::zeros(&spec);
        ws.layers[0].weights.data_mut()[0] = 2.0;
        ws.layers[0].bias.data_mut()[0] = 1.0;
        let out = forward(&spec, &ws, &Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let spec = build_reference_dqn(4).unwrap();
        let ws = WeightSet::zeros(&spec);
        assert!(forward(&spec, &ws, &Tensor::zeros(vec![4, 84, 83])).is_err());
    }

    #[test]
    fn forward_matches_naive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..30 {
            let c = rng.gen_range(1..=4);
            let h = rng.gen_range(3..=8);
            let w = rng.gen_range(3..=8);
            let f = rng.gen_range(1..=4);
            let k = rng.gen_range(1..=3.min(h).min(w));
            let s = rng.gen_range(1..=2);
            let conv = LayerSpec::conv2d(c, f, (k, k), s, Activation::Relu);
            let oh = (h - k) / s + 1;
            let ow = (w - k) / s + 1;
            let hidden = rng.gen_range(1..=6);
            let spec = NetworkSpec::new(
                [c, h, w],
                vec![
                    conv,
                    LayerSpec::dense(f * oh * ow, hidden, Activation::Relu),
                    LayerSpec::dense(hidden, 3, Activation::Identity),
                ],
            )
            .unwrap();
            let ws = WeightSet::init_uniform(&spec, trial);
            let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = forward(&spec, &ws, &Tensor::new(vec![c, h, w], x.clone()).unwrap()).unwrap();
            let want = naive_forward(&spec, &ws, &x);
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "trial {trial}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn static_counts_ignore_weight_values() {
        let spec = build_reference_dqn(6).unwrap();
        let a = static_network_multiplications(&spec);
        let _ws = WeightSet::init_uniform(&spec, 1);
        let b = static_network_multiplications(&spec);
        assert_eq!(a, b);
    }

    #[test]
    fn spec_serde_revalidates() {
        let spec = build_reference_dqn(4).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let broken = json.replace("3136", "3135");
        assert!(serde_json::from_str::<NetworkSpec>(&broken).is_err());
    }
}
