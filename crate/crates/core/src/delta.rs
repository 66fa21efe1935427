//! Event-driven inference with per-neuron hysteresis.
//!
//! Every neuron keeps its pre-activation accumulator `o` and the value it
//! last transmitted. An incoming change `dx` from ancestor `i` adds `W_ij * dx`
//! to `o_j`; the neuron transmits `f(o_j) - last_sent_j` once that difference
//! reaches the layer threshold, and only then updates `last_sent_j`.
//!
//! A timestep is processed layer by layer. Each layer first absorbs all
//! events of the timestep and then evaluates every touched neuron once, in
//! ascending index order, so counters do not depend on event order.
//!
//! Event layer indices: `0` is the input buffer, `k + 1` is weighted layer `k`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{layer_preactivation, Activation, LayerKind, NetworkSpec, WeightSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub input: f64,
    pub layers: Vec<f64>,
}

impl Thresholds {
    pub fn uniform(threshold: f64, n_layers: usize) -> Self {
        Thresholds {
            input: threshold,
            layers: vec![threshold; n_layers],
        }
    }

    fn validate(&self, n_layers: usize) -> Result<()> {
        if self.layers.len() != n_layers {
            return Err(Error::InvalidArgument(format!(
                "{} layer thresholds for {} layers",
                self.layers.len(),
                n_layers
            )));
        }
        let valid = |t: f64| t.is_finite() && t >= 0.0;
        if !valid(self.input) || !self.layers.iter().copied().all(valid) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEvent {
    pub timestep: u64,
    pub layer: usize,
    pub neuron: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTally {
    /// Products with a nonzero delta and a nonzero (unpruned) weight.
    pub significant_multiplications: u64,
    pub events_received: u64,
    pub events_sent: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub timesteps: u64,
    /// Events emitted by the input buffer.
    pub input_events: u64,
    pub layers: Vec<LayerTally>,
}

impl OpCounter {
    pub fn new(n_layers: usize) -> Self {
        OpCounter {
            timesteps: 0,
            input_events: 0,
            layers: vec![LayerTally::default(); n_layers],
        }
    }

    pub fn total_multiplications(&self) -> u64 {
        self.layers.iter().map(|l| l.significant_multiplications).sum()
    }

    /// Adds another counter's tallies into this one.
    pub fn merge(&mut self, other: &OpCounter) {
        if self.layers.len() < other.layers.len() {
            self.layers.resize(other.layers.len(), LayerTally::default());
        }
        self.timesteps += other.timesteps;
        self.input_events += other.input_events;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.significant_multiplications += b.significant_multiplications;
            a.events_received += b.events_received;
            a.events_sent += b.events_sent;
        }
    }

    /// Mean significant multiplications per timestep, per layer.
    pub fn mean_multiplications(&self) -> Vec<f64> {
        let t = self.timesteps.max(1) as f64;
        self.layers
            .iter()
            .map(|l| l.significant_multiplications as f64 / t)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSparsity {
    pub input: f64,
    pub layers: Vec<f64>,
    /// Over all neuron-timesteps including the input buffer.
    pub total: f64,
}

/// Fraction of neuron-timesteps without a transmitted event.
pub fn measure_delta_sparsity(counter: &OpCounter, spec: &NetworkSpec) -> Result<DeltaSparsity> {
    if counter.timesteps == 0 {
        return Err(Error::InvalidArgument(
            "delta sparsity needs at least one timestep".into(),
        ));
    }
    if counter.layers.len() != spec.num_layers() {
        return Err(Error::shape(&[spec.num_layers()], &[counter.layers.len()]));
    }
    let t = counter.timesteps as f64;
    let frac = |sent: u64, neurons: usize| 1.0 - sent as f64 / (neurons as f64 * t);
    let input = frac(counter.input_events, spec.input_len());
    let layers: Vec<f64> = counter
        .layers
        .iter()
        .zip(spec.geometry())
        .map(|(tally, g)| frac(tally.events_sent, g.output_len()))
        .collect();
    let sent: u64 = counter.input_events + counter.layers.iter().map(|l| l.events_sent).sum::<u64>();
    let neurons: usize = spec.input_len() + spec.geometry().iter().map(|g| g.output_len()).sum::<usize>();
    Ok(DeltaSparsity {
        input,
        layers,
        total: frac(sent, neurons),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaLayerState {
    /// Pre-activation state `o`, one entry per output neuron.
    pub accumulator: Vec<f64>,
    /// Last transmitted activation per output neuron.
    pub last_sent: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaNetworkState {
    pub input_last_sent: Vec<f64>,
    pub input_threshold: f64,
    pub layers: Vec<DeltaLayerState>,
    /// Set once the first frame has been evaluated on every neuron.
    primed: bool,
    timestep: u64,
}

impl DeltaNetworkState {
    pub fn timestep(&self) -> u64 {
        self.timestep
    }
}

/// Accumulators start at the bias, transmitted values at zero.
pub fn init_state(spec: &NetworkSpec, weights: &WeightSet, thresholds: &Thresholds) -> Result<DeltaNetworkState> {
    weights.check_against(spec)?;
    thresholds.validate(spec.num_layers())?;
    let layers = spec
        .layers()
        .iter()
        .zip(spec.geometry())
        .zip(&weights.layers)
        .zip(&thresholds.layers)
        .map(|(((layer, geom), params), &threshold)| {
            let n = geom.output_len();
            let bias = params.bias.data();
            let accumulator = match layer.kind {
                LayerKind::Conv2d { .. } => {
                    let plane = n / bias.len();
                    bias.iter().flat_map(|&b| std::iter::repeat_n(b, plane)).collect()
                }
                LayerKind::Dense { .. } => bias.to_vec(),
            };
            DeltaLayerState {
                accumulator,
                last_sent: vec![0.0; n],
                threshold,
            }
        })
        .collect();
    Ok(DeltaNetworkState {
        input_last_sent: vec![0.0; spec.input_len()],
        input_threshold: thresholds.input,
        layers,
        primed: false,
        timestep: 0,
    })
}

/// Nonzero outgoing weights of one layer, arranged for scatter updates.
#[derive(Debug, Clone)]
enum Fanout {
    /// Column-compressed dense weights: for input `i`, entries
    /// `offsets[i]..offsets[i + 1]` of `targets`/`weights`.
    Dense {
        offsets: Vec<usize>,
        targets: Vec<u32>,
        weights: Vec<f64>,
    },
    /// Per `(channel, ky, kx)` kernel tap, the filters with a nonzero weight.
    Conv {
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
        kernel_x: usize,
        kernel_y: usize,
        stride: usize,
        tap_offsets: Vec<usize>,
        filters: Vec<u32>,
        weights: Vec<f64>,
    },
}

impl Fanout {
    fn build(layer_idx: usize, spec: &NetworkSpec, weights: &WeightSet) -> Fanout {
        let layer = &spec.layers()[layer_idx];
        let geom = &spec.geometry()[layer_idx];
        let w = weights.layers[layer_idx].weights.data();
        match layer.kind {
            LayerKind::Dense { in_size, out_size } => {
                let mut offsets = Vec::with_capacity(in_size + 1);
                let mut targets = Vec::new();
                let mut ws = Vec::new();
                offsets.push(0);
                for i in 0..in_size {
                    for j in 0..out_size {
                        let v = w[j * in_size + i];
                        if v != 0.0 {
                            targets.push(j as u32);
                            ws.push(v);
                        }
                    }
                    offsets.push(targets.len());
                }
                Fanout::Dense {
                    offsets,
                    targets,
                    weights: ws,
                }
            }
            LayerKind::Conv2d {
                in_channels,
                out_filters,
                kernel_x,
                kernel_y,
                stride,
            } => {
                let mut tap_offsets = vec![0];
                let mut filters = Vec::new();
                let mut ws = Vec::new();
                for c in 0..in_channels {
                    for ky in 0..kernel_y {
                        for kx in 0..kernel_x {
                            for f in 0..out_filters {
                                let v = w[((f * in_channels + c) * kernel_y + ky) * kernel_x + kx];
                                if v != 0.0 {
                                    filters.push(f as u32);
                                    ws.push(v);
                                }
                            }
                            tap_offsets.push(filters.len());
                        }
                    }
                }
                Fanout::Conv {
                    in_h: geom.input[1],
                    in_w: geom.input[2],
                    out_h: geom.output[1],
                    out_w: geom.output[2],
                    kernel_x,
                    kernel_y,
                    stride,
                    tap_offsets,
                    filters,
                    weights: ws,
                }
            }
        }
    }

    /// Applies `delta` from input `i`, calling `touch(j)` for each updated
    /// neuron. Returns the number of multiplications performed.
    #[inline]
    fn scatter(&self, i: usize, delta: f64, acc: &mut [f64], mut touch: impl FnMut(usize)) -> u64 {
        match self {
            Fanout::Dense {
                offsets,
                targets,
                weights,
            } => {
                let (lo, hi) = (offsets[i], offsets[i + 1]);
                for (&j, &w) in targets[lo..hi].iter().zip(&weights[lo..hi]) {
                    acc[j as usize] += w * delta;
                    touch(j as usize);
                }
                (hi - lo) as u64
            }
            Fanout::Conv {
                in_h,
                in_w,
                out_h,
                out_w,
                kernel_x,
                kernel_y,
                stride,
                tap_offsets,
                filters,
                weights,
            } => {
                let plane = in_h * in_w;
                let c = i / plane;
                let iy = (i % plane) / in_w;
                let ix = i % in_w;
                let mut count = 0u64;
                for ky in 0..*kernel_y {
                    if iy < ky || !(iy - ky).is_multiple_of(*stride) {
                        continue;
                    }
                    let oy = (iy - ky) / stride;
                    if oy >= *out_h {
                        continue;
                    }
                    for kx in 0..*kernel_x {
                        if ix < kx || !(ix - kx).is_multiple_of(*stride) {
                            continue;
                        }
                        let ox = (ix - kx) / stride;
                        if ox >= *out_w {
                            continue;
                        }
                        let tap = (c * kernel_y + ky) * kernel_x + kx;
                        let (lo, hi) = (tap_offsets[tap], tap_offsets[tap + 1]);
                        let base = oy * out_w + ox;
                        for (&f, &w) in filters[lo..hi].iter().zip(&weights[lo..hi]) {
                            let j = f as usize * out_h * out_w + base;
                            acc[j] += w * delta;
                            touch(j);
                        }
                        count += (hi - lo) as u64;
                    }
                }
                count
            }
        }
    }
}

/// A network evaluated frame by frame through delta events.
#[derive(Debug, Clone)]
pub struct DeltaNetwork {
    spec: NetworkSpec,
    weights: WeightSet,
    thresholds: Thresholds,
    fanout: Vec<Fanout>,
    state: DeltaNetworkState,
    touched_flag: Vec<Vec<bool>>,
}

impl DeltaNetwork {
    /// `weights` should already have the pruning mask applied; zero weights
    /// are never multiplied.
    pub fn new(spec: NetworkSpec, weights: WeightSet, thresholds: Thresholds) -> Result<Self> {
        let state = init_state(&spec, &weights, &thresholds)?;
        let fanout = (0..spec.num_layers())
            .map(|k| Fanout::build(k, &spec, &weights))
            .collect();
        let touched_flag = spec.geometry().iter().map(|g| vec![false; g.output_len()]).collect();
        Ok(DeltaNetwork {
            spec,
            weights,
            thresholds,
            fanout,
            state,
            touched_flag,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }

    pub fn state(&self) -> &DeltaNetworkState {
        &self.state
    }

    pub fn new_counter(&self) -> OpCounter {
        OpCounter::new(self.spec.num_layers())
    }

    /// Returns to the freshly initialised state.
    pub fn reset(&mut self) {
        self.state = init_state(&self.spec, &self.weights, &self.thresholds).expect("validated at construction");
    }

    /// Recomputes every accumulator from the values actually transmitted by
    /// the layer below, removing accumulated rounding drift.
    pub fn resync(&mut self) {
        for k in 0..self.spec.num_layers() {
            let (below, rest) = self.state.layers.split_at_mut(k);
            let input: &[f64] = match below.last() {
                Some(prev) => &prev.last_sent,
                None => &self.state.input_last_sent,
            };
            layer_preactivation(
                &self.spec.layers()[k],
                &self.spec.geometry()[k],
                &self.weights.layers[k],
                input,
                &mut rest[0].accumulator,
            );
        }
    }

    pub fn step(&mut self, frame: &Tensor, counter: &mut OpCounter) -> Result<Tensor> {
        self.step_inner(frame, counter, None)
    }

    /// Like [`step`](Self::step), reporting every transmitted event to `sink`.
    pub fn step_traced(
        &mut self,
        frame: &Tensor,
        counter: &mut OpCounter,
        sink: &mut dyn FnMut(DeltaEvent),
    ) -> Result<Tensor> {
        self.step_inner(frame, counter, Some(sink))
    }

    fn step_inner(
        &mut self,
        frame: &Tensor,
        counter: &mut OpCounter,
        mut sink: Option<&mut dyn FnMut(DeltaEvent)>,
    ) -> Result<Tensor> {
        let input_shape = self.spec.input_shape();
        if frame.shape() != input_shape && frame.shape() != [self.spec.input_len()] {
            return Err(Error::shape(&input_shape, frame.shape()));
        }
        if counter.layers.len() < self.spec.num_layers() {
            counter.layers.resize(self.spec.num_layers(), LayerTally::default());
        }
        let t = self.state.timestep;
        let first = !self.state.primed;

        let mut events: Vec<(usize, f64)> = Vec::new();
        let threshold = self.state.input_threshold;
        for (i, (prev, &x)) in self.state.input_last_sent.iter_mut().zip(frame.data()).enumerate() {
            let d = x - *prev;
            if d != 0.0 && d.abs() >= threshold {
                *prev = x;
                events.push((i, d));
            }
        }
        counter.input_events += events.len() as u64;
        if let Some(sink) = sink.as_mut() {
            for &(i, d) in &events {
                sink(DeltaEvent {
                    timestep: t,
                    layer: 0,
                    neuron: i,
                    delta: d,
                });
            }
        }

        let mut touched: Vec<usize> = Vec::new();
        for k in 0..self.spec.num_layers() {
            let activation: Activation = self.spec.layers()[k].activation;
            let layer = &mut self.state.layers[k];
            let flags = &mut self.touched_flag[k];
            let tally = &mut counter.layers[k];
            tally.events_received += events.len() as u64;

            touched.clear();
            for &(i, d) in &events {
                tally.significant_multiplications += self.fanout[k].scatter(i, d, &mut layer.accumulator, |j| {
                    if !flags[j] {
                        flags[j] = true;
                        touched.push(j);
                    }
                });
            }
            if first {
                touched.clear();
                touched.extend(0..layer.accumulator.len());
            } else {
                touched.sort_unstable();
            }

            let mut next = Vec::new();
            for &j in &touched {
                flags[j] = false;
                let value = activation.apply(layer.accumulator[j]);
                let d = value - layer.last_sent[j];
                if d != 0.0 && d.abs() >= layer.threshold {
                    layer.last_sent[j] = value;
                    next.push((j, d));
                }
            }
            tally.events_sent += next.len() as u64;
            if let Some(sink) = sink.as_mut() {
                for &(j, d) in &next {
                    sink(DeltaEvent {
                        timestep: t,
                        layer: k + 1,
                        neuron: j,
                        delta: d,
                    });
                }
            }
            events = next;
        }

        self.state.primed = true;
        self.state.timestep += 1;
        counter.timesteps += 1;
        let out = match self.state.layers.last() {
            Some(l) => l.last_sent.clone(),
            None => self.state.input_last_sent.clone(),
        };
        Tensor::new(self.spec.output_shape(), out)
    }
}

/// Writes events as `timestep layer neuron delta`, one per line.
pub fn write_event_trace<W: Write>(mut out: W, events: &[DeltaEvent]) -> std::io::Result<()> {
    writeln!(out, "# timestep layer neuron delta")?;
    for e in events {
        writeln!(out, "{} {} {} {:?}", e.timestep, e.layer, e.neuron, e.delta)?;
    }
    Ok(())
}

pub fn read_event_trace<R: BufRead>(input: R) -> Result<Vec<DeltaEvent>> {
    let mut events = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::InvalidArgument(format!("event trace line {}: {line:?}", n + 1));
        let mut parts = line.split_whitespace();
        let mut field = || parts.next().ok_or_else(bad);
        let timestep = field()?.parse().map_err(|_| bad())?;
        let layer = field()?.parse().map_err(|_| bad())?;
        let neuron = field()?.parse().map_err(|_| bad())?;
        let delta = field()?.parse().map_err(|_| bad())?;
        events.push(DeltaEvent {
            timestep,
            layer,
            neuron,
            delta,
        });
    }
    Ok(events)
}
