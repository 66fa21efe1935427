//! Iterative magnitude pruning with rewind to the original initialisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, WeightSet};
use crate::tensor::BitMask;

/// Cumulative pruned fraction after `iteration` rounds at `rate`:
/// `1 - (1 - rate)^iteration`.
pub fn schedule_fraction(rate: f64, iteration: u32) -> f64 {
    1.0 - (1.0 - rate).powi(iteration as i32)
}

/// Indices of the conv layers, the default pruning scope.
pub fn conv_scope(spec: &NetworkSpec) -> Vec<usize> {
    spec.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_conv())
        .map(|(k, _)| k)
        .collect()
}

pub fn all_layers_scope(spec: &NetworkSpec) -> Vec<usize> {
    (0..spec.num_layers()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunableWeights {
    live: WeightSet,
    masks: Vec<BitMask>,
    initial: WeightSet,
    iteration: u32,
    rate: f64,
    scope: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// Masked fraction of each layer's weights.
    pub layers: Vec<f64>,
    /// Masked fraction over every weight in the network.
    pub total: f64,
    /// Masked fraction over the pruning scope only.
    pub scope_total: f64,
}

fn validate_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "pruning rate must be in (0, 1), got {rate}"
        )))
    }
}

fn validate_scope(scope: &[usize], n_layers: usize) -> Result<()> {
    if scope.is_empty() {
        return Err(Error::Pruning("pruning scope is empty".into()));
    }
    if let Some(&bad) = scope.iter().find(|&&k| k >= n_layers) {
        return Err(Error::Pruning(format!(
            "scope layer {bad} out of range for {n_layers} layers"
        )));
    }
    Ok(())
}

impl PrunableWeights {
    /// Archives `weights` as the rewind target and starts with every weight kept.
    pub fn new(weights: WeightSet, rate: f64, scope: Vec<usize>) -> Result<Self> {
        validate_rate(rate)?;
        validate_scope(&scope, weights.layers.len())?;
        let masks = weights
            .layers
            .iter()
            .map(|p| BitMask::all_true(p.weights.shape().to_vec()))
            .collect();
        Ok(PrunableWeights {
            initial: weights.clone(),
            live: weights,
            masks,
            iteration: 0,
            rate,
            scope,
        })
    }

    /// Reassembles a persisted state (see the checkpoint module).
    pub fn from_parts(
        live: WeightSet,
        masks: Vec<BitMask>,
        initial: WeightSet,
        iteration: u32,
        rate: f64,
        scope: Vec<usize>,
    ) -> Result<Self> {
        validate_rate(rate)?;
        validate_scope(&scope, live.layers.len())?;
        if masks.len() != live.layers.len() || initial.layers.len() != live.layers.len() {
            return Err(Error::Pruning(
                "mask/initial layer count differs from live weights".into(),
            ));
        }
        for ((m, l), i) in masks.iter().zip(&live.layers).zip(&initial.layers) {
            if m.shape() != l.weights.shape()
                || i.weights.shape() != l.weights.shape()
                || i.bias.shape() != l.bias.shape()
            {
                return Err(Error::shape(l.weights.shape(), m.shape()));
            }
        }
        let mut p = PrunableWeights {
            live,
            masks,
            initial,
            iteration,
            rate,
            scope,
        };
        p.apply_masks();
        Ok(p)
    }

    pub fn live(&self) -> &WeightSet {
        &self.live
    }

    pub fn initial(&self) -> &WeightSet {
        &self.initial
    }

    pub fn masks(&self) -> &[BitMask] {
        &self.masks
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    /// Mutable access for training. Call [`apply_masks`](Self::apply_masks)
    /// after modifying.
    pub fn live_mut(&mut self) -> &mut WeightSet {
        &mut self.live
    }

    pub fn apply_masks(&mut self) {
        for (p, m) in self.live.layers.iter_mut().zip(&self.masks) {
            p.weights.apply_mask(m).expect("mask shapes fixed at construction");
        }
    }

    /// Replaces the live weights, re-applying the masks.
    pub fn set_live(&mut self, weights: WeightSet) -> Result<()> {
        if weights.layers.len() != self.live.layers.len() {
            return Err(Error::shape(&[self.live.layers.len()], &[weights.layers.len()]));
        }
        for (a, b) in weights.layers.iter().zip(&self.live.layers) {
            if a.weights.shape() != b.weights.shape() || a.bias.shape() != b.bias.shape() {
                return Err(Error::shape(b.weights.shape(), a.weights.shape()));
            }
        }
        self.live = weights;
        self.apply_masks();
        Ok(())
    }

    /// Masks the smallest-magnitude surviving weights of the scope, ranked
    /// globally across scope layers. The number masked brings the scope's
    /// cumulative pruned count to `round(N * schedule_fraction(rate, i + 1))`.
    /// Ties break on `(layer, flat index)` ascending.
    pub fn prune_step(&mut self) -> Result<usize> {
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        let mut scope_size = 0usize;
        let mut already_masked = 0usize;
        for &k in &self.scope {
            let mask = &self.masks[k];
            if mask.count_kept() == 0 {
                return Err(Error::Pruning(format!("layer {k} has no unmasked weights left")));
            }
            scope_size += mask.len();
            already_masked += mask.count_masked();
            let w = self.live.layers[k].weights.data();
            for (idx, &keep) in mask.bits().iter().enumerate() {
                if keep {
                    candidates.push((w[idx].abs(), k, idx));
                }
            }
        }
        let target = (scope_size as f64 * schedule_fraction(self.rate, self.iteration + 1)).round() as usize;
        let n_prune = target.saturating_sub(already_masked).min(candidates.len());
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(_, k, idx) in &candidates[..n_prune] {
            self.masks[k].set(idx, false);
        }
        self.iteration += 1;
        self.apply_masks();
        Ok(n_prune)
    }

    /// Resets every weight and bias to its archived initial value, then
    /// zeroes masked weights again.
    pub fn rewind(&mut self) {
        self.live = self.initial.clone();
        self.apply_masks();
    }

    pub fn report_sparsity(&self) -> SparsityReport {
        let layers: Vec<f64> = self.masks.iter().map(BitMask::sparsity).collect();
        let ratio = |masked: usize, total: usize| if total == 0 { 0.0 } else { masked as f64 / total as f64 };
        let masked: usize = self.masks.iter().map(BitMask::count_masked).sum();
        let total: usize = self.masks.iter().map(BitMask::len).sum();
        let scope_masked: usize = self.scope.iter().map(|&k| self.masks[k].count_masked()).sum();
        let scope_total: usize = self.scope.iter().map(|&k| self.masks[k].len()).sum();
        SparsityReport {
            layers,
            total: ratio(masked, total),
            scope_total: ratio(scope_masked, scope_total),
        }
    }
}
