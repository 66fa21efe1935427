//! Run records and the table, curve, CSV and JSON reports built from them.
//!
//! Every function here is pure: the same records give byte-identical output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::delta::{measure_delta_sparsity, OpCounter};
use crate::error::{Error, Result};
use crate::network::{static_network_multiplications, NetworkSpec};
use crate::pruning::SparsityReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub static_mults: u64,
    /// Mean significant multiplications per timestep.
    pub measured_mults: f64,
    /// `None` for rows without weights (input, flatten).
    pub weight_sparsity: Option<f64>,
    /// `None` for the flatten row, which sends no events of its own.
    pub delta_sparsity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionFactor {
    pub raw: f64,
    /// One decimal place.
    pub rounded: f64,
    /// Integer part, as in "124x".
    pub floor: u64,
}

impl ReductionFactor {
    /// `None` when nothing was measured.
    pub fn new(static_mults: f64, measured_mults: f64) -> Option<Self> {
        if measured_mults <= 0.0 || !measured_mults.is_finite() {
            return None;
        }
        let raw = static_mults / measured_mults;
        Some(ReductionFactor {
            raw,
            rounded: (raw * 10.0).round() / 10.0,
            floor: raw.floor() as u64,
        })
    }

    pub fn label(&self) -> String {
        format!("{}x", self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: u32,
    pub threshold: f64,
    /// Masked fraction over the pruning scope.
    pub sparsity_total: f64,
    /// Masked fraction over every weight.
    pub sparsity_all_weights: f64,
    /// Input row first, then one row per layer with a flatten row between
    /// the last convolution and the first dense layer.
    pub layers: Vec<LayerRecord>,
    pub static_mults: u64,
    pub measured_mults: f64,
    pub delta_sparsity_total: Option<f64>,
    pub reward_dense: f64,
    pub reward_delta: f64,
    /// `measured_mults / static_mults`, 0 for an empty network.
    pub significant_fraction: f64,
    pub reduction_factor: Option<ReductionFactor>,
}

impl RunRecord {
    /// Assembles a record from one delta-mode evaluation.
    pub fn from_measurements(
        iteration: u32,
        threshold: f64,
        spec: &NetworkSpec,
        sparsity: &SparsityReport,
        counter: &OpCounter,
        reward_dense: f64,
        reward_delta: f64,
    ) -> Result<Self> {
        if sparsity.layers.len() != spec.num_layers() {
            return Err(Error::shape(&[spec.num_layers()], &[sparsity.layers.len()]));
        }
        let delta = measure_delta_sparsity(counter, spec)?;
        let mean = counter.mean_multiplications();
        let report = static_network_multiplications(spec);
        let mut layers = vec![LayerRecord {
            name: "Input".into(),
            static_mults: 0,
            measured_mults: 0.0,
            weight_sparsity: None,
            delta_sparsity: Some(delta.input),
        }];
        for row in &report.rows {
            layers.push(match row.layer {
                Some(k) => LayerRecord {
                    name: row.name.clone(),
                    static_mults: row.multiplications,
                    measured_mults: mean[k],
                    weight_sparsity: Some(sparsity.layers[k]),
                    delta_sparsity: Some(delta.layers[k]),
                },
                None => LayerRecord {
                    name: row.name.clone(),
                    static_mults: 0,
                    measured_mults: 0.0,
                    weight_sparsity: None,
                    delta_sparsity: None,
                },
            });
        }
        Ok(Self::from_layers(
            iteration,
            threshold,
            sparsity.scope_total,
            sparsity.total,
            layers,
            Some(delta.total),
            reward_dense,
            reward_delta,
        ))
    }

    /// Builds a record whose totals are the sums of `layers`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_layers(
        iteration: u32,
        threshold: f64,
        sparsity_total: f64,
        sparsity_all_weights: f64,
        layers: Vec<LayerRecord>,
        delta_sparsity_total: Option<f64>,
        reward_dense: f64,
        reward_delta: f64,
    ) -> Self {
        let static_mults: u64 = layers.iter().map(|l| l.static_mults).sum();
        let measured_mults: f64 = layers.iter().map(|l| l.measured_mults).sum();
        let significant_fraction = if static_mults == 0 {
            0.0
        } else {
            measured_mults / static_mults as f64
        };
        RunRecord {
            iteration,
            threshold,
            sparsity_total,
            sparsity_all_weights,
            layers,
            static_mults,
            measured_mults,
            delta_sparsity_total,
            reward_dense,
            reward_delta,
            significant_fraction,
            reduction_factor: ReductionFactor::new(static_mults as f64, measured_mults),
        }
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "-".into(),
    }
}

/// Fixed-width table per record: one row per layer plus a Total row.
pub fn build_table(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to tabulate".into()));
    }
    let mut out = String::new();
    for (n, r) in records.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        let factor = match &r.reduction_factor {
            Some(f) => format!("{:.1} ({})", f.rounded, f.label()),
            None => "-".into(),
        };
        let _ = writeln!(
            out,
            "Iteration {}  threshold {}  reward dense {:.3}  reward delta {:.3}  reduction {}",
            r.iteration, r.threshold, r.reward_dense, r.reward_delta, factor
        );
        let _ = writeln!(
            out,
            "{:<10} {:>15} {:>18} {:>16} {:>14}",
            "Layer", "Multiplications", "Nonzero mults", "Sparsity weights", "Delta sparsity"
        );
        for l in &r.layers {
            let _ = writeln!(
                out,
                "{:<10} {:>15} {:>18.1} {:>16} {:>14}",
                l.name,
                l.static_mults,
                l.measured_mults,
                opt(l.weight_sparsity, 3),
                opt(l.delta_sparsity, 3)
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>15} {:>18.1} {:>16.3} {:>14}",
            "Total",
            r.static_mults,
            r.measured_mults,
            r.sparsity_total,
            opt(r.delta_sparsity_total, 3)
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u32,
    pub sparsity_total: f64,
    pub reward_dense: f64,
    pub reward_delta: f64,
    pub static_mults: u64,
    pub measured_mults: f64,
    pub significant_fraction: f64,
    pub reduction_factor: Option<f64>,
}

/// One point per iteration, ordered by sparsity. Where an iteration was
/// evaluated at several thresholds the largest one is used.
pub fn build_tradeoff_curve(records: &[RunRecord]) -> Vec<CurvePoint> {
    let mut chosen: Vec<&RunRecord> = Vec::new();
    for r in records {
        match chosen.iter_mut().find(|c| c.iteration == r.iteration) {
            Some(c) if r.threshold > c.threshold => *c = r,
            Some(_) => {}
            None => chosen.push(r),
        }
    }
    chosen.sort_by(|a, b| {
        a.sparsity_total
            .total_cmp(&b.sparsity_total)
            .then(a.iteration.cmp(&b.iteration))
    });
    chosen
        .into_iter()
        .map(|r| CurvePoint {
            iteration: r.iteration,
            sparsity_total: r.sparsity_total,
            reward_dense: r.reward_dense,
            reward_delta: r.reward_delta,
            static_mults: r.static_mults,
            measured_mults: r.measured_mults,
            significant_fraction: r.significant_fraction,
            reduction_factor: r.reduction_factor.map(|f| f.raw),
        })
        .collect()
}

pub fn curve_to_csv(points: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if points.is_empty() {
        w.write_record([
            "iteration",
            "sparsity_total",
            "reward_dense",
            "reward_delta",
            "static_mults",
            "measured_mults",
            "significant_fraction",
            "reduction_factor",
        ])
        .map_err(csv_err)?;
    }
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<CurvePoint>, _>>()
        .map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

pub fn records_to_json(records: &[RunRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(records)?)
}

pub fn records_from_json(text: &str) -> Result<Vec<RunRecord>> {
    Ok(serde_json::from_str(text)?)
}
