//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::delta::Thresholds;
use crate::error::{Error, Result};
use crate::network::{Activation, LayerSpec, NetworkSpec};
use crate::pruning::{all_layers_scope, conv_scope};
use crate::rl::agent::TrainConfig;
use crate::rl::env::{EnvKind, EnvSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvSection,
    pub network: NetworkSection,
    pub training: TrainConfig,
    pub pruning: PruningSection,
    pub delta: DeltaSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    pub max_episode_steps: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            name: "mini-breakout".into(),
            max_episode_steps: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSection {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

/// Hidden layers; the input shape comes from the environment and an
/// identity output layer with one unit per action is appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub conv: Vec<ConvSection>,
    pub dense: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            conv: vec![ConvSection {
                filters: 16,
                kernel: 3,
                stride: 1,
            }],
            dense: vec![128],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneScope {
    /// Convolution layers only.
    Conv,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningSection {
    pub rate: f64,
    pub iterations: u32,
    pub scope: PruneScope,
}

impl Default for PruningSection {
    fn default() -> Self {
        PruningSection {
            rate: 0.2,
            iterations: 3,
            scope: PruneScope::Conv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaSection {
    /// Each threshold is evaluated separately; the largest is the operating
    /// point used for the trade-off curve.
    pub thresholds: Vec<f64>,
    /// Input-buffer threshold; when absent the layer threshold is used.
    pub input_threshold: Option<f64>,
    /// Write the event trace of the first evaluation episode.
    pub trace: bool,
    /// Resynchronise accumulators every this many steps; 0 never.
    pub resync_every: usize,
}

impl Default for DeltaSection {
    fn default() -> Self {
        DeltaSection {
            thresholds: vec![0.0, 0.001],
            input_threshold: None,
            trace: false,
            resync_every: 0,
        }
    }
}

impl DeltaSection {
    pub fn thresholds_for(&self, threshold: f64, n_layers: usize) -> Thresholds {
        Thresholds {
            input: self.input_threshold.unwrap_or(threshold),
            layers: vec![threshold; n_layers],
        }
    }

    pub fn operating_threshold(&self) -> Option<f64> {
        self.thresholds.iter().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    /// Exploration during evaluation; 0 is purely greedy.
    pub epsilon: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: 100,
            epsilon: 0.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Parses and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        self.env.name.parse()
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        Ok(EnvSpec::new(self.env_kind()?, self.env.max_episode_steps))
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let kind = self.env_kind()?;
        let input = kind.state_shape();
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = (input[0], input[1], input[2]);
        for conv in &self.network.conv {
            if conv.kernel == 0 || conv.stride == 0 || conv.kernel > h || conv.kernel > w {
                return Err(Error::InvalidArchitecture(format!(
                    "conv kernel {} stride {} does not fit a {h}x{w} input",
                    conv.kernel, conv.stride
                )));
            }
            layers.push(LayerSpec::conv2d(
                c,
                conv.filters,
                (conv.kernel, conv.kernel),
                conv.stride,
                Activation::Relu,
            ));
            h = (h - conv.kernel) / conv.stride + 1;
            w = (w - conv.kernel) / conv.stride + 1;
            c = conv.filters;
        }
        let mut width = c * h * w;
        for &units in &self.network.dense {
            layers.push(LayerSpec::dense(width, units, Activation::Relu));
            width = units;
        }
        layers.push(LayerSpec::dense(width, kind.n_actions(), Activation::Identity));
        NetworkSpec::new(input, layers)
    }

    pub fn prune_scope(&self, spec: &NetworkSpec) -> Vec<usize> {
        match self.pruning.scope {
            PruneScope::Conv => conv_scope(spec),
            PruneScope::All => all_layers_scope(spec),
        }
    }

    /// Checks everything up front and reports every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(e) = self.env_kind() {
            errs.push(format!("env.name: {e}"));
        }
        if self.env.max_episode_steps == 0 {
            errs.push("env.max_episode_steps must be >= 1".into());
        }
        if self.network.conv.iter().any(|c| c.filters == 0) || self.network.dense.contains(&0) {
            errs.push("network: layer widths must be >= 1".into());
        }
        if errs.is_empty() {
            match self.network_spec() {
                Ok(spec) => {
                    if self.prune_scope(&spec).is_empty() {
                        errs.push("pruning.scope selects no layers (scope \"conv\" needs a conv layer)".into());
                    }
                }
                Err(e) => errs.push(format!("network: {e}")),
            }
        }
        errs.extend(self.training.validate());
        if !(self.pruning.rate > 0.0 && self.pruning.rate < 1.0) {
            errs.push("pruning.rate must be in (0, 1)".into());
        }
        if self.pruning.iterations == 0 {
            errs.push("pruning.iterations must be >= 1".into());
        }
        if self.delta.thresholds.is_empty() {
            errs.push("delta.thresholds must not be empty".into());
        }
        if self.delta.thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
            errs.push("delta.thresholds must be finite and >= 0".into());
        }
        if let Some(t) = self.delta.input_threshold {
            if !t.is_finite() || t < 0.0 {
                errs.push("delta.input_threshold must be finite and >= 0".into());
            }
        }
        if self.eval.episodes == 0 {
            errs.push("eval.episodes must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.eval.epsilon) {
            errs.push("eval.epsilon must be in [0, 1]".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}
