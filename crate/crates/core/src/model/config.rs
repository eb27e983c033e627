use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_dynamic::FusionMode;
use crate::temporal_conv::{receptive_field, MAX_KERNEL};

/// Switches that remove or replace one pathway of the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Drop the graph regularizer from the loss.
    pub no_gloss: bool,
    /// Drop the dynamic graph and its convolution branch.
    pub no_dyadj: bool,
    /// Feed the projected window straight into the attention heads.
    pub no_ifm: bool,
    /// Replace gated fusion with `M_s + X_T`.
    pub ifm_plus: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 4] = ["no_gloss", "no_dyadj", "no_ifm", "ifm_plus"];

    /// Turns on the switch called `name`.
    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "no_gloss" => self.no_gloss = true,
            "no_dyadj" => self.no_dyadj = true,
            "no_ifm" => self.no_ifm = true,
            "ifm_plus" => self.ifm_plus = true,
            other => {
                return Err(Error::config(
                    "ablate",
                    format!(
                        "unknown switch {other:?}; expected one of {:?}",
                        Self::NAMES
                    ),
                ))
            }
        }
        Ok(())
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let flags = [self.no_gloss, self.no_dyadj, self.no_ifm, self.ifm_plus];
        Self::NAMES
            .iter()
            .zip(flags)
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn fusion_mode(&self) -> FusionMode {
        if self.no_ifm {
            FusionMode::Bypass
        } else if self.ifm_plus {
            FusionMode::Sum
        } else {
            FusionMode::Gated
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent.
    #[default]
    Sgd,
    /// Adam with β = (0.9, 0.999), ε = 1e-8.
    Adam,
}

/// Every hyperparameter of the network and its training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub nodes: usize,
    /// Input length `h`.
    pub window: usize,
    /// Forecast length `L`.
    pub horizon: usize,
    pub embed_dim: usize,
    pub heads: usize,
    /// Defaults to `embed_dim / heads`.
    pub head_dim: Option<usize>,
    pub dilation_growth: f64,
    pub layers: usize,
    /// Propagation steps of each mix-hop layer.
    pub depth: usize,
    pub channels: usize,
    pub out_channels: usize,
    /// Hidden width of the adjacency refinement MLP; defaults to `nodes`.
    pub mlp_hidden: Option<usize>,
    pub lambda: f64,
    pub gamma: f64,
    pub momentum: f64,
    pub keep_prob: f64,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Chronological train/val/test fractions.
    pub split: [f64; 3],
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nodes: 0,
            window: 19,
            horizon: 3,
            embed_dim: 16,
            heads: 4,
            head_dim: None,
            dilation_growth: 2.0,
            layers: 2,
            depth: 2,
            channels: 16,
            out_channels: 32,
            mlp_hidden: None,
            lambda: 0.05,
            gamma: 0.1,
            momentum: 0.9,
            keep_prob: 0.9,
            optimizer: Optimizer::Sgd,
            learning_rate: 1e-2,
            clip_norm: 5.0,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            split: [0.6, 0.2, 0.2],
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_nodes(nodes: usize) -> Self {
        ModelConfig {
            nodes,
            ..Default::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim.unwrap_or(self.embed_dim / self.heads.max(1))
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_hidden.unwrap_or(self.nodes)
    }

    /// `λ`, or zero when the regularizer is ablated.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.no_gloss {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn receptive_field(&self) -> Result<usize> {
        receptive_field(MAX_KERNEL, self.dilation_growth, self.layers)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be ≥ 1"))
            } else {
                Ok(())
            }
        };
        if self.nodes < 2 {
            return Err(Error::config(
                "nodes",
                format!("{} must be ≥ 2", self.nodes),
            ));
        }
        positive("window", self.window)?;
        positive("horizon", self.horizon)?;
        positive("embed_dim", self.embed_dim)?;
        positive("heads", self.heads)?;
        positive("depth", self.depth)?;
        positive("out_channels", self.out_channels)?;
        positive("batch_size", self.batch_size)?;
        if self.head_dim.is_none() && self.embed_dim % self.heads != 0 {
            return Err(Error::config(
                "heads",
                format!(
                    "embed_dim {} not divisible by {} heads",
                    self.embed_dim, self.heads
                ),
            ));
        }
        positive("head_dim", self.head_dim())?;
        positive("mlp_hidden", self.mlp_hidden())?;
        if self.channels == 0 || self.channels % 4 != 0 {
            return Err(Error::config(
                "channels",
                format!("{} must be a positive multiple of 4", self.channels),
            ));
        }
        let rf = self.receptive_field()?;
        if self.window < rf {
            return Err(Error::config(
                "window",
                format!(
                    "{} is shorter than the receptive field {rf} of {} layers with growth {}",
                    self.window, self.layers, self.dilation_growth
                ),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(
                "lambda",
                format!("{} must be ≥ 0", self.lambda),
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(
                "gamma",
                format!("{} must be ≥ 0", self.gamma),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(
                "momentum",
                format!("{} not in [0, 1)", self.momentum),
            ));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config(
                "keep_prob",
                format!("{} not in (0, 1]", self.keep_prob),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                format!("{} must be > 0", self.learning_rate),
            ));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config(
                "clip_norm",
                format!("{} must be > 0", self.clip_norm),
            ));
        }
        if self.split.iter().any(|r| !(*r >= 0.0))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || self.split[0] == 0.0
        {
            return Err(Error::config(
                "split",
                format!(
                    "{:?} must be non-negative, sum to 1, with a training part",
                    self.split
                ),
            ));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::config(
                "seed",
                format!("{} exceeds {}", self.seed, i64::MAX),
            ));
        }
        if self.ablation.no_ifm && self.ablation.ifm_plus {
            return Err(Error::config(
                "ablation",
                "no_ifm and ifm_plus replace the same pathway; pick one",
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Checkpoint(format!("config encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }
}
