//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, keys are unique and unknown
//! keys are rejected. [`RunConfig::to_text`] writes every key, so a written
//! file parses back to an identical config.

use std::fmt::Write as _;
use std::path::Path;

use kssnet_core::gcn::Activation;
use kssnet_core::graph::{GraphPipelineConfig, NormalizationPlacement};
use kssnet_core::model::{scaled_channel_schedule, ModelConfig};
use kssnet_core::optim::AdamConfig;
use kssnet_core::synthetic::SyntheticConfig;
use kssnet_core::train::TrainConfig;

use crate::error::{Error, Result};

/// Which label graph the GCN propagates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// The superimposed statistical + knowledge graph.
    Ks,
    /// `I`: no propagation between labels.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SyntheticConfig,
    pub val_samples: usize,
    pub graph: GraphKind,
    pub pipeline: GraphPipelineConfig,
    /// Set when `stage_channels` came from the full-size schedule.
    pub channel_divisor: Option<usize>,
    pub stage_channels: Vec<usize>,
    pub embedding_dim: usize,
    pub gcn_depth: usize,
    pub lateral: bool,
    pub lc_activation: Activation,
    pub lc_init_scale: f64,
    pub dropout: f64,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub gradcheck_trials: usize,
    pub gradcheck_step: f64,
}

pub const DEFAULT_CHANNEL_DIVISOR: usize = 32;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: SyntheticConfig::default(),
            val_samples: 500,
            graph: GraphKind::Ks,
            pipeline: GraphPipelineConfig::COCO,
            channel_divisor: Some(DEFAULT_CHANNEL_DIVISOR),
            stage_channels: scaled_channel_schedule(DEFAULT_CHANNEL_DIVISOR).expect("valid divisor"),
            embedding_dim: 16,
            gcn_depth: 4,
            lateral: true,
            lc_activation: Activation::Tanh,
            lc_init_scale: 0.1,
            dropout: 0.5,
            optimizer: AdamConfig::default(),
            batch_size: 80,
            epochs: 30,
            gradcheck_trials: 20,
            gradcheck_step: kssnet_core::gradcheck::DEFAULT_STEP,
        }
    }
}

fn activation_name(a: Activation) -> String {
    match a {
        Activation::LeakyRelu { slope } => format!("leaky_relu:{slope}"),
        Activation::Tanh => "tanh".into(),
        Activation::Sigmoid => "sigmoid".into(),
        Activation::Identity => "identity".into(),
    }
}

fn parse_activation(v: &str) -> Option<Activation> {
    match v {
        "tanh" => Some(Activation::Tanh),
        "sigmoid" => Some(Activation::Sigmoid),
        "identity" => Some(Activation::Identity),
        "leaky_relu" => Some(Activation::leaky_relu()),
        _ => v.strip_prefix("leaky_relu:").and_then(|s| s.parse().ok()).map(|slope| Activation::LeakyRelu { slope }),
    }
}

fn normalization_name(n: NormalizationPlacement) -> &'static str {
    match n {
        NormalizationPlacement::AfterIdentityMix => "after_identity_mix",
        NormalizationPlacement::AfterSuperimpose => "after_superimpose",
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
            cfg.set(key, value).map_err(|msg| Error::Config(format!("line {}: {msg}", i + 1)))?;
        }
        if seen.contains("channel_divisor") && seen.contains("stage_channels") {
            let d = cfg.channel_divisor.expect("set by channel_divisor");
            if scaled_channel_schedule(d).ok().as_ref() != Some(&cfg.stage_channels) {
                return Err(Error::Config("channel_divisor and stage_channels disagree".into()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one setting; the error names the offending key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "n_labels" => self.data.n_labels = num(key, value)?,
            "samples" => self.data.samples = num(key, value)?,
            "val_samples" => self.val_samples = num(key, value)?,
            "image_size" => self.data.image_size = num(key, value)?,
            "anchor_rate" => self.data.anchor_rate = num(key, value)?,
            "partner_given_anchor" => self.data.partner_given_anchor = num(key, value)?,
            "partner_given_absent" => self.data.partner_given_absent = num(key, value)?,
            "partner_contrast" => self.data.partner_contrast = num(key, value)?,
            "noise_std" => self.data.noise_std = num(key, value)?,
            "graph" => {
                self.graph = match value {
                    "ks" => GraphKind::Ks,
                    "identity" => GraphKind::Identity,
                    _ => return Err(format!("graph: expected `ks` or `identity`, got `{value}`")),
                }
            }
            "preset" => {
                self.pipeline = match value {
                    "coco" => GraphPipelineConfig::COCO,
                    "charades" => GraphPipelineConfig::CHARADES,
                    _ => return Err(format!("preset: expected `coco` or `charades`, got `{value}`")),
                }
            }
            "lambda" => self.pipeline.lambda = num(key, value)?,
            "tau" => self.pipeline.tau = num(key, value)?,
            "eta" => self.pipeline.eta = num(key, value)?,
            "binarize_threshold" => self.pipeline.binarize_threshold = num(key, value)?,
            "normalization" => {
                self.pipeline.normalization = match value {
                    "after_identity_mix" => NormalizationPlacement::AfterIdentityMix,
                    "after_superimpose" => NormalizationPlacement::AfterSuperimpose,
                    _ => return Err(format!("normalization: unknown placement `{value}`")),
                }
            }
            "channel_divisor" => {
                let d: usize = num(key, value)?;
                self.stage_channels = scaled_channel_schedule(d).map_err(|e| format!("channel_divisor: {e}"))?;
                self.channel_divisor = Some(d);
            }
            "stage_channels" => {
                self.stage_channels = value.split(',').map(|c| num(key, c.trim())).collect::<std::result::Result<_, _>>()?;
                self.channel_divisor = self.channel_divisor.filter(|&d| scaled_channel_schedule(d).ok().as_ref() == Some(&self.stage_channels));
            }
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "gcn_depth" => self.gcn_depth = num(key, value)?,
            "lateral" => self.lateral = num(key, value)?,
            "lc_activation" => self.lc_activation = parse_activation(value).ok_or_else(|| format!("lc_activation: unknown `{value}`"))?,
            "lc_init_scale" => self.lc_init_scale = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "lr_gcn" => self.optimizer.lr_gcn = num(key, value)?,
            "lr_other" => self.optimizer.lr_other = num(key, value)?,
            "beta1" => self.optimizer.beta1 = num(key, value)?,
            "beta2" => self.optimizer.beta2 = num(key, value)?,
            "eps" => self.optimizer.eps = num(key, value)?,
            "weight_decay" => self.optimizer.weight_decay = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "gradcheck_trials" => self.gradcheck_trials = num(key, value)?,
            "gradcheck_step" => self.gradcheck_step = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.pipeline.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return bad("stage_channels must be nonempty and positive".into());
        }
        if self.data.image_size % (1 << self.stage_channels.len()) != 0 {
            return bad(format!("image_size {} cannot be halved {} times", self.data.image_size, self.stage_channels.len()));
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if self.gcn_depth < 2 || self.gcn_depth > self.stage_channels.len() {
            return bad(format!("gcn_depth {} is not in 2..={}", self.gcn_depth, self.stage_channels.len()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} is not in [0, 1)", self.dropout));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.gradcheck_step > 0.0) {
            return bad("gradcheck_step must be positive".into());
        }
        kssnet_core::optim::Adam::new(self.optimizer, Vec::new())?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            stage_channels: self.stage_channels.clone(),
            embedding_dim: self.embedding_dim,
            lc_activation: self.lc_activation,
            lateral: self.lateral,
            lc_init_scale: self.lc_init_scale,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { optimizer: self.optimizer, batch_size: self.batch_size, epochs: self.epochs, seed }
    }

    /// Every key in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        let p = &self.pipeline;
        let o = &self.optimizer;
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("seed", self.seed.to_string());
        kv("n_labels", d.n_labels.to_string());
        kv("samples", d.samples.to_string());
        kv("val_samples", self.val_samples.to_string());
        kv("image_size", d.image_size.to_string());
        kv("anchor_rate", d.anchor_rate.to_string());
        kv("partner_given_anchor", d.partner_given_anchor.to_string());
        kv("partner_given_absent", d.partner_given_absent.to_string());
        kv("partner_contrast", d.partner_contrast.to_string());
        kv("noise_std", d.noise_std.to_string());
        kv("graph", if self.graph == GraphKind::Ks { "ks" } else { "identity" }.into());
        kv("lambda", p.lambda.to_string());
        kv("tau", p.tau.to_string());
        kv("eta", p.eta.to_string());
        kv("binarize_threshold", p.binarize_threshold.to_string());
        kv("normalization", normalization_name(p.normalization).into());
        if let Some(div) = self.channel_divisor {
            kv("channel_divisor", div.to_string());
        }
        kv("stage_channels", self.stage_channels.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("gcn_depth", self.gcn_depth.to_string());
        kv("lateral", self.lateral.to_string());
        kv("lc_activation", activation_name(self.lc_activation));
        kv("lc_init_scale", self.lc_init_scale.to_string());
        kv("dropout", self.dropout.to_string());
        kv("lr_gcn", o.lr_gcn.to_string());
        kv("lr_other", o.lr_other.to_string());
        kv("beta1", o.beta1.to_string());
        kv("beta2", o.beta2.to_string());
        kv("eps", o.eps.to_string());
        kv("weight_decay", o.weight_decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("gradcheck_trials", self.gradcheck_trials.to_string());
        kv("gradcheck_step", self.gradcheck_step.to_string());
        s
    }
}
