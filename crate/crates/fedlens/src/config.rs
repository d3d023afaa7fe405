//! Experiment configuration: a TOML document with `data`, `model`, `fed`,
//! `metrics`, and `output` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use fedlens_core::fed::{FinetuneConfig, PersonalizationMode};
use fedlens_core::metrics::ProbeConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub scenario: Scenario,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub fed: FedConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// The study a config belongs to. Each scenario requires the matching
/// settings elsewhere in the document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    Baseline,
    Personalization,
    Pretrained,
    Finetune,
    LocalEpochsAblation,
    ResidualAblation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticData),
    Idx(IdxData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub clients: usize,
    pub classes: usize,
    pub input_dim: usize,
    pub train_per_client: usize,
    pub test_per_client: usize,
    #[serde(default = "yes")]
    pub balanced: bool,
    pub anchor_scale: f64,
    pub within_class_scale: f64,
    pub rotation_angle: f64,
    pub scale_spread: f64,
    pub offset_scale: f64,
    /// `false` gives every client the same domain transform.
    #[serde(default = "yes")]
    pub heterogeneous: bool,
    #[serde(default)]
    pub label_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxData {
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_per_class: Option<usize>,
    #[serde(default = "yes")]
    pub normalize: bool,
    pub clients: Vec<IdxClient>,
}

/// Paths are resolved against the config file's directory when loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxClient {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths; hidden layer `i` has layer id `i + 1` and the
    /// classifier follows the last one.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Hidden layer ids built as residual blocks of unchanged width.
    #[serde(default)]
    pub residual: Vec<usize>,
    #[serde(default = "two")]
    pub residual_inner: usize,
}

impl ModelConfig {
    /// Layer count including the classifier.
    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub local_epochs: usize,
    pub rounds: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    #[serde(default = "one")]
    pub eval_cadence: usize,
    #[serde(default)]
    pub personalization: Personalization,
    #[serde(default)]
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Personalization {
    #[default]
    None,
    Classifier,
    Successive {
        layers: usize,
    },
    Skip {
        layers: Vec<usize>,
    },
}

impl Personalization {
    pub fn mode(&self) -> PersonalizationMode {
        match self {
            Personalization::None => PersonalizationMode::None,
            Personalization::Classifier => PersonalizationMode::ClassifierOnly,
            Personalization::Successive { layers } => PersonalizationMode::Successive(*layers),
            Personalization::Skip { layers } => PersonalizationMode::Skip(layers.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainSource {
    /// A further synthetic domain drawn like the clients' but unseen by them.
    #[default]
    Auxiliary,
    /// The union of all clients' training data.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Init {
    #[default]
    Random,
    Pretrained {
        epochs: usize,
        #[serde(default)]
        source: PretrainSource,
        #[serde(default = "pretrain_samples")]
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Tap indices `0..L`; empty means all.
    pub taps: Vec<usize>,
    pub batch_size: usize,
    /// Class-balanced evaluation subset; absent means all samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_per_class: Option<usize>,
    pub variance: bool,
    pub alignment: bool,
    pub accuracy: bool,
    pub feature_distances: bool,
    pub param_distances: bool,
    pub relative_changes: bool,
    pub probe: bool,
    /// Taps to probe; empty means the penultimate tap.
    pub probe_taps: Vec<usize>,
    pub foreign_probe: bool,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch_size: usize,
    pub finetune: bool,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_momentum: f64,
    pub finetune_batch_size: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let probe = ProbeConfig::default();
        let ft = FinetuneConfig::default();
        Self {
            taps: Vec::new(),
            batch_size: 256,
            eval_per_class: None,
            variance: true,
            alignment: true,
            accuracy: true,
            feature_distances: true,
            param_distances: true,
            relative_changes: true,
            probe: false,
            probe_taps: Vec::new(),
            foreign_probe: false,
            probe_epochs: probe.epochs,
            probe_lr: probe.lr,
            probe_batch_size: probe.batch_size,
            finetune: false,
            finetune_epochs: ft.epochs,
            finetune_lr: ft.lr,
            finetune_momentum: ft.momentum,
            finetune_batch_size: ft.batch_size,
        }
    }
}

impl MetricsConfig {
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig { epochs: self.probe_epochs, lr: self.probe_lr, batch_size: self.probe_batch_size, momentum: 0.0 }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.finetune_epochs,
            lr: self.finetune_lr,
            momentum: self.finetune_momentum,
            batch_size: self.finetune_batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write FPLF feature dumps for every evaluated tap.
    pub dump_features: bool,
    /// Write FPNV parameter dumps next to the feature dumps.
    pub dump_weights: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs"), dump_features: false, dump_weights: false }
    }
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn pretrain_samples() -> usize {
    2000
}

impl ExperimentConfig {
    /// Parses and validates a config document. A manifest written by a
    /// previous run is accepted too; its `config` table is used.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| CliError::config("<document>", e.to_string()))?;
        let cfg: ExperimentConfig = match table.get("config") {
            Some(toml::Value::Table(inner)) if table.contains_key("seeds") => typed(inner.clone(), "config.")?,
            _ => {
                let de = toml::Deserializer::new(text);
                serde_path_to_error::deserialize(de).map_err(|e| {
                    let field = e.path().to_string();
                    let inner = e.into_inner();
                    let msg = match inner.span() {
                        Some(span) => format!("line {}: {}", line_of(text, span.start), inner.message()),
                        None => inner.message().to_string(),
                    };
                    CliError::config(if field == "." { "<document>".into() } else { field }, msg)
                })?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative IDX paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file = path.display().to_string();
        let mut cfg = Self::from_toml(&text).map_err(|e| e.in_file(&file))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataConfig::Idx(idx) = &mut cfg.data {
            for c in &mut idx.clients {
                for p in [&mut c.train_images, &mut c.train_labels, &mut c.test_images, &mut c.test_labels] {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn num_clients(&self) -> usize {
        match &self.data {
            DataConfig::Synthetic(s) => s.clients,
            DataConfig::Idx(i) => i.clients.len(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.data {
            DataConfig::Synthetic(s) => s.classes,
            DataConfig::Idx(i) => i.classes,
        }
    }

    /// Checks ranges and cross-references; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, msg: String| Err(CliError::config(field, msg));
        let l = self.model.num_layers();
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return err("name", format!("{:?} is not a usable run name", self.name));
        }
        match &self.data {
            DataConfig::Synthetic(s) => {
                for (field, v) in
                    [("data.clients", s.clients), ("data.classes", s.classes), ("data.input_dim", s.input_dim)]
                {
                    if v == 0 {
                        return err(field, "must be >= 1".into());
                    }
                }
                for (field, v) in
                    [("data.train_per_client", s.train_per_client), ("data.test_per_client", s.test_per_client)]
                {
                    if v < s.classes {
                        return err(field, format!("{v} samples cannot cover {} classes", s.classes));
                    }
                }
                for (field, v) in
                    [("data.anchor_scale", s.anchor_scale), ("data.within_class_scale", s.within_class_scale)]
                {
                    if !(v.is_finite() && v > 0.0) {
                        return err(field, format!("{v} must be positive"));
                    }
                }
                for (field, v) in [
                    ("data.rotation_angle", s.rotation_angle),
                    ("data.scale_spread", s.scale_spread),
                    ("data.offset_scale", s.offset_scale),
                ] {
                    if !v.is_finite() || v < 0.0 {
                        return err(field, format!("{v} must be finite and non-negative"));
                    }
                }
                if s.scale_spread >= 1.0 {
                    return err("data.scale_spread", format!("{} would allow non-positive scaling", s.scale_spread));
                }
                if !(0.0..1.0).contains(&s.label_noise) {
                    return err("data.label_noise", format!("{} is outside [0, 1)", s.label_noise));
                }
            }
            DataConfig::Idx(i) => {
                if i.clients.is_empty() {
                    return err("data.clients", "at least one client is required".into());
                }
                if i.classes == 0 {
                    return err("data.classes", "must be >= 1".into());
                }
                if i.max_per_class == Some(0) {
                    return err("data.max_per_class", "must be >= 1".into());
                }
            }
        }

        if let Some(k) = self.model.hidden.iter().position(|&w| w == 0) {
            return err("model.hidden", format!("layer {} has width 0", k + 1));
        }
        for &id in &self.model.residual {
            if id == 0 || id > self.model.hidden.len() {
                return err(
                    "model.residual",
                    format!("layer {id} is not a hidden layer (1..={})", self.model.hidden.len()),
                );
            }
            let in_dim = if id == 1 { self.input_dim() } else { Some(self.model.hidden[id - 2]) };
            if in_dim.is_some_and(|d| d != self.model.hidden[id - 1]) {
                return err("model.residual", format!("layer {id} changes width and cannot be residual"));
            }
        }
        if !self.model.residual.is_empty() && self.model.residual_inner == 0 {
            return err("model.residual_inner", "must be >= 1".into());
        }

        let f = &self.fed;
        for (field, v) in [
            ("fed.local_epochs", f.local_epochs),
            ("fed.rounds", f.rounds),
            ("fed.batch_size", f.batch_size),
            ("fed.eval_cadence", f.eval_cadence),
        ] {
            if v == 0 {
                return err(field, "must be >= 1".into());
            }
        }
        if !(f.lr.is_finite() && f.lr > 0.0) {
            return err("fed.lr", format!("{} must be positive", f.lr));
        }
        if !(0.0..1.0).contains(&f.momentum) {
            return err("fed.momentum", format!("{} is outside [0, 1)", f.momentum));
        }
        match &f.personalization {
            Personalization::Successive { layers } if *layers > l => {
                return err("fed.personalization.layers", format!("{layers} exceeds the {l} model layers"));
            }
            Personalization::Skip { layers } => {
                if let Some(bad) = layers.iter().find(|&&id| id == 0 || id > l) {
                    return err("fed.personalization.layers", format!("layer {bad} does not exist (1..={l})"));
                }
            }
            _ => {}
        }
        if let Init::Pretrained { source, samples, .. } = &f.init {
            if *source == PretrainSource::Auxiliary && !matches!(self.data, DataConfig::Synthetic(_)) {
                return err("fed.init.source", "an auxiliary domain needs synthetic data".into());
            }
            if *samples < self.num_classes() {
                return err(
                    "fed.init.samples",
                    format!("{samples} samples cannot cover {} classes", self.num_classes()),
                );
            }
        }

        let m = &self.metrics;
        for (field, taps) in [("metrics.taps", &m.taps), ("metrics.probe_taps", &m.probe_taps)] {
            if let Some(bad) = taps.iter().find(|&&t| t >= l) {
                return err(field, format!("tap {bad} does not exist (taps are 0..={})", l - 1));
            }
        }
        if let Some(k) = m.eval_per_class {
            if k == 0 {
                return err("metrics.eval_per_class", "must be >= 1".into());
            }
            if let DataConfig::Synthetic(s) = &self.data {
                let least = s.train_per_client.min(s.test_per_client) / s.classes;
                if s.balanced && k > least {
                    return err(
                        "metrics.eval_per_class",
                        format!("{k} exceeds the {least} samples per class each client has"),
                    );
                }
            }
        }
        if (m.probe || m.foreign_probe) && (m.probe_epochs == 0 || m.probe_batch_size == 0) {
            return err("metrics.probe_epochs", "probing needs epochs and batch size >= 1".into());
        }
        if m.finetune && m.finetune_batch_size == 0 {
            return err("metrics.finetune_batch_size", "must be >= 1".into());
        }
        if self.output.dump_weights && !self.output.dump_features {
            return err("output.dump_weights", "weight dumps accompany feature dumps; set dump_features".into());
        }

        let needs = |ok: bool, field: &str, what: &str| {
            if ok {
                Ok(())
            } else {
                err(field, format!("scenario requires {what}"))
            }
        };
        match self.scenario {
            Scenario::Baseline | Scenario::LocalEpochsAblation | Scenario::ResidualAblation => Ok(()),
            Scenario::Personalization => {
                needs(f.personalization != Personalization::None, "fed.personalization", "a personalization mode")
            }
            Scenario::Pretrained => {
                needs(matches!(f.init, Init::Pretrained { .. }), "fed.init", "kind = \"pretrained\"")
            }
            Scenario::Finetune => needs(m.finetune, "metrics.finetune", "finetune = true"),
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match &self.data {
            DataConfig::Synthetic(s) => Some(s.input_dim),
            DataConfig::Idx(_) => None,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn typed(table: toml::Table, prefix: &str) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let field = format!("{prefix}{}", e.path());
        CliError::config(field, e.into_inner().to_string())
    })
}
