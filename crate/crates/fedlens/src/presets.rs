//! Desk-scale configurations for each study.

use std::path::PathBuf;

use crate::config::{
    Activation, DataConfig, ExperimentConfig, FedConfig, Init, MetricsConfig, ModelConfig, OutputConfig,
    Personalization, PretrainSource, Scenario, SyntheticData,
};
use crate::error::{CliError, Result};

/// One named study: a single run or a small family of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub variants: Vec<ExperimentConfig>,
}

pub const PRESETS: &[(&str, &str)] = &[
    ("baseline", "heterogeneous federation, FedAvg, random init"),
    ("iid", "same as baseline but every client shares one domain"),
    ("probing", "baseline plus foreign-data penultimate probes"),
    ("personalization-classifier", "classifier kept local (FedPer)"),
    ("personalization-successive", "first k layers kept local, k = 0..L"),
    ("pretrained", "initialized from a model pretrained on an auxiliary domain"),
    ("finetune", "post-aggregation classifier fine-tuning on local data"),
    ("local-epochs-ablation", "E x R = 100 split three ways"),
    ("residual-ablation", "plain MLP vs residual blocks of equal depth"),
];

/// The heterogeneous federation every preset starts from.
pub fn base_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "baseline".into(),
        seed,
        scenario: Scenario::Baseline,
        data: DataConfig::Synthetic(SyntheticData {
            clients: 4,
            classes: 5,
            input_dim: 20,
            train_per_client: 500,
            test_per_client: 500,
            balanced: true,
            anchor_scale: 1.0,
            within_class_scale: 1.0,
            rotation_angle: 0.8,
            scale_spread: 0.5,
            offset_scale: 1.0,
            heterogeneous: true,
            label_noise: 0.0,
        }),
        model: ModelConfig {
            hidden: vec![32; 5],
            activation: Activation::Relu,
            residual: Vec::new(),
            residual_inner: 2,
        },
        fed: FedConfig {
            local_epochs: 10,
            rounds: 30,
            lr: 0.01,
            momentum: 0.5,
            batch_size: 64,
            eval_cadence: 1,
            personalization: Personalization::None,
            init: Init::Random,
        },
        metrics: MetricsConfig { eval_per_class: Some(100), ..MetricsConfig::default() },
        output: OutputConfig { dir: PathBuf::from("runs/baseline"), ..OutputConfig::default() },
    }
}

fn named(mut cfg: ExperimentConfig, name: &str) -> ExperimentConfig {
    cfg.name = name.to_string();
    cfg.output.dir = PathBuf::from("runs").join(name);
    cfg
}

fn synthetic(cfg: &mut ExperimentConfig) -> &mut SyntheticData {
    match &mut cfg.data {
        DataConfig::Synthetic(s) => s,
        DataConfig::Idx(_) => unreachable!("presets use synthetic data"),
    }
}

/// Builds preset `name` with master seed `seed`.
pub fn preset(name: &str, seed: u64) -> Result<Preset> {
    let base = base_config(seed);
    let (name, summary) = PRESETS.iter().copied().find(|(n, _)| *n == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        CliError::config("preset", format!("unknown preset {name:?}; known presets: {}", known.join(", ")))
    })?;
    let variants = match name {
        "baseline" => vec![named(base, "baseline")],
        "iid" => {
            let mut cfg = named(base, "iid");
            synthetic(&mut cfg).heterogeneous = false;
            vec![cfg]
        }
        "probing" => {
            let mut cfg = named(base, "probing");
            cfg.metrics.foreign_probe = true;
            cfg.metrics.probe_epochs = 30;
            vec![cfg]
        }
        "personalization-classifier" => {
            let mut cfg = named(base, "personalization-classifier");
            cfg.scenario = Scenario::Personalization;
            cfg.fed.personalization = Personalization::Classifier;
            vec![cfg]
        }
        "personalization-successive" => (0..=base.model.num_layers())
            .map(|k| {
                let mut cfg = named(base.clone(), &format!("personalization-successive-k{k}"));
                cfg.scenario = Scenario::Personalization;
                cfg.fed.personalization = Personalization::Successive { layers: k };
                cfg
            })
            .collect(),
        "pretrained" => {
            let mut cfg = named(base, "pretrained");
            cfg.scenario = Scenario::Pretrained;
            cfg.fed.init = Init::Pretrained { epochs: 20, source: PretrainSource::Auxiliary, samples: 2000 };
            vec![cfg]
        }
        "finetune" => {
            let mut cfg = named(base, "finetune");
            cfg.scenario = Scenario::Finetune;
            cfg.metrics.finetune = true;
            vec![cfg]
        }
        "local-epochs-ablation" => [(5, 20), (10, 10), (20, 5)]
            .into_iter()
            .map(|(e, r)| {
                let mut cfg = named(base.clone(), &format!("local-epochs-e{e}-r{r}"));
                cfg.scenario = Scenario::LocalEpochsAblation;
                cfg.fed.local_epochs = e;
                cfg.fed.rounds = r;
                cfg
            })
            .collect(),
        "residual-ablation" => {
            let mut plain = named(base.clone(), "residual-ablation-plain");
            plain.scenario = Scenario::ResidualAblation;
            let mut residual = named(base, "residual-ablation-residual");
            residual.scenario = Scenario::ResidualAblation;
            residual.model.residual = (2..=residual.model.hidden.len()).collect();
            vec![plain, residual]
        }
        _ => unreachable!("listed in PRESETS"),
    };
    for v in &variants {
        v.validate()?;
    }
    Ok(Preset { name, summary, variants })
}
