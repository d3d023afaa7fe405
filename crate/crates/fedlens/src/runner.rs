//! Turns a config into data, a model, and a federation run, and writes the
//! run directory.

use std::fs;
use std::path::{Path, PathBuf};

use fedlens_core::data::{federation_specs, generate_federation_data, ClientDataset, Samples, ShiftConfig};
use fedlens_core::fed::{
    evaluation_sets, pretrain, run_federation, Executor, ExperimentLog, FederationConfig, InitMode, MetricPlan,
};
use fedlens_core::metrics::{extract_features, Metric, MetricRecord, Phase, SweepPlan};
use fedlens_core::nn::{init_params, InitScheme, LayerSpec, Network, SgdConfig};
use fedlens_core::rng::{client_round_seed, derive_seed, Stream};
use serde::Serialize;

use crate::config::{Activation, DataConfig, ExperimentConfig, Init, PretrainSource};
use crate::error::{CliError, Result};
use crate::formats::{load_idx, write_fplf, write_params, FeatureDump};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const DUMP_DIR: &str = "dumps";
pub const METRICS_HEADER: [&str; 6] = ["round", "phase", "client", "layer", "metric", "value"];

/// Everything `run_federation` needs, built from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub template: Network,
    pub data: Vec<ClientDataset>,
    pub fed: FederationConfig,
    pub plan: MetricPlan,
}

pub fn build_network(cfg: &ExperimentConfig, input_dim: usize) -> Result<Network> {
    let m = &cfg.model;
    let mut layers = Vec::with_capacity(m.num_layers());
    let mut width = input_dim;
    for (i, &out) in m.hidden.iter().enumerate() {
        let spec = if m.residual.contains(&(i + 1)) {
            if out != width {
                return Err(CliError::config(
                    "model.residual",
                    format!("layer {} changes width and cannot be residual", i + 1),
                ));
            }
            LayerSpec::residual(out, m.residual_inner)
        } else {
            match m.activation {
                Activation::Relu => LayerSpec::linear_relu(width, out),
                Activation::Linear => LayerSpec::linear(width, out),
            }
        };
        layers.push(spec);
        width = out;
    }
    layers.push(LayerSpec::linear(width, cfg.num_classes()));
    Ok(Network::new(layers, cfg.num_classes())?)
}

fn shift(cfg: &crate::config::SyntheticData, heterogeneous: bool) -> ShiftConfig {
    ShiftConfig {
        rotation_angle: cfg.rotation_angle,
        scale_spread: cfg.scale_spread,
        offset_scale: cfg.offset_scale,
        heterogeneous,
    }
}

pub fn build_data(cfg: &ExperimentConfig) -> Result<Vec<ClientDataset>> {
    match &cfg.data {
        DataConfig::Synthetic(s) => {
            let mut specs = federation_specs(
                s.clients,
                s.classes,
                s.input_dim,
                s.anchor_scale,
                s.within_class_scale,
                &shift(s, s.heterogeneous),
                cfg.seed,
            )?;
            for spec in &mut specs {
                spec.label_noise = s.label_noise;
            }
            Ok(generate_federation_data(&specs, s.train_per_client, s.test_per_client, s.balanced, cfg.seed)?)
        }
        DataConfig::Idx(idx) => {
            let mut out = Vec::with_capacity(idx.clients.len());
            for (m, c) in idx.clients.iter().enumerate() {
                let mut train = load_idx(&c.train_images, &c.train_labels, idx.max_per_class, idx.normalize)?.train;
                let mut test = load_idx(&c.test_images, &c.test_labels, idx.max_per_class, idx.normalize)?.train;
                for (split, path) in [(&mut train, &c.train_labels), (&mut test, &c.test_labels)] {
                    if split.num_classes > idx.classes {
                        return Err(CliError::config(
                            "data.classes",
                            format!(
                                "{} has label {} but only {} classes are configured",
                                path.display(),
                                split.num_classes - 1,
                                idx.classes
                            ),
                        ));
                    }
                    split.num_classes = idx.classes;
                }
                if let Some(first) = out.first().map(|d: &ClientDataset| d.train.dim()) {
                    if train.dim() != first {
                        return Err(CliError::config(
                            "data.clients",
                            format!("client {m} has {}-dim images, client 0 {first}", train.dim()),
                        ));
                    }
                }
                out.push(ClientDataset { client_id: m, train, test });
            }
            Ok(out)
        }
    }
}

fn sgd(cfg: &ExperimentConfig) -> SgdConfig {
    SgdConfig { lr: cfg.fed.lr, momentum: cfg.fed.momentum, batch_size: cfg.fed.batch_size }
}

/// Seed of the auxiliary pretraining domain's samples.
fn auxiliary_seed(seed: u64) -> u64 {
    derive_seed(seed, Stream::Pretrain, 1, 0)
}

fn pretraining_data(
    cfg: &ExperimentConfig,
    data: &[ClientDataset],
    source: PretrainSource,
    samples: usize,
) -> Result<Samples> {
    match (source, &cfg.data) {
        (PretrainSource::Pooled, _) => {
            let parts: Vec<&Samples> = data.iter().map(|d| &d.train).collect();
            Ok(Samples::concat(&parts)?)
        }
        (PretrainSource::Auxiliary, DataConfig::Synthetic(s)) => {
            let specs = federation_specs(
                s.clients + 1,
                s.classes,
                s.input_dim,
                s.anchor_scale,
                s.within_class_scale,
                &shift(s, true),
                cfg.seed,
            )?;
            let aux =
                generate_federation_data(&specs[s.clients..], samples, s.classes, true, auxiliary_seed(cfg.seed))?;
            Ok(aux.into_iter().next().expect("one domain").train)
        }
        (PretrainSource::Auxiliary, DataConfig::Idx(_)) => {
            Err(CliError::config("fed.init.source", "an auxiliary domain needs synthetic data"))
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let data = build_data(cfg)?;
    let template = build_network(cfg, data[0].train.dim())?;
    let init = match &cfg.fed.init {
        Init::Random => InitMode::Random { seed: cfg.seed },
        Init::Pretrained { epochs, source, samples } => {
            let pooled = pretraining_data(cfg, &data, *source, *samples)?;
            let start = init_params(&template, InitScheme::Uniform, cfg.seed)?;
            InitMode::Pretrained(pretrain(&start, &pooled, *epochs, &sgd(cfg), cfg.seed)?)
        }
    };
    let fed = FederationConfig {
        clients: cfg.num_clients(),
        local_epochs: cfg.fed.local_epochs,
        rounds: cfg.fed.rounds,
        sgd: sgd(cfg),
        eval_cadence: cfg.fed.eval_cadence,
        personalization: cfg.fed.personalization.mode(),
        init,
        seed: cfg.seed,
    };
    let m = &cfg.metrics;
    let plan = MetricPlan {
        sweep: SweepPlan {
            taps: m.taps.clone(),
            batch_size: m.batch_size,
            variance: m.variance,
            alignment: m.alignment,
            accuracy: m.accuracy,
            probe: m.probe.then(|| m.probe_config()),
            probe_taps: m.probe_taps.clone(),
        },
        eval_per_class: m.eval_per_class,
        feature_distances: m.feature_distances,
        param_distances: m.param_distances,
        relative_changes: m.relative_changes,
        foreign_probe: m.foreign_probe.then(|| m.probe_config()),
        finetune: m.finetune.then(|| m.finetune_config()),
        keep_snapshots: cfg.output.dump_features,
    };
    Ok(Prepared { template, data, fed, plan })
}

/// Builds and runs the experiment without touching the filesystem (IDX
/// inputs aside).
pub fn execute<X: Executor>(cfg: &ExperimentConfig, exec: &X) -> Result<(Prepared, ExperimentLog)> {
    let prepared = prepare(cfg)?;
    let log = run_federation(&prepared.fed, &prepared.template, &prepared.data, &prepared.plan, exec)?;
    Ok((prepared, log))
}

/// Runs `cfg` and writes its run directory (`out` or `cfg.output.dir`).
pub fn run<X: Executor>(cfg: &ExperimentConfig, out: Option<&Path>, exec: &X) -> Result<PathBuf> {
    let dir = out.map_or_else(|| cfg.output.dir.clone(), Path::to_path_buf);
    let (prepared, log) = execute(cfg, exec)?;
    write_run(cfg, &dir, &prepared, &log)?;
    Ok(dir)
}

pub fn write_run(cfg: &ExperimentConfig, dir: &Path, prepared: &Prepared, log: &ExperimentLog) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_metrics_csv(&dir.join(METRICS_FILE), &log.records)?;
    write_accuracy_csv(&dir.join(ACCURACY_FILE), &log.records)?;
    let manifest = toml::to_string(&Manifest::new(cfg, prepared)).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| CliError::io(&path, e))?;
    if cfg.output.dump_features {
        write_dumps(cfg, &dir.join(DUMP_DIR), prepared, log)?;
    }
    Ok(())
}

/// Writes records with the fixed header, in the order given.
pub fn write_metrics_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.phase.name().to_string(),
            r.client.to_string(),
            r.layer.to_string(),
            r.metric.name().to_string(),
            r.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(CliError::Format { path: path.into(), offset: 0, msg: format!("unexpected header {header:?}") });
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let bad = |what: &str| CliError::Format {
            path: path.into(),
            offset: row.position().map_or(0, |p| p.byte() as usize),
            msg: format!("row {}: bad {what}", line + 2),
        };
        let num = |i: usize, what: &str| row[i].parse::<usize>().map_err(|_| bad(what));
        out.push(MetricRecord {
            round: num(0, "round")?,
            phase: Phase::from_name(&row[1]).ok_or_else(|| bad("phase"))?,
            client: num(2, "client")?,
            layer: num(3, "layer")?,
            metric: Metric::from_name(&row[4]).ok_or_else(|| bad("metric"))?,
            value: row[5].parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(out)
}

fn write_accuracy_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut rows: Vec<((usize, &'static str, usize), [Option<f64>; 2])> = Vec::new();
    for r in records {
        let col = match r.metric {
            Metric::TrainAccuracy => 0,
            Metric::TestAccuracy => 1,
            _ => continue,
        };
        let key = (r.round, r.phase.name(), r.client);
        match rows.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v[col] = Some(r.value),
            None => {
                let mut v = [None, None];
                v[col] = Some(r.value);
                rows.push((key, v));
            }
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "phase", "client", "train_acc", "test_acc"])?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for ((round, phase, client), [train, test]) in rows {
        w.write_record([round.to_string(), phase.to_string(), client.to_string(), cell(train), cell(test)])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn feature_dump_name(round: usize, client: usize, tap: usize, phase: Phase) -> String {
    format!("feat_r{round:04}_c{client:03}_t{tap:02}_{}.fplf", phase.name())
}

pub fn weight_dump_name(round: usize, client: usize, phase: Phase) -> String {
    format!("weights_r{round:04}_c{client:03}_{}.fpnv", phase.name())
}

/// Features of every evaluated tap on each client's evaluation inputs, for
/// the pre and post model of every evaluation round.
fn write_dumps(cfg: &ExperimentConfig, dir: &Path, prepared: &Prepared, log: &ExperimentLog) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let eval = evaluation_sets(&prepared.data, prepared.plan.eval_per_class, cfg.seed)?;
    let taps = prepared.plan.sweep.resolved_taps(prepared.template.num_layers())?;
    for state in &log.snapshots {
        for (m, ds) in eval.iter().enumerate() {
            for (phase, params) in [(Phase::Pre, &state.pre[m]), (Phase::Post, &state.post[m])] {
                let net = prepared.template.with_params(params.clone())?;
                let (_, features) = extract_features(&net, &ds.train.x, prepared.plan.sweep.batch_size)?;
                for &t in &taps {
                    let dump = FeatureDump::new(&features.taps[t], &ds.train.labels, t, phase, state.round)?;
                    write_fplf(&dir.join(feature_dump_name(state.round, m, t, phase)), &dump)?;
                }
                if cfg.output.dump_weights {
                    write_params(&dir.join(weight_dump_name(state.round, m, phase)), params)?;
                }
            }
        }
    }
    Ok(())
}

/// 64-bit seeds exceed TOML's signed integers, so they are written as hex.
fn hex(seed: u64) -> String {
    format!("{seed:#018x}")
}

#[derive(Serialize)]
struct Manifest<'a> {
    fedlens_version: &'static str,
    config: &'a ExperimentConfig,
    seeds: Seeds,
    model: ModelSummary,
}

#[derive(Serialize)]
struct Seeds {
    master: String,
    init: String,
    /// Per client: training split, test split, domain transform.
    data: Vec<[String; 3]>,
    class_anchors: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pretrain_data: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pretrain_shuffle: Option<String>,
    /// Per client: evaluation subset of the training and test split.
    eval_subset: Vec<[String; 2]>,
    /// `local_training[r - 1][m]` seeds client `m` in round `r`.
    local_training: Vec<Vec<String>>,
    /// Per evaluation round `(round, seed)`.
    probe: Vec<(u64, String)>,
    /// `finetune[i][m]` for the `i`-th evaluation round.
    finetune: Vec<Vec<String>>,
}

#[derive(Serialize)]
struct ModelSummary {
    layers: usize,
    parameters: usize,
    input_dim: usize,
    personalized_layers: Vec<usize>,
}

impl<'a> Manifest<'a> {
    fn new(cfg: &'a ExperimentConfig, p: &Prepared) -> Self {
        let s = cfg.seed;
        let clients = cfg.num_clients();
        let eval_rounds: Vec<usize> = (1..=cfg.fed.rounds).filter(|r| p.fed.is_eval_round(*r)).collect();
        let pretraining = matches!(cfg.fed.init, Init::Pretrained { .. });
        let seeds = Seeds {
            master: hex(s),
            init: hex(s),
            data: (0..clients as u64).map(|m| [0, 1, 2].map(|k| hex(derive_seed(s, Stream::Data, m, k)))).collect(),
            class_anchors: hex(derive_seed(s, Stream::Data, u64::MAX, 0)),
            pretrain_data: matches!(cfg.fed.init, Init::Pretrained { source: PretrainSource::Auxiliary, .. })
                .then(|| hex(auxiliary_seed(s))),
            pretrain_shuffle: pretraining.then(|| hex(derive_seed(s, Stream::Pretrain, 0, 0))),
            eval_subset: (0..clients as u64)
                .map(|m| [0, 1].map(|k| hex(derive_seed(s, Stream::EvalSubset, m, k))))
                .collect(),
            local_training: (1..=cfg.fed.rounds)
                .map(|r| (0..clients).map(|m| hex(client_round_seed(s, m, r))).collect())
                .collect(),
            probe: eval_rounds.iter().map(|&r| (r as u64, hex(derive_seed(s, Stream::Probe, r as u64, 0)))).collect(),
            finetune: if cfg.metrics.finetune {
                eval_rounds
                    .iter()
                    .map(|&r| (0..clients as u64).map(|m| hex(derive_seed(s, Stream::Finetune, m, r as u64))).collect())
                    .collect()
            } else {
                Vec::new()
            },
        };
        let personalized_layers = fedlens_core::fed::resolve_mask(&p.fed.personalization, p.template.params().layout())
            .map(|m| m.layers)
            .unwrap_or_default();
        Manifest {
            fedlens_version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            seeds,
            model: ModelSummary {
                layers: p.template.num_layers(),
                parameters: p.template.params().len(),
                input_dim: p.template.input_dim(),
                personalized_layers,
            },
        }
    }
}
