use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{aggregate, resolve_mask, splice, Executor, FederationConfig, InitMode};
use crate::data::{balanced_eval_subset, ClientDataset, Samples};
use crate::error::{Error, Result};
use crate::metrics::{
    extract_features, linear_probe, metric_sweep, pairwise_distances, param_distances, relative_change_records,
    sort_records, FeatureMatrix, Metric, MetricRecord, Phase, ProbeConfig, RecordContext, SweepPlan,
};
use crate::nn::{init_params, sgd_epochs, sgd_epochs_masked, InitScheme, Network, ParamVector, SgdConfig};
use crate::rng::{client_round_seed, derive_seed, Stream};

/// Classifier-only fine-tuning schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 0.01, momentum: 0.1, batch_size: 64 }
    }
}

/// Everything measured on evaluation rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPlan {
    pub sweep: SweepPlan,
    /// Class-balanced evaluation subset size; `None` evaluates on all data.
    pub eval_per_class: Option<usize>,
    pub feature_distances: bool,
    pub param_distances: bool,
    pub relative_changes: bool,
    /// Penultimate-layer probes of each client's pre and post model on every
    /// other client's data.
    pub foreign_probe: Option<ProbeConfig>,
    /// Fine-tune the post model's classifier locally and sweep it again.
    pub finetune: Option<FinetuneConfig>,
    pub keep_snapshots: bool,
}

impl Default for MetricPlan {
    fn default() -> Self {
        Self {
            sweep: SweepPlan::default(),
            eval_per_class: None,
            feature_distances: true,
            param_distances: true,
            relative_changes: true,
            foreign_probe: None,
            finetune: None,
            keep_snapshots: false,
        }
    }
}

/// Models around one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: usize,
    /// Θ_m after local training.
    pub pre: Vec<ParamVector>,
    /// Aggregated model with each client's personalized residue spliced in.
    pub post: Vec<ParamVector>,
    /// The averaged (shared) part; personalized coordinates are zero.
    pub shared: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    /// Sorted by `(round, phase, client, layer, metric)`.
    pub records: Vec<MetricRecord>,
    /// Evaluation rounds only, when the plan keeps them.
    pub snapshots: Vec<RoundState>,
    /// Each client's model after the final aggregation.
    pub final_models: Vec<ParamVector>,
}

/// Trains a freshly initialized network on pooled data.
pub fn pretrain(net: &Network, pooled: &Samples, epochs: usize, sgd: &SgdConfig, seed: u64) -> Result<ParamVector> {
    if epochs == 0 {
        return Ok(net.flatten());
    }
    let trained = sgd_epochs(net, pooled, epochs, sgd, derive_seed(seed, Stream::Pretrain, 0, 0))?;
    Ok(trained.flatten())
}

/// Retrains only the final linear layer on local data.
pub fn finetune_classifier(model: &Network, local: &Samples, cfg: &FinetuneConfig, seed: u64) -> Result<Network> {
    let range = model.params().layer_range(model.num_layers());
    let trainable: Vec<bool> = (0..model.params().len()).map(|i| range.contains(&i)).collect();
    let sgd = SgdConfig { lr: cfg.lr, momentum: cfg.momentum, batch_size: cfg.batch_size };
    sgd_epochs_masked(model, local, cfg.epochs, &sgd, seed, Some(&trainable))
}

/// The per-client data every sweep measures: a class-balanced subset of
/// `per_class` samples per class, or everything when `None`.
pub fn evaluation_sets(data: &[ClientDataset], per_class: Option<usize>, seed: u64) -> Result<Vec<ClientDataset>> {
    match per_class {
        Some(k) => data.iter().map(|d| balanced_eval_subset(d, k, seed)).collect(),
        None => Ok(data.to_vec()),
    }
}

/// Runs `cfg.rounds` rounds of local training and aggregation.
///
/// Client `m` in round `r` shuffles with `client_round_seed(cfg.seed, m, r)`
/// and starts with a fresh momentum buffer, so the outcome does not depend
/// on how `exec` schedules clients. On evaluation rounds the pre and post
/// models of every client are swept on that client's evaluation data.
pub fn run_federation<X: Executor>(
    cfg: &FederationConfig,
    template: &Network,
    data: &[ClientDataset],
    plan: &MetricPlan,
    exec: &X,
) -> Result<ExperimentLog> {
    cfg.validate()?;
    if data.len() != cfg.clients {
        return Err(Error::Precondition(alloc::format!("{} client datasets for {} clients", data.len(), cfg.clients)));
    }
    if let Some(ds) = data.iter().find(|d| d.train.is_empty()) {
        return Err(Error::Precondition(alloc::format!("client {} has no training data", ds.client_id)));
    }
    plan.sweep.resolved_taps(template.num_layers())?;
    plan.sweep.resolved_probe_taps(template.num_layers())?;

    let init = match &cfg.init {
        InitMode::Random { seed } => init_params(template, InitScheme::Uniform, *seed)?,
        InitMode::Pretrained(p) => init_params(template, InitScheme::From(p), 0)?,
    };
    let mask = resolve_mask(&cfg.personalization, init.params().layout())?;
    let counts: Vec<usize> = data.iter().map(ClientDataset::n_train).collect();
    let eval = evaluation_sets(data, plan.eval_per_class, cfg.seed)?;

    let mut current = vec![init.flatten(); cfg.clients];
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    for round in 1..=cfg.rounds {
        let trained = exec.map(&current, |m, params| -> Result<ParamVector> {
            let net = template.with_params(params.clone())?;
            let seed = client_round_seed(cfg.seed, m, round);
            Ok(sgd_epochs(&net, &data[m].train, cfg.local_epochs, &cfg.sgd, seed)?.flatten())
        });
        let pre = collect_clients(round, trained)?;
        let shared = aggregate(&pre, &counts, &mask)?;
        let post: Vec<ParamVector> = pre.iter().map(|p| splice(&shared, p, &mask)).collect();

        if cfg.is_eval_round(round) {
            let state = RoundState { round, pre, post, shared };
            records.extend(evaluate_round(cfg, template, data, &eval, plan, &state, exec)?);
            current = state.post.clone();
            if plan.keep_snapshots {
                snapshots.push(state);
            }
        } else {
            current = post;
        }
    }
    sort_records(&mut records);
    Ok(ExperimentLog { records, snapshots, final_models: current })
}

fn collect_clients<T>(round: usize, results: Vec<Result<T>>) -> Result<Vec<T>> {
    results
        .into_iter()
        .enumerate()
        .map(|(client, r)| r.map_err(|e| Error::Client { round, client, source: Box::new(e) }))
        .collect()
}

fn evaluate_round<X: Executor>(
    cfg: &FederationConfig,
    template: &Network,
    data: &[ClientDataset],
    eval: &[ClientDataset],
    plan: &MetricPlan,
    state: &RoundState,
    exec: &X,
) -> Result<Vec<MetricRecord>> {
    let round = state.round;
    let probe_seed = derive_seed(cfg.seed, Stream::Probe, round as u64, 0);
    let num_layers = template.num_layers();
    let taps = plan.sweep.resolved_taps(num_layers)?;
    let clients: Vec<usize> = (0..cfg.clients).collect();

    let per_client = exec.map(&clients, |_, &m| -> Result<Vec<MetricRecord>> {
        let pre = template.with_params(state.pre[m].clone())?;
        let post = template.with_params(state.post[m].clone())?;
        let ctx = |phase| RecordContext { round, phase, client: m, seed: probe_seed };
        let mut out = metric_sweep(&pre, &eval[m], &plan.sweep, &ctx(Phase::Pre))?;
        out.extend(metric_sweep(&post, &eval[m], &plan.sweep, &ctx(Phase::Post))?);

        let pair = ctx(Phase::Pair);
        if plan.feature_distances {
            let (_, fa) = extract_features(&pre, &eval[m].train.x, plan.sweep.batch_size)?;
            let (_, fb) = extract_features(&post, &eval[m].train.x, plan.sweep.batch_size)?;
            for &t in &taps {
                let d = pairwise_distances(&fa.taps[t], &fb.taps[t])?;
                out.push(pair.record(t, Metric::FeatureNormL1, d.normalized_l1));
                out.push(pair.record(t, Metric::FeatureMse, d.mse));
                out.push(pair.record(t, Metric::FeatureL1, d.l1));
                out.push(pair.record(t, Metric::FeatureCosine, d.cosine));
            }
        }
        if plan.param_distances {
            for l in 1..=num_layers {
                let d = param_distances(&state.pre[m], &state.post[m], Some(l))?;
                out.push(pair.record(l, Metric::ParamNormL1, d.normalized_l1));
                out.push(pair.record(l, Metric::ParamMse, d.mse));
                out.push(pair.record(l, Metric::ParamL1, d.l1));
                out.push(pair.record(l, Metric::ParamCosine, d.cosine));
            }
        }
        if let Some(ft) = &plan.finetune {
            let seed = derive_seed(cfg.seed, Stream::Finetune, m as u64, round as u64);
            let tuned = finetune_classifier(&post, &data[m].train, ft, seed)?;
            let sweep = SweepPlan { probe: None, ..plan.sweep.clone() };
            out.extend(metric_sweep(&tuned, &eval[m], &sweep, &ctx(Phase::Tuned))?);
        }
        Ok(out)
    });
    let mut records: Vec<MetricRecord> = collect_clients(round, per_client)?.into_iter().flatten().collect();

    if let Some(probe) = &plan.foreign_probe {
        if cfg.clients > 1 {
            records.extend(foreign_probes(template, eval, state, probe, probe_seed, exec)?);
        }
    }
    if plan.relative_changes {
        let rel = relative_change_records(&records);
        records.extend(rel);
    }
    Ok(records)
}

/// For each client `m`, the mean penultimate probe accuracy of its pre and
/// post models over the data of every other client. Identical post models
/// are probed once.
fn foreign_probes<X: Executor>(
    template: &Network,
    eval: &[ClientDataset],
    state: &RoundState,
    probe: &ProbeConfig,
    seed: u64,
    exec: &X,
) -> Result<Vec<MetricRecord>> {
    let m_count = state.pre.len();
    let tap = template.num_layers() - 1;
    let canonical: Vec<usize> =
        (0..m_count).map(|m| (0..m).find(|&k| state.post[k] == state.post[m]).unwrap_or(m)).collect();
    // (phase, model owner, data owner)
    let mut jobs = Vec::new();
    for m in 0..m_count {
        for f in (0..m_count).filter(|&f| f != m) {
            jobs.push((Phase::Pre, m, f));
            let post = (Phase::Post, canonical[m], f);
            if !jobs.contains(&post) {
                jobs.push(post);
            }
        }
    }
    let results = exec.map(&jobs, |_, &(phase, m, f)| -> Result<f64> {
        let params = if phase == Phase::Pre { &state.pre[m] } else { &state.post[m] };
        let net = template.with_params(params.clone())?;
        let (_, train) = extract_features(&net, &eval[f].train.x, 0)?;
        let (_, test) = extract_features(&net, &eval[f].test.x, 0)?;
        let c = eval[f].train.num_classes;
        let train = FeatureMatrix::new(train.taps[tap].clone(), eval[f].train.labels.clone(), c)?;
        let test = FeatureMatrix::new(test.taps[tap].clone(), eval[f].test.labels.clone(), c)?;
        linear_probe(&train, &test, probe, derive_seed(seed, Stream::Probe, m as u64, f as u64 + 1))
    });
    let results = collect_clients(state.round, results)?;
    let lookup = |phase: Phase, m: usize, f: usize| -> f64 {
        let i = jobs.iter().position(|&j| j == (phase, m, f)).expect("job scheduled");
        results[i]
    };
    let mut out = Vec::new();
    for m in 0..m_count {
        let others: Vec<usize> = (0..m_count).filter(|&f| f != m).collect();
        let n = others.len() as f64;
        let pre = others.iter().map(|&f| lookup(Phase::Pre, m, f)).sum::<f64>() / n;
        let post = others.iter().map(|&f| lookup(Phase::Post, canonical[m], f)).sum::<f64>() / n;
        for (phase, value) in [(Phase::Pre, pre), (Phase::Post, post)] {
            out.push(MetricRecord {
                round: state.round,
                phase,
                client: m,
                layer: tap,
                metric: Metric::ForeignProbeAccuracy,
                value,
            });
        }
    }
    Ok(out)
}
