use alloc::format;
use alloc::vec::Vec;

use super::{
    accuracy, class_stats, linear_probe, pabs_alignment, FeatureMatrix, Metric, MetricRecord, Phase, ProbeConfig,
};
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{forward, FeatureTapSet, Network};
use crate::rng::{derive_seed, Stream};

/// What to measure on one model.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    /// Tap indices (`0..L`); empty means every tap.
    pub taps: Vec<usize>,
    /// Rows per forward batch during feature extraction; 0 for one pass.
    pub batch_size: usize,
    pub variance: bool,
    pub alignment: bool,
    pub accuracy: bool,
    /// Own-data linear probe (train split → test split).
    pub probe: Option<ProbeConfig>,
    /// Taps to probe; empty means the penultimate tap only.
    pub probe_taps: Vec<usize>,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            taps: Vec::new(),
            batch_size: 256,
            variance: true,
            alignment: true,
            accuracy: true,
            probe: None,
            probe_taps: Vec::new(),
        }
    }
}

impl SweepPlan {
    /// Tap indices this plan touches, validated against `num_layers`.
    pub fn resolved_taps(&self, num_layers: usize) -> Result<Vec<usize>> {
        resolve(&self.taps, num_layers, || (0..num_layers).collect())
    }

    pub fn resolved_probe_taps(&self, num_layers: usize) -> Result<Vec<usize>> {
        resolve(&self.probe_taps, num_layers, || alloc::vec![num_layers - 1])
    }
}

fn resolve(taps: &[usize], num_layers: usize, default: impl FnOnce() -> Vec<usize>) -> Result<Vec<usize>> {
    if let Some(&bad) = taps.iter().find(|&&t| t >= num_layers) {
        return Err(Error::Config(format!("tap {bad} does not exist (taps are 0..{})", num_layers - 1)));
    }
    if taps.is_empty() {
        Ok(default())
    } else {
        let mut t = taps.to_vec();
        t.sort_unstable();
        t.dedup();
        Ok(t)
    }
}

/// Labels attached to every record of one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordContext {
    pub round: usize,
    pub phase: Phase,
    pub client: usize,
    /// Seeds the probes.
    pub seed: u64,
}

impl RecordContext {
    pub fn record(&self, layer: usize, metric: Metric, value: f64) -> MetricRecord {
        MetricRecord { round: self.round, phase: self.phase, client: self.client, layer, metric, value }
    }
}

/// Forward pass in batches of `batch_size` rows, concatenating logits and
/// taps. Rows are independent, so the result equals a single full pass.
pub fn extract_features(net: &Network, x: &Matrix, batch_size: usize) -> Result<(Matrix, FeatureTapSet)> {
    if batch_size == 0 || batch_size >= x.rows() {
        return forward(net, x);
    }
    let mut logits: Vec<f64> = Vec::with_capacity(x.rows() * net.num_classes());
    let mut taps: Vec<Vec<f64>> = alloc::vec![Vec::new(); net.num_layers()];
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(batch_size) {
        let (l, t) = forward(net, &x.select_rows(chunk))?;
        logits.extend_from_slice(l.as_slice());
        for (acc, m) in taps.iter_mut().zip(t.taps) {
            acc.extend_from_slice(m.as_slice());
        }
    }
    let dims: Vec<usize> = net.layers().iter().map(|l| l.in_dim).collect();
    let taps = taps.into_iter().zip(dims).map(|(v, d)| Matrix::from_vec_unchecked(x.rows(), d, v)).collect();
    Ok((Matrix::from_vec_unchecked(x.rows(), net.num_classes(), logits), FeatureTapSet { taps }))
}

/// Measures one model on one client's (class-balanced) evaluation data.
///
/// Per tap: normalized variances and raw traces, and the alignment between
/// the tap's class means and the next layer's weights (the last tap pairs
/// with the classifier). Accuracy records use the classifier's layer id.
pub fn metric_sweep(
    net: &Network,
    data: &ClientDataset,
    plan: &SweepPlan,
    ctx: &RecordContext,
) -> Result<Vec<MetricRecord>> {
    let num_layers = net.num_layers();
    let taps = plan.resolved_taps(num_layers)?;
    let c = data.train.num_classes;
    let (logits, features) = extract_features(net, &data.train.x, plan.batch_size)?;
    let mut out = Vec::new();

    for &t in &taps {
        if !(plan.variance || plan.alignment) {
            break;
        }
        let fm = FeatureMatrix::new(features.taps[t].clone(), data.train.labels.clone(), c)?;
        let stats = class_stats(&fm)?;
        if plan.variance {
            out.push(ctx.record(t, Metric::SigmaW, stats.sigma_bar_w));
            out.push(ctx.record(t, Metric::SigmaB, stats.sigma_bar_b));
            out.push(ctx.record(t, Metric::TraceW, stats.tr_w));
            out.push(ctx.record(t, Metric::TraceB, stats.tr_b));
            out.push(ctx.record(t, Metric::TraceT, stats.tr_t));
        }
        if plan.alignment {
            let w = net.weight_matrix(t + 1)?;
            let a = pabs_alignment(&stats.class_means, &w)?;
            out.push(ctx.record(t, Metric::Alignment, a.mean_alignment));
        }
    }

    if plan.accuracy {
        out.push(ctx.record(num_layers, Metric::TrainAccuracy, accuracy(&logits, &data.train.labels)?));
        if !data.test.is_empty() {
            let test_logits = net.logits(&data.test.x)?;
            out.push(ctx.record(num_layers, Metric::TestAccuracy, accuracy(&test_logits, &data.test.labels)?));
        }
    }

    if let Some(cfg) = &plan.probe {
        if !data.test.is_empty() {
            let (_, test_features) = extract_features(net, &data.test.x, plan.batch_size)?;
            for t in plan.resolved_probe_taps(num_layers)? {
                let train = FeatureMatrix::new(features.taps[t].clone(), data.train.labels.clone(), c)?;
                let test = FeatureMatrix::new(test_features.taps[t].clone(), data.test.labels.clone(), c)?;
                let seed = derive_seed(ctx.seed, Stream::Probe, ctx.client as u64, t as u64);
                out.push(ctx.record(t, Metric::ProbeAccuracy, linear_probe(&train, &test, cfg, seed)?));
            }
        }
    }
    Ok(out)
}
