//! Layer-wise feature diagnostics: variance decomposition, feature/weight
//! subspace alignment, linear probing, pairwise distances, and the relative
//! change between pre- and post-aggregation measurements.

mod alignment;
mod distance;
mod probe;
mod sweep;
mod variance;

pub use alignment::{pabs_alignment, AlignmentResult};
pub use distance::{pairwise_distances, param_distances, relative_change, Distances};
pub use probe::{linear_probe, ProbeConfig};
pub use sweep::{extract_features, metric_sweep, RecordContext, SweepPlan};
pub use variance::{class_stats, ClassStats};

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Stacked features of one layer: one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl FeatureMatrix {
    pub fn new(values: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::Precondition("feature matrix has no samples".into()));
        }
        if values.rows() != labels.len() {
            return Err(Error::Shape(format!("{} feature rows but {} labels", values.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Precondition(format!("label {bad} outside {num_classes} classes")));
        }
        if !values.is_finite() {
            return Err(Error::Domain("features contain non-finite values".into()));
        }
        Ok(Self { values, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// When a measurement was taken relative to aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Client model after local training (Θ_m).
    Pre,
    /// Aggregated model with the client's personalized part spliced in.
    Post,
    /// Post model after local classifier fine-tuning.
    Tuned,
    /// Quantities comparing the pre and post models.
    Pair,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Pre, Phase::Post, Phase::Tuned, Phase::Pair];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
            Phase::Tuned => "tuned",
            Phase::Pair => "pair",
        }
    }

    pub fn from_name(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.name() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

macro_rules! metrics {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// Registered metric names.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum Metric { $($variant),* }

        impl Metric {
            pub const ALL: &'static [Metric] = &[$(Metric::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(Metric::$variant => $name),* }
            }
        }
    };
}

metrics! {
    SigmaW => "sigma_w",
    SigmaB => "sigma_b",
    TraceW => "tr_w",
    TraceB => "tr_b",
    TraceT => "tr_t",
    Alignment => "pabs",
    TrainAccuracy => "train_acc",
    TestAccuracy => "test_acc",
    ProbeAccuracy => "probe_acc",
    ForeignProbeAccuracy => "probe_foreign",
    FeatureNormL1 => "feat_nl1",
    FeatureMse => "feat_mse",
    FeatureL1 => "feat_l1",
    FeatureCosine => "feat_cos",
    ParamNormL1 => "param_nl1",
    ParamMse => "param_mse",
    ParamL1 => "param_l1",
    ParamCosine => "param_cos",
    RelSigmaW => "rel_sigma_w",
    RelSigmaB => "rel_sigma_b",
    RelTraceW => "rel_tr_w",
    RelTraceB => "rel_tr_b",
    RelAlignment => "rel_pabs",
    RelTrainAccuracy => "rel_train_acc",
}

impl Metric {
    pub fn from_name(s: &str) -> Option<Metric> {
        Metric::ALL.iter().copied().find(|m| m.name() == s)
    }

    /// The relative-change metric derived from a pre/post metric, if any.
    pub fn relative(self) -> Option<Metric> {
        Some(match self {
            Metric::SigmaW => Metric::RelSigmaW,
            Metric::SigmaB => Metric::RelSigmaB,
            Metric::TraceW => Metric::RelTraceW,
            Metric::TraceB => Metric::RelTraceB,
            Metric::Alignment => Metric::RelAlignment,
            Metric::TrainAccuracy => Metric::RelTrainAccuracy,
            _ => return None,
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One exported measurement. `layer` is a tap index for feature metrics,
/// a layer id for parameter metrics, and the classifier id for model-level
/// metrics such as accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub round: usize,
    pub phase: Phase,
    pub client: usize,
    pub layer: usize,
    pub metric: Metric,
    pub value: f64,
}

impl MetricRecord {
    fn sort_key(&self) -> (usize, &'static str, usize, usize, &'static str) {
        (self.round, self.phase.name(), self.client, self.layer, self.metric.name())
    }
}

/// Sorts by `(round, phase, client, layer, metric)`, names compared as text.
pub fn sort_records(records: &mut [MetricRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Appends one relative-change record (phase `Pair`) for every metric that
/// has a relative counterpart and appears in both phases with the same
/// `(round, client, layer)`.
pub fn relative_change_records(records: &[MetricRecord]) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    for pre in records.iter().filter(|r| r.phase == Phase::Pre) {
        let Some(rel) = pre.metric.relative() else { continue };
        if let Some(post) = records.iter().find(|r| {
            r.phase == Phase::Post
                && r.metric == pre.metric
                && r.round == pre.round
                && r.client == pre.client
                && r.layer == pre.layer
        }) {
            out.push(MetricRecord {
                phase: Phase::Pair,
                metric: rel,
                value: relative_change(pre.value, post.value),
                ..*pre
            });
        }
    }
    out
}

/// Fraction of rows whose argmax equals the label; ties resolve to the
/// lowest class index.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!("{} logit rows for {} labels", logits.rows(), labels.len())));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = labels.iter().enumerate().filter(|&(i, &y)| argmax(logits.row(i)) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// 2x2 adaptive average pooling of channels-last maps (`n x h x w x c`,
/// row-major) followed by flattening to `n x 4c` in `(bin_row, bin_col, c)`
/// order. Bin `b` of a length-`h` axis covers `⌊b·h/2⌋ .. ⌈(b+1)·h/2⌉`.
pub fn pool_features(raw: &[f64], n: usize, h: usize, w: usize, c: usize) -> Result<Matrix> {
    if h == 0 || w == 0 {
        return Err(Error::Precondition("pooling needs h, w >= 1".into()));
    }
    if raw.len() != n * h * w * c {
        return Err(Error::Shape(format!("{} values for a {n}x{h}x{w}x{c} tensor", raw.len())));
    }
    let bins = |len: usize, b: usize| (b * len / 2, ((b + 1) * len).div_ceil(2));
    let mut out = Matrix::zeros(n, 4 * c);
    for s in 0..n {
        let sample = &raw[s * h * w * c..(s + 1) * h * w * c];
        for bh in 0..2 {
            let (r0, r1) = bins(h, bh);
            for bw in 0..2 {
                let (c0, c1) = bins(w, bw);
                let count = ((r1 - r0) * (c1 - c0)) as f64;
                let base = (bh * 2 + bw) * c;
                for ch in 0..c {
                    let mut sum = 0.0;
                    for r in r0..r1 {
                        for col in c0..c1 {
                            sum += sample[(r * w + col) * c + ch];
                        }
                    }
                    out[(s, base + ch)] = sum / count;
                }
            }
        }
    }
    Ok(out)
}
