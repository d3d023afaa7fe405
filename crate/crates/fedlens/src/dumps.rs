//! Metrics recomputed from feature dumps on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedlens_core::linalg::Matrix;
use fedlens_core::metrics::{
    class_stats, pabs_alignment, pairwise_distances, relative_change_records, sort_records, Metric, MetricRecord, Phase,
};
use fedlens_core::nn::ParamVector;

use crate::error::{CliError, Result};
use crate::formats::{read_fplf, read_params, FeatureDump};
use crate::runner::weight_dump_name;

/// Records derived from a dump directory, plus one warning per skipped file.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpReport {
    pub records: Vec<MetricRecord>,
    pub warnings: Vec<String>,
    pub pairs: usize,
}

/// `(round, client, tap, phase)` from `feat_r{round}_c{client}_t{tap}_{phase}.fplf`.
fn parse_name(name: &str) -> Option<(usize, usize, usize, Phase)> {
    let stem = name.strip_prefix("feat_r")?.strip_suffix(".fplf")?;
    let mut parts = stem.split('_');
    let round = parts.next()?.parse().ok()?;
    let client = parts.next()?.strip_prefix('c')?.parse().ok()?;
    let tap = parts.next()?.strip_prefix('t')?.parse().ok()?;
    let phase = Phase::from_name(parts.next()?).filter(|p| matches!(p, Phase::Pre | Phase::Post))?;
    parts.next().is_none().then_some((round, client, tap, phase))
}

/// Weight matrix feeding layer `id`: the first tensor stored for that layer.
fn weight_matrix(params: &ParamVector, id: usize) -> Option<Matrix> {
    let slot = params.layer_slots(id).into_iter().next()?;
    if slot.shape.len() != 2 {
        return None;
    }
    let values = params.values()[slot.offset..slot.offset + slot.numel()].to_vec();
    Matrix::new(slot.shape[0], slot.shape[1], values).ok()
}

/// Pairs `pre`/`post` feature dumps by `(round, client, tap)` and emits
/// variance, distance, and relative-change records, plus alignment when the
/// matching weight dumps are present. Unpaired or unrecognized files are
/// skipped with a warning.
pub fn metrics_from_dumps(dir: &Path) -> Result<DumpReport> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names: Vec<String> = Vec::new();
    for e in entries {
        let e = e.map_err(|e| CliError::io(dir, e))?;
        names.push(e.file_name().to_string_lossy().into_owned());
    }
    names.sort();

    let mut warnings = Vec::new();
    let mut groups: BTreeMap<(usize, usize, usize), [Option<PathBuf>; 2]> = BTreeMap::new();
    for name in names.iter().filter(|n| n.ends_with(".fplf")) {
        match parse_name(name) {
            Some((round, client, tap, phase)) => {
                let slot = if phase == Phase::Pre { 0 } else { 1 };
                groups.entry((round, client, tap)).or_default()[slot] = Some(dir.join(name));
            }
            None => warnings.push(format!("{name}: name does not follow feat_r<round>_c<client>_t<tap>_<phase>.fplf")),
        }
    }

    let mut weights: BTreeMap<PathBuf, ParamVector> = BTreeMap::new();
    let mut load_weights = |path: PathBuf| -> Result<Option<ParamVector>> {
        if let Some(p) = weights.get(&path) {
            return Ok(Some(p.clone()));
        }
        if !path.exists() {
            return Ok(None);
        }
        let p = read_params(&path)?;
        weights.insert(path, p.clone());
        Ok(Some(p))
    };

    let mut records = Vec::new();
    let mut pairs = 0;
    for ((round, client, tap), [pre, post]) in groups {
        let (pre, post) = match (pre, post) {
            (Some(a), Some(b)) => (a, b),
            (a, b) => {
                let have = a.or(b).expect("group has a file");
                warnings.push(format!(
                    "{}: no matching {} dump",
                    have.display(),
                    if have.to_string_lossy().ends_with("pre.fplf") { "post" } else { "pre" }
                ));
                continue;
            }
        };
        let dumps = [read_fplf(&pre)?, read_fplf(&post)?];
        for (path, d, phase) in [(&pre, &dumps[0], 0), (&post, &dumps[1], 1)] {
            let h = d.header;
            if (h.round as usize, h.layer as usize, h.phase) != (round, tap, phase) {
                return Err(CliError::Format {
                    path: path.clone(),
                    offset: 0,
                    msg: "header disagrees with file name".into(),
                });
            }
        }
        if dumps[0].labels != dumps[1].labels || dumps[0].header.d != dumps[1].header.d {
            warnings.push(format!("{}: pre and post dumps cover different samples", pre.display()));
            continue;
        }
        pairs += 1;
        let classes = dumps[0].labels.iter().copied().max().map_or(1, |m| m as usize + 1);
        let features = |d: &FeatureDump, path: &Path| {
            d.to_feature_matrix(classes).map_err(|e| CliError::Format {
                path: path.into(),
                offset: 0,
                msg: e.to_string(),
            })
        };
        let fm = [features(&dumps[0], &pre)?, features(&dumps[1], &post)?];
        for (phase, f) in [(Phase::Pre, &fm[0]), (Phase::Post, &fm[1])] {
            let stats = class_stats(f)?;
            let rec = |metric, value| MetricRecord { round, phase, client, layer: tap, metric, value };
            records.push(rec(Metric::SigmaW, stats.sigma_bar_w));
            records.push(rec(Metric::SigmaB, stats.sigma_bar_b));
            records.push(rec(Metric::TraceW, stats.tr_w));
            records.push(rec(Metric::TraceB, stats.tr_b));
            records.push(rec(Metric::TraceT, stats.tr_t));
            if let Some(params) = load_weights(dir.join(weight_dump_name(round, client, phase)))? {
                if let Some(w) = weight_matrix(&params, tap + 1) {
                    if w.cols() == f.dim() {
                        let a = pabs_alignment(&stats.class_means, &w)?;
                        records.push(rec(Metric::Alignment, a.mean_alignment));
                    }
                }
            }
        }
        let d = pairwise_distances(&fm[0].values, &fm[1].values)?;
        let pair = |metric, value| MetricRecord { round, phase: Phase::Pair, client, layer: tap, metric, value };
        records.push(pair(Metric::FeatureNormL1, d.normalized_l1));
        records.push(pair(Metric::FeatureMse, d.mse));
        records.push(pair(Metric::FeatureL1, d.l1));
        records.push(pair(Metric::FeatureCosine, d.cosine));
    }
    let rel = relative_change_records(&records);
    records.extend(rel);
    sort_records(&mut records);
    Ok(DumpReport { records, warnings, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        assert_eq!(parse_name("feat_r0012_c003_t04_post.fplf"), Some((12, 3, 4, Phase::Post)));
        assert_eq!(parse_name("feat_r1_c0_t0_pre.fplf"), Some((1, 0, 0, Phase::Pre)));
        assert_eq!(parse_name("feat_r1_c0_t0_tuned.fplf"), None);
        assert_eq!(parse_name("feat_r1_c0_pre.fplf"), None);
    }
}
