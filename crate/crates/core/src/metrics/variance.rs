use alloc::vec;
use alloc::vec::Vec;

use super::FeatureMatrix;
use crate::error::Result;
use crate::linalg::Matrix;

/// Class means and covariance traces of one layer's features.
///
/// `tr_w = (1/N) Σ_i ‖z_i − μ_{y_i}‖²`, `tr_b = (1/C) Σ_c ‖μ_c − μ_G‖²`, and
/// `tr_t = (1/N) Σ_i ‖z_i − μ_G‖²`, with `C` the number of classes present.
/// For class-balanced input `tr_t = tr_w + tr_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    /// Present class ids, ascending; rows of `class_means` follow this order.
    pub classes: Vec<usize>,
    pub class_means: Matrix,
    pub global_mean: Vec<f64>,
    pub tr_w: f64,
    pub tr_b: f64,
    pub tr_t: f64,
    pub sigma_bar_w: f64,
    pub sigma_bar_b: f64,
    /// `tr_t == 0`: the normalized variances are reported as zero.
    pub degenerate: bool,
}

/// Two passes over the samples; no `D x D` matrix is formed.
pub fn class_stats(z: &FeatureMatrix) -> Result<ClassStats> {
    let (n, d) = z.values.shape();
    let mut sums = vec![0.0; z.num_classes * d];
    let mut counts = vec![0usize; z.num_classes];
    let mut global = vec![0.0; d];
    for (i, &y) in z.labels.iter().enumerate() {
        counts[y] += 1;
        let row = z.values.row(i);
        for ((s, g), &v) in sums[y * d..(y + 1) * d].iter_mut().zip(&mut global).zip(row) {
            *s += v;
            *g += v;
        }
    }
    for g in &mut global {
        *g /= n as f64;
    }
    let classes: Vec<usize> = (0..z.num_classes).filter(|&c| counts[c] > 0).collect();
    let mut means = vec![0.0; z.num_classes * d];
    for &c in &classes {
        for (m, s) in means[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
            *m = s / counts[c] as f64;
        }
    }

    let mut within = 0.0;
    let mut total = 0.0;
    for (i, &y) in z.labels.iter().enumerate() {
        let row = z.values.row(i);
        let mu = &means[y * d..(y + 1) * d];
        for ((&v, &m), &g) in row.iter().zip(mu).zip(&global) {
            within += (v - m) * (v - m);
            total += (v - g) * (v - g);
        }
    }
    let tr_w = within / n as f64;
    let tr_t = total / n as f64;
    let tr_b = classes
        .iter()
        .map(|&c| means[c * d..(c + 1) * d].iter().zip(&global).map(|(m, g)| (m - g) * (m - g)).sum::<f64>())
        .sum::<f64>()
        / classes.len() as f64;

    let degenerate = tr_t == 0.0;
    let (sigma_bar_w, sigma_bar_b) = if degenerate { (0.0, 0.0) } else { (tr_w / tr_t, tr_b / tr_t) };

    let mut class_means = Matrix::zeros(classes.len(), d);
    for (r, &c) in classes.iter().enumerate() {
        class_means.row_mut(r).copy_from_slice(&means[c * d..(c + 1) * d]);
    }
    Ok(ClassStats { classes, class_means, global_mean: global, tr_w, tr_b, tr_t, sigma_bar_w, sigma_bar_b, degenerate })
}
