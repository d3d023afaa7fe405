use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{LayerKind, LinearView, Network, ParamVector};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from_seed;

/// Mini-batch SGD with heavy-ball momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.01, momentum: 0.5, batch_size: 64 }
    }
}

/// Values kept from the forward pass for backpropagation.
struct LayerCache {
    input: Matrix,
    output: Matrix,
    /// Inputs to each inner map of a residual block.
    inner: Vec<Matrix>,
}

/// Mean softmax cross-entropy and its gradient, labels given one-hot.
pub fn loss_and_grad(net: &Network, batch: &Matrix, one_hot: &Matrix) -> Result<(f64, ParamVector)> {
    if one_hot.rows() != batch.rows() || one_hot.cols() != net.num_classes() {
        return Err(Error::Shape(format!(
            "labels are {}x{}, expected {}x{}",
            one_hot.rows(),
            one_hot.cols(),
            batch.rows(),
            net.num_classes()
        )));
    }
    let mut labels = Vec::with_capacity(one_hot.rows());
    for i in 0..one_hot.rows() {
        let row = one_hot.row(i);
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Precondition(format!("label row {i} is not one-hot")));
        }
        labels.push(row.iter().position(|&v| v == 1.0).unwrap());
    }
    loss_and_grad_indexed(net, batch, &labels)
}

/// Same as [`loss_and_grad`] with class indices.
pub fn loss_and_grad_indexed(net: &Network, batch: &Matrix, labels: &[usize]) -> Result<(f64, ParamVector)> {
    if batch.rows() == 0 {
        return Err(Error::Precondition("empty batch".into()));
    }
    if labels.len() != batch.rows() {
        return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), batch.rows())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= net.num_classes()) {
        return Err(Error::Precondition(format!("label {bad} outside {} classes", net.num_classes())));
    }
    if batch.cols() != net.input_dim() {
        return Err(Error::Shape(format!("batch has {} columns, network expects {}", batch.cols(), net.input_dim())));
    }

    let num_layers = net.num_layers();
    let mut caches = Vec::with_capacity(num_layers);
    let mut z = batch.clone();
    for l in 1..=num_layers {
        let mut inner = Vec::new();
        let out = net.apply_layer(l, &z, Some(&mut inner))?;
        let input = core::mem::replace(&mut z, out);
        caches.push(LayerCache { input, output: Matrix::zeros(0, 0), inner });
        if matches!(net.layers[l - 1].kind, LayerKind::LinearRelu) {
            caches[l - 1].output = z.clone();
        }
    }

    let (loss, mut g) = softmax_cross_entropy(&z, labels);
    if !loss.is_finite() {
        return Err(Error::Numeric { layer: num_layers, what: "loss" });
    }

    let mut grad = net.params().filled(0.0);
    for l in (1..=num_layers).rev() {
        let cache = &caches[l - 1];
        let maps = net.linear_views(l)?;
        let need_input_grad = l > 1;
        match net.layers[l - 1].kind {
            LayerKind::Linear => {
                accumulate(&mut grad, &maps[0], &g, &cache.input);
                if need_input_grad {
                    g = backprop_input(&g, &maps[0]);
                }
            }
            LayerKind::LinearRelu => {
                mask_by_positive(&mut g, &cache.output);
                accumulate(&mut grad, &maps[0], &g, &cache.input);
                if need_input_grad {
                    g = backprop_input(&g, &maps[0]);
                }
            }
            LayerKind::Residual { .. } => {
                let k = maps.len();
                let mut t = g.clone();
                for i in (0..k).rev() {
                    if i + 1 < k {
                        mask_by_positive(&mut t, &cache.inner[i + 1]);
                    }
                    accumulate(&mut grad, &maps[i], &t, &cache.inner[i]);
                    if i > 0 || need_input_grad {
                        t = backprop_input(&t, &maps[i]);
                    }
                }
                if need_input_grad {
                    for (a, b) in g.as_mut_slice().iter_mut().zip(t.as_slice()) {
                        *a += b;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Mean loss and `d loss / d logits`.
fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = logits.rows() as f64;
    let mut g = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(row.iter().map(|v| libm::exp(v - m)).sum::<f64>());
        loss += lse - row[y];
        for (gj, &v) in g.row_mut(i).iter_mut().zip(row) {
            *gj = libm::exp(v - lse) / n;
        }
        g.row_mut(i)[y] -= 1.0 / n;
    }
    (loss / n, g)
}

fn mask_by_positive(g: &mut Matrix, activation: &Matrix) {
    for (gv, &a) in g.as_mut_slice().iter_mut().zip(activation.as_slice()) {
        if a <= 0.0 {
            *gv = 0.0;
        }
    }
}

/// `dW += gᵀ x`, `db += Σ_rows g`.
fn accumulate(grad: &mut ParamVector, map: &LinearView<'_>, g: &Matrix, x: &Matrix) {
    let (out, inp) = (map.out_dim, map.in_dim);
    let values = grad.values_mut();
    let (dw, rest) = values[map.offset..].split_at_mut(out * inp);
    for s in 0..g.rows() {
        let xr = x.row(s);
        for (o, &go) in g.row(s).iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            for (d, &xv) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xr) {
                *d += go * xv;
            }
        }
    }
    if map.b.is_some() {
        let db = &mut rest[..out];
        for s in 0..g.rows() {
            for (d, &go) in db.iter_mut().zip(g.row(s)) {
                *d += go;
            }
        }
    }
}

/// `g W`: gradient with respect to the map's input.
fn backprop_input(g: &Matrix, map: &LinearView<'_>) -> Matrix {
    let inp = map.in_dim;
    let mut out = Matrix::zeros(g.rows(), inp);
    for s in 0..g.rows() {
        let row = out.row_mut(s);
        for (o, &go) in g.row(s).iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            for (r, &w) in row.iter_mut().zip(&map.w[o * inp..(o + 1) * inp]) {
                *r += go * w;
            }
        }
    }
    out
}

/// `epochs` passes of shuffled mini-batch SGD with momentum
/// (`v ← μv + g`, `θ ← θ − lr·v`). The momentum buffer starts at zero and
/// the shuffle order is a function of `seed` alone.
pub fn sgd_epochs(net: &Network, data: &Samples, epochs: usize, cfg: &SgdConfig, seed: u64) -> Result<Network> {
    sgd_epochs_masked(net, data, epochs, cfg, seed, None)
}

/// [`sgd_epochs`] restricted to coordinates where `trainable` is true; all
/// other parameters are left bit-for-bit untouched.
pub fn sgd_epochs_masked(
    net: &Network,
    data: &Samples,
    epochs: usize,
    cfg: &SgdConfig,
    seed: u64,
    trainable: Option<&[bool]>,
) -> Result<Network> {
    if data.is_empty() {
        return Err(Error::Precondition("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Precondition("batch size must be >= 1".into()));
    }
    if let Some(mask) = trainable {
        if mask.len() != net.params().len() {
            return Err(Error::Shape(format!(
                "trainable mask has {} entries for {} parameters",
                mask.len(),
                net.params().len()
            )));
        }
    }
    let mut net = net.clone();
    if epochs == 0 {
        return Ok(net);
    }
    let mut rng = rng_from_seed(seed);
    let mut velocity = vec![0.0; net.params().len()];
    let mut order: Vec<usize> = Vec::with_capacity(data.len());
    for _ in 0..epochs {
        order.clear();
        order.extend(0..data.len());
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = data.x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (_, grad) = loss_and_grad_indexed(&net, &xb, &yb)?;
            let theta = net.params_mut().values_mut();
            for (k, ((t, v), g)) in theta.iter_mut().zip(&mut velocity).zip(grad.values()).enumerate() {
                if trainable.is_some_and(|m| !m[k]) {
                    continue;
                }
                *v = cfg.momentum * *v + g;
                *t -= cfg.lr * *v;
            }
        }
    }
    Ok(net)
}
