use alloc::format;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::nn::ParamVector;

/// Element- and row-wise distances between two equally shaped matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    /// Mean of `|a − b| / (|a| + |b|)`, pairs of zeros contributing 0.
    pub normalized_l1: f64,
    pub mse: f64,
    pub l1: f64,
    /// Mean per-row cosine; two zero rows count as 1, one zero row as 0.
    pub cosine: f64,
}

pub fn pairwise_distances(pre: &Matrix, post: &Matrix) -> Result<Distances> {
    if pre.shape() != post.shape() {
        return Err(Error::Shape(format!("cannot compare {:?} with {:?}", pre.shape(), post.shape())));
    }
    let count = pre.as_slice().len();
    if count == 0 {
        return Err(Error::Precondition("nothing to compare".into()));
    }
    let mut nl1 = 0.0;
    let mut sq = 0.0;
    let mut l1 = 0.0;
    for (&a, &b) in pre.as_slice().iter().zip(post.as_slice()) {
        let diff = (a - b).abs();
        let denom = a.abs() + b.abs();
        if denom > 0.0 {
            nl1 += diff / denom;
        }
        sq += diff * diff;
        l1 += diff;
    }
    let mut cos = 0.0;
    for i in 0..pre.rows() {
        let (a, b) = (pre.row(i), post.row(i));
        let (na, nb) = (dot(a, a), dot(b, b));
        cos += match (na == 0.0, nb == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                let joint = libm::sqrt(na * nb);
                let denom = if joint.is_normal() { joint } else { libm::sqrt(na) * libm::sqrt(nb) };
                (dot(a, b) / denom).clamp(-1.0, 1.0)
            }
        };
    }
    let n = count as f64;
    Ok(Distances { normalized_l1: nl1 / n, mse: sq / n, l1: l1 / n, cosine: cos / pre.rows() as f64 })
}

/// Distances between two parameter vectors, each treated as a single row.
/// With `layer`, only that layer's tensors are compared.
pub fn param_distances(pre: &ParamVector, post: &ParamVector, layer: Option<usize>) -> Result<Distances> {
    if !pre.same_layout(post) {
        return Err(Error::Shape("parameter layouts differ".into()));
    }
    let range = match layer {
        Some(l) => pre.layer_range(l),
        None => 0..pre.len(),
    };
    let a = Matrix::from_vec_unchecked(1, range.len(), pre.values()[range.clone()].into());
    let b = Matrix::from_vec_unchecked(1, range.len(), post.values()[range].into());
    pairwise_distances(&a, &b)
}

/// `|post − pre| / (|pre| + |post|) · 100`, zero when both are zero.
pub fn relative_change(pre: f64, post: f64) -> f64 {
    let denom = pre.abs() + post.abs();
    if denom == 0.0 {
        0.0
    } else {
        (post - pre).abs() / denom * 100.0
    }
}
