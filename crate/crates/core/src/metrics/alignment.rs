use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{matmul, svd, Matrix};

/// Principal-angle cosines between the row space of the class means and the
/// leading input subspace of the next layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Descending, each in `[0, 1]`.
    pub cosines: Vec<f64>,
    pub mean_alignment: f64,
    /// Either subspace was empty; alignment reported as zero.
    pub degenerate: bool,
}

/// `class_means` is `C x D` (one row per class), `next_weights` is `out x D`.
///
/// The class-mean basis keeps the right singular vectors with nonzero
/// singular values; the weight basis keeps the top `C` right singular vectors
/// (again dropping null directions). The cosines are the singular values of
/// the `k x r` cross product of the two bases.
pub fn pabs_alignment(class_means: &Matrix, next_weights: &Matrix) -> Result<AlignmentResult> {
    if class_means.cols() != next_weights.cols() {
        return Err(Error::Shape(format!(
            "class means have dimension {}, weights take {} inputs",
            class_means.cols(),
            next_weights.cols()
        )));
    }
    if class_means.rows() == 0 {
        return Err(Error::Precondition("no class means".into()));
    }
    let z = svd(class_means)?;
    let w = svd(next_weights)?;
    let r = z.rank();
    let k = w.rank().min(class_means.rows());
    if r == 0 || k == 0 {
        return Ok(AlignmentResult { cosines: Vec::new(), mean_alignment: 0.0, degenerate: true });
    }
    let z_basis = z.v.leading_columns(r);
    let w_basis = w.v.leading_columns(k);
    let cross = matmul(&w_basis.transpose(), &z_basis)?;
    let cosines: Vec<f64> = svd(&cross)?.s.into_iter().map(|s| s.clamp(0.0, 1.0)).collect();
    let mean_alignment = cosines.iter().sum::<f64>() / cosines.len() as f64;
    Ok(AlignmentResult { cosines, mean_alignment, degenerate: false })
}
