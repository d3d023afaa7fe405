use alloc::format;

use super::{accuracy, FeatureMatrix};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::nn::{init_params, sgd_epochs, InitScheme, LayerSpec, Network, SgdConfig};
use crate::rng::{derive_seed, Stream};

/// Training schedule for a linear probe (plain SGD by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 100, lr: 0.01, batch_size: 64, momentum: 0.0 }
    }
}

/// Trains a freshly initialized linear classifier (with bias) on `train`
/// and returns the best test accuracy seen after any epoch.
pub fn linear_probe(train: &FeatureMatrix, test: &FeatureMatrix, cfg: &ProbeConfig, seed: u64) -> Result<f64> {
    if train.dim() != test.dim() {
        return Err(Error::Shape(format!("probe train features have dimension {}, test {}", train.dim(), test.dim())));
    }
    let classes = train.num_classes.max(test.num_classes);
    let net = Network::new(alloc::vec![LayerSpec::linear(train.dim(), classes)], classes)?;
    let mut net = init_params(&net, InitScheme::Uniform, derive_seed(seed, Stream::Probe, 0, 0))?;
    let samples = Samples::new(train.values.clone(), train.labels.clone(), classes)?;
    let sgd = SgdConfig { lr: cfg.lr, momentum: cfg.momentum, batch_size: cfg.batch_size };
    let mut best: f64 = 0.0;
    for epoch in 0..cfg.epochs {
        net = sgd_epochs(&net, &samples, 1, &sgd, derive_seed(seed, Stream::Probe, 1, epoch as u64))?;
        let acc = accuracy(&net.logits(&test.values)?, &test.labels)?;
        best = best.max(acc);
        if best == 1.0 {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn constant_argmax_matching_labels() {
        let train = FeatureMatrix::new(Matrix::zeros(8, 3), vec![1; 8], 3).unwrap();
        let test = FeatureMatrix::new(Matrix::zeros(5, 3), vec![1; 5], 3).unwrap();
        assert_eq!(linear_probe(&train, &test, &ProbeConfig::default(), 0).unwrap(), 1.0);
    }

    #[test]
    fn separable_two_class() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let t = i as f64 / 40.0;
            rows.push([1.0 + t, 0.5 - t]);
            labels.push(0);
            rows.push([-1.0 - t, -0.5 + t]);
            labels.push(1);
        }
        let fm = FeatureMatrix::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap();
        assert_eq!(linear_probe(&fm, &fm, &ProbeConfig::default(), 3).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = FeatureMatrix::new(Matrix::zeros(2, 3), vec![0, 1], 2).unwrap();
        let b = FeatureMatrix::new(Matrix::zeros(2, 2), vec![0, 1], 2).unwrap();
        assert!(matches!(linear_probe(&a, &b, &ProbeConfig::default(), 0), Err(Error::Shape(_))));
    }
}
