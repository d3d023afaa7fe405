//! Small feed-forward networks with per-layer feature taps.
//!
//! Parameters live in one flat [`ParamVector`] so that aggregation, distances,
//! and serialization all work on the same canonical layout. Layer ids are
//! 1-based (`1..=L`, `L` being the classifier); tap `ℓ` is the input to layer
//! `ℓ + 1`, with tap 0 the raw input.

mod params;
mod train;

pub use params::{ParamVector, TensorSlot};
pub use train::{loss_and_grad, loss_and_grad_indexed, sgd_epochs, sgd_epochs_masked, SgdConfig};

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    LinearRelu,
    /// `y = x + f(x)` where `f` is `inner_layers` square linear maps with
    /// ReLU between them (none after the last).
    Residual {
        inner_layers: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Self { kind: LayerKind::Linear, in_dim, out_dim, has_bias: true }
    }

    pub fn linear_relu(in_dim: usize, out_dim: usize) -> Self {
        Self { kind: LayerKind::LinearRelu, in_dim, out_dim, has_bias: true }
    }

    pub fn residual(width: usize, inner_layers: usize) -> Self {
        Self { kind: LayerKind::Residual { inner_layers }, in_dim: width, out_dim: width, has_bias: true }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("layer {index}: dimensions must be >= 1")));
        }
        if let LayerKind::Residual { inner_layers } = self.kind {
            if self.in_dim != self.out_dim {
                return Err(Error::Config(format!(
                    "layer {index}: residual block needs in_dim == out_dim ({} != {})",
                    self.in_dim, self.out_dim
                )));
            }
            if inner_layers == 0 {
                return Err(Error::Config(format!("layer {index}: residual block needs at least one inner layer")));
            }
        }
        Ok(())
    }

    /// Number of weight matrices the layer owns.
    fn linear_maps(&self) -> usize {
        match self.kind {
            LayerKind::Linear | LayerKind::LinearRelu => 1,
            LayerKind::Residual { inner_layers } => inner_layers,
        }
    }
}

/// A chain of layers ending in a linear classifier over `num_classes` logits,
/// trained with softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    num_classes: usize,
    params: ParamVector,
}

/// Initialization schemes for [`init_params`].
#[derive(Debug, Clone, Copy)]
pub enum InitScheme<'a> {
    /// Weights `U(-1/√fan_in, 1/√fan_in)`, biases zero.
    Uniform,
    /// Bit-exact load of an existing parameter vector.
    From(&'a ParamVector),
}

/// Inputs to each layer. `taps[0]` is the raw input and `taps[L-1]` is the
/// penultimate feature fed to the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTapSet {
    pub taps: Vec<Matrix>,
}

impl FeatureTapSet {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn penultimate(&self) -> &Matrix {
        self.taps.last().expect("a network has at least one layer")
    }
}

/// Borrowed view of one linear map inside the flat parameter vector.
pub(crate) struct LinearView<'a> {
    pub w: &'a [f64],
    pub b: Option<&'a [f64]>,
    pub out_dim: usize,
    pub in_dim: usize,
    /// Offset of `w` in the flat vector; the bias follows directly.
    pub offset: usize,
}

impl Network {
    /// Chains `layers`; parameters start at zero (see [`init_params`]).
    pub fn new(layers: Vec<LayerSpec>, num_classes: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate(i + 1)?;
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer {} outputs {} features but layer {} expects {}",
                    i + 1,
                    pair[0].out_dim,
                    i + 2,
                    pair[1].in_dim
                )));
            }
        }
        let last = layers.last().unwrap();
        if last.out_dim != num_classes {
            return Err(Error::Config(format!("classifier outputs {} logits for {num_classes} classes", last.out_dim)));
        }
        if last.kind != LayerKind::Linear {
            return Err(Error::Config("the final layer must be a plain linear classifier".into()));
        }
        let params = ParamVector::zeros(params::layout_for(&layers));
        Ok(Self { layers, num_classes, params })
    }

    /// Plain MLP: `widths[0]` inputs, hidden ReLU layers, linear classifier.
    pub fn mlp(widths: &[usize], num_classes: usize) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Config("mlp needs an input width".into()));
        }
        let mut layers = Vec::with_capacity(widths.len());
        for w in widths.windows(2) {
            layers.push(LayerSpec::linear_relu(w[0], w[1]));
        }
        layers.push(LayerSpec::linear(*widths.last().unwrap(), num_classes));
        Self::new(layers, num_classes)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Flattened parameters in canonical layer order.
    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    /// Replaces the parameters; the layout must match this architecture.
    pub fn with_params(&self, params: ParamVector) -> Result<Network> {
        self.params.check_layout(&params)?;
        Ok(Network { layers: self.layers.clone(), num_classes: self.num_classes, params })
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Weight matrix of a single-map layer (`out x in`), e.g. the classifier.
    /// Residual blocks return their first inner map.
    pub fn weight_matrix(&self, layer_id: usize) -> Result<Matrix> {
        let maps = self.linear_views(layer_id)?;
        let v = &maps[0];
        Ok(Matrix::from_vec_unchecked(v.out_dim, v.in_dim, v.w.to_vec()))
    }

    pub(crate) fn linear_views(&self, layer_id: usize) -> Result<Vec<LinearView<'_>>> {
        if layer_id == 0 || layer_id > self.layers.len() {
            return Err(Error::Config(format!("layer {layer_id} out of range 1..={}", self.layers.len())));
        }
        let spec = &self.layers[layer_id - 1];
        let slots = self.params.layer_slots(layer_id);
        let values = self.params.values();
        let mut out = Vec::with_capacity(spec.linear_maps());
        let mut it = slots.iter().peekable();
        while let Some(w) = it.next() {
            let (o, i) = (w.shape[0], w.shape[1]);
            let b = if spec.has_bias {
                let b = it.next().expect("bias slot follows weight");
                Some(&values[b.offset..b.offset + o])
            } else {
                None
            };
            out.push(LinearView { w: &values[w.offset..w.offset + o * i], b, out_dim: o, in_dim: i, offset: w.offset });
        }
        Ok(out)
    }

    /// Logits for a batch (rows = samples), without keeping taps.
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        let mut z = self.check_batch(batch)?.clone();
        for l in 1..=self.layers.len() {
            z = self.apply_layer(l, &z, None)?;
        }
        Ok(z)
    }

    fn check_batch<'m>(&self, batch: &'m Matrix) -> Result<&'m Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(batch)
    }

    /// Runs layer `l` on `z`. When `record` is given, pushes the intermediate
    /// values the backward pass needs (inner-map inputs for residual blocks).
    pub(crate) fn apply_layer(&self, l: usize, z: &Matrix, mut record: Option<&mut Vec<Matrix>>) -> Result<Matrix> {
        let spec = self.layers[l - 1];
        let maps = self.linear_views(l)?;
        let out = match spec.kind {
            LayerKind::Linear => affine(z, &maps[0]),
            LayerKind::LinearRelu => {
                let mut y = affine(z, &maps[0]);
                relu_in_place(&mut y);
                y
            }
            LayerKind::Residual { .. } => {
                let mut h = z.clone();
                let last = maps.len() - 1;
                for (k, map) in maps.iter().enumerate() {
                    let mut a = affine(&h, map);
                    if k < last {
                        relu_in_place(&mut a);
                    }
                    if let Some(rec) = record.as_deref_mut() {
                        rec.push(core::mem::replace(&mut h, a));
                    } else {
                        h = a;
                    }
                }
                for (y, x) in h.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *y += x;
                }
                h
            }
        };
        if !out.is_finite() {
            return Err(Error::Numeric { layer: l, what: "activation" });
        }
        Ok(out)
    }
}

pub(crate) fn affine(z: &Matrix, map: &LinearView<'_>) -> Matrix {
    let inp = map.in_dim;
    let mut y = Matrix::zeros(z.rows(), map.out_dim);
    for i in 0..z.rows() {
        let zr = z.row(i);
        for (o, v) in y.row_mut(i).iter_mut().enumerate() {
            *v = dot(zr, &map.w[o * inp..(o + 1) * inp]) + map.b.map_or(0.0, |b| b[o]);
        }
    }
    y
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Logits plus the input to every layer.
pub fn forward(net: &Network, batch: &Matrix) -> Result<(Matrix, FeatureTapSet)> {
    let mut z = net.check_batch(batch)?.clone();
    let mut taps = Vec::with_capacity(net.num_layers());
    for l in 1..=net.num_layers() {
        let next = net.apply_layer(l, &z, None)?;
        taps.push(core::mem::replace(&mut z, next));
    }
    Ok((z, FeatureTapSet { taps }))
}

/// Deterministic initialization; `From` validates the layout and copies bits.
pub fn init_params(net: &Network, scheme: InitScheme<'_>, seed: u64) -> Result<Network> {
    match scheme {
        InitScheme::From(p) => net.with_params(p.clone()),
        InitScheme::Uniform => {
            let mut rng = rng_from_seed(seed);
            let mut out = net.clone();
            let slots: Vec<TensorSlot> = out.params.layout().to_vec();
            let values = out.params.values_mut();
            for slot in &slots {
                let range = slot.offset..slot.offset + slot.numel();
                if slot.shape.len() == 2 {
                    let bound = 1.0 / libm::sqrt(slot.shape[1] as f64);
                    for v in &mut values[range] {
                        *v = rng.random_range(-bound..bound);
                    }
                } else {
                    values[range].fill(0.0);
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul;
    use alloc::vec;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_layers_tap_input() {
        let layers = vec![
            LayerSpec::linear(3, 3).without_bias(),
            LayerSpec::linear(3, 3).without_bias(),
            LayerSpec::linear(3, 3).without_bias(),
        ];
        let net = Network::new(layers, 3).unwrap();
        let mut p = net.flatten();
        for l in 1..=3 {
            let slot = p.layer_slots(l)[0].clone();
            for i in 0..3 {
                p.values_mut()[slot.offset + i * 3 + i] = 1.0;
            }
        }
        let net = net.with_params(p).unwrap();
        let x = random_matrix(5, 3, 1);
        let (logits, taps) = forward(&net, &x).unwrap();
        assert_eq!(taps.len(), 3);
        for t in &taps.taps {
            assert_eq!(t, &x);
        }
        assert_eq!(logits, x);
    }

    #[test]
    fn deep_linear_tap_matches_explicit_product() {
        let layers = vec![
            LayerSpec::linear(4, 6).without_bias(),
            LayerSpec::linear(6, 5).without_bias(),
            LayerSpec::linear(5, 3).without_bias(),
            LayerSpec::linear(3, 2).without_bias(),
        ];
        let net = Network::new(layers, 2).unwrap();
        let net = init_params(&net, InitScheme::Uniform, 11).unwrap();
        let x = random_matrix(7, 4, 2);
        let (_, taps) = forward(&net, &x).unwrap();
        // z^3 = W3 W2 W1 x, rows are samples so Z3 = X W1ᵀ W2ᵀ W3ᵀ.
        let w: Vec<Matrix> = (1..=3).map(|l| net.weight_matrix(l).unwrap()).collect();
        let prod = matmul(&matmul(&w[2], &w[1]).unwrap(), &w[0]).unwrap();
        let expected = matmul(&x, &prod.transpose()).unwrap();
        for (a, b) in taps.taps[3].as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn relu_tap() {
        let net = Network::new(vec![LayerSpec::linear_relu(2, 2).without_bias(), LayerSpec::linear(2, 2)], 2).unwrap();
        let mut p = net.flatten();
        p.values_mut()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let net = net.with_params(p).unwrap();
        let x = Matrix::from_rows(&[[-1.0, 2.0]]).unwrap();
        let (_, taps) = forward(&net, &x).unwrap();
        assert_eq!(taps.taps[1].as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn zero_residual_block_is_identity() {
        let net =
            Network::new(vec![LayerSpec::linear_relu(3, 4), LayerSpec::residual(4, 2), LayerSpec::linear(4, 2)], 2)
                .unwrap();
        let mut net = init_params(&net, InitScheme::Uniform, 5).unwrap();
        let range = net.params().layer_range(2);
        net.params_mut().values_mut()[range].fill(0.0);
        let x = random_matrix(6, 3, 9);
        let (_, taps) = forward(&net, &x).unwrap();
        assert_eq!(taps.taps[2], taps.taps[1]);
    }

    #[test]
    fn chain_validation() {
        assert!(matches!(
            Network::new(vec![LayerSpec::linear(3, 4), LayerSpec::linear(5, 2)], 2),
            Err(Error::Config(_))
        ));
        assert!(matches!(Network::new(vec![LayerSpec::linear(3, 4)], 2), Err(Error::Config(_))));
        let bad_res =
            LayerSpec { kind: LayerKind::Residual { inner_layers: 1 }, in_dim: 3, out_dim: 4, has_bias: true };
        assert!(matches!(Network::new(vec![bad_res, LayerSpec::linear(4, 2)], 2), Err(Error::Config(_))));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Network::mlp(&[3, 4], 2).unwrap();
        assert!(matches!(forward(&net, &Matrix::zeros(2, 5)), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_reports_overflow_layer() {
        let net = Network::mlp(&[2, 2], 2).unwrap();
        let mut p = net.flatten();
        p.values_mut().fill(1e300);
        let net = net.with_params(p).unwrap();
        let x = Matrix::from_rows(&[[1e10, 1e10]]).unwrap();
        assert!(matches!(forward(&net, &x), Err(Error::Numeric { layer: 1, .. })));
    }

    #[test]
    fn init_is_deterministic_and_roundtrips() {
        let net = Network::mlp(&[5, 8, 8], 3).unwrap();
        let a = init_params(&net, InitScheme::Uniform, 42).unwrap();
        let b = init_params(&net, InitScheme::Uniform, 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&net, InitScheme::Uniform, 43).unwrap();
        assert_ne!(a, c);
        let loaded = init_params(&net, InitScheme::From(&a.flatten()), 0).unwrap();
        assert_eq!(loaded, a);
    }

    #[test]
    fn uniform_init_statistics() {
        // 100 x 100 weights: U(-0.1, 0.1), sigma = 0.1/√3, mean sigma over 10k draws.
        let net = Network::new(vec![LayerSpec::linear(100, 100).without_bias()], 100).unwrap();
        let net = init_params(&net, InitScheme::Uniform, 3).unwrap();
        let w = net.params().values();
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = 0.1 / libm::sqrt(3.0);
        assert!(mean.abs() < 3.0 * sigma / 100.0, "mean {mean}");
        assert!(w.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn biases_start_at_zero() {
        let net = init_params(&Network::mlp(&[4, 6], 3).unwrap(), InitScheme::Uniform, 1).unwrap();
        for slot in net.params().layout() {
            if slot.shape.len() == 1 {
                let r = slot.offset..slot.offset + slot.numel();
                assert!(net.params().values()[r].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn load_rejects_other_architecture() {
        let a = Network::mlp(&[4, 6], 3).unwrap();
        let b = Network::mlp(&[4, 7], 3).unwrap();
        assert!(matches!(init_params(&a, InitScheme::From(&b.flatten()), 0), Err(Error::Format { .. })));
    }
}
