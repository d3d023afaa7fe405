//! Client datasets. The synthetic generator models cross-domain covariate
//! shift: every client sees the same Gaussian classes, pushed through its own
//! rotation, anisotropic scaling, and offset.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{derive_seed, rng_from_seed, Stream};

/// Labeled samples: one row of `x` per sample, labels as class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Samples {
    pub fn new(x: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Precondition(format!("label {bad} outside {num_classes} classes")));
        }
        Ok(Self { x, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Labels as an `N x C` one-hot matrix.
    pub fn one_hot(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.num_classes);
        for (i, &y) in self.labels.iter().enumerate() {
            m[(i, y)] = 1.0;
        }
        m
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Row-wise concatenation; all parts must share dimension and classes.
    pub fn concat(parts: &[&Samples]) -> Result<Samples> {
        let first = parts.first().ok_or_else(|| Error::Precondition("nothing to concatenate".into()))?;
        let (dim, c) = (first.dim(), first.num_classes);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != dim || p.num_classes != c {
                return Err(Error::Shape("cannot concatenate mismatched sample sets".into()));
            }
            data.extend_from_slice(p.x.as_slice());
            labels.extend_from_slice(&p.labels);
        }
        Samples::new(Matrix::from_vec_unchecked(labels.len(), dim, data), labels, c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Samples,
    pub test: Samples,
}

impl ClientDataset {
    /// Number of training samples, the aggregation weight.
    pub fn n_train(&self) -> usize {
        self.train.len()
    }
}

/// One client's data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    /// `C x n` class anchors in the shared latent space.
    pub class_means: Matrix,
    pub within_class_scale: f64,
    /// `n x n` orthogonal matrix.
    pub rotation: Matrix,
    pub scaling: Vec<f64>,
    pub offset: Vec<f64>,
    pub label_noise: f64,
}

impl DomainSpec {
    /// Untransformed domain (identity rotation, unit scaling, zero offset).
    pub fn plain(class_means: Matrix, within_class_scale: f64) -> Self {
        let (c, n) = class_means.shape();
        Self {
            num_classes: c,
            input_dim: n,
            class_means,
            within_class_scale,
            rotation: Matrix::identity(n),
            scaling: vec![1.0; n],
            offset: vec![0.0; n],
            label_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.input_dim;
        if self.class_means.shape() != (self.num_classes, n) {
            return Err(Error::Config(format!(
                "class_means is {:?}, expected ({}, {n})",
                self.class_means.shape(),
                self.num_classes
            )));
        }
        if self.rotation.shape() != (n, n) || self.scaling.len() != n || self.offset.len() != n {
            return Err(Error::Config("domain transform dimensions do not match input_dim".into()));
        }
        if !(self.within_class_scale > 0.0) || !self.within_class_scale.is_finite() {
            return Err(Error::Config("within_class_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must lie in [0, 1)".into()));
        }
        let err = orthogonality_error(&self.rotation);
        if err > 1e-10 {
            return Err(Error::Config(format!("rotation is not orthogonal (error {err:e})")));
        }
        Ok(())
    }

    /// `rotation · (scaling ⊙ v) + offset`.
    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = v.iter().zip(&self.scaling).map(|(a, s)| a * s).collect();
        (0..self.input_dim).map(|i| dot(self.rotation.row(i), &scaled) + self.offset[i]).collect()
    }

    fn sample(&self, count: usize, balanced: bool, rng: &mut impl Rng) -> Samples {
        let (c, n) = (self.num_classes, self.input_dim);
        let mut data = Vec::with_capacity(count * n);
        let mut labels = Vec::with_capacity(count);
        let mut latent = vec![0.0; n];
        for i in 0..count {
            let class = if balanced { i % c } else { rng.random_range(0..c) };
            for (l, &m) in latent.iter_mut().zip(self.class_means.row(class)) {
                let g: f64 = rng.sample(StandardNormal);
                *l = m + self.within_class_scale * g;
            }
            data.extend(self.transform(&latent));
            let label = if self.label_noise > 0.0 && c > 1 && rng.random::<f64>() < self.label_noise {
                let other = rng.random_range(0..c - 1);
                if other >= class {
                    other + 1
                } else {
                    other
                }
            } else {
                class
            };
            labels.push(label);
        }
        Samples { x: Matrix::from_vec_unchecked(count, n, data), labels, num_classes: c }
    }
}

fn orthogonality_error(q: &Matrix) -> f64 {
    let n = q.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = dot(q.row(i), q.row(j)) - if i == j { 1.0 } else { 0.0 };
            worst = worst.max(d.abs());
        }
    }
    worst
}

/// Draws `n_train` training and `n_test` test samples per client, each from
/// the client's own domain. With `balanced`, sample `i` has class `i mod C`.
pub fn generate_federation_data(
    specs: &[DomainSpec],
    n_train: usize,
    n_test: usize,
    balanced: bool,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    let first = specs.first().ok_or_else(|| Error::Config("no client domains given".into()))?;
    for (m, s) in specs.iter().enumerate() {
        s.validate().map_err(|e| Error::Config(format!("client {m}: {e}")))?;
        if s.num_classes != first.num_classes || s.input_dim != first.input_dim {
            return Err(Error::Config(format!(
                "client {m} has {} classes / {} inputs, client 0 has {} / {}",
                s.num_classes, s.input_dim, first.num_classes, first.input_dim
            )));
        }
    }
    let c = first.num_classes;
    if n_train < c || n_test < c {
        return Err(Error::Config(format!("need at least {c} train and test samples per client")));
    }
    Ok(specs
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let mut rng = rng_from_seed(derive_seed(seed, Stream::Data, m as u64, 0));
            let train = spec.sample(n_train, balanced, &mut rng);
            let mut rng = rng_from_seed(derive_seed(seed, Stream::Data, m as u64, 1));
            let test = spec.sample(n_test, balanced, &mut rng);
            ClientDataset { client_id: m, train, test }
        })
        .collect())
}

/// Knobs for [`federation_specs`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftConfig {
    /// Each client rotates `n/2` random planes by this angle (radians).
    /// Zero gives every client the identity rotation.
    pub rotation_angle: f64,
    /// Per-axis scaling drawn from `U(1 - s, 1 + s)`.
    pub scale_spread: f64,
    /// Offset entries drawn from `N(0, offset_scale²)`.
    pub offset_scale: f64,
    /// When false every client shares client 0's transform (IID control).
    pub heterogeneous: bool,
}

/// Shared class anchors `N(0, anchor_scale²)` plus one transform per client.
pub fn federation_specs(
    clients: usize,
    num_classes: usize,
    input_dim: usize,
    anchor_scale: f64,
    within_class_scale: f64,
    shift: &ShiftConfig,
    seed: u64,
) -> Result<Vec<DomainSpec>> {
    if clients == 0 || num_classes == 0 || input_dim == 0 {
        return Err(Error::Config("clients, classes, and input_dim must be >= 1".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, Stream::Data, u64::MAX, 0));
    let anchors: Vec<f64> =
        (0..num_classes * input_dim).map(|_| anchor_scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let anchors = Matrix::from_vec_unchecked(num_classes, input_dim, anchors);
    let mut specs = Vec::with_capacity(clients);
    for m in 0..clients {
        let source = if shift.heterogeneous { m } else { 0 };
        let mut rng = rng_from_seed(derive_seed(seed, Stream::Data, source as u64, 2));
        let rotation = plane_rotation(input_dim, shift.rotation_angle, &mut rng);
        let scaling = (0..input_dim).map(|_| 1.0 + shift.scale_spread * rng.random_range(-1.0..=1.0)).collect();
        let offset = (0..input_dim).map(|_| shift.offset_scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let spec = DomainSpec { rotation, scaling, offset, ..DomainSpec::plain(anchors.clone(), within_class_scale) };
        spec.validate()?;
        specs.push(spec);
    }
    Ok(specs)
}

/// `Q G Qᵀ` with `Q` a random orthogonal basis and `G` rotating consecutive
/// coordinate pairs by `angle`.
fn plane_rotation(n: usize, angle: f64, rng: &mut impl Rng) -> Matrix {
    let q = random_orthogonal(n, rng);
    if angle == 0.0 {
        return Matrix::identity(n);
    }
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let mut g = Matrix::identity(n);
    for p in 0..n / 2 {
        let (i, j) = (2 * p, 2 * p + 1);
        g[(i, i)] = c;
        g[(i, j)] = -s;
        g[(j, i)] = s;
        g[(j, j)] = c;
    }
    let qg = crate::linalg::matmul(&q, &g).expect("square");
    crate::linalg::matmul(&qg, &q.transpose()).expect("square")
}

/// Gram-Schmidt (two passes) on a Gaussian matrix.
fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for r in &rows {
                let d = dot(&v, r);
                for (x, y) in v.iter_mut().zip(r) {
                    *x -= d * y;
                }
            }
        }
        let norm = libm::sqrt(dot(&v, &v));
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_rows(&rows).expect("square rows")
}

/// Draws exactly `per_class` samples of every class from `samples`.
pub fn balanced_subset(samples: &Samples, per_class: usize, seed: u64) -> Result<Samples> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in samples.labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let deficient: Vec<String> = (0..samples.num_classes)
        .filter_map(|c| {
            let have = by_class.get(&c).map_or(0, Vec::len);
            (have < per_class).then(|| format!("class {c} has {have}"))
        })
        .collect();
    if !deficient.is_empty() {
        return Err(Error::Precondition(format!("need {per_class} samples per class: {}", deficient.join(", "))));
    }
    let mut rng = rng_from_seed(seed);
    let mut chosen = Vec::with_capacity(per_class * samples.num_classes);
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..per_class]);
    }
    chosen.shuffle(&mut rng);
    Ok(samples.select(&chosen))
}

/// Class-balanced evaluation copy of a client dataset. Empty splits stay empty.
pub fn balanced_eval_subset(ds: &ClientDataset, per_class: usize, seed: u64) -> Result<ClientDataset> {
    let pick = |s: &Samples, k: u64| -> Result<Samples> {
        if s.is_empty() {
            Ok(s.clone())
        } else {
            balanced_subset(s, per_class, derive_seed(seed, Stream::EvalSubset, ds.client_id as u64, k))
        }
    };
    Ok(ClientDataset { client_id: ds.client_id, train: pick(&ds.train, 0)?, test: pick(&ds.test, 1)? })
}
