//! Federated averaging with optional parameter personalization.

mod run;

pub use run::{
    evaluation_sets, finetune_classifier, pretrain, run_federation, ExperimentLog, FinetuneConfig, MetricPlan,
    RoundState,
};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{ParamVector, SgdConfig, TensorSlot};

/// Which layers stay on the client instead of being averaged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PersonalizationMode {
    None,
    /// Final linear layer only (FedPer).
    ClassifierOnly,
    /// Layers `1..=k` from the input.
    Successive(usize),
    /// Exactly the listed layer ids.
    Skip(Vec<usize>),
}

/// Per-parameter flags; `true` means personalized (excluded from averaging).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonalizationMask {
    pub mode: PersonalizationMode,
    /// Personalized layer ids, ascending.
    pub layers: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PersonalizationMask {
    pub fn none(len: usize) -> Self {
        Self { mode: PersonalizationMode::None, layers: Vec::new(), mask: vec![false; len] }
    }

    pub fn is_personalized(&self, index: usize) -> bool {
        self.mask[index]
    }

    pub fn any(&self) -> bool {
        !self.layers.is_empty()
    }
}

/// Expands a mode into a parameter mask for `layout`.
pub fn resolve_mask(mode: &PersonalizationMode, layout: &[TensorSlot]) -> Result<PersonalizationMask> {
    let num_layers = layout.last().map_or(0, |s| s.layer);
    let len = layout.last().map_or(0, |s| s.offset + s.numel());
    let mut layers: Vec<usize> = match mode {
        PersonalizationMode::None => Vec::new(),
        PersonalizationMode::ClassifierOnly => vec![num_layers],
        PersonalizationMode::Successive(k) => {
            if *k > num_layers {
                return Err(Error::Config(format!("successive({k}) exceeds the {num_layers} layers of the model")));
            }
            (1..=*k).collect()
        }
        PersonalizationMode::Skip(ids) => {
            if let Some(&bad) = ids.iter().find(|&&l| l == 0 || l > num_layers) {
                return Err(Error::Config(format!("personalized layer {bad} out of range 1..={num_layers}")));
            }
            ids.clone()
        }
    };
    layers.sort_unstable();
    layers.dedup();
    let mut mask = vec![false; len];
    for slot in layout.iter().filter(|s| layers.contains(&s.layer)) {
        mask[slot.offset..slot.offset + slot.numel()].fill(true);
    }
    Ok(PersonalizationMask { mode: mode.clone(), layers, mask })
}

/// Sample-count weighted average of the shared coordinates.
///
/// Personalized coordinates are zero in the result; [`splice`] puts each
/// client's own values back. Per coordinate the weighted terms are summed in
/// sorted order and clamped to the inputs' range, which makes the result
/// independent of client order and keeps it inside the convex hull.
pub fn aggregate(models: &[ParamVector], sample_counts: &[usize], mask: &PersonalizationMask) -> Result<ParamVector> {
    let first = models.first().ok_or_else(|| Error::Precondition("no models to aggregate".into()))?;
    if sample_counts.len() != models.len() {
        return Err(Error::Shape(format!("{} sample counts for {} models", sample_counts.len(), models.len())));
    }
    if sample_counts.contains(&0) {
        return Err(Error::Precondition("every client needs at least one sample".into()));
    }
    if let Some(i) = models.iter().position(|m| !m.same_layout(first)) {
        return Err(Error::Shape(format!("model {i} has a different parameter layout")));
    }
    if mask.mask.len() != first.len() {
        return Err(Error::Shape("personalization mask does not match the layout".into()));
    }
    let total: usize = sample_counts.iter().sum();
    let weights: Vec<f64> = sample_counts.iter().map(|&n| n as f64 / total as f64).collect();
    let mut out = first.filled(0.0);
    let mut terms = vec![0.0; models.len()];
    for (k, v) in out.values_mut().iter_mut().enumerate() {
        if mask.mask[k] {
            continue;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for ((t, m), w) in terms.iter_mut().zip(models).zip(&weights) {
            let x = m.values()[k];
            lo = lo.min(x);
            hi = hi.max(x);
            *t = w * x;
        }
        terms.sort_unstable_by(f64::total_cmp);
        *v = terms.iter().sum::<f64>().clamp(lo, hi);
    }
    Ok(out)
}

/// Shared coordinates from `shared`, personalized ones from `own`.
pub fn splice(shared: &ParamVector, own: &ParamVector, mask: &PersonalizationMask) -> ParamVector {
    let mut out = shared.clone();
    for ((v, &o), &personal) in out.values_mut().iter_mut().zip(own.values()).zip(&mask.mask) {
        if personal {
            *v = o;
        }
    }
    out
}

/// [`aggregate`] followed by [`splice`] for every client.
pub fn aggregate_for_clients(
    models: &[ParamVector],
    sample_counts: &[usize],
    mask: &PersonalizationMask,
) -> Result<Vec<ParamVector>> {
    let shared = aggregate(models, sample_counts, mask)?;
    Ok(models.iter().map(|m| splice(&shared, m, mask)).collect())
}

/// Where the initial global model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    Random { seed: u64 },
    Pretrained(ParamVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub clients: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub sgd: SgdConfig,
    pub eval_cadence: usize,
    pub personalization: PersonalizationMode,
    pub init: InitMode,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 4,
            local_epochs: 10,
            rounds: 50,
            sgd: SgdConfig::default(),
            eval_cadence: 2,
            personalization: PersonalizationMode::None,
            init: InitMode::Random { seed: 0 },
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("clients must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.eval_cadence == 0 {
            return Err(Error::Config("eval_cadence must be >= 1".into()));
        }
        if self.sgd.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.sgd.lr.is_finite() && self.sgd.momentum.is_finite()) {
            return Err(Error::Config("lr and momentum must be finite".into()));
        }
        Ok(())
    }

    pub fn is_eval_round(&self, round: usize) -> bool {
        round % self.eval_cadence == 0
    }
}

/// Runs a batch of independent jobs, possibly in parallel. Results come back
/// in input order.
pub trait Executor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync,
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;

    fn layout5() -> Vec<TensorSlot> {
        Network::mlp(&[3, 4, 4, 4, 4], 2).unwrap().params().layout().to_vec()
    }

    fn pv(values: &[f64]) -> ParamVector {
        let layout = alloc::vec![TensorSlot { layer: 1, shape: alloc::vec![values.len()], offset: 0 }];
        ParamVector::from_parts(layout, values.to_vec()).unwrap()
    }

    #[test]
    fn weighted_scalar() {
        let mask = PersonalizationMask::none(1);
        let out = aggregate(&[pv(&[0.0]), pv(&[4.0])], &[100, 300], &mask).unwrap();
        assert_eq!(out.values(), &[3.0]);
    }

    #[test]
    fn identical_models_unchanged() {
        let m = pv(&[0.1, -7.3, 1e-9]);
        let mask = PersonalizationMask::none(3);
        let out = aggregate(&[m.clone(), m.clone(), m.clone()], &[3, 7, 11], &mask).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn masked_values_come_back_per_client() {
        let layout = layout5();
        let net = Network::mlp(&[3, 4, 4, 4, 4], 2).unwrap();
        let a = net.params().filled(1.0);
        let b = net.params().filled(3.0);
        let mask = resolve_mask(&PersonalizationMode::ClassifierOnly, &layout).unwrap();
        let out = aggregate_for_clients(&[a.clone(), b.clone()], &[1, 1], &mask).unwrap();
        let cls = a.layer_range(5);
        for k in 0..a.len() {
            if cls.contains(&k) {
                assert_eq!(out[0].values()[k], 1.0);
                assert_eq!(out[1].values()[k], 3.0);
            } else {
                assert_eq!(out[0].values()[k], 2.0);
                assert_eq!(out[1].values()[k], 2.0);
            }
        }
    }

    #[test]
    fn errors() {
        let mask = PersonalizationMask::none(1);
        assert!(matches!(aggregate(&[], &[], &mask), Err(Error::Precondition(_))));
        assert!(matches!(aggregate(&[pv(&[1.0])], &[0], &mask), Err(Error::Precondition(_))));
        assert!(matches!(aggregate(&[pv(&[1.0]), pv(&[1.0, 2.0])], &[1, 1], &mask), Err(Error::Shape(_))));
        assert!(matches!(aggregate(&[pv(&[1.0])], &[1, 1], &mask), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_resolution() {
        let layout = layout5();
        let none = resolve_mask(&PersonalizationMode::None, &layout).unwrap();
        assert!(none.mask.iter().all(|&m| !m));
        let s2 = resolve_mask(&PersonalizationMode::Successive(2), &layout).unwrap();
        assert_eq!(s2.layers, alloc::vec![1, 2]);
        let end = layout.iter().find(|s| s.layer == 3).unwrap().offset;
        assert!(s2.mask[..end].iter().all(|&m| m));
        assert!(s2.mask[end..].iter().all(|&m| !m));
        let all = resolve_mask(&PersonalizationMode::Successive(5), &layout).unwrap();
        assert!(all.mask.iter().all(|&m| m));
        let skip = resolve_mask(&PersonalizationMode::Skip(alloc::vec![4, 2]), &layout).unwrap();
        assert_eq!(skip.layers, alloc::vec![2, 4]);
        let cls = resolve_mask(&PersonalizationMode::ClassifierOnly, &layout).unwrap();
        assert_eq!(cls.layers, alloc::vec![5]);
        assert!(matches!(resolve_mask(&PersonalizationMode::Skip(alloc::vec![6]), &layout), Err(Error::Config(_))));
        assert!(matches!(resolve_mask(&PersonalizationMode::Successive(6), &layout), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let ok = FederationConfig::default();
        assert!(ok.validate().is_ok());
        assert!(FederationConfig { clients: 0, ..ok.clone() }.validate().is_err());
        assert!(FederationConfig { rounds: 0, ..ok.clone() }.validate().is_err());
        assert!(FederationConfig { eval_cadence: 0, ..ok }.validate().is_err());
    }
}
