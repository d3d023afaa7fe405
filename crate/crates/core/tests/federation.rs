mod oracle;

use fedlens_core::data::{federation_specs, generate_federation_data, ClientDataset, ShiftConfig};
use fedlens_core::fed::{
    aggregate, aggregate_for_clients, resolve_mask, run_federation, Executor, FederationConfig, InitMode, MetricPlan,
    PersonalizationMask, PersonalizationMode, Sequential,
};
use fedlens_core::metrics::{Metric, Phase};
use fedlens_core::nn::{init_params, sgd_epochs, InitScheme, Network, ParamVector, SgdConfig, TensorSlot};
use fedlens_core::rng::client_round_seed;
use fedlens_core::Error;
use proptest::prelude::*;

/// Runs jobs back to front, then restores input order.
struct Reversed;

impl Executor for Reversed {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync,
    {
        let mut out: Vec<(usize, R)> = items.iter().enumerate().rev().map(|(i, t)| (i, f(i, t))).collect();
        out.reverse();
        out.into_iter().map(|(_, r)| r).collect()
    }
}

fn small_federation(clients: usize, seed: u64) -> (Network, Vec<ClientDataset>) {
    let shift = ShiftConfig { rotation_angle: 0.8, scale_spread: 0.5, offset_scale: 1.0, heterogeneous: true };
    let specs = federation_specs(clients, 3, 6, 1.0, 1.0, &shift, seed).unwrap();
    let data = generate_federation_data(&specs, 60, 30, true, seed).unwrap();
    (Network::mlp(&[6, 8, 8, 8], 3).unwrap(), data)
}

fn config(clients: usize, rounds: usize) -> FederationConfig {
    FederationConfig {
        clients,
        local_epochs: 2,
        rounds,
        sgd: SgdConfig { batch_size: 16, ..SgdConfig::default() },
        eval_cadence: 2,
        personalization: PersonalizationMode::None,
        init: InitMode::Random { seed: 5 },
        seed: 42,
    }
}

#[test]
fn single_client_equals_centralized_training() {
    let (net, data) = small_federation(1, 1);
    let cfg = config(1, 5);
    let log = run_federation(&cfg, &net, &data, &MetricPlan::default(), &Sequential).unwrap();
    let mut central = init_params(&net, InitScheme::Uniform, 5).unwrap();
    for round in 1..=cfg.rounds {
        central =
            sgd_epochs(&central, &data[0].train, cfg.local_epochs, &cfg.sgd, client_round_seed(42, 0, round)).unwrap();
    }
    assert_eq!(log.final_models[0].values(), central.params().values());
}

#[test]
fn fully_personalized_clients_train_alone() {
    let (net, data) = small_federation(3, 2);
    let cfg = FederationConfig { personalization: PersonalizationMode::Successive(net.num_layers()), ..config(3, 4) };
    let log = run_federation(&cfg, &net, &data, &MetricPlan::default(), &Sequential).unwrap();
    for (m, ds) in data.iter().enumerate() {
        let mut local = init_params(&net, InitScheme::Uniform, 5).unwrap();
        for round in 1..=cfg.rounds {
            local = sgd_epochs(&local, &ds.train, cfg.local_epochs, &cfg.sgd, client_round_seed(42, m, round)).unwrap();
        }
        assert_eq!(log.final_models[m].values(), local.params().values());
    }
}

#[test]
fn schedule_does_not_change_results() {
    let (net, data) = small_federation(3, 3);
    let cfg = config(3, 4);
    let plan = MetricPlan::default();
    let a = run_federation(&cfg, &net, &data, &plan, &Sequential).unwrap();
    let b = run_federation(&cfg, &net, &data, &plan, &Reversed).unwrap();
    assert_eq!(a, b);
}

#[test]
fn record_counts_follow_the_eval_schedule() {
    let (net, data) = small_federation(4, 4);
    let cfg = config(4, 4);
    let log = run_federation(&cfg, &net, &data, &MetricPlan::default(), &Sequential).unwrap();
    let eval_rounds: Vec<usize> = {
        let mut r: Vec<usize> = log.records.iter().map(|r| r.round).collect();
        r.dedup();
        r
    };
    assert_eq!(eval_rounds, vec![2, 4]);
    for metric in [Metric::SigmaW, Metric::Alignment] {
        for tap in 0..net.num_layers() {
            let n = log
                .records
                .iter()
                .filter(|r| r.metric == metric && r.layer == tap && matches!(r.phase, Phase::Pre | Phase::Post))
                .count();
            assert_eq!(n, 2 * 2 * 4, "{metric:?} at tap {tap}");
        }
    }
    let acc = log.records.iter().filter(|r| r.metric == Metric::TrainAccuracy).count();
    assert_eq!(acc, 2 * 2 * 4);
    let rel = log.records.iter().filter(|r| r.metric == Metric::RelSigmaW).count();
    assert_eq!(rel, 2 * 4 * net.num_layers());
    assert!(log.records.windows(2).all(|w| {
        (w[0].round, w[0].phase.name(), w[0].client, w[0].layer, w[0].metric.name())
            <= (w[1].round, w[1].phase.name(), w[1].client, w[1].layer, w[1].metric.name())
    }));
}

#[test]
fn diverging_client_reports_round_and_client() {
    let (net, data) = small_federation(2, 5);
    let cfg = FederationConfig { sgd: SgdConfig { lr: 1e300, momentum: 0.0, batch_size: 16 }, ..config(2, 3) };
    match run_federation(&cfg, &net, &data, &MetricPlan::default(), &Sequential) {
        Err(Error::Client { round, client, .. }) => {
            assert_eq!(round, 1);
            assert_eq!(client, 0);
        }
        other => panic!("expected a client error, got {other:?}"),
    }
}

#[test]
fn mismatched_client_count_is_rejected() {
    let (net, data) = small_federation(2, 6);
    let cfg = config(3, 2);
    assert!(run_federation(&cfg, &net, &data, &MetricPlan::default(), &Sequential).is_err());
}

fn flat(values: Vec<f64>) -> ParamVector {
    let n = values.len();
    ParamVector::from_parts(vec![TensorSlot { layer: 1, shape: vec![n], offset: 0 }], values).unwrap()
}

fn models_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (1usize..6, 1usize..12).prop_flat_map(|(m, len)| {
        (prop::collection::vec(prop::collection::vec(-1e3f64..1e3, len), m), prop::collection::vec(1usize..500, m))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn aggregation_ignores_client_order((values, counts) in models_strategy(), rot in 0usize..6) {
        let models: Vec<ParamVector> = values.iter().cloned().map(flat).collect();
        let mask = PersonalizationMask::none(values[0].len());
        let a = aggregate(&models, &counts, &mask).unwrap();
        let k = rot % models.len();
        let mut pm = models.clone();
        let mut pc = counts.clone();
        pm.rotate_left(k);
        pc.rotate_left(k);
        pm.reverse();
        pc.reverse();
        let b = aggregate(&pm, &pc, &mask).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn aggregation_stays_in_convex_hull((values, counts) in models_strategy()) {
        let models: Vec<ParamVector> = values.iter().cloned().map(flat).collect();
        let out = aggregate(&models, &counts, &PersonalizationMask::none(values[0].len())).unwrap();
        for (k, &v) in out.values().iter().enumerate() {
            let lo = values.iter().map(|m| m[k]).fold(f64::INFINITY, f64::min);
            let hi = values.iter().map(|m| m[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= v && v <= hi);
        }
    }

    #[test]
    fn equal_counts_give_the_plain_mean((values, _) in models_strategy(), n in 1usize..100) {
        let models: Vec<ParamVector> = values.iter().cloned().map(flat).collect();
        let counts = vec![n; models.len()];
        let out = aggregate(&models, &counts, &PersonalizationMask::none(values[0].len())).unwrap();
        for (k, &v) in out.values().iter().enumerate() {
            let mean = values.iter().map(|m| m[k]).sum::<f64>() / values.len() as f64;
            prop_assert!((v - mean).abs() <= 1e-12 * (1.0 + mean.abs()) + 1e-9);
        }
    }

    #[test]
    fn personalized_layers_never_leave_the_client(seed: u64, k in 0usize..=4, m in 1usize..5) {
        let net = Network::mlp(&[3, 4, 4, 4], 2).unwrap();
        let mask = resolve_mask(&PersonalizationMode::Successive(k), net.params().layout()).unwrap();
        let mut rng = oracle::rng(seed);
        let models: Vec<ParamVector> = (0..m)
            .map(|_| {
                let mut p = net.flatten();
                for v in p.values_mut() {
                    *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
                }
                p
            })
            .collect();
        let counts: Vec<usize> = (1..=m).collect();
        let out = aggregate_for_clients(&models, &counts, &mask).unwrap();
        for (own, got) in models.iter().zip(&out) {
            for (i, personal) in mask.mask.iter().enumerate() {
                if *personal {
                    prop_assert_eq!(own.values()[i], got.values()[i]);
                } else {
                    prop_assert_eq!(out[0].values()[i], got.values()[i]);
                }
            }
        }
    }
}
