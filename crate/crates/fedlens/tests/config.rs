use fedlens::config::{DataConfig, Init, Personalization};
use fedlens::presets::{base_config, preset};
use fedlens::runner::{build_network, execute};
use fedlens::{CliError, ExperimentConfig, ThreadPool};
use fedlens_core::metrics::Metric;
use fedlens_core::nn::LayerKind;

const MINIMAL: &str = include_str!("../../../configs/minimal.toml");

fn field_of(err: CliError) -> String {
    match err {
        CliError::Config { field, .. } => field,
        other => panic!("expected a config error, got {other}"),
    }
}

fn rejects(text: &str) -> (String, String) {
    let err = ExperimentConfig::from_toml(text).unwrap_err();
    let msg = err.to_string();
    assert_eq!(err.exit_code(), 2);
    (field_of(err), msg)
}

#[test]
fn unknown_keys_are_errors() {
    let (field, msg) = rejects(&MINIMAL.replace("rounds = 4", "rounds = 4\nround = 5"));
    assert_eq!(field, "fed.round");
    assert!(msg.contains("line"), "{msg}");
    let (field, _) = rejects(&format!("{MINIMAL}\n[extra]\nx = 1\n"));
    assert_eq!(field, "extra");
}

#[test]
fn cross_references_are_checked() {
    let cases = [
        (MINIMAL.replace("eval_per_class = 40", "eval_per_class = 40\ntaps = [4]"), "metrics.taps"),
        (MINIMAL.replace("eval_per_class = 40", "eval_per_class = 40\nprobe_taps = [9]"), "metrics.probe_taps"),
        (MINIMAL.replace("eval_per_class = 40", "eval_per_class = 41"), "metrics.eval_per_class"),
        (MINIMAL.replace("hidden = [32, 32, 32]", "hidden = [32, 16, 32]\nresidual = [2]"), "model.residual"),
        (
            MINIMAL.replace(
                "eval_cadence = 2",
                "eval_cadence = 2\n[fed.personalization]\nmode = \"successive\"\nlayers = 5",
            ),
            "fed.personalization.layers",
        ),
        (
            MINIMAL
                .replace("eval_cadence = 2", "eval_cadence = 2\n[fed.personalization]\nmode = \"skip\"\nlayers = [0]"),
            "fed.personalization.layers",
        ),
        (MINIMAL.replace("momentum = 0.5", "momentum = 1.5"), "fed.momentum"),
        (MINIMAL.replace("scale_spread = 0.5", "scale_spread = 1.0"), "data.scale_spread"),
        (MINIMAL.replace("seed = 7", "seed = 7\nscenario = \"finetune\""), "metrics.finetune"),
    ];
    for (text, want) in cases {
        assert_eq!(rejects(&text).0, want);
    }
}

#[test]
fn optional_sections_take_defaults() {
    let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
    assert_eq!(cfg.fed.personalization, Personalization::None);
    assert_eq!(cfg.fed.init, Init::Random);
    assert!(cfg.metrics.variance && cfg.metrics.alignment && !cfg.metrics.probe);
    match &cfg.data {
        DataConfig::Synthetic(s) => assert!(s.balanced && s.heterogeneous),
        DataConfig::Idx(_) => panic!("synthetic expected"),
    }
}

#[test]
fn residual_layers_become_blocks() {
    let mut cfg = base_config(0);
    cfg.model.residual = vec![2, 4];
    let net = build_network(&cfg, 20).unwrap();
    let kinds: Vec<LayerKind> = net.layers().iter().map(|l| l.kind).collect();
    assert_eq!(kinds[1], LayerKind::Residual { inner_layers: 2 });
    assert_eq!(kinds[3], LayerKind::Residual { inner_layers: 2 });
    assert_eq!(kinds[5], LayerKind::Linear);
    assert_eq!(net.num_layers(), 6);
}

#[test]
fn idx_clients_load_relative_to_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let images = |n: u32| {
        let mut out = vec![0u8, 0, 8, 3];
        for d in [n, 2, 2] {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend((0..n * 4).map(|i| (i * 37 % 251) as u8));
        out
    };
    let labels = |n: u32| {
        let mut out = vec![0u8, 0, 8, 1];
        out.extend_from_slice(&n.to_be_bytes());
        out.extend((0..n).map(|i| (i % 3) as u8));
        out
    };
    std::fs::create_dir(tmp.path().join("data")).unwrap();
    std::fs::write(tmp.path().join("data/img"), images(30)).unwrap();
    std::fs::write(tmp.path().join("data/lab"), labels(30)).unwrap();
    let client = "[[data.clients]]\ntrain_images = \"data/img\"\ntrain_labels = \"data/lab\"\ntest_images = \"data/img\"\ntest_labels = \"data/lab\"\n";
    let text = format!(
        "name = \"idx\"\nseed = 1\n[data]\nkind = \"idx\"\nclasses = 3\n{client}{client}\n[model]\nhidden = [6]\n[fed]\nlocal_epochs = 1\nrounds = 2\nlr = 0.05\nmomentum = 0.0\nbatch_size = 8\n"
    );
    let path = tmp.path().join("idx.toml");
    std::fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let (prepared, log) = execute(&cfg, &ThreadPool::new(2)).unwrap();
    assert_eq!(prepared.data.len(), 2);
    assert_eq!(prepared.template.input_dim(), 4);
    assert_eq!(log.records.iter().filter(|r| r.metric == Metric::TestAccuracy).count(), 2 * 2 * 2);
}

#[test]
fn pretrained_preset_starts_from_trained_weights() {
    let mut cfg = preset("pretrained", 0).unwrap().variants.remove(0);
    cfg.fed.rounds = 1;
    let prepared = fedlens::runner::prepare(&cfg).unwrap();
    let fedlens_core::fed::InitMode::Pretrained(p) = &prepared.fed.init else {
        panic!("pretrained init expected");
    };
    let random = fedlens_core::nn::init_params(&prepared.template, fedlens_core::nn::InitScheme::Uniform, 0).unwrap();
    assert_ne!(p, random.params());
}
