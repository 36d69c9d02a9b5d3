mod common;

use common::tiny_config;
use mtda::harness::{train, ExperimentConfig, Toggles};
use mtda::scenegen::build_benchmark;
use mtda::segnet::save_checkpoint;

fn checkpoint_bytes(config: &ExperimentConfig) -> (Vec<u8>, String) {
    let bench = build_benchmark(&config.generator).unwrap();
    let run = train(config, &bench).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.odbc");
    save_checkpoint(&p, &run.checkpoint).unwrap();
    (std::fs::read(p).unwrap(), run.log.to_jsonl().unwrap())
}

#[test]
fn identical_config_and_seed_reproduce_bit_for_bit() {
    let mut c = tiny_config(2);
    c.eval_on_epoch_end = true;
    let (a_ckpt, a_log) = checkpoint_bytes(&c);
    let (b_ckpt, b_log) = checkpoint_bytes(&c);
    assert_eq!(a_ckpt, b_ckpt);
    assert_eq!(a_log, b_log);
    c.seed = 1;
    assert_ne!(checkpoint_bytes(&c).0, a_ckpt);
}

#[test]
fn target_training_labels_are_never_read() {
    for toggles in [Toggles::FULL, Toggles::BASELINE] {
        let mut c = tiny_config(2);
        c.toggles = Toggles {
            l_unsup: true,
            conf_weighting: true,
            ..toggles
        };
        let bench = build_benchmark(&c.generator).unwrap();
        assert!(bench.targets.iter().all(|t| t.train.has_labels()));
        train(&c, &bench).unwrap();
        for t in &bench.targets {
            assert_eq!(t.train.label_reads(), 0, "{}", t.domain_id());
        }
        assert!(bench.source.train.label_reads() > 0);
    }
}

#[test]
fn three_cycles_over_three_targets() {
    let c = tiny_config(3);
    let bench = build_benchmark(&c.generator).unwrap();
    let ids = bench.target_ids();
    let log = train(&c, &bench).unwrap().log;

    // Two iterations per epoch, nine epochs.
    let per_iter = log.iteration_domains();
    let expected: Vec<&str> = (0..9).flat_map(|e| [ids[e % 3].as_str(); 2]).collect();
    assert_eq!(per_iter, expected);

    let switches = log.switches();
    assert_eq!(switches.len(), 9);
    for (e, (from, to)) in switches.iter().enumerate() {
        assert_eq!(from, &ids[e % 3]);
        assert_eq!(to, &ids[(e + 1) % 3]);
    }
    assert_eq!(log.fisher_count(), switches.len());
}

#[test]
fn without_af_ema_no_fisher_is_computed() {
    let mut c = tiny_config(3);
    c.toggles.af_ema = false;
    let bench = build_benchmark(&c.generator).unwrap();
    let log = train(&c, &bench).unwrap().log;
    assert_eq!(log.fisher_count(), 0);
    assert_eq!(log.switches().len(), 9);
}

#[test]
fn data_combination_pools_every_target() {
    let mut c = tiny_config(2);
    c.toggles = Toggles::BASELINE;
    let bench = build_benchmark(&c.generator).unwrap();
    let log = train(&c, &bench).unwrap().log;
    assert!(log.switches().is_empty());
    assert!(log.iteration_domains().iter().all(|&d| d == "merged"));
}

#[test]
fn custom_order_is_followed() {
    let mut c = tiny_config(3);
    let bench = build_benchmark(&c.generator).unwrap();
    let mut order = bench.target_ids();
    order.reverse();
    c.domain_order = Some(order.clone());
    let log = train(&c, &bench).unwrap().log;
    let first_of_each_epoch: Vec<&str> = log.iteration_domains().iter().step_by(2).take(3).copied().collect();
    assert_eq!(first_of_each_epoch, order.iter().map(String::as_str).collect::<Vec<_>>());
}

#[test]
fn diverging_loss_is_reported_as_non_finite() {
    let mut c = tiny_config(2);
    c.optim.base_lr = 1e200;
    c.optim.max_iter = 6;
    let bench = build_benchmark(&c.generator).unwrap();
    let err = train(&c, &bench).err().expect("training should diverge");
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn warm_up_is_logged_before_adaptation() {
    let mut c = tiny_config(2);
    c.warmup_iters = 3;
    let bench = build_benchmark(&c.generator).unwrap();
    let log = train(&c, &bench).unwrap().log;
    assert!(matches!(
        log.events()[0],
        mtda::harness::Event::WarmupEnd { iterations: 3, .. }
    ));
}
