mod common;

use std::path::Path;

use common::blobs_config;
use probmask::data::batches;
use probmask::io;
use probmask::mask::Layout;
use probmask::trainer::{self, train_observed, train_supermask};
use probmask::{Constraint, Error, TrainMode};

fn setup(seed: u64) -> (probmask::NetSpec, probmask::TrainConfig, probmask::data::Dataset, probmask::data::Dataset) {
    let cfg = blobs_config(seed);
    let spec = cfg.model.build().unwrap();
    let (train, eval) = cfg.dataset.load(&spec, Path::new(".")).unwrap();
    (spec, cfg.train_config().unwrap(), train, eval.unwrap())
}

#[test]
fn probabilities_stay_feasible_after_every_iteration() {
    for constraint in [Constraint::Global, Constraint::Layerwise] {
        let (spec, mut config, train, eval) = setup(0);
        config.constraint = constraint;
        let mut budgets = Vec::new();
        let mut iterations = 0;
        train_observed(&spec, &config, &train, Some(&eval), |ev| {
            assert!(ev.probs.iter().all(|v| (0.0..=1.0).contains(&v)));
            assert!(ev.probs.sum() <= ev.budget + 1e-6, "{} > {}", ev.probs.sum(), ev.budget);
            assert!(ev.loss.is_finite());
            budgets.push(ev.budget);
            iterations += 1;
        })
        .unwrap();
        assert_eq!(iterations, 12 * train.len().div_ceil(32));
        assert!(budgets.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn runs_are_deterministic() {
    let (spec, config, train, eval) = setup(3);
    let a = trainer::train(&spec, &config, &train, Some(&eval)).unwrap();
    let b = trainer::train(&spec, &config, &train, Some(&eval)).unwrap();
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(a.state, b.state);
    assert_eq!(a.mask, b.mask);
    let layout = Layout::from_spec(&spec);
    assert_eq!(
        io::encode_mask(&layout, &a.mask).unwrap(),
        io::encode_mask(&layout, &b.mask).unwrap()
    );
}

#[test]
fn seeds_change_the_outcome() {
    let (spec, config, train, eval) = setup(0);
    let a = trainer::train(&spec, &config, &train, Some(&eval)).unwrap();
    let other = probmask::TrainConfig { seed: 1, ..config };
    let b = trainer::train(&spec, &other, &train, Some(&eval)).unwrap();
    assert_ne!(a.state, b.state);
}

#[test]
fn multi_sample_gradients_are_deterministic() {
    let (spec, mut config, train, eval) = setup(2);
    config.grad_samples = 3;
    config.schedule.epochs = 4;
    config.schedule.t1 = 1;
    config.schedule.t2 = 3;
    let a = trainer::train(&spec, &config, &train, Some(&eval)).unwrap();
    let b = trainer::train(&spec, &config, &train, Some(&eval)).unwrap();
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(a.probs, b.probs);
}

#[test]
fn supermask_never_touches_weights() {
    let (spec, config, train, eval) = setup(1);
    let out = train_supermask(&spec, &config, &train, Some(&eval)).unwrap();
    assert_eq!(out.state, out.init);
    let bits = |s: &probmask::NetState| -> Vec<u64> {
        s.params.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&out.state), bits(&probmask::net::kaiming_normal_init(&spec, 1).unwrap()));
    let mut observed = 0;
    let cfg = probmask::TrainConfig {
        mode: TrainMode::Supermask,
        ..config
    };
    train_observed(&spec, &cfg, &train, Some(&eval), |ev| {
        assert_eq!(ev.state, &out.init);
        observed += 1;
    })
    .unwrap();
    assert!(observed > 0);
}

#[test]
fn final_mask_meets_budget_under_rounding() {
    let (spec, mut config, train, eval) = setup(4);
    config.finalize = probmask::FinalizeMode::Round;
    let out = trainer::train(&spec, &config, &train, Some(&eval)).unwrap();
    assert_eq!(out.report.records.len(), 12);
    let last = out.report.last().unwrap();
    assert_eq!(last.k, 0.3);
    assert_eq!(last.tau, 0.03);
    assert!(out.mask.values.iter().flatten().all(|&m| m == 0.0 || m == 1.0));
    assert!(last.accuracy > 0.5, "{}", last.accuracy);
}

#[test]
fn divergence_is_reported() {
    let (spec, mut config, train, eval) = setup(0);
    config.lr_w = 1e300;
    match trainer::train(&spec, &config, &train, Some(&eval)) {
        Err(Error::Diverged(dump)) => assert!(!dump.loss.is_finite()),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.report)),
    }
}

#[test]
fn batches_cover_every_index_once() {
    for (n, b) in [(100, 32), (64, 64), (7, 10)] {
        for epoch in 0..3 {
            let mut seen: Vec<usize> = batches(n, b, 9, epoch).concat();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }
    assert_ne!(batches(100, 32, 9, 0), batches(100, 32, 9, 1));
}

#[test]
fn all_ones_mask_matches_dense_accuracy() {
    let (spec, _, _, eval) = setup(0);
    let state = probmask::net::kaiming_normal_init(&spec, 6).unwrap();
    let ones = probmask::mask::MaskSample::filled(&spec, 1.0, probmask::mask::MaskKind::Hard);
    let acc = trainer::evaluate(&spec, &state, &ones, &eval).unwrap();
    let logits = probmask::net::forward_dense(&spec, &state, &eval.inputs).unwrap();
    let correct = (0..eval.len())
        .filter(|&i| {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == eval.labels[i]
        })
        .count();
    assert_eq!(acc, correct as f64 / eval.len() as f64);
}

#[test]
fn supermask_probabilities_drift_toward_binary() {
    let mut cfg = common::reference_config();
    cfg.train.k_final = 0.5;
    cfg.train.mode = TrainMode::Supermask;
    cfg.train.eval_every = 40;
    let spec = cfg.model.build().unwrap();
    let (train, eval) = cfg.dataset.load(&spec, Path::new(".")).unwrap();
    let out = trainer::train(&spec, &cfg.train_config().unwrap(), &train, eval.as_ref()).unwrap();
    let frac: Vec<f64> = out.report.records.iter().map(|r| r.frac_binary).collect();
    // Probabilities leave the binary band while the budget ramps down, then
    // climb back toward {0, 1} every epoch as the temperature anneals.
    let low = frac.iter().copied().fold(f64::INFINITY, f64::min);
    let low_at = frac.iter().position(|&f| f == low).unwrap();
    assert!(low_at < 20, "{frac:?}");
    assert!(frac[low_at..].windows(2).all(|w| w[1] > w[0]), "{frac:?}");
}
