use std::collections::HashSet;

use proptest::prelude::*;

use icl_core::data::{DataConfig, DatasetSize};
use icl_core::experiments::*;
use icl_core::math::RngStream;
use icl_core::models::{ModelConfig, ModelKind};
use icl_core::theory::{order_params_from_logits, LogitDistribution};

fn small(kind: ModelKind, k: DatasetSize, iterations: usize) -> TrainConfig {
    let mut c = TrainConfig::new(
        ModelConfig::new(kind, 8, 16),
        DataConfig::new(8, k, 6),
        iterations,
    );
    c.batch = 16;
    c.eval_interval = 10;
    c.eval_batch = 64;
    c
}

fn synthetic_record(accs: &[f64]) -> RunRecord {
    let rows = accs
        .iter()
        .enumerate()
        .map(|(i, &a)| EvalRow {
            iteration: 10 * i,
            train_loss: 0.7,
            icl_acc: a,
            icl_loss: 0.7,
            iwl_acc: 0.5,
            iwl_loss: 0.7,
            c1: 0.5,
            c2: 0.5,
            c3: 1.0,
            beta: f64::NAN,
            w: f64::NAN,
        })
        .collect();
    RunRecord {
        rows,
        stop: RunStop::Budget,
        iterations: 10 * accs.len(),
    }
}

#[test]
fn config_validation_and_serde() {
    let c = small(ModelKind::Minimal, DatasetSize::Finite(50), 10);
    c.validate().unwrap();
    let mut bad = c.clone();
    bad.model.d = 9;
    assert!(bad.validate().is_err());
    let mut bad = c.clone();
    bad.iterations = 0;
    assert!(bad.validate().is_err());
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), c);
    let minimal =
        r#"{"model":{"kind":"minimal","d":8},"data":{"d":8,"k":"inf","n":6},"iterations":5}"#;
    let parsed: TrainConfig = serde_json::from_str(minimal).unwrap();
    assert_eq!(
        (parsed.lr, parsed.batch, parsed.model.hidden),
        (0.01, 128, 512)
    );
    assert_eq!(parsed.mlp_weight_decay, 1e-10);
    assert!(
        serde_json::from_str::<TrainConfig>(&minimal.replace("\"iterations\"", "\"iters\""))
            .is_err()
    );
}

#[test]
fn training_is_deterministic() {
    for kind in [
        ModelKind::MlpOnly,
        ModelKind::Minimal,
        ModelKind::Transformer,
    ] {
        for k in [DatasetSize::Finite(40), DatasetSize::Infinite] {
            let c = small(kind, k, 25);
            let a = train(&c).unwrap();
            let b = train(&c).unwrap();
            assert_eq!(a.to_csv_bytes().unwrap(), b.to_csv_bytes().unwrap());
            let mut other = c.clone();
            other.seed = 1;
            assert_ne!(
                a.to_csv_bytes().unwrap(),
                train(&other).unwrap().to_csv_bytes().unwrap()
            );
        }
    }
}

#[test]
fn record_grid_and_ranges() {
    let r = train(&small(ModelKind::Minimal, DatasetSize::Finite(40), 25)).unwrap();
    let its: Vec<usize> = r.rows.iter().map(|x| x.iteration).collect();
    assert_eq!(its, vec![0, 10, 20, 25]);
    assert_eq!((r.stop, r.iterations), (RunStop::Budget, 25));
    for row in &r.rows {
        for a in [row.icl_acc, row.iwl_acc] {
            assert!((0.0..=1.0).contains(&a));
        }
        assert!(row.beta.is_finite() && row.w.is_finite());
        assert!(row.c1 > 0.0 && row.c1 < 1.0);
    }
    let inf = train(&small(ModelKind::MlpOnly, DatasetSize::Infinite, 10)).unwrap();
    assert!(inf
        .rows
        .iter()
        .all(|r| r.iwl_acc.is_nan() && r.beta.is_nan() && r.c1.is_finite()));
}

#[test]
fn csv_round_trip_and_column_order() {
    let r = train(&small(ModelKind::Minimal, DatasetSize::Finite(40), 20)).unwrap();
    let bytes = r.to_csv_bytes().unwrap();
    let header = std::str::from_utf8(&bytes)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(
        header,
        "iteration,train_loss,icl_acc,icl_loss,iwl_acc,iwl_loss,c1,c2,c3,beta,w"
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    r.write_csv(&path).unwrap();
    assert_eq!(RunRecord::read_csv(&path).unwrap(), r.rows);
    assert_eq!(r.content_hash().unwrap().len(), 64);
}

#[test]
fn evaluation_leaves_parameters_untouched() {
    let c = small(ModelKind::Transformer, DatasetSize::Finite(40), 10);
    let mut t = Trainer::new(&c).unwrap();
    t.step().unwrap();
    let before = parameter_hash(t.model());
    t.evaluate(0.0).unwrap();
    t.evaluate(0.0).unwrap();
    assert_eq!(parameter_hash(t.model()), before);
    t.step().unwrap();
    assert_ne!(parameter_hash(t.model()), before);
}

#[test]
fn order_params_match_theory_bitwise() {
    let mut c = small(ModelKind::Minimal, DatasetSize::Finite(60), 10);
    c.order_param_items = 1000;
    let mut t = Trainer::new(&c).unwrap();
    for _ in 0..5 {
        t.step().unwrap();
    }
    let row = t.evaluate(0.0).unwrap();
    let ds = t.dataset().unwrap();
    let mut plus = Vec::new();
    for i in (0..ds.len()).filter(|&i| ds.label(i) > 0.0) {
        plus.extend_from_slice(ds.item(i));
    }
    let logits = t.model().item_logits(&plus, plus.len() / 8).unwrap();
    let p = order_params_from_logits(&LogitDistribution::new(logits, 5.0).unwrap());
    assert_eq!(
        (row.c1.to_bits(), row.c2.to_bits(), row.c3.to_bits()),
        (p.c1.to_bits(), p.c2.to_bits(), p.c3.to_bits())
    );
}

#[test]
fn resampled_protocol_never_repeats_items() {
    let mut c = small(ModelKind::Minimal, DatasetSize::Infinite, 1000);
    c.batch = 2;
    c.data.n = 3;
    let mut t = Trainer::new(&c).unwrap();
    let mut seen = HashSet::new();
    for _ in 0..1000 {
        let b = t.training_batch().unwrap();
        for row in 0..b.batch {
            for j in 0..b.n {
                let bits: Vec<u64> = b.context_item(row, j).iter().map(|v| v.to_bits()).collect();
                // The target copies one context item, so only context items are audited.
                assert!(seen.insert(bits), "repeated item");
            }
        }
    }
}

#[test]
fn stop_rules_and_divergence() {
    let mut c = small(ModelKind::Minimal, DatasetSize::Finite(40), 50);
    c.stop = StopRule::IclAcquired { icl: 0.0 };
    let r = train(&c).unwrap();
    assert_eq!(
        (r.stop, r.iterations, r.rows.len()),
        (RunStop::IclAcquired, 0, 1)
    );
    c.stop = StopRule::IclOrMemorized { icl: 1.1, c1: 1.0 };
    assert_eq!(train(&c).unwrap().stop, RunStop::Memorized);
    c.stop = StopRule::Budget;
    c.lr = 1e250;
    let r = train(&c).unwrap();
    assert_eq!(r.stop, RunStop::Divergence);
    assert!(r.iterations < 50);
}

#[test]
fn iwl_metrics_exist_when_k_does_not_exceed_n() {
    let r = train(&small(ModelKind::Minimal, DatasetSize::Finite(4), 10)).unwrap();
    assert!(r
        .rows
        .iter()
        .all(|row| row.iwl_acc.is_finite() && row.iwl_loss.is_finite()));
}

#[test]
fn balanced_protocol_trains() {
    let mut c = small(ModelKind::Minimal, DatasetSize::Finite(40), 10);
    c.data.balanced = true;
    let mut t = Trainer::new(&c).unwrap();
    let b = t.training_batch().unwrap();
    assert!(b.eta().iter().all(|e| *e == 0.0));
    assert_eq!(train(&c).unwrap().stop, RunStop::Budget);
}

#[test]
fn sweep_order_and_parallel_determinism() {
    let base = small(ModelKind::Minimal, DatasetSize::Finite(10), 20);
    let grid = SweepGrid {
        ks: vec![
            DatasetSize::Finite(10),
            DatasetSize::Finite(30),
            DatasetSize::Infinite,
        ],
        ns: vec![6],
        seeds: vec![3, 4],
    };
    let a = sweep(&grid, &base, 1).unwrap();
    let b = sweep(&grid, &base, 3).unwrap();
    assert_eq!(a.cells.len(), 6);
    // NaN IWL columns at K = ∞ rule out `==` on the structs.
    for (x, y) in a.cells.iter().zip(&b.cells) {
        let (rx, ry) = (x.record.as_ref().unwrap(), y.record.as_ref().unwrap());
        assert_eq!(rx.to_csv_bytes().unwrap(), ry.to_csv_bytes().unwrap());
    }
    let coords: Vec<(DatasetSize, u64)> = a.cells.iter().map(|c| (c.k, c.seed)).collect();
    assert_eq!(coords[0], (DatasetSize::Finite(10), 3));
    assert_eq!(coords[5], (DatasetSize::Infinite, 4));
    assert_eq!(a.status(), SweepStatus::Complete);
    assert_eq!(a.to_csv_bytes().unwrap(), b.to_csv_bytes().unwrap());
}

#[test]
fn failed_cells_are_recorded() {
    let base = small(ModelKind::Minimal, DatasetSize::Finite(10), 5);
    let grid = SweepGrid {
        ks: vec![DatasetSize::Finite(10), DatasetSize::Finite(20)],
        ns: vec![6],
        seeds: vec![0, 1],
    };
    let r = sweep_with(&grid, &base, 2, |c| {
        if c.seed == 1 {
            Err(icl_core::Error::Divergence("boom".into()))
        } else {
            Ok(synthetic_record(&[0.5]))
        }
    })
    .unwrap();
    assert_eq!(r.status(), SweepStatus::Partial);
    assert_eq!(r.cells.iter().filter(|c| c.summary().is_none()).count(), 2);
    let csv = String::from_utf8(r.to_csv_bytes().unwrap()).unwrap();
    assert_eq!(csv.matches("failed").count(), 2);
    let all = sweep_with(&grid, &base, 1, |_| {
        Err(icl_core::Error::Config("x".into()))
    })
    .unwrap();
    assert_eq!(all.status(), SweepStatus::Failed);
    let empty = SweepGrid {
        ks: vec![],
        ns: vec![6],
        seeds: vec![0],
    };
    assert!(sweep(&empty, &base, 1).is_err());
}

#[test]
fn cell_summary_uses_detectors() {
    let s = CellSummary::of(&synthetic_record(&[0.5, 0.99, 0.97, 0.85]));
    assert_eq!(
        (s.t_icl, s.transience, s.final_icl_acc),
        (Some(10), Some(30), 0.85)
    );
}

fn logistic(k: f64, k_star: f64, s: f64) -> f64 {
    0.5 + 0.5 / (1.0 + (-(k.ln() - k_star.ln()) / s).exp())
}

#[test]
fn sigmoid_recovers_known_midpoint() {
    let ks: Vec<f64> = (0..12).map(|i| 500.0 * 1.5f64.powi(i)).collect();
    let pts: Vec<(f64, f64)> = ks.iter().map(|&k| (k, logistic(k, 5000.0, 0.6))).collect();
    let fit = fit_sigmoid_k_star(&pts).unwrap();
    assert!(
        (fit.k_star.ln() - 5000f64.ln()).abs() / 5000f64.ln() < 0.02,
        "{fit:?}"
    );
    assert!((fit.k_star / 5000.0 - 1.0).abs() < 1e-3);
    assert!(fit.residual < 1e-6);
    assert!((fit.predict(5000.0) - 0.75).abs() < 1e-4);
}

#[test]
fn sigmoid_on_step_data_brackets_the_step() {
    let pts: Vec<(f64, f64)> = [500.0, 1000.0, 2000.0, 4000.0, 8000.0, 16000.0, 32000.0]
        .iter()
        .map(|&k| (k, if k < 5000.0 { 0.5 } else { 1.0 }))
        .collect();
    let fit = fit_sigmoid_k_star(&pts).unwrap();
    assert!((4000.0..=6000.0).contains(&fit.k_star), "{fit:?}");
}

#[test]
fn sigmoid_rejects_degenerate_data() {
    let flat: Vec<(f64, f64)> = (1..6).map(|i| (i as f64 * 100.0, 0.5)).collect();
    assert!(matches!(
        fit_sigmoid_k_star(&flat),
        Err(icl_core::Error::Fit(_))
    ));
    assert!(fit_sigmoid_k_star(&flat[..3]).is_err());
}

#[test]
fn power_law_fits() {
    let x: Vec<f64> = (1..=10).map(|i| 100.0 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(0.7)).collect();
    let f = fit_power_law(&x, &y).unwrap();
    assert!((f.exponent - 0.7).abs() < 1e-12 && (f.log_prefactor - 3f64.ln()).abs() < 1e-10);
    assert!(f.residual < 1e-12);

    let mut rng = RngStream::new(11, 0);
    let x: Vec<f64> = (0..50)
        .map(|i| 10f64.powf(1.0 + 3.0 * i as f64 / 49.0))
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| v * v * (1.0 + 0.01 * rng.normal()))
        .collect();
    let f = fit_power_law(&x, &y).unwrap();
    assert!((f.exponent - 2.0).abs() < 0.02);

    assert!(matches!(
        fit_power_law(&[1.0, 0.0], &[1.0, 1.0]),
        Err(icl_core::Error::Domain(_))
    ));
    assert!(fit_power_law(&[1.0, 2.0], &[1.0, -1.0]).is_err());
}

#[test]
fn linear_fit_r_squared() {
    let f = fit_linear(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
    assert_eq!((f.slope, f.intercept, f.r_squared), (2.0, 0.0, 1.0));
    assert!(fit_linear(&[1.0, 1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn bimodality_examples() {
    let b = bimodality_stat(&[0.5, 0.5, 1.0, 1.0]);
    assert_eq!(b.fraction_intermediate, 0.0);
    assert_eq!(
        (b.counts[5], b.counts[9], b.counts.iter().sum::<usize>()),
        (2, 2, 4)
    );
    assert_eq!(b.edges.len(), 11);
    assert_eq!(bimodality_stat(&[0.75]).fraction_intermediate, 1.0);
    // The band is open.
    assert_eq!(bimodality_stat(&[0.6, 0.9]).fraction_intermediate, 0.0);
}

#[test]
fn two_proportion_test() {
    let (z, p) = two_proportion_z_test(15, 20, 5, 20).unwrap();
    // Pooled 0.5, se = sqrt(0.25 * 0.1) = 0.1581, z = 0.5 / 0.1581.
    assert!((z - 3.1622776601683795).abs() < 1e-12);
    assert!((p - 7.827e-4).abs() < 1e-6);
    let (_, p) = two_proportion_z_test(5, 20, 15, 20).unwrap();
    assert!(p > 0.99);
    assert_eq!(two_proportion_z_test(0, 10, 0, 10).unwrap().1, 1.0);
    assert!(two_proportion_z_test(3, 2, 0, 1).is_err());
}

#[test]
fn quantiles_and_tails() {
    let v: Vec<f64> = (0..=10).map(|i| i as f64).collect();
    assert_eq!(quantile(&v, 0.5).unwrap(), 5.0);
    assert_eq!(quantile(&v, 0.25).unwrap(), 2.5);
    assert!((tail_ratio(&v).unwrap() - 1.0).abs() < 1e-12);
    let skewed: Vec<f64> = (0..100).map(|i| (i as f64 / 20.0).exp()).collect();
    assert!(tail_ratio(&skewed).unwrap() > 2.0);
    assert!(quantile(&[], 0.5).is_err());
}

#[test]
fn i_k_from_synthetic_record() {
    let rows = (0..200)
        .map(|i| EvalRow {
            iteration: 100 * i,
            c1: 0.5 * (-(i as f64) / 20.0).exp(),
            ..synthetic_record(&[0.5]).rows[0]
        })
        .collect();
    let r = RunRecord {
        rows,
        stop: RunStop::Budget,
        iterations: 19900,
    };
    let ik = i_k_from_record(&r, 100, 0.01).unwrap();
    // 2 ∫ 0.5 e^{-t/20} dt with t in gradient-flow units (one row = 1 unit).
    let v = ik.limit.value().unwrap();
    assert!((v - 20.0).abs() / 20.0 < 1e-3, "{v}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detectors_are_consistent(accs in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let r = synthetic_record(&accs);
        if let Some(t) = detect_t_icl(&r.rows, 0.95) {
            let i = t / 10;
            prop_assert!(accs[i] >= 0.95);
            prop_assert!(accs[..i].iter().all(|a| *a < 0.95));
        } else {
            prop_assert!(accs.iter().all(|a| *a < 0.95));
        }
        if let Some(t) = detect_transience(&r.rows) {
            let i = t / 10;
            prop_assert!(accs[i] <= 0.90);
            prop_assert!(accs[..i].iter().any(|a| *a >= 0.99));
        }
        let p = acquisition_probability(std::slice::from_ref(&r), 0.75).unwrap();
        prop_assert!(p == 0.0 || p == 1.0);
        let b = bimodality_stat(&accs);
        prop_assert_eq!(b.counts.iter().sum::<usize>(), accs.len());
        prop_assert!((0.0..=1.0).contains(&b.fraction_intermediate));
    }

    #[test]
    fn power_law_recovers_any_exponent(nu in -3.0f64..3.0, c in 0.1f64..10.0) {
        let x: Vec<f64> = (1..8).map(|i| i as f64 * 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| c * v.powf(nu)).collect();
        let f = fit_power_law(&x, &y).unwrap();
        prop_assert!((f.exponent - nu).abs() < 1e-9);
    }
}
