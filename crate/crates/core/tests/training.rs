mod common;

use nestbox_core::training::evaluate_box;
use nestbox_core::{Checkpoint, Scenario, TrainConfig};

fn assert_chain(ck: &Checkpoint) {
    let mut outer = &ck.initial;
    for (k, b) in ck.boxes.iter().enumerate() {
        assert!(outer.contains(b).unwrap(), "box {k} escapes its predecessor");
        outer = b;
    }
}

#[test]
fn stopping_rule_honours_its_contract() {
    for thresh in [0.5, 0.9, 0.99] {
        let cfg = TrainConfig {
            acc_thresh: thresh,
            ..common::blob_config()
        };
        let (report, _, _, _) = common::run_blobs(Scenario::IncrementalTask, 3, &cfg);
        for r in &report.task_reports {
            if r.threshold_met {
                let (acc, wc) = (r.window_acc.unwrap(), r.window_wc_acc.unwrap());
                assert!(wc >= thresh * acc, "task {}: {wc} < {thresh} * {acc}", r.task);
            } else {
                assert_eq!(
                    r.radii_epochs, cfg.radii_epochs,
                    "task {} stopped early without the threshold",
                    r.task
                );
            }
        }
    }
}

#[test]
fn zero_threshold_stops_as_soon_as_the_window_fills() {
    let cfg = TrainConfig {
        acc_thresh: 0.0,
        running_window: 3,
        ..common::blob_config()
    };
    let (report, _, _, _) = common::run_blobs(Scenario::IncrementalTask, 3, &cfg);
    for r in &report.task_reports {
        assert!(r.threshold_met);
        assert_eq!(r.radii_steps, 3);
        assert_eq!(r.radii_epochs, 1);
    }
}

#[test]
fn frozen_boxes_stay_nested_over_five_tasks() {
    for scenario in [
        Scenario::IncrementalTask,
        Scenario::IncrementalDomain,
        Scenario::IncrementalClass,
    ] {
        let (report, ck, _, _) = common::run_blobs(scenario, 5, &common::blob_config());
        assert_eq!(ck.boxes.len(), 5);
        assert_chain(&ck);
        for w in report.region_trace.windows(2) {
            assert!(w[1] <= w[0], "region grew at a task boundary: {w:?}");
        }
    }
}

#[test]
fn radii_phases_shrink_the_region() {
    let (report, _, _, _) = common::run_blobs(Scenario::IncrementalDomain, 3, &common::blob_config());
    for r in &report.task_reports {
        assert!(r.radii_steps > 0);
        // Entry 1 is the region right after the radius reset.
        for w in r.region_trace[1..].windows(2) {
            assert!(w[1] < w[0], "task {}: region did not shrink {w:?}", r.task);
        }
    }
}

#[test]
fn guarantees_survive_later_tasks() {
    let (_, ck, stream, train) = common::run_blobs(Scenario::IncrementalTask, 3, &common::blob_config());
    let net = nestbox_core::Network::with_heads(ck.arch.clone(), ck.heads.clone()).unwrap();
    let fin = ck.final_box();
    for rec in &ck.records {
        let eval = evaluate_box(&net, fin, &stream.train_data(rec.task, &train)).unwrap();
        assert!(eval.guaranteed_accuracy >= rec.guaranteed_acc);
        assert!(eval.accuracy >= rec.guaranteed_acc);
    }
    assert!(ck.records.iter().all(|r| r.guaranteed_acc > 0.5));
}

#[test]
fn higher_threshold_keeps_less_room() {
    let run = |thresh: f64| {
        let cfg = TrainConfig {
            acc_thresh: thresh,
            ..common::blob_config()
        };
        common::run_blobs(Scenario::IncrementalDomain, 3, &cfg)
            .1
            .final_box()
            .region_size()
    };
    let (strict, loose) = (run(0.9), run(0.1));
    assert!(strict <= loose, "{strict} > {loose}");
}

#[test]
fn runs_are_reproducible() {
    let cfg = common::blob_config();
    let (r1, a, _, _) = common::run_blobs(Scenario::IncrementalClass, 3, &cfg);
    let (r2, b, _, _) = common::run_blobs(Scenario::IncrementalClass, 3, &cfg);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_eq!(r1, r2);
    let other = TrainConfig { seed: 1, ..cfg };
    let (_, c, _, _) = common::run_blobs(Scenario::IncrementalClass, 3, &other);
    assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
}
