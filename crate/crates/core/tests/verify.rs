mod common;

use nestbox_core::harness::Violation;
use nestbox_core::{verify_guarantees, Checkpoint, Scenario};

fn fresh() -> (Checkpoint, nestbox_core::TaskStream, nestbox_core::Dataset) {
    let (_, ck, stream, train) = common::run_blobs(Scenario::IncrementalTask, 3, &common::blob_config());
    (ck, stream, train)
}

#[test]
fn fresh_checkpoint_passes() {
    let (ck, stream, train) = fresh();
    let report = verify_guarantees(&ck, &stream, &train, 200, 3).unwrap();
    assert!(report.passed(), "{:?}", report.violations);
    assert_eq!(report.per_task.len(), 3);
    for t in &report.per_task {
        assert!(t.min_sampled_acc.unwrap() >= t.recorded_guaranteed_acc);
        assert!(t.max_sampled_loss.unwrap() <= t.worst_case_loss);
    }
    let reloaded = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert!(verify_guarantees(&reloaded, &stream, &train, 20, 3).unwrap().passed());
}

#[test]
fn center_moved_outside_is_caught() {
    let (mut ck, stream, train) = fresh();
    let outer = ck.boxes[0].tensors[0].clone();
    let t = &mut ck.boxes[1].tensors[0];
    t.center[[0, 0]] = outer.center[[0, 0]] + outer.radius[[0, 0]] + 0.5;
    let report = verify_guarantees(&ck, &stream, &train, 0, 3).unwrap();
    assert!(report.violations.iter().any(|v| matches!(
        v,
        Violation::Containment {
            outer: Some(0),
            inner: 1,
            ..
        }
    )));
}

#[test]
fn inflated_radii_are_caught() {
    let (mut ck, stream, train) = fresh();
    let last = ck.boxes.len() - 1;
    for t in &mut ck.boxes[last].tensors {
        t.radius.mapv_inplace(|r| 2.0 * r);
    }
    let report = verify_guarantees(&ck, &stream, &train, 50, 3).unwrap();
    assert!(!report.passed());
    assert!(report
        .violations
        .iter()
        .any(|v| matches!(v, Violation::Containment { inner, .. } if *inner == last)));
}

#[test]
fn overstated_guarantee_is_caught() {
    let (mut ck, stream, train) = fresh();
    ck.records[0].guaranteed_acc = 1.5;
    let report = verify_guarantees(&ck, &stream, &train, 5, 3).unwrap();
    assert!(report
        .violations
        .iter()
        .any(|v| matches!(v, Violation::GuaranteeShrank { task: 0, .. })));
    assert!(report
        .violations
        .iter()
        .any(|v| matches!(v, Violation::SampledAccuracy { task: 0, .. })));
}

#[test]
fn zero_samples_keeps_the_structural_checks() {
    let (ck, stream, train) = fresh();
    let report = verify_guarantees(&ck, &stream, &train, 0, 3).unwrap();
    assert!(report.passed());
    assert!(report.per_task.iter().all(|t| t.min_sampled_acc.is_none()));
}

#[test]
fn mismatched_stream_is_rejected() {
    let (ck, _, train) = fresh();
    let (tr, te) = common::blobs(200, 0);
    let other = common::blob_stream(&tr, &te, Scenario::IncrementalDomain, 3);
    assert!(verify_guarantees(&ck, &other, &train, 0, 3).is_err());
}
