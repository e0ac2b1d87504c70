use uwb_relloc::harness::{kinematic_consistency, EstimatorKind, EstimatorSet, Harness};
use uwb_relloc::report::compare_report;
use uwb_relloc::report::Metric;

fn small_harness() -> Harness {
    let mut h = Harness::default();
    for s in &mut h.scenarios {
        s.variants.truncate(3);
    }
    h
}

#[test]
fn canonical_order_is_independent_of_thread_count() {
    let h = small_harness();
    let a = h
        .run_batch(&[1, 4, 10], EstimatorSet::default(), 8, Some(1), false)
        .unwrap();
    let b = h
        .run_batch(&[10, 1, 4], EstimatorSet::default(), 8, Some(3), false)
        .unwrap();
    assert_eq!(a.records, b.records);
    let keys: Vec<_> = a.records.iter().map(|r| r.sort_key()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(a.records.len(), 14 * 3 * (2 + 3));
}

#[test]
fn case2_rows_do_not_depend_on_divisors() {
    let h = small_harness();
    let a = h
        .run_batch(&[1], EstimatorSet::default(), 3, None, false)
        .unwrap();
    let b = h
        .run_batch(&[2, 7], EstimatorSet::default(), 3, None, false)
        .unwrap();
    let pick = |recs: &[uwb_relloc::harness::RunRecord], k| {
        recs.iter()
            .filter(|r| r.estimator == k)
            .cloned()
            .collect::<Vec<_>>()
    };
    assert_eq!(
        pick(&a.records, EstimatorKind::Case2),
        pick(&b.records, EstimatorKind::Case2)
    );
    assert_eq!(
        pick(&a.records, EstimatorKind::Baseline),
        pick(&b.records, EstimatorKind::Baseline)
    );

    let ra = compare_report(&a.records).unwrap();
    let rb = compare_report(&b.records).unwrap();
    for m in Metric::ALL {
        assert_eq!(
            ra.wilcoxon_of(EstimatorKind::Case2, m, None),
            rb.wilcoxon_of(EstimatorKind::Case2, m, None)
        );
    }
}

#[test]
fn every_scenario_agrees_with_relative_dynamics() {
    let h = Harness::default();
    for s in &h.scenarios {
        for v in [&s.variants[0], s.variants.last().unwrap()] {
            let (th, r) = kinematic_consistency(v, s.duration_s, &h.sim).unwrap();
            assert!(
                th < 0.5 && r < 5e-3,
                "{} @ {}: {th} deg, {r} m",
                s.id,
                v.sweep_value
            );
        }
    }
}

#[test]
fn records_echo_their_configuration() {
    let h = small_harness();
    let b = h
        .run_batch(&[3], EstimatorSet::default(), 77, None, false)
        .unwrap();
    for r in &b.records {
        assert_eq!(r.master_seed, 77);
        assert_eq!(r.ticks, 560);
        assert_eq!(r.divisor.is_some(), r.estimator == EstimatorKind::Case1);
        assert!(r.rmse_angle_deg >= 0.0 && r.rmse_distance_m >= 0.0);
        assert!(r.min_range_m > 0.0);
        let s = &h.scenarios[r.scenario_index];
        assert_eq!(s.id, r.scenario);
        assert_eq!(s.variants[r.sweep_index].sweep_value, r.sweep_value);
    }
}
