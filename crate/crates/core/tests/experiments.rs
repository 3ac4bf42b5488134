use std::fs;

use setrl::experiments::dataset::*;
use setrl::experiments::eval::*;
use setrl::experiments::report::*;
use setrl::qlearning::Transition;
use setrl_highway::{Action, DynamicFeature, Observation, StaticFeature};

fn obs(n: usize) -> Observation {
    Observation {
        dynamic: (0..n)
            .map(|i| DynamicFeature { dr: 0.1 * i as f32 - 0.3, dv: -0.05 * i as f32, dl: (i % 3) as i8 - 1 })
            .collect(),
        static_features: StaticFeature { v_ego: 21.5, left_available: true, right_available: false },
    }
}

fn transition(n: usize, m: usize) -> Transition {
    Transition { state: obs(n), action: Action::Left, reward: 0.987, next_state: obs(m) }
}

fn small_collect() -> CollectConfig {
    CollectConfig { samples: 300, seed: 7, ..Default::default() }
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let mut data = Vec::new();
    collect_transitions(&small_collect(), |t| {
        data.push(t);
        Ok(())
    })
    .unwrap();
    assert_eq!(data.len(), 300);
    let mut w = DatasetWriter::create(&path, small_collect().hash()).unwrap();
    for t in &data {
        w.append(t).unwrap();
    }
    assert_eq!(w.finish().unwrap(), 300);
    let (header, back) = read_dataset(&path).unwrap();
    assert_eq!(header.count, 300);
    assert_eq!(header.config_hash, small_collect().hash());
    assert_eq!(back, data);
    for (a, b) in back.iter().zip(&data) {
        assert_eq!(a.reward.to_bits(), b.reward.to_bits());
    }
}

#[test]
fn unfinished_writer_leaves_partial_marker() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let mut w = DatasetWriter::create(&path, [0; 32]).unwrap();
    w.append(&transition(2, 3)).unwrap();
    drop(w);
    assert!(!path.exists());
    assert!(dir.path().join("d.bin.partial").exists());
}

#[test]
fn collection_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    collect_dataset(&small_collect(), &a).unwrap();
    collect_dataset(&small_collect(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn filter_keeps_small_scenes_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.bin");
    let once = dir.path().join("once.bin");
    let twice = dir.path().join("twice.bin");
    let data = [transition(7, 2), transition(0, 0), transition(6, 6), transition(3, 7), transition(6, 1)];
    let mut w = DatasetWriter::create(&input, [1; 32]).unwrap();
    for t in &data {
        w.append(t).unwrap();
    }
    w.finish().unwrap();
    assert_eq!(filter_dataset_max6(&input, &once).unwrap(), (5, 3));
    let (_, kept) = read_dataset(&once).unwrap();
    assert_eq!(kept, vec![data[1].clone(), data[2].clone(), data[4].clone()]);
    assert_eq!(filter_dataset_max6(&once, &twice).unwrap(), (3, 3));
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());
}

#[test]
fn filter_of_empty_file_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.bin");
    let out = dir.path().join("out.bin");
    DatasetWriter::create(&input, [0; 32]).unwrap().finish().unwrap();
    assert_eq!(filter_dataset_max6(&input, &out).unwrap(), (0, 0));
    assert!(read_dataset(&out).unwrap().1.is_empty());
}

#[test]
fn truncated_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    let mut w = DatasetWriter::create(&path, [0; 32]).unwrap();
    w.append(&transition(4, 4)).unwrap();
    w.append(&transition(4, 4)).unwrap();
    w.finish().unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(read_dataset(&path).is_err());
}

#[test]
fn empty_report_is_header_only() {
    let mut out = Vec::new();
    write_report(&EvalReport::new(Vec::new()), &mut out).unwrap();
    assert_eq!(String::from_utf8(out.clone()).unwrap().trim_end(), REPORT_HEADER.join(","));
    assert!(read_report(out.as_slice()).unwrap().is_empty());
}

#[test]
fn report_round_trip_and_aggregates() {
    let sweep = EvalSweep::default().with_counts(&[30, 35]);
    let report = run_baseline(BaselineKind::RuleBased, &sweep).unwrap();
    assert_eq!(report.len(), 40);
    let mut out = Vec::new();
    write_report(&report, &mut out).unwrap();
    let back = read_report(out.as_slice()).unwrap();
    assert_eq!(back, report);
    for agg in report.aggregates() {
        let values: Vec<f64> = report.for_vehicles(agg.vehicles).map(|r| r.episode_return).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!((agg.mean - mean).abs() <= 1e-9);
        assert_eq!(agg.episodes, 20);
    }
}

#[test]
fn standard_sweep_has_260_scenarios() {
    let sweep = EvalSweep::default();
    let scenarios = sweep.scenarios();
    assert_eq!(scenarios.len(), 260);
    let mut counts: Vec<usize> = scenarios.iter().map(|s| s.vehicles).collect();
    counts.dedup();
    assert_eq!(counts, (0..13).map(|i| 30 + 5 * i).collect::<Vec<_>>());
}

#[test]
fn keep_lane_baseline_never_changes_lane_and_is_deterministic() {
    let sweep = EvalSweep::default().with_counts(&[45]);
    let a = run_baseline(BaselineKind::NoLaneChange, &sweep).unwrap();
    let b = run_baseline(BaselineKind::NoLaneChange, &sweep).unwrap();
    assert_eq!(a, b);
    assert!(a.rows().iter().all(|r| r.lane_changes == 0 && r.lane_change_requests == 0));
}

#[test]
fn zero_noise_equals_noiseless() {
    let sweep = EvalSweep::default().with_counts(&[30]);
    let clean = evaluate(&RuleBasedAgent, &sweep, &NoiseSpec::default()).unwrap();
    let zero = evaluate(&RuleBasedAgent, &sweep, &NoiseSpec::new(0.0, 0.0).unwrap()).unwrap();
    assert_eq!(clean, zero);
    assert!(NoiseSpec::new(-0.1, 0.0).is_err());
}

#[test]
fn noise_leaves_lanes_and_statics_alone() {
    let noise = NoiseSpec::new(0.05, 0.05).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let clean = obs(8);
    let mut noisy = clean.clone();
    noise.apply(&mut noisy, &mut rng);
    assert_eq!(noisy.static_features, clean.static_features);
    for (a, b) in noisy.dynamic.iter().zip(&clean.dynamic) {
        assert_eq!(a.dl, b.dl);
    }
    assert_ne!(noisy.dynamic, clean.dynamic);
}

#[test]
fn rule_based_beats_keep_lane_in_sparse_traffic() {
    let sweep = EvalSweep::default().with_counts(&[30]);
    let keep = run_baseline(BaselineKind::NoLaneChange, &sweep).unwrap();
    let rule = run_baseline(BaselineKind::RuleBased, &sweep).unwrap();
    assert!(rule.mean_return() >= keep.mean_return());
}
