mod common;

use std::io::Cursor;

use adasdbo::algorithm::run;
use adasdbo::data::{generate_synthetic, Dataset, Labels, Split};
use adasdbo::metrics::{
    consensus_error, read_csv_trace, read_csv_trace_file, stepsize_spread, test_accuracy, CsvSink, JsonlSink,
    MemorySink, CSV_HEADER,
};
use adasdbo::network::{build_complete, build_ring};
use adasdbo::{
    AdaSdboConfig, BilevelProblem, ConstConfig, Error, InitSpec, MetricsEvaluator, OracleConfig, RngSpec, RoundTrace,
    SoftmaxHpo, SwarmState, SyntheticLogisticHpo, TraceSink,
};
use common::gaussian;

fn heterogeneous_start(n: usize, p: usize, q: usize) -> InitSpec<f64> {
    InitSpec::PerAgent(
        (0..n as u64)
            .map(|i| {
                (
                    gaussian(i, "x", p, 1.0),
                    gaussian(i, "y", q, 1.0),
                    gaussian(i, "v", q, 1.0),
                )
            })
            .collect(),
    )
}

fn quadratic_trace(rounds: usize) -> Vec<RoundTrace<f64>> {
    let problem = common::quadratic(17, 4, 3, 5);
    let w = build_ring(5, 0.4).unwrap();
    let cfg = AdaSdboConfig {
        rounds,
        ..AdaSdboConfig::default()
    };
    let mut evaluator = MetricsEvaluator::new(Some(OracleConfig::default()), 3).unwrap();
    let mut sink = MemorySink::default();
    run(
        &problem,
        &w,
        &cfg,
        &heterogeneous_start(5, 4, 3),
        &mut evaluator,
        &mut [&mut sink],
    )
    .unwrap();
    sink.records
}

#[test]
fn every_record_satisfies_the_schema() {
    let trace = quadratic_trace(200);
    assert_eq!(trace.len(), 200);
    for (t, record) in trace.iter().enumerate() {
        record.check_invariants().unwrap();
        assert_eq!(record.round, t);
        assert_eq!(record.stationarity.is_some(), t % 3 == 0);
        assert!(record.test_accuracy.is_none());
    }
    for pair in trace.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert!(b.mean_acc_x >= a.mean_acc_x && b.mean_acc_y >= a.mean_acc_y && b.mean_acc_v >= a.mean_acc_v);
        assert!(b.zeta_q >= a.zeta_q && b.zeta_u >= a.zeta_u && b.zeta_z >= a.zeta_z);
        assert!(b.sigma_q <= a.sigma_q && b.sigma_u <= a.sigma_u && b.sigma_z <= a.sigma_z);
    }
    assert!(trace[150].term_b_norm > 0.0);
}

#[test]
fn csv_round_trip_is_exact() {
    let trace = quadratic_trace(60);
    let mut sink = CsvSink::new(Vec::new()).unwrap();
    for record in &trace {
        TraceSink::<f64>::emit(&mut sink, record).unwrap();
    }
    TraceSink::<f64>::flush(&mut sink).unwrap();
    let bytes = sink.into_inner();
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(text.lines().count(), 61);
    let back: Vec<RoundTrace<f64>> = read_csv_trace(Cursor::new(bytes)).unwrap();
    assert_eq!(back.len(), trace.len());
    for (a, b) in back.iter().zip(&trace) {
        assert_eq!(a.to_csv_row(), b.to_csv_row());
        for (x, y) in [
            (a.upper_loss, b.upper_loss),
            (a.consensus_error, b.consensus_error),
            (a.zeta_q, b.zeta_q),
        ] {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(back, trace);
}

#[test]
fn csv_file_and_jsonl_sinks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let trace = quadratic_trace(5);
    let mut csv = CsvSink::create(&path).unwrap();
    let mut jsonl = JsonlSink::new(Vec::new());
    for record in &trace {
        csv.emit(record).unwrap();
        jsonl.emit(record).unwrap();
    }
    TraceSink::<f64>::flush(&mut csv).unwrap();
    assert_eq!(read_csv_trace_file::<f64>(&path).unwrap(), trace);
    let lines = String::from_utf8(jsonl.into_inner()).unwrap();
    let parsed: Vec<RoundTrace<f64>> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, trace);
}

#[test]
fn bad_csv_is_rejected() {
    let err = read_csv_trace::<f64, _>(Cursor::new(b"round,loss\n1,2\n".to_vec())).unwrap_err();
    assert!(matches!(err, Error::Parse { offset: 0, .. }));
    let body = format!("{CSV_HEADER}\n0,1,2\n");
    let err = read_csv_trace::<f64, _>(Cursor::new(body.into_bytes())).unwrap_err();
    match err {
        Error::Parse { offset, .. } => assert_eq!(offset, CSV_HEADER.len() as u64 + 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn complete_graph_mixing_reaches_consensus() {
    let problem = common::quadratic(3, 3, 3, 4);
    let w = build_complete(4).unwrap();
    let start = heterogeneous_start(4, 3, 3).materialize(&problem, 10.0).unwrap();
    assert!(consensus_error(&start) > 0.0);
    let next = adasdbo::algorithm::step(&start, &problem, &w, &AdaSdboConfig::default()).unwrap();
    assert!(consensus_error(&next) <= 1e-28);
    // shared accumulators after exact averaging
    let spread = stepsize_spread(&next);
    assert!(spread.q.max <= 1e-28 && spread.u.max <= 1e-28 && spread.z.max <= 1e-28);
}

#[test]
fn identical_agents_have_no_discrepancy() {
    let problem = adasdbo::QuadraticBilevel::homogeneous(vec![1.0], vec![0.0], vec![1.0], 3).unwrap();
    let w = build_ring(3, 0.5).unwrap();
    let cfg = AdaSdboConfig {
        rounds: 20,
        ..AdaSdboConfig::default()
    };
    let mut evaluator = MetricsEvaluator::basic();
    let mut sink = MemorySink::default();
    run(&problem, &w, &cfg, &InitSpec::Zeros, &mut evaluator, &mut [&mut sink]).unwrap();
    for record in &sink.records {
        assert!(record.term_b_norm <= 1e-15);
        assert!(record.consensus_error <= 1e-30);
    }
}

#[test]
fn synthetic_accuracy_readouts() {
    let data = generate_synthetic::<f64>(5, 10, 10, 400, 1.0, &RngSpec::new(3, "acc")).unwrap();
    let omega_star = data.omega_star.clone();
    let problem = SyntheticLogisticHpo::from_synthetic(data).unwrap();
    let lambda = vec![0.0; 10];
    let good = test_accuracy(&problem, &lambda, &omega_star).unwrap();
    assert!(good >= 0.95, "{good}");
    let mut total = 0.0;
    for seed in 0..20 {
        let random = gaussian(seed, "random-omega", 10, 1.0);
        total += test_accuracy(&problem, &lambda, &random).unwrap();
    }
    let mean = total / 20.0;
    assert!((mean - 0.5).abs() <= 0.05, "{mean}");
}

#[test]
fn noiseless_labels_give_perfect_accuracy() {
    let omega = vec![1.0, -2.0, 0.5];
    let features = gaussian(1, "features", 300, 1.0);
    let labels = features
        .chunks(3)
        .map(|x| x.iter().zip(&omega).map(|(a, b)| a * b).sum())
        .collect();
    let val = Dataset::new(3, features, Labels::Real(labels), Split::Validation).unwrap();
    let train = val.clone().with_split(Split::Train);
    let problem = SyntheticLogisticHpo::new(vec![(train, val)]).unwrap();
    assert_eq!(problem.test_accuracy(&[0.0; 3], &omega).unwrap(), 1.0);
}

#[test]
fn uniform_softmax_is_at_chance() {
    let mut r = RngSpec::new(5, "softmax-chance").rng();
    let labels: Vec<u32> = (0..2000).map(|_| rand::Rng::random_range(&mut r, 0..10)).collect();
    let features = gaussian(5, "f", 2000 * 4, 1.0);
    let val = Dataset::new(4, features, Labels::Class(labels), Split::Validation).unwrap();
    let problem = SoftmaxHpo::new(10, vec![(val.clone().with_split(Split::Train), val)]).unwrap();
    let acc = problem.test_accuracy(&[0.0; 4], &vec![0.0; 40]).unwrap();
    assert!((acc - 0.1).abs() <= 0.02, "{acc}");
}

#[test]
fn quadratic_has_no_accuracy() {
    let problem = common::quadratic(1, 2, 2, 2);
    assert!(matches!(
        test_accuracy(&problem, &[0.0; 2], &[0.0; 2]),
        Err(Error::UnsupportedMetric(_))
    ));
}

#[test]
fn synthetic_run_reports_accuracy_on_stride() {
    let data = generate_synthetic::<f64>(3, 4, 20, 20, 1.0, &RngSpec::new(8, "stride")).unwrap();
    let problem = SyntheticLogisticHpo::from_synthetic(data).unwrap();
    let w = build_ring(3, 0.5).unwrap();
    let cfg = ConstConfig {
        rounds: 12,
        ..ConstConfig::default()
    };
    let mut evaluator = MetricsEvaluator::new(Some(OracleConfig::default()), 5).unwrap();
    let mut sink = MemorySink::default();
    let result = run(&problem, &w, &cfg, &InitSpec::Zeros, &mut evaluator, &mut [&mut sink]).unwrap();
    let with_accuracy: Vec<usize> = sink
        .records
        .iter()
        .filter(|r| r.test_accuracy.is_some())
        .map(|r| r.round)
        .collect();
    assert_eq!(with_accuracy, vec![0, 5, 10]);
    assert!(result.final_accuracy.is_some());
    assert!(result.final_stationarity.is_some());
    let state: &SwarmState<f64> = &result.final_state;
    assert_eq!(state.round, 12);
}

#[test]
fn evaluator_rejects_zero_stride() {
    assert!(MetricsEvaluator::<f64>::new(Some(OracleConfig::default()), 0).is_err());
}
