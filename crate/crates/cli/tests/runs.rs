use std::fs;
use std::path::Path;

use adasdbo::metrics::{read_csv_trace_file, CSV_HEADER};
use adasdbo_cli::{oracle_check, parse_config, run_single, run_sweep, RunSummary, SWEEP_CSV_HEADER};

const SMALL: &str = "[problem]\nkind = \"quadratic\"\nupper_dim = 3\nlower_dim = 2\n";

fn config(extra: &str) -> adasdbo_cli::ExperimentConfig {
    parse_config(&format!("{SMALL}{extra}")).unwrap()
}

fn assert_nonempty(path: &Path) {
    let len = fs::metadata(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .len();
    assert!(len > 0, "{} is empty", path.display());
}

#[test]
fn single_round_gives_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_single(&config("[algorithm]\nrounds = 1\n"), dir.path()).unwrap();
    let trace = read_csv_trace_file::<f64>(&s.trace_path).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(trace[0].round, 0);
    assert_eq!(s.rounds_completed, 1);
    assert!(!s.diverged);
}

#[test]
fn promised_files_exist_and_summary_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[algorithm]\nrounds = 30\n[output]\nformats = [\"csv\", \"jsonl\"]\n");
    let s = run_single(&cfg, dir.path()).unwrap();
    let run_dir = dir.path().join(&s.config_hash);
    assert_eq!(s.trace_path, run_dir.join("trace.csv"));
    assert_eq!(s.summary_path, run_dir.join("summary.json"));
    for p in [&s.trace_path, &s.summary_path, &run_dir.join("trace.jsonl")] {
        assert_nonempty(p);
    }
    let text = fs::read_to_string(&s.trace_path).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(text.lines().count(), 31);
    assert_eq!(
        fs::read_to_string(run_dir.join("trace.jsonl")).unwrap().lines().count(),
        30
    );

    let back: RunSummary = serde_json::from_str(&fs::read_to_string(&s.summary_path).unwrap()).unwrap();
    assert_eq!(back, s);
    assert_eq!(s.config_hash, cfg.hash());
    assert!(s.final_stationarity.is_some());
    assert!(s.min_stationarity.unwrap() <= s.final_stationarity.unwrap());
    assert!(s.final_upper_loss.is_some() && s.final_lower_loss.is_some());
    assert_eq!(s.final_accuracy, None);
}

#[test]
fn identical_configs_give_identical_traces() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = config("[algorithm]\nrounds = 50\n");
    let sa = run_single(&cfg, a.path()).unwrap();
    let sb = run_single(&cfg.clone(), b.path()).unwrap();
    assert_eq!(sa.config_hash, sb.config_hash);
    assert_eq!(fs::read(&sa.trace_path).unwrap(), fs::read(&sb.trace_path).unwrap());
}

#[test]
fn disabled_oracle_leaves_stationarity_blank() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_single(
        &config("[algorithm]\nrounds = 5\n[oracle]\nenabled = false\n"),
        dir.path(),
    )
    .unwrap();
    let trace = read_csv_trace_file::<f64>(&s.trace_path).unwrap();
    assert!(trace.iter().all(|t| t.stationarity.is_none()));
    assert_eq!(s.final_stationarity, None);
}

#[test]
fn stride_thins_stationarity() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_single(&config("[algorithm]\nrounds = 12\n[oracle]\nstride = 4\n"), dir.path()).unwrap();
    let rounds: Vec<usize> = read_csv_trace_file::<f64>(&s.trace_path)
        .unwrap()
        .iter()
        .filter(|t| t.stationarity.is_some())
        .map(|t| t.round)
        .collect();
    assert_eq!(rounds, vec![0, 4, 8]);
}

#[test]
fn divergence_is_reported_not_raised() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[algorithm]\nkind = \"const\"\neta_x = 100.0\neta_y = 100.0\neta_v = 100.0\nrounds = 200\n");
    let s = run_single(&cfg, dir.path()).unwrap();
    assert!(s.diverged);
    let round = s.divergence_round.unwrap();
    assert!(round < 200);
    assert_eq!(s.rounds_completed, round);
    assert_eq!(read_csv_trace_file::<f64>(&s.trace_path).unwrap().len(), round);
    assert_eq!(s.final_stationarity, None);
    assert_nonempty(&s.summary_path);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[algorithm]\nrounds = 40\n[sweep]\nparameter = \"gamma\"\nvalues = [0.01, 1, 100]\n");
    let rows = run_sweep(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), 3);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_CSV_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.01,"));
    for row in &rows {
        let s = row.summary.as_ref().unwrap();
        assert_nonempty(&s.trace_path);
        assert_nonempty(&s.summary_path);
    }
    let hashes: std::collections::HashSet<_> = rows
        .iter()
        .map(|r| r.summary.as_ref().unwrap().config_hash.clone())
        .collect();
    assert_eq!(hashes.len(), 3);
}

#[test]
fn sweep_records_divergence_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        config("[algorithm]\nkind = \"const\"\nrounds = 100\n[sweep]\nparameter = \"eta\"\nvalues = [0.01, 1000]\n");
    let rows = run_sweep(&cfg, dir.path()).unwrap();
    assert!(!rows[0].summary.as_ref().unwrap().diverged);
    assert!(rows[1].summary.as_ref().unwrap().diverged);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(text.lines().nth(2).unwrap().contains(",true,"));
}

#[test]
fn sweep_over_agents_and_topologies() {
    let dir = tempfile::tempdir().unwrap();
    let rows = run_sweep(
        &config("[algorithm]\nrounds = 5\n[sweep]\nparameter = \"n\"\nvalues = [2, 4]\n"),
        dir.path(),
    )
    .unwrap();
    assert!(rows.iter().all(|r| r.error.is_none()));
    let rows = run_sweep(
        &config(
            "[topology]\nagents = 4\n[algorithm]\nrounds = 5\n\
             [sweep]\nparameter = \"topology\"\nvalues = [\"ring\", \"ladder\", \"complete\", \"random\"]\n",
        ),
        dir.path(),
    )
    .unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.error.is_none()), "{rows:?}");

    // a ladder needs an even agent count; the failure stays in its row
    let rows = run_sweep(
        &config("[algorithm]\nrounds = 5\n[sweep]\nparameter = \"topology\"\nvalues = [\"ladder\", \"ring\"]\n"),
        dir.path(),
    )
    .unwrap();
    assert!(rows[0].error.is_some() && rows[0].summary.is_none());
    assert!(rows[1].error.is_none());
}

#[test]
fn synthetic_run_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config(
        "[problem]\nkind = \"synthetic\"\ndim = 6\ntrain_total = 100\nval_total = 100\n\
         [algorithm]\nrounds = 20\n[oracle]\nstride = 10\n",
    )
    .unwrap();
    let s = run_single(&cfg, dir.path()).unwrap();
    let acc = s.final_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

fn idx_images(rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() as u32 / (rows * cols);
    let mut out = Vec::new();
    for v in [0x0000_0803u32, count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [0x0000_0801u32, labels.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(labels);
    out
}

#[test]
fn softmax_run_from_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let (pixels, labels): (Vec<u8>, Vec<u8>) = (0..40u8)
        .map(|k| {
            let class = k % 3;
            ([class * 80, 255 - class * 80, k % 7 * 7, 10], class)
        })
        .fold((Vec::new(), Vec::new()), |(mut p, mut l), (px, c)| {
            p.extend_from_slice(&px);
            l.push(c);
            (p, l)
        });
    for (name, bytes) in [
        ("train-images", idx_images(2, 2, &pixels)),
        ("train-labels", idx_labels(&labels)),
        ("test-images", idx_images(2, 2, &pixels)),
        ("test-labels", idx_labels(&labels)),
    ] {
        fs::write(dir.path().join(name), bytes).unwrap();
    }
    let d = dir.path().display();
    let cfg = parse_config(&format!(
        "[problem]\nkind = \"softmax\"\nclasses = 3\ntrain_images = \"{d}/train-images\"\n\
         train_labels = \"{d}/train-labels\"\ntest_images = \"{d}/test-images\"\ntest_labels = \"{d}/test-labels\"\n\
         train_limit = 30\n[topology]\nagents = 3\n[algorithm]\nrounds = 10\n[oracle]\nstride = 5\n"
    ))
    .unwrap();
    let s = run_single(&cfg, &dir.path().join("out")).unwrap();
    assert!(!s.diverged);
    assert!(s.final_accuracy.is_some());
    assert_eq!(read_csv_trace_file::<f64>(&s.trace_path).unwrap().len(), 10);
}

#[test]
fn oracle_check_agrees_on_small_problems() {
    let r = oracle_check(&config(""), 4, 1.0).unwrap();
    assert_eq!(r.points, 4);
    assert!(r.max_rel_error <= 1e-5, "{}", r.max_rel_error);
    assert!(r.analytic_max_rel_error.unwrap() <= 1e-8);
    let cfg = parse_config("[problem]\nkind = \"synthetic\"\ndim = 5\ntrain_total = 60\nval_total = 60\n").unwrap();
    let r = oracle_check(&cfg, 4, 0.5).unwrap();
    assert!(r.max_rel_error <= 1e-5, "{}", r.max_rel_error);
    assert_eq!(r.analytic_max_rel_error, None);
}
