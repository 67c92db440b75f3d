use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adasdbo::algorithm::{default_projection, run};
use adasdbo::data::{self, Split};
use adasdbo::metrics::{CsvSink, JsonlSink};
use adasdbo::problems::averaged;
use adasdbo::{
    AdaSdboConfig, Algorithm, BilevelProblem, ConstConfig, InitSpec, MetricsEvaluator, MixingMatrix, Projection,
    QuadraticBilevel, QuadraticParams, RngSpec, RoundTrace, SoftmaxHpo, SyntheticLogisticHpo, TraceSink,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    AlgorithmKind, ExperimentConfig, OutputFormat, ProblemConfig, ProjectionKeyword, ProjectionSetting,
    QuadraticSection,
};
use crate::{CliError, Result};

/// Machine-readable outcome of one run, written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub final_stationarity: Option<f64>,
    pub min_stationarity: Option<f64>,
    pub final_upper_loss: Option<f64>,
    pub final_lower_loss: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub rounds_completed: usize,
    pub diverged: bool,
    pub divergence_round: Option<usize>,
    pub divergence_reason: Option<String>,
    pub wall_seconds: f64,
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
}

pub(crate) fn quadratic_instance(q: &QuadraticSection, agents: usize) -> Result<QuadraticBilevel<f64>> {
    let params = QuadraticParams {
        upper_dim: q.upper_dim,
        lower_dim: q.lower_dim,
        agents,
        target_scale: q.target_scale,
        coupling_scale: q.coupling_scale,
        heterogeneity: q.heterogeneity,
    };
    Ok(QuadraticBilevel::random(&params, &RngSpec::new(q.seed, "quadratic"))?)
}

/// Builds the configured problem for `cfg.topology.agents` agents.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Box<dyn BilevelProblem<f64>>> {
    let n = cfg.topology.agents;
    Ok(match &cfg.problem {
        ProblemConfig::Quadratic(q) => Box::new(quadratic_instance(q, n)?),
        ProblemConfig::Synthetic(s) => {
            let (train, val) = s.per_agent(n);
            let d = data::generate_synthetic::<f64>(n, s.dim, train, val, s.r, &RngSpec::new(s.seed, "synthetic"))?;
            Box::new(SyntheticLogisticHpo::from_synthetic(d)?)
        }
        ProblemConfig::Softmax(s) => {
            let limit = |ds: data::Dataset<f64>, k: Option<usize>| match k {
                Some(k) if k < ds.len() => ds.select(&(0..k).collect::<Vec<_>>()),
                _ => ds,
            };
            let train = limit(data::load_idx::<f64>(&s.train_images, &s.train_labels)?, s.train_limit);
            let test = limit(data::load_idx::<f64>(&s.test_images, &s.test_labels)?, s.test_limit);
            let rng = RngSpec::new(s.seed, "partition");
            let train = data::partition(&train, n, s.partition, &rng.child("train"))?;
            let test = data::partition(&test, n, data::PartitionPolicy::Equal, &rng.child("test"))?;
            let agents = train
                .into_iter()
                .zip(test)
                .map(|(t, v)| (t, v.with_split(Split::Validation)))
                .collect();
            Box::new(SoftmaxHpo::new(s.classes, agents)?)
        }
    })
}

/// Forwards to the file sinks and remembers what a divergence summary needs.
struct Tracker {
    sinks: Vec<Box<dyn TraceSink<f64>>>,
    last: Option<RoundTrace<f64>>,
    min_stationarity: Option<f64>,
}

impl TraceSink<f64> for Tracker {
    fn emit(&mut self, trace: &RoundTrace<f64>) -> adasdbo::Result<()> {
        if let Some(s) = trace.stationarity {
            self.min_stationarity = Some(self.min_stationarity.map_or(s, |m| m.min(s)));
        }
        self.last = Some(trace.clone());
        self.sinks.iter_mut().try_for_each(|s| s.emit(trace))
    }

    fn flush(&mut self) -> adasdbo::Result<()> {
        self.sinks.iter_mut().try_for_each(|s| s.flush())
    }
}

fn resolve_projection(
    setting: ProjectionSetting,
    problem: &dyn BilevelProblem<f64>,
    init: &InitSpec<f64>,
) -> Result<Projection<f64>> {
    Ok(match setting {
        ProjectionSetting::Radius(r) => Projection::Ball(r),
        ProjectionSetting::Named(ProjectionKeyword::Unbounded) => Projection::Unbounded,
        ProjectionSetting::Named(ProjectionKeyword::Auto) => {
            default_projection(problem, &init.materialize(problem, 1.0)?)?
        }
    })
}

fn execute<A: Algorithm<f64>>(
    problem: &dyn BilevelProblem<f64>,
    mixing: &MixingMatrix<f64>,
    algorithm: &A,
    init: &InitSpec<f64>,
    evaluator: &mut MetricsEvaluator<f64>,
    tracker: &mut Tracker,
) -> adasdbo::Result<adasdbo::RunResult<f64>> {
    run(
        problem,
        mixing,
        algorithm,
        init,
        evaluator,
        &mut [tracker as &mut dyn TraceSink<f64>],
    )
}

/// Runs one experiment (the sweep section, if any, is ignored) and writes
/// `<outdir>/<hash>/trace.csv` (and `trace.jsonl` if requested) plus
/// `summary.json`. Divergence is reported in the summary, not as an error.
pub fn run_single(cfg: &ExperimentConfig, outdir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    let hash = cfg.hash();
    let dir = outdir.join(&hash);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let problem = build_problem(cfg)?;
    let problem = problem.as_ref();
    let mixing: MixingMatrix<f64> = cfg.topology.topology().build(cfg.topology.agents)?;
    let init = InitSpec::Zeros;
    let mut evaluator = if cfg.oracle.enabled {
        MetricsEvaluator::new(Some(cfg.oracle.oracle_config()), cfg.oracle.stride)?
    } else {
        MetricsEvaluator::basic()
    };

    let trace_path = dir.join("trace.csv");
    // the CSV trace is always written; other formats are extra
    let mut sinks: Vec<Box<dyn TraceSink<f64>>> = vec![Box::new(CsvSink::create(&trace_path)?)];
    if cfg.output.formats.contains(&OutputFormat::Jsonl) {
        sinks.push(Box::new(JsonlSink::create(&dir.join("trace.jsonl"))?));
    }
    let mut tracker = Tracker {
        sinks,
        last: None,
        min_stationarity: None,
    };

    let a = &cfg.algorithm;
    let projection = resolve_projection(a.projection, problem, &init)?;
    let outcome = match a.kind {
        AlgorithmKind::Adasdbo => {
            let alg = AdaSdboConfig {
                gamma_x: a.gamma_x,
                gamma_y: a.gamma_y,
                gamma_v: a.gamma_v,
                m0: a.m0,
                projection,
                rounds: a.rounds,
                accumulator_mixing: a.accumulator_mixing,
            };
            execute(problem, &mixing, &alg, &init, &mut evaluator, &mut tracker)
        }
        AlgorithmKind::Const => {
            let alg = ConstConfig {
                eta_x: a.eta_x,
                eta_y: a.eta_y,
                eta_v: a.eta_v,
                projection,
                rounds: a.rounds,
            };
            execute(problem, &mixing, &alg, &init, &mut evaluator, &mut tracker)
        }
    };

    let mut summary = RunSummary {
        config_hash: hash,
        final_stationarity: None,
        min_stationarity: None,
        final_upper_loss: None,
        final_lower_loss: None,
        final_accuracy: None,
        rounds_completed: 0,
        diverged: false,
        divergence_round: None,
        divergence_reason: None,
        wall_seconds: 0.0,
        trace_path,
        summary_path: dir.join("summary.json"),
    };
    match outcome {
        Ok(res) => {
            let (xm, ym) = (res.final_state.mean_x(), res.final_state.mean_y());
            summary.final_stationarity = res.final_stationarity;
            summary.min_stationarity = res.min_stationarity;
            summary.final_upper_loss = Some(averaged::upper_loss(problem, &xm, &ym)?);
            summary.final_lower_loss = Some(averaged::lower_loss(problem, &xm, &ym)?);
            summary.final_accuracy = res.final_accuracy;
            summary.rounds_completed = res.rounds_completed;
        }
        Err(adasdbo::Error::Divergence { round, agent, reason }) => {
            summary.diverged = true;
            summary.divergence_round = Some(round);
            summary.divergence_reason = Some(format!("agent {agent}: {reason}"));
            summary.rounds_completed = round;
            summary.min_stationarity = tracker.min_stationarity;
            if let Some(last) = &tracker.last {
                summary.final_upper_loss = Some(last.upper_loss);
                summary.final_lower_loss = Some(last.lower_loss);
            }
        }
        Err(e) => return Err(e.into()),
    }
    summary.wall_seconds = start.elapsed().as_secs_f64();
    write_json(&summary.summary_path, &summary)?;
    Ok(summary)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Column order of `sweep.csv`.
pub const SWEEP_CSV_HEADER: &str = "value,final_accuracy,final_stationarity,diverged,config_hash,error";

/// One sweep value and its outcome; `error` holds failures other than
/// divergence.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        let s = self.summary.as_ref();
        let error = self.error.as_deref().unwrap_or("").replace([',', '\n', '\r'], ";");
        format!(
            "{},{},{},{},{},{}",
            self.value,
            opt(s.and_then(|s| s.final_accuracy)),
            opt(s.and_then(|s| s.final_stationarity)),
            s.is_some_and(|s| s.diverged),
            s.map_or("", |s| s.config_hash.as_str()),
            error,
        )
    }
}

/// Runs every sweep value (concurrently) and writes `<outdir>/sweep.csv`.
/// Failures land in their row; only I/O errors on `sweep.csv` abort.
pub fn run_sweep(cfg: &ExperimentConfig, outdir: &Path) -> Result<Vec<SweepRow>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep: section missing".into()))?;
    let rows: Vec<SweepRow> = sweep
        .values
        .par_iter()
        .map(|value| {
            let mut one = cfg.clone();
            one.sweep = None;
            let outcome = one
                .apply_sweep_value(sweep.parameter, value)
                .and_then(|()| one.validate())
                .and_then(|()| run_single(&one, outdir));
            match outcome {
                Ok(s) => SweepRow {
                    value: value.to_string(),
                    summary: Some(s),
                    error: None,
                },
                Err(e) => SweepRow {
                    value: value.to_string(),
                    summary: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    fs::create_dir_all(outdir).map_err(|e| CliError::Io(format!("{}: {e}", outdir.display())))?;
    let path = outdir.join("sweep.csv");
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in &rows {
        out.push_str(&row.to_csv_row());
        out.push('\n');
    }
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(rows)
}
