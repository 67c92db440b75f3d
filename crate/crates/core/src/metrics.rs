//! Per-round diagnostics and trace sinks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithm::{StepReport, SwarmState};
use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::{HypergradOracle, OracleConfig};
use crate::problems::{averaged, BilevelProblem};
use crate::Scalar;

/// Column order of the CSV trace.
pub const CSV_HEADER: &str = "round,upper_loss,lower_loss,stationarity,consensus_error,zeta_q,zeta_u,zeta_z,\
sigma_q,sigma_u,sigma_z,mean_acc_x,mean_acc_y,mean_acc_v,test_accuracy,term_b_norm";

/// Diagnostics describing the state at the start of `round`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace<S> {
    pub round: usize,
    pub upper_loss: S,
    pub lower_loss: S,
    pub stationarity: Option<S>,
    pub consensus_error: S,
    pub zeta_q: S,
    pub zeta_u: S,
    pub zeta_z: S,
    pub sigma_q: S,
    pub sigma_u: S,
    pub sigma_z: S,
    pub mean_acc_x: S,
    pub mean_acc_y: S,
    pub mean_acc_v: S,
    pub test_accuracy: Option<S>,
    pub term_b_norm: S,
}

impl<S: Scalar> RoundTrace<S> {
    pub fn check_invariants(&self) -> Result<()> {
        let zero = S::zero();
        let fail = |what: &str| Err(Error::Numerical(format!("round {}: {what}", self.round)));
        if !(self.consensus_error >= zero) {
            return fail("negative consensus error");
        }
        for (zeta, sigma) in [
            (self.zeta_q, self.sigma_q),
            (self.zeta_u, self.sigma_u),
            (self.zeta_z, self.sigma_z),
        ] {
            if !(zeta >= sigma && sigma >= zero) {
                return fail("stepsize spread out of order");
            }
        }
        if let Some(acc) = self.test_accuracy {
            if !(acc >= zero && acc <= S::one()) {
                return fail("accuracy outside [0, 1]");
            }
        }
        if let Some(s) = self.stationarity {
            if !(s >= zero) {
                return fail("negative stationarity");
            }
        }
        Ok(())
    }

    fn fields(&self) -> [Option<S>; 15] {
        [
            Some(self.upper_loss),
            Some(self.lower_loss),
            self.stationarity,
            Some(self.consensus_error),
            Some(self.zeta_q),
            Some(self.zeta_u),
            Some(self.zeta_z),
            Some(self.sigma_q),
            Some(self.sigma_u),
            Some(self.sigma_z),
            Some(self.mean_acc_x),
            Some(self.mean_acc_y),
            Some(self.mean_acc_v),
            self.test_accuracy,
            Some(self.term_b_norm),
        ]
    }

    pub fn to_csv_row(&self) -> String {
        let mut row = self.round.to_string();
        for field in self.fields() {
            row.push(',');
            if let Some(v) = field {
                row.push_str(&format!("{v:?}"));
            }
        }
        row
    }

    pub fn from_csv_row(line: &str, offset: u64) -> Result<Self> {
        let parse_err = |message: String| Error::Parse { offset, message };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 16 {
            return Err(parse_err(format!("expected 16 columns, found {}", cols.len())));
        }
        let round = cols[0]
            .parse()
            .map_err(|_| parse_err(format!("bad round {:?}", cols[0])))?;
        let mut vals = Vec::with_capacity(15);
        for c in &cols[1..] {
            if c.is_empty() {
                vals.push(None);
            } else {
                vals.push(Some(
                    c.parse::<S>().map_err(|_| parse_err(format!("bad number {c:?}")))?,
                ));
            }
        }
        let req = |i: usize| vals[i].ok_or_else(|| parse_err(format!("column {} is required", i + 1)));
        Ok(Self {
            round,
            upper_loss: req(0)?,
            lower_loss: req(1)?,
            stationarity: vals[2],
            consensus_error: req(3)?,
            zeta_q: req(4)?,
            zeta_u: req(5)?,
            zeta_z: req(6)?,
            sigma_q: req(7)?,
            sigma_u: req(8)?,
            sigma_z: req(9)?,
            mean_acc_x: req(10)?,
            mean_acc_y: req(11)?,
            mean_acc_v: req(12)?,
            test_accuracy: vals[13],
            term_b_norm: req(14)?,
        })
    }
}

/// `Σ_i ‖x_i − x̄‖² + ‖y_i − ȳ‖² + ‖v_i − v̄‖²`
pub fn consensus_error<S: Scalar>(swarm: &SwarmState<S>) -> S {
    if swarm.agents.is_empty() {
        return S::zero();
    }
    let (xm, ym, vm) = (swarm.mean_x(), swarm.mean_y(), swarm.mean_v());
    let mut total = S::zero();
    for a in &swarm.agents {
        total += linalg::norm_sq(&linalg::sub(&a.x, &xm));
        total += linalg::norm_sq(&linalg::sub(&a.y, &ym));
        total += linalg::norm_sq(&linalg::sub(&a.v, &vm));
    }
    total
}

/// Largest and smallest relative squared deviation of one stepsize family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spread<S> {
    pub max: S,
    pub min: S,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepsizeSpread<S> {
    pub q: Spread<S>,
    pub u: Spread<S>,
    pub z: Spread<S>,
}

/// `(b_i⁻¹ − b̄⁻¹)² / (b̄⁻¹)²` over agents, with `b̄ = mean_i b_i`.
pub fn relative_spread<S: Scalar>(values: &[S]) -> Spread<S> {
    let n = S::from_count(values.len());
    let mean_inv = n / values.iter().copied().sum::<S>();
    let mut out = Spread {
        max: S::zero(),
        min: S::infinity(),
    };
    for b in values {
        let d = (S::one() / *b - mean_inv) / mean_inv;
        let dev = d * d;
        out.max = out.max.max(dev);
        out.min = out.min.min(dev);
    }
    if values.is_empty() {
        out.min = S::zero();
    }
    out
}

/// Spread of `q = m^x max(m^v, m^y)`, `u = m^y`, `z = max(m^v, m^y)`.
pub fn stepsize_spread<S: Scalar>(swarm: &SwarmState<S>) -> StepsizeSpread<S> {
    let mut q = Vec::with_capacity(swarm.n());
    let mut u = Vec::with_capacity(swarm.n());
    let mut z = Vec::with_capacity(swarm.n());
    for a in &swarm.agents {
        let zi = a.m_v().max(a.m_y());
        q.push(a.m_x() * zi);
        u.push(a.m_y());
        z.push(zi);
    }
    StepsizeSpread {
        q: relative_spread(&q),
        u: relative_spread(&u),
        z: relative_spread(&z),
    }
}

/// Held-out accuracy at `(x̄, ω)`.
pub fn test_accuracy<S: Scalar, P: BilevelProblem<S> + ?Sized>(problem: &P, x: &[S], omega: &[S]) -> Result<S> {
    problem.test_accuracy(x, omega)
}

/// Computes [`RoundTrace`] records and keeps the running sup/inf of the
/// stepsize spreads.
#[derive(Clone, Debug)]
pub struct MetricsEvaluator<S> {
    oracle: Option<HypergradOracle<S>>,
    stride: usize,
    accuracy: bool,
    zeta: [S; 3],
    sigma: [S; 3],
}

impl<S: Scalar> MetricsEvaluator<S> {
    /// Stationarity (and accuracy, where the problem supports it) is
    /// evaluated on rounds divisible by `stride`; `None` skips both.
    pub fn new(oracle: Option<OracleConfig>, stride: usize) -> Result<Self> {
        if oracle.is_some() && stride == 0 {
            return Err(Error::InvalidArgument("evaluation stride must be at least 1".into()));
        }
        Ok(Self {
            oracle: oracle.map(HypergradOracle::new).transpose()?,
            stride,
            accuracy: true,
            zeta: [S::zero(); 3],
            sigma: [S::infinity(); 3],
        })
    }

    /// Evaluator that reports losses, consensus and spreads only.
    pub fn basic() -> Self {
        Self {
            oracle: None,
            stride: 0,
            accuracy: false,
            zeta: [S::zero(); 3],
            sigma: [S::infinity(); 3],
        }
    }

    fn oracle_metrics<P: BilevelProblem<S> + ?Sized>(
        &mut self,
        problem: &P,
        x: &[S],
    ) -> Result<(Option<S>, Option<S>)> {
        let Some(oracle) = self.oracle.as_mut() else {
            return Ok((None, None));
        };
        let h = oracle.evaluate(problem, x)?;
        let stationarity = linalg::norm_sq(&h.grad);
        let accuracy = if self.accuracy {
            match problem.test_accuracy(x, &h.y) {
                Ok(a) => Some(a),
                Err(Error::UnsupportedMetric(_)) => {
                    self.accuracy = false;
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        Ok((Some(stationarity), accuracy))
    }

    pub fn record<P: BilevelProblem<S> + ?Sized>(
        &mut self,
        problem: &P,
        state: &SwarmState<S>,
        report: Option<&StepReport<S>>,
    ) -> Result<RoundTrace<S>> {
        let (xm, ym) = (state.mean_x(), state.mean_y());
        let (stationarity, test_accuracy) = if self.stride > 0 && state.round.is_multiple_of(self.stride) {
            self.oracle_metrics(problem, &xm)?
        } else {
            (None, None)
        };
        let spread = stepsize_spread(state);
        for (k, s) in [spread.q, spread.u, spread.z].into_iter().enumerate() {
            self.zeta[k] = self.zeta[k].max(s.max);
            self.sigma[k] = self.sigma[k].min(s.min);
        }
        let n = S::from_count(state.n());
        let mean_acc = |f: fn(&crate::algorithm::AgentState<S>) -> S| state.agents.iter().map(f).sum::<S>() / n;
        Ok(RoundTrace {
            round: state.round,
            upper_loss: averaged::upper_loss(problem, &xm, &ym)?,
            lower_loss: averaged::lower_loss(problem, &xm, &ym)?,
            stationarity,
            consensus_error: consensus_error(state),
            zeta_q: self.zeta[0],
            zeta_u: self.zeta[1],
            zeta_z: self.zeta[2],
            sigma_q: self.sigma[0],
            sigma_u: self.sigma[1],
            sigma_z: self.sigma[2],
            mean_acc_x: mean_acc(|a| a.m_x()),
            mean_acc_y: mean_acc(|a| a.m_y()),
            mean_acc_v: mean_acc(|a| a.m_v()),
            test_accuracy,
            term_b_norm: report.map_or(S::zero(), |r| linalg::norm(&r.term_b)),
        })
    }

    /// Stationarity and accuracy at the mean iterate of `state`.
    pub fn final_metrics<P: BilevelProblem<S> + ?Sized>(
        &mut self,
        problem: &P,
        state: &SwarmState<S>,
    ) -> Result<(Option<S>, Option<S>)> {
        self.oracle_metrics(problem, &state.mean_x())
    }
}

/// Destination for trace records.
pub trait TraceSink<S> {
    fn emit(&mut self, trace: &RoundTrace<S>) -> Result<()>;
    fn flush(&mut self) -> Result<()>;
}

/// Keeps every record in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySink<S> {
    pub records: Vec<RoundTrace<S>>,
}

impl<S: Clone> TraceSink<S> for MemorySink<S> {
    fn emit(&mut self, trace: &RoundTrace<S>) -> Result<()> {
        self.records.push(trace.clone());
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// CSV rows under [`CSV_HEADER`].
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl CsvSink<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<S: Scalar, W: Write> TraceSink<S> for CsvSink<W> {
    fn emit(&mut self, trace: &RoundTrace<S>) -> Result<()> {
        writeln!(self.out, "{}", trace.to_csv_row())?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// One JSON object per line.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl JsonlSink<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self::new(BufWriter::new(File::create(path)?)))
    }
}

impl<S: Scalar, W: Write> TraceSink<S> for JsonlSink<W> {
    fn emit(&mut self, trace: &RoundTrace<S>) -> Result<()> {
        serde_json::to_writer(&mut self.out, trace).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Parses a CSV trace written by [`CsvSink`].
pub fn read_csv_trace<S: Scalar, R: Read>(input: R) -> Result<Vec<RoundTrace<S>>> {
    let mut lines = BufReader::new(input);
    let mut header = String::new();
    lines.read_line(&mut header)?;
    if header.trim_end_matches(['\r', '\n']) != CSV_HEADER {
        return Err(Error::Parse {
            offset: 0,
            message: "unexpected trace header".into(),
        });
    }
    let mut offset = header.len() as u64;
    let mut out = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        let read = lines.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        out.push(RoundTrace::from_csv_row(line.trim_end_matches(['\r', '\n']), offset)?);
        offset += read as u64;
    }
    Ok(out)
}

pub fn read_csv_trace_file<S: Scalar>(path: &Path) -> Result<Vec<RoundTrace<S>>> {
    read_csv_trace(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithm::AgentState;

    fn agent(x: f64, acc: [f64; 3]) -> AgentState<f64> {
        AgentState {
            x: vec![x],
            y: vec![0.0],
            v: vec![0.0],
            acc_x_sq: acc[0],
            acc_y_sq: acc[1],
            acc_v_sq: acc[2],
        }
    }

    #[test]
    fn consensus_of_two_scalars() {
        let s = SwarmState {
            agents: vec![agent(0.0, [1.0; 3]), agent(2.0, [1.0; 3])],
            round: 0,
        };
        assert_eq!(consensus_error(&s), 2.0);
    }

    #[test]
    fn spread_uses_mean_stepsize() {
        let none = relative_spread(&[4.0, 4.0, 4.0]);
        assert_eq!((none.max, none.min), (0.0, 0.0));
        // u = {1, 1/3}: ū = 2/3, ū⁻¹ = 1.5, deviations (−0.5/1.5)² and (1.5/1.5)²
        let s = relative_spread(&[1.0f64, 1.0 / 3.0]);
        assert!((s.min - 1.0 / 9.0).abs() < 1e-15);
        assert!((s.max - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_accumulators_have_no_spread() {
        let s = SwarmState {
            agents: vec![agent(0.0, [4.0, 9.0, 1.0]), agent(1.0, [4.0, 9.0, 1.0])],
            round: 3,
        };
        let sp = stepsize_spread(&s);
        for b in [sp.q, sp.u, sp.z] {
            assert_eq!((b.max, b.min), (0.0, 0.0));
        }
    }

    #[test]
    fn csv_row_layout() {
        let t = RoundTrace {
            round: 7,
            upper_loss: 0.5,
            lower_loss: 1e-20,
            stationarity: None,
            consensus_error: 0.0,
            zeta_q: 0.1,
            zeta_u: 0.2,
            zeta_z: 0.3,
            sigma_q: 0.0,
            sigma_u: 0.0,
            sigma_z: 0.0,
            mean_acc_x: 10.0,
            mean_acc_y: 10.5,
            mean_acc_v: 11.0,
            test_accuracy: None,
            term_b_norm: 3.25,
        };
        let row = t.to_csv_row();
        assert_eq!(row, "7,0.5,1e-20,,0.0,0.1,0.2,0.3,0.0,0.0,0.0,10.0,10.5,11.0,,3.25");
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert_eq!(RoundTrace::<f64>::from_csv_row(&row, 0).unwrap(), t);
        assert!(RoundTrace::<f64>::from_csv_row("1,2", 9).is_err());
    }
}
