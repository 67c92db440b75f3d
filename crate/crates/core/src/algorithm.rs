//! Adaptive single-loop decentralized bilevel optimization.
//!
//! Each round every agent evaluates its local gradients at the round-start
//! state, grows three squared gradient-norm accumulators, takes
//! hierarchically scaled steps in `y`, `v` and `x`, gossips both the
//! iterates and the accumulators with `W`, and projects `v` onto a ball.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{MetricsEvaluator, TraceSink};
use crate::network::MixingMatrix;
use crate::problems::BilevelProblem;
use crate::Scalar;

/// Iterates above this norm are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// One agent's iterates and squared accumulators `[m^x]², [m^y]², [m^v]²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState<S> {
    pub x: Vec<S>,
    pub y: Vec<S>,
    pub v: Vec<S>,
    pub acc_x_sq: S,
    pub acc_y_sq: S,
    pub acc_v_sq: S,
}

impl<S: Scalar> AgentState<S> {
    pub fn m_x(&self) -> S {
        self.acc_x_sq.sqrt()
    }

    pub fn m_y(&self) -> S {
        self.acc_y_sq.sqrt()
    }

    pub fn m_v(&self) -> S {
        self.acc_v_sq.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmState<S> {
    pub agents: Vec<AgentState<S>>,
    pub round: usize,
}

impl<S: Scalar> SwarmState<S> {
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn mean_x(&self) -> Vec<S> {
        linalg::mean_rows(self.agents.iter().map(|a| a.x.as_slice()), self.agents[0].x.len())
    }

    pub fn mean_y(&self) -> Vec<S> {
        linalg::mean_rows(self.agents.iter().map(|a| a.y.as_slice()), self.agents[0].y.len())
    }

    pub fn mean_v(&self) -> Vec<S> {
        linalg::mean_rows(self.agents.iter().map(|a| a.v.as_slice()), self.agents[0].v.len())
    }
}

/// Initial iterates.
#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec<S> {
    /// `x = y = v = 0` on every agent.
    Zeros,
    /// The same `(x, y, v)` on every agent.
    Shared { x: Vec<S>, y: Vec<S>, v: Vec<S> },
    /// One `(x, y, v)` per agent.
    PerAgent(Vec<(Vec<S>, Vec<S>, Vec<S>)>),
}

impl<S: Scalar> InitSpec<S> {
    /// Builds round-0 state with every accumulator set to `m0²`.
    pub fn materialize<P: BilevelProblem<S> + ?Sized>(&self, problem: &P, m0: S) -> Result<SwarmState<S>> {
        if !(m0 > S::zero()) {
            return Err(Error::InvalidArgument(format!(
                "initial accumulator must be positive, got {m0}"
            )));
        }
        let (n, p, q) = (problem.num_agents(), problem.upper_dim(), problem.lower_dim());
        let triples: Vec<(Vec<S>, Vec<S>, Vec<S>)> = match self {
            InitSpec::Zeros => vec![(linalg::zeros(p), linalg::zeros(q), linalg::zeros(q)); n],
            InitSpec::Shared { x, y, v } => vec![(x.clone(), y.clone(), v.clone()); n],
            InitSpec::PerAgent(list) => {
                if list.len() != n {
                    return Err(Error::DimensionMismatch {
                        context: "per-agent init",
                        expected: n,
                        got: list.len(),
                    });
                }
                list.clone()
            }
        };
        let m0_sq = m0 * m0;
        let agents = triples
            .into_iter()
            .map(|(x, y, v)| {
                crate::error::check_dim("init x", p, x.len())?;
                crate::error::check_dim("init y", q, y.len())?;
                crate::error::check_dim("init v", q, v.len())?;
                Ok(AgentState {
                    x,
                    y,
                    v,
                    acc_x_sq: m0_sq,
                    acc_y_sq: m0_sq,
                    acc_v_sq: m0_sq,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SwarmState { agents, round: 0 })
    }
}

/// Feasible set for the auxiliary variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection<S> {
    /// Centered Euclidean ball of the given radius.
    Ball(S),
    Unbounded,
}

impl<S: Scalar> Projection<S> {
    pub fn apply(&self, v: &mut [S]) {
        if let Projection::Ball(radius) = *self {
            let norm = linalg::norm(v);
            if norm > radius {
                linalg::scale(radius / norm, v);
                // keep the result strictly feasible so a second pass is a no-op
                while linalg::norm(v) > radius {
                    linalg::scale(S::one() - S::epsilon(), v);
                }
            }
        }
    }
}

/// Ball radius `10 · C_fy / μ̂`, where `C_fy` is the largest local
/// `‖∇_y f_i‖` at the initial point and `μ̂` the problem's strong-convexity
/// bound at the mean initial `x`. Unbounded if the estimate is zero.
pub fn default_projection<S: Scalar, P: BilevelProblem<S> + ?Sized>(
    problem: &P,
    init: &SwarmState<S>,
) -> Result<Projection<S>> {
    let mut c_fy = S::zero();
    for (i, a) in init.agents.iter().enumerate() {
        c_fy = c_fy.max(linalg::norm(&problem.grad_upper_y(i, &a.x, &a.y)?));
    }
    let mu = problem.strong_convexity(&init.mean_x());
    let radius = S::lit(10.0) * c_fy / mu;
    if radius > S::zero() && radius.is_finite() {
        Ok(Projection::Ball(radius))
    } else {
        Ok(Projection::Unbounded)
    }
}

/// How the accumulators are gossiped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccumulatorMixing {
    /// Mix `[m]²` (the tracking recursion `k ← W(k + h)`).
    #[default]
    Squared,
    /// Mix `m` itself.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaSdboConfig<S> {
    pub gamma_x: S,
    pub gamma_y: S,
    pub gamma_v: S,
    /// Shared initial accumulator value `m_0`.
    pub m0: S,
    pub projection: Projection<S>,
    pub rounds: usize,
    pub accumulator_mixing: AccumulatorMixing,
}

impl<S: Scalar> Default for AdaSdboConfig<S> {
    fn default() -> Self {
        Self {
            gamma_x: S::one(),
            gamma_y: S::one(),
            gamma_v: S::one(),
            m0: S::lit(10.0),
            projection: Projection::Unbounded,
            rounds: 1000,
            accumulator_mixing: AccumulatorMixing::Squared,
        }
    }
}

impl<S: Scalar> AdaSdboConfig<S> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_x", self.gamma_x),
            ("gamma_y", self.gamma_y),
            ("gamma_v", self.gamma_v),
            ("m0", self.m0),
        ] {
            if !(v > S::zero() && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if let Projection::Ball(r) = self.projection {
            if !(r > S::zero()) {
                return Err(Error::InvalidArgument(format!(
                    "projection radius must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Local gradients of one agent at the round-start state.
#[derive(Clone, Debug)]
pub struct LocalGradients<S> {
    pub gx: Vec<S>,
    pub gy: Vec<S>,
    pub gv: Vec<S>,
}

impl<S: Scalar> LocalGradients<S> {
    /// `(‖g^x‖², ‖g^y‖², ‖g^v‖²)`
    pub fn norms_sq(&self) -> [S; 3] {
        [
            linalg::norm_sq(&self.gx),
            linalg::norm_sq(&self.gy),
            linalg::norm_sq(&self.gv),
        ]
    }
}

/// `g^y = ∇_y l`, `g^v = ∇²_yy l · v − ∇_y f`, `g^x = ∇_x f − ∇²_xy l · v`,
/// evaluated in parallel across agents with ordered collection.
pub fn local_gradients<S, P>(problem: &P, swarm: &SwarmState<S>) -> Result<Vec<LocalGradients<S>>>
where
    S: Scalar,
    P: BilevelProblem<S> + ?Sized,
{
    if swarm.n() != problem.num_agents() {
        return Err(Error::DimensionMismatch {
            context: "swarm size",
            expected: problem.num_agents(),
            got: swarm.n(),
        });
    }
    swarm
        .agents
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let gy = problem.grad_lower_y(i, &a.x, &a.y)?;
            let mut gv = problem.hvp_lower_yy(i, &a.x, &a.y, &a.v)?;
            linalg::axpy(-S::one(), &problem.grad_upper_y(i, &a.x, &a.y)?, &mut gv);
            let mut gx = problem.grad_upper_x(i, &a.x, &a.y)?;
            linalg::axpy(-S::one(), &problem.jvp_lower_xy(i, &a.x, &a.y, &a.v)?, &mut gx);
            let g = LocalGradients { gx, gy, gv };
            if !(linalg::all_finite(&g.gx) && linalg::all_finite(&g.gy) && linalg::all_finite(&g.gv)) {
                return Err(Error::Divergence {
                    round: swarm.round,
                    agent: i,
                    reason: "non-finite gradient".into(),
                });
            }
            Ok(g)
        })
        .collect()
}

/// Diagnostics produced by one round.
#[derive(Clone, Debug)]
pub struct StepReport<S> {
    /// Per agent `(‖g^x‖², ‖g^y‖², ‖g^v‖²)`.
    pub grad_norms_sq: Vec<[S; 3]>,
    /// Centralized-descent part of the mean `x` update (before `−γ_x`).
    pub term_a: Vec<S>,
    /// Stepsize-discrepancy part of the mean `x` update (before `−γ_x`).
    pub term_b: Vec<S>,
}

/// A synchronous single-loop round shared by AdaSDBO and the baselines.
pub trait Algorithm<S: Scalar>: Sync {
    fn rounds(&self) -> usize;

    /// Value every accumulator `m` starts at.
    fn initial_accumulator(&self) -> S;

    fn step_with_report<P: BilevelProblem<S> + ?Sized>(
        &self,
        swarm: &SwarmState<S>,
        problem: &P,
        mixing: &MixingMatrix<S>,
    ) -> Result<(SwarmState<S>, StepReport<S>)>;

    fn step<P: BilevelProblem<S> + ?Sized>(
        &self,
        swarm: &SwarmState<S>,
        problem: &P,
        mixing: &MixingMatrix<S>,
    ) -> Result<SwarmState<S>> {
        self.step_with_report(swarm, problem, mixing).map(|(s, _)| s)
    }
}

/// Stepsize denominators `(u, z, q)` for squared accumulators
/// `(kx, ky, kv)`: `u = m^y`, `z = max(m^v, m^y)`, `q = m^x z`. The `y`, `v`
/// and `x` steps are `γ_y/u`, `γ_v/z` and `γ_x/q`.
pub fn stepsize_denominators<S: Scalar>(kx: S, ky: S, kv: S) -> (S, S, S) {
    let (mx, my, mv) = (kx.sqrt(), ky.sqrt(), kv.sqrt());
    let z = mv.max(my);
    (my, z, mx * z)
}

/// Splits `(1/n) Σ_i q_i⁻¹ g_i` into `q̄⁻¹ · mean(g)` and
/// `(1/n) Σ_i (q_i⁻¹ − q̄⁻¹) g_i`, with `q̄ = mean(q)`.
pub(crate) fn decompose<S: Scalar>(q: &[S], gx: &[&[S]]) -> (Vec<S>, Vec<S>) {
    let n = S::from_count(q.len());
    let dim = gx[0].len();
    let q_bar_inv = n / q.iter().copied().sum::<S>();
    let mut term_a = linalg::zeros(dim);
    let mut term_b = linalg::zeros(dim);
    for (qi, g) in q.iter().zip(gx) {
        linalg::axpy(q_bar_inv / n, g, &mut term_a);
        linalg::axpy((S::one() / *qi - q_bar_inv) / n, g, &mut term_b);
    }
    (term_a, term_b)
}

pub(crate) fn check_divergence<S: Scalar>(swarm: &SwarmState<S>, round: usize) -> Result<()> {
    let limit = S::lit(DIVERGENCE_NORM);
    for (i, a) in swarm.agents.iter().enumerate() {
        let finite = linalg::all_finite(&a.x)
            && linalg::all_finite(&a.y)
            && linalg::all_finite(&a.v)
            && a.acc_x_sq.is_finite()
            && a.acc_y_sq.is_finite()
            && a.acc_v_sq.is_finite();
        if !finite {
            return Err(Error::Divergence {
                round,
                agent: i,
                reason: "non-finite iterate".into(),
            });
        }
        let norm = linalg::norm(&a.x);
        if norm > limit {
            return Err(Error::Divergence {
                round,
                agent: i,
                reason: format!("|x| = {norm:e} exceeds {DIVERGENCE_NORM:e}"),
            });
        }
    }
    Ok(())
}

/// Mixes `x`, `y`, `v` of every agent with `W` and projects `v`.
pub(crate) fn gossip_iterates<S: Scalar>(
    mixing: &MixingMatrix<S>,
    agents: &mut [AgentState<S>],
    projection: &Projection<S>,
) -> Result<()> {
    let xs = mixing.mix_rows(&agents.iter().map(|a| a.x.clone()).collect::<Vec<_>>())?;
    let ys = mixing.mix_rows(&agents.iter().map(|a| a.y.clone()).collect::<Vec<_>>())?;
    let vs = mixing.mix_rows(&agents.iter().map(|a| a.v.clone()).collect::<Vec<_>>())?;
    for (((a, x), y), mut v) in agents.iter_mut().zip(xs).zip(ys).zip(vs) {
        projection.apply(&mut v);
        a.x = x;
        a.y = y;
        a.v = v;
    }
    Ok(())
}

impl<S: Scalar> Algorithm<S> for AdaSdboConfig<S> {
    fn rounds(&self) -> usize {
        self.rounds
    }

    fn initial_accumulator(&self) -> S {
        self.m0
    }

    fn step_with_report<P: BilevelProblem<S> + ?Sized>(
        &self,
        swarm: &SwarmState<S>,
        problem: &P,
        mixing: &MixingMatrix<S>,
    ) -> Result<(SwarmState<S>, StepReport<S>)> {
        if mixing.n() != swarm.n() {
            return Err(Error::DimensionMismatch {
                context: "mixing matrix size",
                expected: swarm.n(),
                got: mixing.n(),
            });
        }
        let grads = local_gradients(problem, swarm)?;
        let norms: Vec<[S; 3]> = grads.iter().map(LocalGradients::norms_sq).collect();

        let mut agents = swarm.agents.clone();
        let mut q = Vec::with_capacity(agents.len());
        for ((a, g), h) in agents.iter_mut().zip(&grads).zip(&norms) {
            a.acc_x_sq += h[0];
            a.acc_y_sq += h[1];
            a.acc_v_sq += h[2];
            let (u, z, qi) = stepsize_denominators(a.acc_x_sq, a.acc_y_sq, a.acc_v_sq);
            linalg::axpy(-self.gamma_y / u, &g.gy, &mut a.y);
            linalg::axpy(-self.gamma_v / z, &g.gv, &mut a.v);
            linalg::axpy(-self.gamma_x / qi, &g.gx, &mut a.x);
            q.push(qi);
        }
        let gx_rows: Vec<&[S]> = grads.iter().map(|g| g.gx.as_slice()).collect();
        let (term_a, term_b) = decompose(&q, &gx_rows);

        gossip_iterates(mixing, &mut agents, &self.projection)?;
        mix_accumulators(mixing, &mut agents, self.accumulator_mixing)?;

        let next = SwarmState {
            agents,
            round: swarm.round + 1,
        };
        check_divergence(&next, swarm.round)?;
        Ok((
            next,
            StepReport {
                grad_norms_sq: norms,
                term_a,
                term_b,
            },
        ))
    }
}

fn mix_accumulators<S: Scalar>(
    mixing: &MixingMatrix<S>,
    agents: &mut [AgentState<S>],
    mode: AccumulatorMixing,
) -> Result<()> {
    let n = agents.len();
    let mut block = Vec::with_capacity(3 * n);
    for a in agents.iter() {
        match mode {
            AccumulatorMixing::Squared => block.extend([a.acc_x_sq, a.acc_y_sq, a.acc_v_sq]),
            AccumulatorMixing::Linear => block.extend([a.m_x(), a.m_y(), a.m_v()]),
        }
    }
    let mixed = mixing.mix(&block, 3)?;
    for (a, k) in agents.iter_mut().zip(mixed.chunks_exact(3)) {
        match mode {
            AccumulatorMixing::Squared => {
                a.acc_x_sq = k[0];
                a.acc_y_sq = k[1];
                a.acc_v_sq = k[2];
            }
            AccumulatorMixing::Linear => {
                a.acc_x_sq = k[0] * k[0];
                a.acc_y_sq = k[1] * k[1];
                a.acc_v_sq = k[2] * k[2];
            }
        }
    }
    Ok(())
}

/// One AdaSDBO round.
pub fn step<S: Scalar, P: BilevelProblem<S> + ?Sized>(
    swarm: &SwarmState<S>,
    problem: &P,
    mixing: &MixingMatrix<S>,
    cfg: &AdaSdboConfig<S>,
) -> Result<SwarmState<S>> {
    cfg.step(swarm, problem, mixing)
}

/// Reconstructs the mean `x` displacement of the AdaSDBO round
/// `before → after` as `−γ_x (term_a + term_b)`.
pub fn mean_update_decomposition<S: Scalar, P: BilevelProblem<S> + ?Sized>(
    problem: &P,
    before: &SwarmState<S>,
    after: &SwarmState<S>,
    cfg: &AdaSdboConfig<S>,
) -> Result<(Vec<S>, Vec<S>)> {
    if after.round != before.round + 1 || after.n() != before.n() {
        return Err(Error::InvalidArgument(format!(
            "states are not consecutive (rounds {} and {})",
            before.round, after.round
        )));
    }
    cfg.validate()?;
    let grads = local_gradients(problem, before)?;
    let q: Vec<S> = before
        .agents
        .iter()
        .zip(&grads)
        .map(|(a, g)| {
            let h = g.norms_sq();
            stepsize_denominators(a.acc_x_sq + h[0], a.acc_y_sq + h[1], a.acc_v_sq + h[2]).2
        })
        .collect();
    let rows: Vec<&[S]> = grads.iter().map(|g| g.gx.as_slice()).collect();
    Ok(decompose(&q, &rows))
}

/// Outcome of a completed run.
#[derive(Clone, Debug)]
pub struct RunResult<S> {
    pub final_state: SwarmState<S>,
    pub rounds_completed: usize,
    /// `‖∇Φ(x̄_T)‖²` at the returned state, if stationarity is tracked.
    pub final_stationarity: Option<S>,
    /// Minimum over recorded rounds and the final state.
    pub min_stationarity: Option<S>,
    pub final_accuracy: Option<S>,
    pub wall_time: Duration,
}

/// Runs `algorithm.rounds()` rounds from `init`, emitting one trace record
/// per round (describing the state at the start of that round).
///
/// On divergence the sinks are flushed with the records produced so far and
/// the error is returned.
pub fn run<S, P, A>(
    problem: &P,
    mixing: &MixingMatrix<S>,
    algorithm: &A,
    init: &InitSpec<S>,
    evaluator: &mut MetricsEvaluator<S>,
    sinks: &mut [&mut dyn TraceSink<S>],
) -> Result<RunResult<S>>
where
    S: Scalar,
    P: BilevelProblem<S> + ?Sized,
    A: Algorithm<S>,
{
    let start = Instant::now();
    let mut state = init.materialize(problem, algorithm.initial_accumulator())?;
    let mut min_stationarity: Option<S> = None;
    let outcome = (|| -> Result<()> {
        for _ in 0..algorithm.rounds() {
            let (next, report) = algorithm.step_with_report(&state, problem, mixing)?;
            let trace = evaluator.record(problem, &state, Some(&report))?;
            if let Some(s) = trace.stationarity {
                min_stationarity = Some(min_stationarity.map_or(s, |m: S| m.min(s)));
            }
            for sink in sinks.iter_mut() {
                sink.emit(&trace)?;
            }
            state = next;
        }
        Ok(())
    })();
    for sink in sinks.iter_mut() {
        sink.flush()?;
    }
    outcome?;

    let (final_stationarity, final_accuracy) = evaluator.final_metrics(problem, &state)?;
    if let Some(s) = final_stationarity {
        min_stationarity = Some(min_stationarity.map_or(s, |m: S| m.min(s)));
    }
    Ok(RunResult {
        rounds_completed: state.round,
        final_state: state,
        final_stationarity,
        min_stationarity,
        final_accuracy,
        wall_time: start.elapsed(),
    })
}
