//! Constant-stepsize single-loop decentralized bilevel baseline.
//!
//! Same round structure as [`crate::algorithm`], with fixed stepsizes and no
//! accumulators.

use serde::{Deserialize, Serialize};

use crate::algorithm::{
    check_divergence, decompose, gossip_iterates, local_gradients, Algorithm, LocalGradients, Projection, StepReport,
    SwarmState,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::MixingMatrix;
use crate::problems::BilevelProblem;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstConfig<S> {
    pub eta_x: S,
    pub eta_y: S,
    pub eta_v: S,
    pub projection: Projection<S>,
    pub rounds: usize,
}

impl<S: Scalar> Default for ConstConfig<S> {
    fn default() -> Self {
        Self {
            eta_x: S::lit(0.01),
            eta_y: S::lit(0.02),
            eta_v: S::lit(0.01),
            projection: Projection::Unbounded,
            rounds: 1000,
        }
    }
}

impl<S: Scalar> ConstConfig<S> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_x", self.eta_x), ("eta_y", self.eta_y), ("eta_v", self.eta_v)] {
            if !(v > S::zero() && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Algorithm<S> for ConstConfig<S> {
    fn rounds(&self) -> usize {
        self.rounds
    }

    fn initial_accumulator(&self) -> S {
        S::one()
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
        let norms = grads.iter().map(LocalGradients::norms_sq).collect();
        let mut agents = swarm.agents.clone();
        for (a, g) in agents.iter_mut().zip(&grads) {
            linalg::axpy(-self.eta_y, &g.gy, &mut a.y);
            linalg::axpy(-self.eta_v, &g.gv, &mut a.v);
            linalg::axpy(-self.eta_x, &g.gx, &mut a.x);
        }
        let rows: Vec<&[S]> = grads.iter().map(|g| g.gx.as_slice()).collect();
        let (term_a, term_b) = decompose(&vec![S::one(); rows.len()], &rows);

        gossip_iterates(mixing, &mut agents, &self.projection)?;
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

/// One constant-stepsize round.
pub fn const_step<S: Scalar, P: BilevelProblem<S> + ?Sized>(
    swarm: &SwarmState<S>,
    problem: &P,
    mixing: &MixingMatrix<S>,
    cfg: &ConstConfig<S>,
) -> Result<SwarmState<S>> {
    cfg.step(swarm, problem, mixing)
}
