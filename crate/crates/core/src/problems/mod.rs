//! Bilevel problems and the derivative oracles the solvers consume.
//!
//! Every problem is a network average of per-agent objectives
//! `f_i(x, y)` (upper) and `l_i(x, y)` (lower, strongly convex in `y`).

mod quadratic;
mod softmax;
mod synthetic;

pub use quadratic::{QuadraticBilevel, QuadraticParams};
pub use softmax::SoftmaxHpo;
pub use synthetic::SyntheticLogisticHpo;

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::Scalar;

/// Per-agent derivative oracle of a decentralized bilevel problem.
///
/// Implementations are pure: the same arguments always produce the same
/// output, and distinct agents may be queried from different threads.
pub trait BilevelProblem<S: Scalar>: Send + Sync {
    /// Dimension of the upper-level variable `x`.
    fn upper_dim(&self) -> usize;
    /// Dimension of the lower-level variable `y` (and of `v`).
    fn lower_dim(&self) -> usize;
    fn num_agents(&self) -> usize;

    /// `∇_x f_i(x, y)`
    fn grad_upper_x(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>>;
    /// `∇_y f_i(x, y)`
    fn grad_upper_y(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>>;
    /// `∇_y l_i(x, y)`
    fn grad_lower_y(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>>;
    /// `∇_y∇_y l_i(x, y) · v`, without forming the Hessian.
    fn hvp_lower_yy(&self, agent: usize, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>>;
    /// `∇_x∇_y l_i(x, y) · v`, a vector in the upper space.
    fn jvp_lower_xy(&self, agent: usize, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>>;

    fn upper_loss(&self, agent: usize, x: &[S], y: &[S]) -> Result<S>;
    fn lower_loss(&self, agent: usize, x: &[S], y: &[S]) -> Result<S>;

    /// A positive lower bound on the strong-convexity modulus of the
    /// averaged lower objective at `x`.
    fn strong_convexity(&self, x: &[S]) -> S;

    /// Held-out accuracy of the lower-level model `y`.
    fn test_accuracy(&self, _x: &[S], _y: &[S]) -> Result<S> {
        Err(Error::UnsupportedMetric("test_accuracy"))
    }
}

/// Validates agent index and argument dimensions for an oracle call.
pub(crate) fn check_args<S: Scalar, P: BilevelProblem<S> + ?Sized>(
    problem: &P,
    agent: usize,
    x: &[S],
    y: &[S],
    v: Option<&[S]>,
) -> Result<()> {
    if agent >= problem.num_agents() {
        return Err(Error::InvalidArgument(format!(
            "agent index {agent} out of range for {} agents",
            problem.num_agents()
        )));
    }
    check_dim("x", problem.upper_dim(), x.len())?;
    check_dim("y", problem.lower_dim(), y.len())?;
    if let Some(v) = v {
        check_dim("v", problem.lower_dim(), v.len())?;
    }
    Ok(())
}

fn mean_over_agents<S, P, F>(problem: &P, dim: usize, mut f: F) -> Result<Vec<S>>
where
    S: Scalar,
    P: BilevelProblem<S> + ?Sized,
    F: FnMut(usize) -> Result<Vec<S>>,
{
    let n = problem.num_agents();
    let mut acc = linalg::zeros(dim);
    for i in 0..n {
        linalg::axpy(S::one(), &f(i)?, &mut acc);
    }
    linalg::scale(S::one() / S::from_count(n), &mut acc);
    Ok(acc)
}

/// Averaged-objective helpers: `(1/n) Σ_i` of each oracle at a common point.
pub mod averaged {
    use super::*;

    pub fn grad_upper_x<S: Scalar, P: BilevelProblem<S> + ?Sized>(p: &P, x: &[S], y: &[S]) -> Result<Vec<S>> {
        mean_over_agents(p, p.upper_dim(), |i| p.grad_upper_x(i, x, y))
    }

    pub fn grad_upper_y<S: Scalar, P: BilevelProblem<S> + ?Sized>(p: &P, x: &[S], y: &[S]) -> Result<Vec<S>> {
        mean_over_agents(p, p.lower_dim(), |i| p.grad_upper_y(i, x, y))
    }

    pub fn grad_lower_y<S: Scalar, P: BilevelProblem<S> + ?Sized>(p: &P, x: &[S], y: &[S]) -> Result<Vec<S>> {
        mean_over_agents(p, p.lower_dim(), |i| p.grad_lower_y(i, x, y))
    }

    pub fn hvp_lower_yy<S: Scalar, P: BilevelProblem<S> + ?Sized>(p: &P, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
        mean_over_agents(p, p.lower_dim(), |i| p.hvp_lower_yy(i, x, y, v))
    }

    pub fn jvp_lower_xy<S: Scalar, P: BilevelProblem<S> + ?Sized>(p: &P, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
        mean_over_agents(p, p.upper_dim(), |i| p.jvp_lower_xy(i, x, y, v))
    }

    pub fn upper_loss<S: Scalar, P: BilevelProblem<S> + ?Sized>(p: &P, x: &[S], y: &[S]) -> Result<S> {
        let mut acc = S::zero();
        for i in 0..p.num_agents() {
            acc += p.upper_loss(i, x, y)?;
        }
        Ok(acc / S::from_count(p.num_agents()))
    }

    pub fn lower_loss<S: Scalar, P: BilevelProblem<S> + ?Sized>(p: &P, x: &[S], y: &[S]) -> Result<S> {
        let mut acc = S::zero();
        for i in 0..p.num_agents() {
            acc += p.lower_loss(i, x, y)?;
        }
        Ok(acc / S::from_count(p.num_agents()))
    }
}

// Numerically stable logistic helpers shared by the data-driven problems.

/// `log(1 + e^z)`
#[inline]
pub(crate) fn softplus<S: Scalar>(z: S) -> S {
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{-z})`
#[inline]
pub(crate) fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}
