//! Reference hypergradient on the network-averaged problem.
//!
//! `y*(x)` comes from gradient descent with Barzilai-Borwein trial steps and
//! Armijo backtracking, `v*(x)` from conjugate gradients driven by
//! Hessian-vector products only.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::problems::{averaged, BilevelProblem};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Stopping threshold on the averaged lower gradient norm.
    pub inner_tol: f64,
    /// Threshold on the true linear-system residual norm.
    pub cg_tol: f64,
    pub max_inner_iters: usize,
    pub max_cg_iters: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            inner_tol: 1e-9,
            cg_tol: 1e-10,
            max_inner_iters: 10_000,
            max_cg_iters: 2_000,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, tol) in [("inner_tol", self.inner_tol), ("cg_tol", self.cg_tol)] {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 1), got {tol}")));
            }
        }
        if self.max_inner_iters == 0 || self.max_cg_iters == 0 {
            return Err(Error::InvalidArgument("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solve<S> {
    pub solution: Vec<S>,
    pub iterations: usize,
    /// Final residual norm.
    pub residual: S,
}

const MAX_BACKTRACKS: usize = 80;
const ARMIJO: f64 = 1e-4;

/// Minimizes the averaged lower objective at `x`, starting from `y0`.
pub fn solve_lower_from<S, P>(problem: &P, x: &[S], y0: &[S], cfg: &OracleConfig) -> Result<Solve<S>>
where
    S: Scalar,
    P: BilevelProblem<S> + ?Sized,
{
    cfg.validate()?;
    check_dim("oracle x", problem.upper_dim(), x.len())?;
    check_dim("oracle y0", problem.lower_dim(), y0.len())?;
    let tol = S::lit(cfg.inner_tol);
    let slack_factor = S::lit(10.0) * S::epsilon();
    let armijo = S::lit(ARMIJO);
    let half = S::lit(0.5);

    let mut y = y0.to_vec();
    let mut loss = averaged::lower_loss(problem, x, &y)?;
    let mut grad = averaged::grad_lower_y(problem, x, &y)?;
    let mut step = S::one();
    let mut prev: Option<(Vec<S>, Vec<S>)> = None;

    for iter in 0..cfg.max_inner_iters {
        let residual = linalg::norm(&grad);
        if !residual.is_finite() || !loss.is_finite() {
            return Err(Error::OracleFailure {
                stage: "solve_lower",
                reason: "non-finite objective or gradient".into(),
                residual: residual.to_f64_lossy(),
            });
        }
        if residual <= tol {
            return Ok(Solve {
                solution: y,
                iterations: iter,
                residual,
            });
        }
        if let Some((s, d)) = &prev {
            let sd = linalg::dot(s, d);
            if sd > S::zero() {
                step = linalg::norm_sq(s) / sd;
            }
        }
        let g_sq = residual * residual;
        let slack = slack_factor * loss.abs();
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = y.clone();
            linalg::axpy(-step, &grad, &mut trial);
            let trial_loss = averaged::lower_loss(problem, x, &trial)?;
            if trial_loss <= loss - armijo * step * g_sq + slack {
                accepted = Some((trial, trial_loss));
                break;
            }
            step *= half;
        }
        let Some((next, next_loss)) = accepted else {
            return Err(Error::OracleFailure {
                stage: "solve_lower",
                reason: "line search failed".into(),
                residual: residual.to_f64_lossy(),
            });
        };
        let next_grad = averaged::grad_lower_y(problem, x, &next)?;
        prev = Some((linalg::sub(&next, &y), linalg::sub(&next_grad, &grad)));
        y = next;
        loss = next_loss;
        grad = next_grad;
    }
    let residual = linalg::norm(&grad);
    if residual <= tol {
        return Ok(Solve {
            solution: y,
            iterations: cfg.max_inner_iters,
            residual,
        });
    }
    Err(Error::OracleFailure {
        stage: "solve_lower",
        reason: format!("no convergence in {} iterations", cfg.max_inner_iters),
        residual: residual.to_f64_lossy(),
    })
}

fn averaged_hvp<S: Scalar, P: BilevelProblem<S> + ?Sized>(problem: &P, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
    averaged::hvp_lower_yy(problem, x, y, v)
}

/// Solves `H v = ∇_y f` on the averaged problem at `(x, y)` from `v0`.
pub fn solve_linear_system_from<S, P>(problem: &P, x: &[S], y: &[S], v0: &[S], cfg: &OracleConfig) -> Result<Solve<S>>
where
    S: Scalar,
    P: BilevelProblem<S> + ?Sized,
{
    cfg.validate()?;
    check_dim("oracle x", problem.upper_dim(), x.len())?;
    check_dim("oracle y", problem.lower_dim(), y.len())?;
    check_dim("oracle v0", problem.lower_dim(), v0.len())?;
    let tol = S::lit(cfg.cg_tol);
    let rhs = averaged::grad_upper_y(problem, x, y)?;
    if rhs.iter().all(|r| *r == S::zero()) {
        return Ok(Solve {
            solution: linalg::zeros(rhs.len()),
            iterations: 0,
            residual: S::zero(),
        });
    }
    let true_residual = |v: &[S]| -> Result<Vec<S>> {
        let hv = averaged_hvp(problem, x, y, v)?;
        Ok(linalg::sub(&rhs, &hv))
    };

    let mut v = v0.to_vec();
    let mut r = true_residual(&v)?;
    let mut d = r.clone();
    let mut rr = linalg::norm_sq(&r);
    let mut iterations = 0;
    while iterations < cfg.max_cg_iters {
        if rr.sqrt() <= tol {
            r = true_residual(&v)?;
            rr = linalg::norm_sq(&r);
            if rr.sqrt() <= tol {
                return Ok(Solve {
                    solution: v,
                    iterations,
                    residual: rr.sqrt(),
                });
            }
            d = r.clone();
        }
        let hd = averaged_hvp(problem, x, y, &d)?;
        let curvature = linalg::dot(&d, &hd);
        if !(curvature > S::zero()) {
            return Err(Error::OracleFailure {
                stage: "solve_linear_system",
                reason: format!("non-positive curvature {curvature:e}"),
                residual: rr.sqrt().to_f64_lossy(),
            });
        }
        let alpha = rr / curvature;
        linalg::axpy(alpha, &d, &mut v);
        linalg::axpy(-alpha, &hd, &mut r);
        let rr_next = linalg::norm_sq(&r);
        let beta = rr_next / rr;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = *ri + beta * *di;
        }
        rr = rr_next;
        iterations += 1;
    }
    let residual = linalg::norm(&true_residual(&v)?);
    if residual <= tol {
        return Ok(Solve {
            solution: v,
            iterations,
            residual,
        });
    }
    Err(Error::OracleFailure {
        stage: "solve_linear_system",
        reason: format!("no convergence in {} iterations", cfg.max_cg_iters),
        residual: residual.to_f64_lossy(),
    })
}

/// Cold-started `y*(x)`.
pub fn solve_lower<S: Scalar, P: BilevelProblem<S> + ?Sized>(
    problem: &P,
    x: &[S],
    cfg: &OracleConfig,
) -> Result<Vec<S>> {
    solve_lower_from(problem, x, &linalg::zeros(problem.lower_dim()), cfg).map(|s| s.solution)
}

/// Cold-started `v*(x)` at the given lower solution.
pub fn solve_linear_system<S: Scalar, P: BilevelProblem<S> + ?Sized>(
    problem: &P,
    x: &[S],
    y: &[S],
    cfg: &OracleConfig,
) -> Result<Vec<S>> {
    solve_linear_system_from(problem, x, y, &linalg::zeros(problem.lower_dim()), cfg).map(|s| s.solution)
}

/// Cold-started `∇Φ(x)`.
pub fn true_hypergradient<S: Scalar, P: BilevelProblem<S> + ?Sized>(
    problem: &P,
    x: &[S],
    cfg: &OracleConfig,
) -> Result<Vec<S>> {
    HypergradOracle::new(cfg.clone())?.true_hypergradient(problem, x)
}

/// Cold-started `‖∇Φ(x)‖²`.
pub fn stationarity<S: Scalar, P: BilevelProblem<S> + ?Sized>(problem: &P, x: &[S], cfg: &OracleConfig) -> Result<S> {
    HypergradOracle::new(cfg.clone())?.stationarity(problem, x)
}

/// `Φ(x) = f(x, y*(x))` on the averaged problem.
pub fn upper_value<S: Scalar, P: BilevelProblem<S> + ?Sized>(problem: &P, x: &[S], cfg: &OracleConfig) -> Result<S> {
    let y = solve_lower(problem, x, cfg)?;
    averaged::upper_loss(problem, x, &y)
}

/// Everything computed for one hypergradient evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergradient<S> {
    pub y: Vec<S>,
    pub v: Vec<S>,
    pub grad: Vec<S>,
}

/// Hypergradient oracle that warm-starts both solvers from its previous
/// evaluation.
#[derive(Clone, Debug)]
pub struct HypergradOracle<S> {
    config: OracleConfig,
    warm: Option<(Vec<S>, Vec<S>)>,
}

impl<S: Scalar> HypergradOracle<S> {
    pub fn new(config: OracleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, warm: None })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn evaluate<P: BilevelProblem<S> + ?Sized>(&mut self, problem: &P, x: &[S]) -> Result<Hypergradient<S>> {
        let q = problem.lower_dim();
        let (y0, v0) = match self.warm.take() {
            Some((y, v)) if y.len() == q && v.len() == q => (y, v),
            _ => (linalg::zeros(q), linalg::zeros(q)),
        };
        let y = solve_lower_from(problem, x, &y0, &self.config)?.solution;
        let v = solve_linear_system_from(problem, x, &y, &v0, &self.config)?.solution;
        let mut grad = averaged::grad_upper_x(problem, x, &y)?;
        linalg::axpy(-S::one(), &averaged::jvp_lower_xy(problem, x, &y, &v)?, &mut grad);
        self.warm = Some((y.clone(), v.clone()));
        Ok(Hypergradient { y, v, grad })
    }

    pub fn solve_lower<P: BilevelProblem<S> + ?Sized>(&mut self, problem: &P, x: &[S]) -> Result<Vec<S>> {
        let q = problem.lower_dim();
        let (y0, v0) = match self.warm.take() {
            Some((y, v)) if y.len() == q && v.len() == q => (y, v),
            _ => (linalg::zeros(q), linalg::zeros(q)),
        };
        let y = solve_lower_from(problem, x, &y0, &self.config)?.solution;
        self.warm = Some((y.clone(), v0));
        Ok(y)
    }

    pub fn true_hypergradient<P: BilevelProblem<S> + ?Sized>(&mut self, problem: &P, x: &[S]) -> Result<Vec<S>> {
        self.evaluate(problem, x).map(|h| h.grad)
    }

    pub fn stationarity<P: BilevelProblem<S> + ?Sized>(&mut self, problem: &P, x: &[S]) -> Result<S> {
        self.true_hypergradient(problem, x).map(|g| linalg::norm_sq(&g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticBilevel;

    fn scalar_problem() -> QuadraticBilevel<f64> {
        QuadraticBilevel::homogeneous(vec![0.0], vec![0.0], vec![1.0], 1).unwrap()
    }

    #[test]
    fn scalar_hypergradient() {
        let p = scalar_problem();
        let cfg = OracleConfig::default();
        let g = true_hypergradient(&p, &[2.0], &cfg).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-12);
        assert!((stationarity(&p, &[2.0], &cfg).unwrap() - 16.0).abs() < 1e-10);
        assert!(stationarity(&p, &[0.0], &cfg).unwrap() <= 1e-16);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let p = scalar_problem();
        let v = solve_linear_system(&p, &[0.0], &[0.0], &OracleConfig::default()).unwrap();
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = OracleConfig {
            cg_tol: 1.5,
            ..OracleConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = OracleConfig {
            max_inner_iters: 0,
            ..OracleConfig::default()
        };
        assert!(HypergradOracle::<f64>::new(cfg).is_err());
    }

    #[test]
    fn warm_start_agrees_with_cold() {
        let p = scalar_problem();
        let mut oracle = HypergradOracle::new(OracleConfig::default()).unwrap();
        for x in [2.0, 1.9, -0.5] {
            let warm = oracle.true_hypergradient(&p, &[x]).unwrap();
            let cold = true_hypergradient(&p, &[x], &OracleConfig::default()).unwrap();
            assert!((warm[0] - cold[0]).abs() < 1e-9);
        }
    }
}
