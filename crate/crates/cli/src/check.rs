use adasdbo::linalg;
use adasdbo::oracle::{true_hypergradient, upper_value};
use adasdbo::{BilevelProblem, OracleConfig, RngSpec};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::{ExperimentConfig, ProblemConfig};
use crate::runner::{build_problem, quadratic_instance};
use crate::Result;

/// Finite-difference step for `Φ`.
const FD_STEP: f64 = 1e-4;
/// Solver tolerances are capped here: an error `δ` in `y*` shows up as
/// roughly `δ / FD_STEP` in the differences.
const CHECK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub points: usize,
    /// Largest `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` against central differences
    /// of `Φ`.
    pub max_rel_error: f64,
    /// Same, against the closed-form gradient (quadratic only).
    pub analytic_max_rel_error: Option<f64>,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = linalg::norm(a).max(linalg::norm(b));
    if scale == 0.0 {
        0.0
    } else {
        linalg::norm(&linalg::sub(a, b)) / scale
    }
}

fn central_differences(problem: &dyn BilevelProblem<f64>, x: &[f64], cfg: &OracleConfig) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for (j, g) in grad.iter_mut().enumerate() {
        probe[j] = x[j] + FD_STEP;
        let plus = upper_value(problem, &probe, cfg)?;
        probe[j] = x[j] - FD_STEP;
        let minus = upper_value(problem, &probe, cfg)?;
        probe[j] = x[j];
        *g = (plus - minus) / (2.0 * FD_STEP);
    }
    Ok(grad)
}

/// Compares the oracle hypergradient with central differences of `Φ` at
/// `points` Gaussian points (scale `point_scale`) on the configured problem,
/// with the solver tolerances capped at `1e-12`.
pub fn oracle_check(cfg: &ExperimentConfig, points: usize, point_scale: f64) -> Result<OracleReport> {
    let problem = build_problem(cfg)?;
    let problem = problem.as_ref();
    let analytic = match &cfg.problem {
        ProblemConfig::Quadratic(q) => Some(quadratic_instance(q, cfg.topology.agents)?),
        _ => None,
    };
    let mut ocfg = cfg.oracle.oracle_config();
    ocfg.inner_tol = ocfg.inner_tol.min(CHECK_TOL);
    ocfg.cg_tol = ocfg.cg_tol.min(CHECK_TOL);
    let normal = Normal::new(0.0, point_scale)
        .map_err(|e| crate::CliError::Config(format!("point scale {point_scale}: {e}")))?;
    let mut rng = RngSpec::new(0, "oracle-check").rng();

    let mut report = OracleReport {
        points,
        max_rel_error: 0.0,
        analytic_max_rel_error: analytic.as_ref().map(|_| 0.0),
    };
    for _ in 0..points {
        let x: Vec<f64> = (0..problem.upper_dim()).map(|_| normal.sample(&mut rng)).collect();
        let grad = true_hypergradient(problem, &x, &ocfg)?;
        let fd = central_differences(problem, &x, &ocfg)?;
        report.max_rel_error = report.max_rel_error.max(rel_err(&grad, &fd));
        if let (Some(q), Some(worst)) = (&analytic, report.analytic_max_rel_error.as_mut()) {
            *worst = worst.max(rel_err(&grad, &q.true_hypergradient(&x)?));
        }
    }
    Ok(report)
}
