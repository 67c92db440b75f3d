use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_args, BilevelProblem};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::rng::RngSpec;
use crate::Scalar;

/// Quadratic bilevel instance with closed-form solutions.
///
/// Agent `i` holds
///
/// ```text
/// f_i(x, y) = ½‖x − a − s_i‖² + ½‖y − b‖²
/// l_i(x, y) = ½‖y − C x − d_i‖²
/// ```
///
/// with offsets `s_i`, `d_i` summing to zero over agents, so the averaged
/// problem has `y*(x) = C x` and `∇Φ(x) = (x − a) + Cᵀ(C x − b)`.
#[derive(Clone, Debug)]
pub struct QuadraticBilevel<S> {
    a: Vec<S>,
    b: Vec<S>,
    /// `q × p`, row-major.
    c: Vec<S>,
    upper_offsets: Vec<Vec<S>>,
    lower_offsets: Vec<Vec<S>>,
}

/// Parameters of a randomly drawn quadratic instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticParams {
    pub upper_dim: usize,
    pub lower_dim: usize,
    pub agents: usize,
    /// Standard deviation of the entries of `a` and `b`.
    pub target_scale: f64,
    /// Standard deviation of the entries of `C` (before `1/√p` scaling).
    pub coupling_scale: f64,
    /// Standard deviation of the per-agent offsets.
    pub heterogeneity: f64,
}

impl<S: Scalar> QuadraticBilevel<S> {
    /// Builds an instance from explicit data. `offsets[i] = (s_i, d_i)`.
    pub fn new(a: Vec<S>, b: Vec<S>, c: Vec<S>, offsets: Vec<(Vec<S>, Vec<S>)>) -> Result<Self> {
        let (p, q) = (a.len(), b.len());
        if p == 0 || q == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        if offsets.is_empty() {
            return Err(Error::InvalidArgument("at least one agent required".into()));
        }
        check_dim("coupling matrix", p * q, c.len())?;
        let (upper_offsets, lower_offsets): (Vec<_>, Vec<_>) = offsets.into_iter().unzip();
        for s in &upper_offsets {
            check_dim("upper offset", p, s.len())?;
        }
        for d in &lower_offsets {
            check_dim("lower offset", q, d.len())?;
        }
        let largest = upper_offsets
            .iter()
            .chain(&lower_offsets)
            .flatten()
            .fold(S::one(), |m, o| m.max(o.abs()));
        let tol = S::lit(1e4) * S::epsilon() * largest;
        let mean_s = linalg::mean_rows(upper_offsets.iter().map(Vec::as_slice), p);
        let mean_d = linalg::mean_rows(lower_offsets.iter().map(Vec::as_slice), q);
        if mean_s.iter().chain(&mean_d).any(|m| m.abs() > tol) {
            return Err(Error::InvalidArgument("agent offsets must average to zero".into()));
        }
        Ok(Self {
            a,
            b,
            c,
            upper_offsets,
            lower_offsets,
        })
    }

    /// Identical agents (all offsets zero).
    pub fn homogeneous(a: Vec<S>, b: Vec<S>, c: Vec<S>, agents: usize) -> Result<Self> {
        let offsets = (0..agents)
            .map(|_| (linalg::zeros(a.len()), linalg::zeros(b.len())))
            .collect();
        Self::new(a, b, c, offsets)
    }

    /// Draws `a`, `b`, `C` and zero-mean offsets from `rng`.
    pub fn random(params: &QuadraticParams, rng: &RngSpec) -> Result<Self> {
        let (p, q, n) = (params.upper_dim, params.lower_dim, params.agents);
        if p == 0 || q == 0 || n == 0 {
            return Err(Error::InvalidArgument(
                "dimensions and agent count must be positive".into(),
            ));
        }
        let mut r = rng.rng();
        let draw = |scale: f64, len: usize, r: &mut rand_chacha::ChaCha8Rng| -> Vec<S> {
            (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(r);
                    S::lit(scale * z)
                })
                .collect()
        };
        let a = draw(params.target_scale, p, &mut r);
        let b = draw(params.target_scale, q, &mut r);
        let c = draw(params.coupling_scale / (p as f64).sqrt(), q * p, &mut r);
        let mut uppers: Vec<Vec<S>> = (0..n).map(|_| draw(params.heterogeneity, p, &mut r)).collect();
        let mut lowers: Vec<Vec<S>> = (0..n).map(|_| draw(params.heterogeneity, q, &mut r)).collect();
        center(&mut uppers, p);
        center(&mut lowers, q);
        Self::new(a, b, c, uppers.into_iter().zip(lowers).collect())
    }

    pub fn coupling(&self) -> &[S] {
        &self.c
    }

    /// `C x`
    fn c_times(&self, x: &[S]) -> Vec<S> {
        let p = self.a.len();
        self.c.chunks_exact(p).map(|row| linalg::dot(row, x)).collect()
    }

    /// `Cᵀ v`
    fn ct_times(&self, v: &[S]) -> Vec<S> {
        let p = self.a.len();
        let mut out = linalg::zeros(p);
        for (row, vi) in self.c.chunks_exact(p).zip(v) {
            linalg::axpy(*vi, row, &mut out);
        }
        out
    }

    /// Closed-form minimizer of the averaged lower objective: `C x`.
    pub fn lower_solution(&self, x: &[S]) -> Result<Vec<S>> {
        check_dim("x", self.a.len(), x.len())?;
        Ok(self.c_times(x))
    }

    /// Analytic hypergradient of the averaged problem.
    pub fn true_hypergradient(&self, x: &[S]) -> Result<Vec<S>> {
        check_dim("x", self.a.len(), x.len())?;
        let y_star = self.c_times(x);
        // v* = ∇_y f at y*, since the lower Hessian is the identity
        let v_star = linalg::sub(&y_star, &self.b);
        let mut g = linalg::sub(x, &self.a);
        linalg::axpy(S::one(), &self.ct_times(&v_star), &mut g);
        Ok(g)
    }

    /// Stationary point of `Φ`: solves `(I + CᵀC) x = a + Cᵀ b`.
    pub fn minimizer(&self) -> Vec<S> {
        let p = self.a.len();
        let mut h = vec![S::zero(); p * p];
        for row in self.c.chunks_exact(p) {
            for r in 0..p {
                for s in 0..p {
                    h[r * p + s] += row[r] * row[s];
                }
            }
        }
        for r in 0..p {
            h[r * p + r] += S::one();
        }
        let mut rhs = self.a.clone();
        linalg::axpy(S::one(), &self.ct_times(&self.b), &mut rhs);
        cholesky_solve(&mut h, p, rhs)
    }
}

fn center<S: Scalar>(rows: &mut [Vec<S>], dim: usize) {
    let mean = linalg::mean_rows(rows.iter().map(Vec::as_slice), dim);
    for row in rows.iter_mut() {
        linalg::axpy(-S::one(), &mean, row);
    }
}

/// In-place Cholesky factorization of an SPD matrix followed by two
/// triangular solves.
fn cholesky_solve<S: Scalar>(h: &mut [S], n: usize, mut rhs: Vec<S>) -> Vec<S> {
    for j in 0..n {
        let mut d = h[j * n + j];
        for k in 0..j {
            d -= h[j * n + k] * h[j * n + k];
        }
        let d = d.sqrt();
        h[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= h[i * n + k] * h[j * n + k];
            }
            h[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = rhs[i];
        for k in 0..i {
            s -= h[i * n + k] * rhs[k];
        }
        rhs[i] = s / h[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for k in (i + 1)..n {
            s -= h[k * n + i] * rhs[k];
        }
        rhs[i] = s / h[i * n + i];
    }
    rhs
}

impl<S: Scalar> BilevelProblem<S> for QuadraticBilevel<S> {
    fn upper_dim(&self) -> usize {
        self.a.len()
    }

    fn lower_dim(&self) -> usize {
        self.b.len()
    }

    fn num_agents(&self) -> usize {
        self.upper_offsets.len()
    }

    fn grad_upper_x(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        let mut g = linalg::sub(x, &self.a);
        linalg::axpy(-S::one(), &self.upper_offsets[agent], &mut g);
        Ok(g)
    }

    fn grad_upper_y(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        Ok(linalg::sub(y, &self.b))
    }

    fn grad_lower_y(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        let mut g = linalg::sub(y, &self.c_times(x));
        linalg::axpy(-S::one(), &self.lower_offsets[agent], &mut g);
        Ok(g)
    }

    fn hvp_lower_yy(&self, agent: usize, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, Some(v))?;
        Ok(v.to_vec())
    }

    fn jvp_lower_xy(&self, agent: usize, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, Some(v))?;
        let mut out = self.ct_times(v);
        linalg::scale(-S::one(), &mut out);
        Ok(out)
    }

    fn upper_loss(&self, agent: usize, x: &[S], y: &[S]) -> Result<S> {
        let gx = self.grad_upper_x(agent, x, y)?;
        let gy = self.grad_upper_y(agent, x, y)?;
        Ok(S::lit(0.5) * (linalg::norm_sq(&gx) + linalg::norm_sq(&gy)))
    }

    fn lower_loss(&self, agent: usize, x: &[S], y: &[S]) -> Result<S> {
        let g = self.grad_lower_y(agent, x, y)?;
        Ok(S::lit(0.5) * linalg::norm_sq(&g))
    }

    fn strong_convexity(&self, _x: &[S]) -> S {
        S::one()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem() -> QuadraticBilevel<f64> {
        QuadraticBilevel::homogeneous(vec![0.0], vec![0.0], vec![1.0], 1).unwrap()
    }

    #[test]
    fn scalar_examples() {
        let prob = scalar_problem();
        assert_eq!(prob.grad_upper_x(0, &[2.0], &[5.0]).unwrap(), vec![2.0]);
        assert_eq!(prob.grad_upper_x(0, &[0.0], &[5.0]).unwrap(), vec![0.0]);
        assert_eq!(prob.grad_upper_y(0, &[1.0], &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(prob.grad_lower_y(0, &[3.0], &[3.0]).unwrap(), vec![0.0]);
        assert_eq!(prob.hvp_lower_yy(0, &[3.0], &[1.0], &[7.0]).unwrap(), vec![7.0]);
        assert_eq!(prob.upper_loss(0, &[0.0], &[0.0]).unwrap(), 0.0);
        // y* = x, ∇Φ = 2x
        assert_eq!(prob.true_hypergradient(&[2.0]).unwrap(), vec![4.0]);
        assert_eq!(prob.minimizer(), vec![0.0]);
    }

    #[test]
    fn mixed_partial_with_identity_coupling() {
        let prob = QuadraticBilevel::homogeneous(vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], 2).unwrap();
        let out = prob.jvp_lower_xy(1, &[0.3, 0.1], &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![-1.0, -2.0]);
        let zero = prob.jvp_lower_xy(0, &[0.3, 0.1], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let prob = scalar_problem();
        assert!(matches!(
            prob.grad_upper_x(0, &[1.0, 2.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            prob.grad_lower_y(3, &[1.0], &[0.0]),
            Err(Error::InvalidArgument(_))
        ));
        let off = vec![(vec![1.0], vec![0.0]), (vec![0.5], vec![0.0])];
        assert!(QuadraticBilevel::new(vec![0.0], vec![0.0], vec![1.0], off).is_err());
    }

    #[test]
    fn minimizer_zeroes_hypergradient() {
        let params = QuadraticParams {
            upper_dim: 4,
            lower_dim: 3,
            agents: 5,
            target_scale: 1.0,
            coupling_scale: 1.5,
            heterogeneity: 1.0,
        };
        let prob: QuadraticBilevel<f64> = QuadraticBilevel::random(&params, &RngSpec::new(3, "q")).unwrap();
        let g = prob.true_hypergradient(&prob.minimizer()).unwrap();
        assert!(linalg::norm(&g) < 1e-12, "{g:?}");
    }

    #[test]
    fn averaged_oracle_equals_homogeneous_oracle() {
        let params = QuadraticParams {
            upper_dim: 3,
            lower_dim: 2,
            agents: 4,
            target_scale: 0.5,
            coupling_scale: 1.0,
            heterogeneity: 2.0,
        };
        let het: QuadraticBilevel<f64> = QuadraticBilevel::random(&params, &RngSpec::new(11, "q")).unwrap();
        let hom = QuadraticBilevel::homogeneous(het.a.clone(), het.b.clone(), het.c.clone(), 1).unwrap();
        let x = [0.3, -1.2, 0.7];
        let y = [1.1, -0.4];
        let v = [0.2, 0.9];
        let pairs = [
            (
                super::super::averaged::grad_lower_y(&het, &x, &y).unwrap(),
                hom.grad_lower_y(0, &x, &y).unwrap(),
            ),
            (
                super::super::averaged::grad_upper_x(&het, &x, &y).unwrap(),
                hom.grad_upper_x(0, &x, &y).unwrap(),
            ),
            (
                super::super::averaged::jvp_lower_xy(&het, &x, &y, &v).unwrap(),
                hom.jvp_lower_xy(0, &x, &y, &v).unwrap(),
            ),
        ];
        for (avg, single) in pairs {
            for (u, w) in avg.iter().zip(&single) {
                assert!((u - w).abs() < 1e-12);
            }
        }
    }
}
