use super::{check_args, sigmoid, softplus, BilevelProblem};
use crate::data::{Dataset, Labels, SyntheticData};
use crate::error::{Error, Result};
use crate::linalg;
use crate::Scalar;

/// Logistic-loss hyperparameter optimization with a per-coordinate ridge.
///
/// With `x = λ ∈ ℝ^p` and `y = ω ∈ ℝ^p`, agent `i` holds
///
/// ```text
/// f_i(λ, ω) = Σ_{D'_i} ψ(y_e x_eᵀω)
/// l_i(λ, ω) = Σ_{D_i}  ψ(y_e x_eᵀω) + ½ Σ_j e^{λ_j} ω_j²
/// ```
///
/// where `ψ(u) = log(1 + e^{-u})`. Losses are sums, not means.
#[derive(Clone, Debug)]
pub struct SyntheticLogisticHpo<S> {
    dim: usize,
    agents: Vec<Shard<S>>,
}

#[derive(Clone, Debug)]
struct Shard<S> {
    train: Dataset<S>,
    train_labels: Vec<S>,
    val: Dataset<S>,
    val_labels: Vec<S>,
}

fn real_labels<S: Scalar>(ds: &Dataset<S>) -> Result<Vec<S>> {
    match ds.labels() {
        Labels::Real(v) => Ok(v.clone()),
        Labels::Class(_) => Err(Error::InvalidArgument("logistic problem needs real labels".into())),
    }
}

/// `Σ ψ(y_e x_eᵀω)`
fn data_loss<S: Scalar>(ds: &Dataset<S>, labels: &[S], w: &[S]) -> S {
    let mut acc = S::zero();
    for (x, &y) in ds.rows().zip(labels) {
        acc += softplus(-(y * linalg::dot(x, w)));
    }
    acc
}

/// `Σ ψ'(u_e) y_e x_e` with `ψ'(u) = −σ(−u)`.
fn data_grad<S: Scalar>(ds: &Dataset<S>, labels: &[S], w: &[S]) -> Vec<S> {
    let mut g = linalg::zeros(ds.dim());
    for (x, &y) in ds.rows().zip(labels) {
        let u = y * linalg::dot(x, w);
        linalg::axpy(-sigmoid(-u) * y, x, &mut g);
    }
    g
}

/// `Σ ψ''(u_e) y_e² (x_eᵀv) x_e` with `ψ''(u) = σ(u)σ(−u)`.
fn data_hvp<S: Scalar>(ds: &Dataset<S>, labels: &[S], w: &[S], v: &[S]) -> Vec<S> {
    let mut h = linalg::zeros(ds.dim());
    for (x, &y) in ds.rows().zip(labels) {
        let u = y * linalg::dot(x, w);
        let curv = sigmoid(u) * sigmoid(-u) * y * y;
        linalg::axpy(curv * linalg::dot(x, v), x, &mut h);
    }
    h
}

impl<S: Scalar> SyntheticLogisticHpo<S> {
    /// One `(train, validation)` pair per agent, all with real labels.
    pub fn new(agents: Vec<(Dataset<S>, Dataset<S>)>) -> Result<Self> {
        let dim = agents
            .first()
            .map(|(t, _)| t.dim())
            .ok_or_else(|| Error::InvalidArgument("at least one agent required".into()))?;
        let agents = agents
            .into_iter()
            .map(|(train, val)| {
                if train.dim() != dim || val.dim() != dim {
                    return Err(Error::InvalidArgument("agents disagree on feature dimension".into()));
                }
                Ok(Shard {
                    train_labels: real_labels(&train)?,
                    val_labels: real_labels(&val)?,
                    train,
                    val,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, agents })
    }

    pub fn from_synthetic(data: SyntheticData<S>) -> Result<Self> {
        Self::new(data.agents)
    }
}

impl<S: Scalar> BilevelProblem<S> for SyntheticLogisticHpo<S> {
    fn upper_dim(&self) -> usize {
        self.dim
    }

    fn lower_dim(&self) -> usize {
        self.dim
    }

    fn num_agents(&self) -> usize {
        self.agents.len()
    }

    fn grad_upper_x(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        Ok(linalg::zeros(self.dim))
    }

    fn grad_upper_y(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        let a = &self.agents[agent];
        Ok(data_grad(&a.val, &a.val_labels, y))
    }

    fn grad_lower_y(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        let a = &self.agents[agent];
        let mut g = data_grad(&a.train, &a.train_labels, y);
        for ((gj, lam), w) in g.iter_mut().zip(x).zip(y) {
            *gj += lam.exp() * *w;
        }
        Ok(g)
    }

    fn hvp_lower_yy(&self, agent: usize, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, Some(v))?;
        let a = &self.agents[agent];
        let mut h = data_hvp(&a.train, &a.train_labels, y, v);
        for ((hj, lam), vj) in h.iter_mut().zip(x).zip(v) {
            *hj += lam.exp() * *vj;
        }
        Ok(h)
    }

    fn jvp_lower_xy(&self, agent: usize, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, Some(v))?;
        Ok(x.iter()
            .zip(y)
            .zip(v)
            .map(|((lam, w), vj)| lam.exp() * *w * *vj)
            .collect())
    }

    fn upper_loss(&self, agent: usize, x: &[S], y: &[S]) -> Result<S> {
        check_args(self, agent, x, y, None)?;
        let a = &self.agents[agent];
        Ok(data_loss(&a.val, &a.val_labels, y))
    }

    fn lower_loss(&self, agent: usize, x: &[S], y: &[S]) -> Result<S> {
        check_args(self, agent, x, y, None)?;
        let a = &self.agents[agent];
        let reg: S = x.iter().zip(y).map(|(lam, w)| lam.exp() * *w * *w).sum();
        Ok(data_loss(&a.train, &a.train_labels, y) + S::lit(0.5) * reg)
    }

    fn strong_convexity(&self, x: &[S]) -> S {
        x.iter().fold(S::infinity(), |m, lam| m.min(lam.exp()))
    }

    /// Fraction of validation samples with `sign(x_eᵀω) = sign(y_e)`.
    fn test_accuracy(&self, x: &[S], y: &[S]) -> Result<S> {
        check_args(self, 0, x, y, None)?;
        let (mut hits, mut total) = (0usize, 0usize);
        for a in &self.agents {
            for (row, &label) in a.val.rows().zip(&a.val_labels) {
                if sign(linalg::dot(row, y)) == sign(label) {
                    hits += 1;
                }
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::UnsupportedMetric("test_accuracy (no validation samples)"));
        }
        Ok(S::from_count(hits) / S::from_count(total))
    }
}

fn sign<S: Scalar>(v: S) -> i8 {
    if v > S::zero() {
        1
    } else if v < S::zero() {
        -1
    } else {
        0
    }
}
