use super::{check_args, BilevelProblem};
use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::linalg;
use crate::Scalar;

/// Multinomial logistic regression with a per-feature regularizer.
///
/// `x = λ ∈ ℝ^p`, `y = ω ∈ ℝ^{c×p}` (row-major, class-major rows):
///
/// ```text
/// f_i(λ, ω) = mean_{D'_i} CE(ω x_e, y_e)
/// l_i(λ, ω) = mean_{D_i}  CE(ω x_e, y_e) + 1/(c p) Σ_j Σ_k e^{λ_k} ω_jk²
/// ```
#[derive(Clone, Debug)]
pub struct SoftmaxHpo<S> {
    classes: usize,
    features: usize,
    agents: Vec<Shard<S>>,
}

#[derive(Clone, Debug)]
struct Shard<S> {
    train: Dataset<S>,
    train_labels: Vec<usize>,
    val: Dataset<S>,
    val_labels: Vec<usize>,
}

fn class_labels<S: Scalar>(ds: &Dataset<S>, classes: usize) -> Result<Vec<usize>> {
    match ds.labels() {
        Labels::Class(v) => v
            .iter()
            .map(|&c| {
                let c = c as usize;
                if c < classes {
                    Ok(c)
                } else {
                    Err(Error::InvalidArgument(format!("label {c} outside [0, {classes})")))
                }
            })
            .collect(),
        Labels::Real(_) => Err(Error::InvalidArgument("softmax problem needs class labels".into())),
    }
}

/// Class probabilities for one sample; returns `(probs, logsumexp)`.
fn softmax<S: Scalar>(w: &[S], x: &[S], classes: usize) -> (Vec<S>, S) {
    let p = x.len();
    let logits: Vec<S> = (0..classes).map(|j| linalg::dot(&w[j * p..(j + 1) * p], x)).collect();
    let max = logits.iter().fold(S::neg_infinity(), |m, &z| m.max(z));
    let mut probs: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = probs.iter().copied().sum();
    for pj in probs.iter_mut() {
        *pj /= total;
    }
    (probs, max + total.ln())
}

impl<S: Scalar> SoftmaxHpo<S> {
    pub fn new(classes: usize, agents: Vec<(Dataset<S>, Dataset<S>)>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        let features = agents
            .first()
            .map(|(t, _)| t.dim())
            .ok_or_else(|| Error::InvalidArgument("at least one agent required".into()))?;
        let agents = agents
            .into_iter()
            .map(|(train, val)| {
                if train.dim() != features || val.dim() != features {
                    return Err(Error::InvalidArgument("agents disagree on feature dimension".into()));
                }
                Ok(Shard {
                    train_labels: class_labels(&train, classes)?,
                    val_labels: class_labels(&val, classes)?,
                    train,
                    val,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            classes,
            features,
            agents,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn reg_scale(&self) -> S {
        S::one() / S::from_count(self.classes * self.features)
    }

    fn ce_loss(&self, ds: &Dataset<S>, labels: &[usize], w: &[S]) -> S {
        if ds.is_empty() {
            return S::zero();
        }
        let mut acc = S::zero();
        for (x, &label) in ds.rows().zip(labels) {
            let (_, lse) = softmax(w, x, self.classes);
            acc += lse - linalg::dot(&w[label * self.features..(label + 1) * self.features], x);
        }
        acc / S::from_count(ds.len())
    }

    fn ce_grad(&self, ds: &Dataset<S>, labels: &[usize], w: &[S]) -> Vec<S> {
        let p = self.features;
        let mut g = linalg::zeros(self.classes * p);
        if ds.is_empty() {
            return g;
        }
        for (x, &label) in ds.rows().zip(labels) {
            let (mut probs, _) = softmax(w, x, self.classes);
            probs[label] -= S::one();
            for (j, pj) in probs.iter().enumerate() {
                linalg::axpy(*pj, x, &mut g[j * p..(j + 1) * p]);
            }
        }
        linalg::scale(S::one() / S::from_count(ds.len()), &mut g);
        g
    }

    fn ce_hvp(&self, ds: &Dataset<S>, w: &[S], v: &[S]) -> Vec<S> {
        let p = self.features;
        let mut h = linalg::zeros(self.classes * p);
        if ds.is_empty() {
            return h;
        }
        for x in ds.rows() {
            let (probs, _) = softmax(w, x, self.classes);
            let s: Vec<S> = (0..self.classes)
                .map(|j| linalg::dot(&v[j * p..(j + 1) * p], x))
                .collect();
            let ps = linalg::dot(&probs, &s);
            for j in 0..self.classes {
                let t = probs[j] * (s[j] - ps);
                linalg::axpy(t, x, &mut h[j * p..(j + 1) * p]);
            }
        }
        linalg::scale(S::one() / S::from_count(ds.len()), &mut h);
        h
    }
}

impl<S: Scalar> BilevelProblem<S> for SoftmaxHpo<S> {
    fn upper_dim(&self) -> usize {
        self.features
    }

    fn lower_dim(&self) -> usize {
        self.classes * self.features
    }

    fn num_agents(&self) -> usize {
        self.agents.len()
    }

    fn grad_upper_x(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        Ok(linalg::zeros(self.features))
    }

    fn grad_upper_y(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        let a = &self.agents[agent];
        Ok(self.ce_grad(&a.val, &a.val_labels, y))
    }

    fn grad_lower_y(&self, agent: usize, x: &[S], y: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, None)?;
        let a = &self.agents[agent];
        let mut g = self.ce_grad(&a.train, &a.train_labels, y);
        let two_c = S::lit(2.0) * self.reg_scale();
        for (gj, wj) in g.chunks_exact_mut(self.features).zip(y.chunks_exact(self.features)) {
            for ((g, w), lam) in gj.iter_mut().zip(wj).zip(x) {
                *g += two_c * lam.exp() * *w;
            }
        }
        Ok(g)
    }

    fn hvp_lower_yy(&self, agent: usize, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, Some(v))?;
        let a = &self.agents[agent];
        let mut h = self.ce_hvp(&a.train, y, v);
        let two_c = S::lit(2.0) * self.reg_scale();
        for (hj, vj) in h.chunks_exact_mut(self.features).zip(v.chunks_exact(self.features)) {
            for ((h, vv), lam) in hj.iter_mut().zip(vj).zip(x) {
                *h += two_c * lam.exp() * *vv;
            }
        }
        Ok(h)
    }

    fn jvp_lower_xy(&self, agent: usize, x: &[S], y: &[S], v: &[S]) -> Result<Vec<S>> {
        check_args(self, agent, x, y, Some(v))?;
        let two_c = S::lit(2.0) * self.reg_scale();
        let mut out = linalg::zeros(self.features);
        for (wj, vj) in y.chunks_exact(self.features).zip(v.chunks_exact(self.features)) {
            for (k, o) in out.iter_mut().enumerate() {
                *o += wj[k] * vj[k];
            }
        }
        for (o, lam) in out.iter_mut().zip(x) {
            *o *= two_c * lam.exp();
        }
        Ok(out)
    }

    fn upper_loss(&self, agent: usize, x: &[S], y: &[S]) -> Result<S> {
        check_args(self, agent, x, y, None)?;
        let a = &self.agents[agent];
        Ok(self.ce_loss(&a.val, &a.val_labels, y))
    }

    fn lower_loss(&self, agent: usize, x: &[S], y: &[S]) -> Result<S> {
        check_args(self, agent, x, y, None)?;
        let a = &self.agents[agent];
        let mut reg = S::zero();
        for wj in y.chunks_exact(self.features) {
            for (w, lam) in wj.iter().zip(x) {
                reg += lam.exp() * *w * *w;
            }
        }
        Ok(self.ce_loss(&a.train, &a.train_labels, y) + self.reg_scale() * reg)
    }

    fn strong_convexity(&self, x: &[S]) -> S {
        let min = x.iter().fold(S::infinity(), |m, lam| m.min(lam.exp()));
        S::lit(2.0) * self.reg_scale() * min
    }

    /// Top-1 accuracy over all validation shards.
    fn test_accuracy(&self, x: &[S], y: &[S]) -> Result<S> {
        check_args(self, 0, x, y, None)?;
        let p = self.features;
        let (mut hits, mut total) = (0usize, 0usize);
        for a in &self.agents {
            for (row, &label) in a.val.rows().zip(&a.val_labels) {
                let mut best = 0;
                let mut best_z = S::neg_infinity();
                for j in 0..self.classes {
                    let z = linalg::dot(&y[j * p..(j + 1) * p], row);
                    if z > best_z {
                        best_z = z;
                        best = j;
                    }
                }
                hits += usize::from(best == label);
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::UnsupportedMetric("test_accuracy (no validation samples)"));
        }
        Ok(S::from_count(hits) / S::from_count(total))
    }
}
