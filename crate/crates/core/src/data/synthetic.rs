use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Labels, Split};
use crate::error::{Error, Result};
use crate::rng::RngSpec;
use crate::Scalar;

/// Per-agent train/validation sets plus the ground-truth weights.
#[derive(Clone, Debug)]
pub struct SyntheticData<S> {
    pub omega_star: Vec<S>,
    pub agents: Vec<(Dataset<S>, Dataset<S>)>,
}

/// Heterogeneous regression-labelled data.
///
/// Agent `i` (1-based) draws features i.i.d. from `N(0, i² r²)`; labels are
/// `x_eᵀω* + 0.1 z` with `ω* ~ N(0, I)` shared by all agents.
pub fn generate_synthetic<S: Scalar>(
    agents: usize,
    dim: usize,
    train_per_agent: usize,
    val_per_agent: usize,
    heterogeneity: f64,
    rng: &RngSpec,
) -> Result<SyntheticData<S>> {
    if agents == 0 || dim == 0 || train_per_agent == 0 || val_per_agent == 0 {
        return Err(Error::InvalidArgument("synthetic data needs positive counts".into()));
    }
    if !(heterogeneity > 0.0 && heterogeneity.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "heterogeneity must be positive, got {heterogeneity}"
        )));
    }
    let mut r = rng.child("omega_star").rng();
    let omega: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();

    let make = |agent: usize, count: usize, split: Split, stream: &str| -> Result<Dataset<S>> {
        let std = agent as f64 * heterogeneity;
        let mut r = rng.child(&format!("agent{agent}/{stream}")).rng();
        let mut features = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        let mut row = vec![0.0f64; dim];
        for _ in 0..count {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut r);
                *v = std * z;
            }
            let noise: f64 = StandardNormal.sample(&mut r);
            let target = row.iter().zip(&omega).map(|(a, b)| a * b).sum::<f64>() + 0.1 * noise;
            features.extend(row.iter().map(|&v| S::lit(v)));
            labels.push(S::lit(target));
        }
        Dataset::new(dim, features, Labels::Real(labels), split)
    };

    let agents = (1..=agents)
        .map(|i| {
            Ok((
                make(i, train_per_agent, Split::Train, "train")?,
                make(i, val_per_agent, Split::Validation, "val")?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticData {
        omega_star: omega.into_iter().map(S::lit).collect(),
        agents,
    })
}
