#![allow(dead_code)]

use adasdbo::data::{generate_synthetic, Dataset, Labels, Split};
use adasdbo::{linalg, QuadraticBilevel, QuadraticParams, RngSpec, SoftmaxHpo, SyntheticLogisticHpo};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn quadratic(seed: u64, p: usize, q: usize, agents: usize) -> QuadraticBilevel<f64> {
    let params = QuadraticParams {
        upper_dim: p,
        lower_dim: q,
        agents,
        target_scale: 1.0,
        coupling_scale: 1.0,
        heterogeneity: 0.5,
    };
    QuadraticBilevel::random(&params, &RngSpec::new(seed, "test-quadratic")).unwrap()
}

pub fn synthetic(seed: u64, p: usize, agents: usize, samples: usize) -> SyntheticLogisticHpo<f64> {
    let data = generate_synthetic(agents, p, samples, samples, 1.0, &RngSpec::new(seed, "test-synthetic")).unwrap();
    SyntheticLogisticHpo::from_synthetic(data).unwrap()
}

pub fn softmax(seed: u64, classes: usize, p: usize, agents: usize, samples: usize) -> SoftmaxHpo<f64> {
    let mut r = RngSpec::new(seed, "test-softmax").rng();
    let mut make = |split| {
        let features: Vec<f64> = (0..samples * p).map(|_| r.random::<f64>()).collect();
        let labels = (0..samples).map(|_| r.random_range(0..classes as u32)).collect();
        Dataset::new(p, features, Labels::Class(labels), split).unwrap()
    };
    let shards = (0..agents)
        .map(|_| (make(Split::Train), make(Split::Validation)))
        .collect();
    SoftmaxHpo::new(classes, shards).unwrap()
}

pub fn gaussian(seed: u64, stream: &str, len: usize, scale: f64) -> Vec<f64> {
    let mut r = RngSpec::new(seed, stream).rng();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            scale * z
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = linalg::norm(a).max(linalg::norm(b));
    if scale == 0.0 {
        0.0
    } else {
        linalg::norm(&linalg::sub(a, b)) / scale
    }
}

/// Central differences of a scalar function at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central difference of a vector function along `dir`.
pub fn fd_directional(x: &[f64], dir: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    linalg::axpy(h, dir, &mut up);
    linalg::axpy(-h, dir, &mut down);
    let (fu, fd) = (f(&up), f(&down));
    fu.iter().zip(&fd).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}
