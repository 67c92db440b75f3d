//! Gossip weight matrices and the mixing primitive.

use std::collections::VecDeque;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::RngSpec;
use crate::Scalar;

const STOCHASTIC_TOL: f64 = 1e-12;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
const RANDOM_GRAPH_RETRIES: usize = 100;

/// Dense doubly stochastic gossip matrix `W` with its cached
/// `ρ_W = ‖W − J‖₂²`, where `J = 11ᵀ/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix<S> {
    n: usize,
    entries: Vec<S>,
    rho_w: S,
}

/// Topology selector, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    Ring { w: f64 },
    Ladder,
    Random { edge_prob: f64, seed: u64 },
    Complete,
}

impl Topology {
    pub fn build<S: Scalar>(&self, n: usize) -> Result<MixingMatrix<S>> {
        match *self {
            Topology::Ring { w } => build_ring(n, S::lit(w)),
            Topology::Ladder => build_ladder(n),
            Topology::Random { edge_prob, seed } => build_random(n, edge_prob, &RngSpec::new(seed, "topology")),
            Topology::Complete => build_complete(n),
        }
    }
}

impl<S: Scalar> MixingMatrix<S> {
    /// Validates a row-major `n × n` matrix: nonnegative, unit row and column
    /// sums, and `ρ_W < 1`.
    pub fn from_dense(n: usize, entries: Vec<S>) -> Result<Self> {
        validate_stochastic(n, &entries)?;
        let rho_w = spectral_norm_sq(n, &entries)?;
        if rho_w >= S::one() - S::lit(STOCHASTIC_TOL) && n > 1 {
            return Err(Error::Construction(format!(
                "rho_w = {rho_w} violates rho_w < 1 (graph disconnected or periodic)"
            )));
        }
        Ok(Self { n, entries, rho_w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[S] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.entries[i * self.n + j]
    }

    pub fn rho_w(&self) -> S {
        self.rho_w
    }

    /// `W · block` for a row-major `n × cols` block.
    pub fn mix(&self, block: &[S], cols: usize) -> Result<Vec<S>> {
        if block.len() != self.n * cols {
            return Err(Error::DimensionMismatch {
                context: "mix block",
                expected: self.n * cols,
                got: block.len(),
            });
        }
        let mut out = linalg::zeros(block.len());
        for i in 0..self.n {
            let dst = &mut out[i * cols..(i + 1) * cols];
            for j in 0..self.n {
                let w = self.entries[i * self.n + j];
                if w != S::zero() {
                    linalg::axpy(w, &block[j * cols..(j + 1) * cols], dst);
                }
            }
        }
        Ok(out)
    }

    /// Mixes one vector per agent; all rows must share a length.
    pub fn mix_rows(&self, rows: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.len() != self.n || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                context: "mix rows",
                expected: self.n,
                got: rows.len(),
            });
        }
        let flat: Vec<S> = rows.iter().flatten().copied().collect();
        let mixed = self.mix(&flat, cols)?;
        Ok(mixed
            .chunks_exact(cols.max(1))
            .take(self.n)
            .map(<[S]>::to_vec)
            .collect())
    }
}

/// `ρ_W` of a validated matrix.
pub fn spectral_gap<S: Scalar>(w: &MixingMatrix<S>) -> S {
    w.rho_w
}

fn validate_stochastic<S: Scalar>(n: usize, entries: &[S]) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("mixing matrix needs at least one agent".into()));
    }
    if entries.len() != n * n {
        return Err(Error::DimensionMismatch {
            context: "mixing matrix",
            expected: n * n,
            got: entries.len(),
        });
    }
    let tol = S::lit(STOCHASTIC_TOL);
    if let Some(pos) = entries.iter().position(|&e| !(e >= S::zero()) || !e.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "entry ({}, {}) is negative or not finite",
            pos / n,
            pos % n
        )));
    }
    for i in 0..n {
        let row: S = entries[i * n..(i + 1) * n].iter().copied().sum();
        let col: S = (0..n).map(|j| entries[j * n + i]).sum();
        if (row - S::one()).abs() > tol || (col - S::one()).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "not doubly stochastic at index {i}: row sum {row}, column sum {col}"
            )));
        }
    }
    Ok(())
}

/// `‖W − J‖₂²` by power iteration on `(W − J)ᵀ(W − J)`.
///
/// Works on any square matrix; stops when the Rayleigh quotient changes by
/// less than `1e-10` relative (absolute below machine epsilon).
pub fn spectral_norm_sq<S: Scalar>(n: usize, entries: &[S]) -> Result<S> {
    if entries.len() != n * n || n == 0 {
        return Err(Error::DimensionMismatch {
            context: "spectral norm",
            expected: n * n,
            got: entries.len(),
        });
    }
    let apply = |v: &[S], transpose: bool| -> Vec<S> {
        let mean = v.iter().copied().sum::<S>() / S::from_count(n);
        (0..n)
            .map(|i| {
                let mut acc = S::zero();
                for (j, vj) in v.iter().enumerate() {
                    let w = if transpose {
                        entries[j * n + i]
                    } else {
                        entries[i * n + j]
                    };
                    acc += w * *vj;
                }
                acc - mean
            })
            .collect()
    };
    let mut rng = RngSpec::new(0x5eed, "power-iteration").rng();
    let mut v: Vec<S> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            S::lit(z)
        })
        .collect();
    let norm = linalg::norm(&v);
    linalg::scale(S::one() / norm, &mut v);

    let tol = S::lit(POWER_TOL);
    let mut prev = S::nan();
    for _ in 0..POWER_MAX_ITERS {
        let mv = apply(&apply(&v, false), true);
        let lambda = linalg::dot(&v, &mv);
        let mv_norm = linalg::norm(&mv);
        if mv_norm == S::zero() {
            return Ok(S::zero());
        }
        if (lambda - prev).abs() <= tol * lambda.abs().max(S::epsilon()) {
            return Ok(lambda);
        }
        prev = lambda;
        v = mv;
        linalg::scale(S::one() / mv_norm, &mut v);
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge in {POWER_MAX_ITERS} iterations (last estimate {prev})"
    )))
}

/// Ring with self-weight `w` and `(1 − w)/2` to each neighbour, wrapping around.
pub fn build_ring<S: Scalar>(n: usize, w: S) -> Result<MixingMatrix<S>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("ring needs n >= 2, got {n}")));
    }
    if !(w > S::zero() && w < S::one()) {
        return Err(Error::InvalidArgument(format!("ring self-weight {w} outside (0, 1)")));
    }
    let side = (S::one() - w) / S::lit(2.0);
    let mut e = linalg::zeros(n * n);
    for i in 0..n {
        e[i * n + i] += w;
        e[i * n + (i + 1) % n] += side;
        e[i * n + (i + n - 1) % n] += side;
    }
    MixingMatrix::from_dense(n, e)
}

/// `W = J`: every agent averages with everyone.
pub fn build_complete<S: Scalar>(n: usize) -> Result<MixingMatrix<S>> {
    if n == 0 {
        return Err(Error::InvalidArgument("complete graph needs n >= 1".into()));
    }
    let v = S::one() / S::from_count(n);
    MixingMatrix::from_dense(n, vec![v; n * n])
}

/// Two rails of `n/2` nodes joined by rungs, with Metropolis weights.
pub fn build_ladder<S: Scalar>(n: usize) -> Result<MixingMatrix<S>> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("ladder needs even n >= 4, got {n}")));
    }
    let half = n / 2;
    let mut adj = vec![false; n * n];
    let mut link = |a: usize, b: usize| {
        adj[a * n + b] = true;
        adj[b * n + a] = true;
    };
    for i in 0..half {
        link(i, i + half);
        if i + 1 < half {
            link(i, i + 1);
            link(i + half, i + 1 + half);
        }
    }
    metropolis(n, &adj)
}

/// Erdős–Rényi graph, redrawn until connected, with Metropolis weights.
pub fn build_random<S: Scalar>(n: usize, edge_prob: f64, rng: &RngSpec) -> Result<MixingMatrix<S>> {
    if n == 0 {
        return Err(Error::InvalidArgument("random graph needs n >= 1".into()));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "edge probability {edge_prob} outside (0, 1]"
        )));
    }
    let mut r = rng.rng();
    for _ in 0..RANDOM_GRAPH_RETRIES {
        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                if rand::Rng::random::<f64>(&mut r) < edge_prob {
                    adj[i * n + j] = true;
                    adj[j * n + i] = true;
                }
            }
        }
        if connected(n, &adj) {
            return metropolis(n, &adj);
        }
    }
    Err(Error::Construction(format!(
        "no connected graph with n = {n}, p = {edge_prob} after {RANDOM_GRAPH_RETRIES} draws"
    )))
}

fn connected(n: usize, adj: &[bool]) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if adj[i * n + j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// `w_ij = 1/(1 + max(deg_i, deg_j))` on edges; the diagonal takes the rest.
fn metropolis<S: Scalar>(n: usize, adj: &[bool]) -> Result<MixingMatrix<S>> {
    let deg: Vec<usize> = (0..n)
        .map(|i| adj[i * n..(i + 1) * n].iter().filter(|&&a| a).count())
        .collect();
    let mut e = linalg::zeros(n * n);
    for i in 0..n {
        let mut off = S::zero();
        for j in 0..n {
            if i != j && adj[i * n + j] {
                let w = S::one() / S::from_count(1 + deg[i].max(deg[j]));
                e[i * n + j] = w;
                off += w;
            }
        }
        e[i * n + i] = S::one() - off;
    }
    MixingMatrix::from_dense(n, e)
}
