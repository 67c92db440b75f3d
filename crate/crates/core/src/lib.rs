//! Decentralized bilevel optimization with adaptive, gossip-tracked
//! stepsizes.
//!
//! Agents on a graph jointly minimize `Φ(x) = (1/n) Σ f_i(x, y*(x))` where
//! `y*(x)` minimizes `(1/n) Σ l_i(x, y)`. Every round each agent takes one
//! step in `x`, `y` and the auxiliary `v`, with stepsizes scaled by running
//! gradient-norm accumulators that are themselves mixed across the network.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below name the common double-precision instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithm;
pub mod baselines;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod problems;
pub mod rng;
mod scalar;

pub use algorithm::{
    AccumulatorMixing, AdaSdboConfig, AgentState, Algorithm, InitSpec, Projection, RunResult, StepReport, SwarmState,
};
pub use baselines::ConstConfig;
pub use error::{Error, Result};
pub use metrics::{MetricsEvaluator, RoundTrace, TraceSink};
pub use network::{MixingMatrix, Topology};
pub use oracle::{HypergradOracle, OracleConfig};
pub use problems::{BilevelProblem, QuadraticBilevel, QuadraticParams, SoftmaxHpo, SyntheticLogisticHpo};
pub use rng::RngSpec;
pub use scalar::Scalar;

pub type MixingMatrixF64 = MixingMatrix<f64>;
pub type SwarmStateF64 = SwarmState<f64>;
pub type AgentStateF64 = AgentState<f64>;
pub type AdaSdboConfigF64 = AdaSdboConfig<f64>;
pub type ConstConfigF64 = ConstConfig<f64>;
pub type RoundTraceF64 = RoundTrace<f64>;
pub type QuadraticBilevelF64 = QuadraticBilevel<f64>;
pub type SyntheticLogisticHpoF64 = SyntheticLogisticHpo<f64>;
pub type SoftmaxHpoF64 = SoftmaxHpo<f64>;
pub type DatasetF64 = data::Dataset<f64>;
