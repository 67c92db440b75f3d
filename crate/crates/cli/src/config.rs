use std::path::PathBuf;

use adasdbo::data::PartitionPolicy;
use adasdbo::{AccumulatorMixing, OracleConfig, Topology};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

/// One experiment: problem, network, algorithm, metrics and output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Quadratic(QuadraticSection),
    Synthetic(SyntheticSection),
    Softmax(SoftmaxSection),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticSection {
    pub seed: u64,
    pub upper_dim: usize,
    pub lower_dim: usize,
    pub target_scale: f64,
    pub coupling_scale: f64,
    pub heterogeneity: f64,
}

impl Default for QuadraticSection {
    fn default() -> Self {
        Self {
            seed: 7,
            upper_dim: 5,
            lower_dim: 5,
            target_scale: 0.03,
            coupling_scale: 1.0,
            heterogeneity: 0.5,
        }
    }
}

/// Heterogeneous logistic-regression hyperparameter problem. Per-agent
/// counts, when given, override the equal split of the totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub seed: u64,
    pub dim: usize,
    pub r: f64,
    pub train_total: usize,
    pub val_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_per_agent: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_per_agent: Option<usize>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            seed: 7,
            dim: 50,
            r: 1.0,
            train_total: 2000,
            val_total: 2000,
            train_per_agent: None,
            val_per_agent: None,
        }
    }
}

/// Multiclass regression on IDX image files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftmaxSection {
    pub seed: u64,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub classes: usize,
    /// Keep only the first this-many training samples.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    pub partition: PartitionPolicy,
}

impl Default for SoftmaxSection {
    fn default() -> Self {
        Self {
            seed: 7,
            train_images: PathBuf::new(),
            train_labels: PathBuf::new(),
            test_images: PathBuf::new(),
            test_labels: PathBuf::new(),
            classes: 10,
            train_limit: None,
            test_limit: None,
            partition: PartitionPolicy::Equal,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    #[default]
    Ring,
    Ladder,
    Random,
    Complete,
}

impl TopologyKind {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "ring" => Some(Self::Ring),
            "ladder" => Some(Self::Ladder),
            "random" => Some(Self::Random),
            "complete" => Some(Self::Complete),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub agents: usize,
    pub ring_w: f64,
    pub edge_prob: f64,
    pub seed: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            kind: TopologyKind::Ring,
            agents: 5,
            ring_w: 0.4,
            edge_prob: 0.5,
            seed: 0,
        }
    }
}

impl TopologyConfig {
    pub fn topology(&self) -> Topology {
        match self.kind {
            TopologyKind::Ring => Topology::Ring { w: self.ring_w },
            TopologyKind::Ladder => Topology::Ladder,
            TopologyKind::Random => Topology::Random {
                edge_prob: self.edge_prob,
                seed: self.seed,
            },
            TopologyKind::Complete => Topology::Complete,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    #[default]
    Adasdbo,
    Const,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKeyword {
    Auto,
    Unbounded,
}

/// `"auto"`, `"unbounded"` or an explicit ball radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProjectionSetting {
    Radius(f64),
    Named(ProjectionKeyword),
}

impl Default for ProjectionSetting {
    fn default() -> Self {
        ProjectionSetting::Named(ProjectionKeyword::Auto)
    }
}

/// `gamma` sets all three AdaSDBO coefficients at once and is folded into
/// `gamma_x`, `gamma_y`, `gamma_v` by [`parse_config`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub gamma_x: f64,
    pub gamma_y: f64,
    pub gamma_v: f64,
    pub m0: f64,
    pub eta_x: f64,
    pub eta_y: f64,
    pub eta_v: f64,
    pub projection: ProjectionSetting,
    pub rounds: usize,
    pub accumulator_mixing: AccumulatorMixing,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            kind: AlgorithmKind::Adasdbo,
            gamma: None,
            gamma_x: 1.0,
            gamma_y: 1.0,
            gamma_v: 1.0,
            m0: 10.0,
            eta_x: 0.01,
            eta_y: 0.02,
            eta_v: 0.01,
            projection: ProjectionSetting::default(),
            rounds: 1000,
            accumulator_mixing: AccumulatorMixing::Squared,
        }
    }
}

/// Hypergradient oracle settings. Stationarity and accuracy are evaluated
/// every `stride` rounds; `enabled = false` skips them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub enabled: bool,
    pub stride: usize,
    pub inner_tol: f64,
    pub cg_tol: f64,
    pub max_inner_iters: usize,
    pub max_cg_iters: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        let base = OracleConfig::default();
        Self {
            enabled: true,
            stride: 1,
            inner_tol: base.inner_tol,
            cg_tol: base.cg_tol,
            max_inner_iters: base.max_inner_iters,
            max_cg_iters: base.max_cg_iters,
        }
    }
}

impl OracleSection {
    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            inner_tol: self.inner_tol,
            cg_tol: self.cg_tol,
            max_inner_iters: self.max_inner_iters,
            max_cg_iters: self.max_cg_iters,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Sets `gamma_x = gamma_y = gamma_v`.
    Gamma,
    /// Sets `eta_x = eta_y = eta_v`.
    Eta,
    N,
    Topology,
    RingW,
    R,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Name(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v:?}"),
            SweepValue::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParam,
    pub values: Vec<SweepValue>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: vec![OutputFormat::Csv],
        }
    }
}

/// Parses and validates a TOML config, filling every default.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(g) = cfg.algorithm.gamma.take() {
        cfg.algorithm.gamma_x = g;
        cfg.algorithm.gamma_y = g;
        cfg.algorithm.gamma_v = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be nonnegative and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.topology.agents;
        if n == 0 {
            return Err(bad("topology.agents", "must be at least 1"));
        }
        match &self.problem {
            ProblemConfig::Quadratic(q) => {
                if q.upper_dim == 0 || q.lower_dim == 0 {
                    return Err(bad("problem.upper_dim/lower_dim", "must be positive"));
                }
                nonnegative("problem.target_scale", q.target_scale)?;
                nonnegative("problem.coupling_scale", q.coupling_scale)?;
                nonnegative("problem.heterogeneity", q.heterogeneity)?;
            }
            ProblemConfig::Synthetic(s) => {
                if s.dim == 0 {
                    return Err(bad("problem.dim", "must be positive"));
                }
                positive("problem.r", s.r)?;
                let (train, val) = s.per_agent(n);
                if train == 0 {
                    return Err(bad("problem.train_total", format!("fewer samples than {n} agents")));
                }
                if val == 0 {
                    return Err(bad("problem.val_total", format!("fewer samples than {n} agents")));
                }
            }
            ProblemConfig::Softmax(s) => {
                for (key, path) in [
                    ("problem.train_images", &s.train_images),
                    ("problem.train_labels", &s.train_labels),
                    ("problem.test_images", &s.test_images),
                    ("problem.test_labels", &s.test_labels),
                ] {
                    if path.as_os_str().is_empty() {
                        return Err(bad(key, "path required"));
                    }
                }
                if s.classes < 2 {
                    return Err(bad("problem.classes", "need at least two classes"));
                }
                if let PartitionPolicy::ByClassSkew(f) = s.partition {
                    if !(0.0..=1.0).contains(&f) {
                        return Err(bad("problem.partition", format!("skew fraction {f} outside [0, 1]")));
                    }
                }
            }
        }

        let t = &self.topology;
        match t.kind {
            TopologyKind::Ring if !(t.ring_w > 0.0 && t.ring_w < 1.0) => {
                return Err(bad("topology.ring_w", format!("must lie in (0, 1), got {}", t.ring_w)));
            }
            TopologyKind::Random if !(t.edge_prob > 0.0 && t.edge_prob <= 1.0) => {
                return Err(bad(
                    "topology.edge_prob",
                    format!("must lie in (0, 1], got {}", t.edge_prob),
                ));
            }
            _ => {}
        }

        let a = &self.algorithm;
        if a.rounds == 0 {
            return Err(bad("algorithm.rounds", "must be at least 1"));
        }
        positive("algorithm.gamma_x", a.gamma_x)?;
        positive("algorithm.gamma_y", a.gamma_y)?;
        positive("algorithm.gamma_v", a.gamma_v)?;
        positive("algorithm.m0", a.m0)?;
        nonnegative("algorithm.eta_x", a.eta_x)?;
        nonnegative("algorithm.eta_y", a.eta_y)?;
        nonnegative("algorithm.eta_v", a.eta_v)?;
        if let ProjectionSetting::Radius(r) = a.projection {
            positive("algorithm.projection", r)?;
        }

        let o = &self.oracle;
        if o.enabled && o.stride == 0 {
            return Err(bad("oracle.stride", "must be at least 1"));
        }
        o.oracle_config().validate().map_err(|e| bad("oracle", e))?;

        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(bad("sweep.values", "must not be empty"));
            }
            if sweep.parameter == SweepParam::R && !matches!(self.problem, ProblemConfig::Synthetic(_)) {
                return Err(bad("sweep.parameter", "r applies to the synthetic problem only"));
            }
            for (i, v) in sweep.values.iter().enumerate() {
                let mut probe = self.clone();
                probe.sweep = None;
                probe
                    .apply_sweep_value(sweep.parameter, v)
                    .and_then(|()| probe.validate())
                    .map_err(|e| bad(&format!("sweep.values[{i}]"), e))?;
            }
        }
        Ok(())
    }

    /// Overwrites the swept parameter with `value`.
    pub fn apply_sweep_value(&mut self, param: SweepParam, value: &SweepValue) -> Result<()> {
        let number = || match value {
            SweepValue::Number(v) => Ok(*v),
            SweepValue::Name(s) => Err(CliError::Config(format!("expected a number, got {s:?}"))),
        };
        match param {
            SweepParam::Gamma => {
                let g = number()?;
                self.algorithm.gamma_x = g;
                self.algorithm.gamma_y = g;
                self.algorithm.gamma_v = g;
            }
            SweepParam::Eta => {
                let e = number()?;
                self.algorithm.eta_x = e;
                self.algorithm.eta_y = e;
                self.algorithm.eta_v = e;
            }
            SweepParam::N => {
                let n = number()?;
                if !(n >= 1.0 && n.fract() == 0.0 && n <= u32::MAX as f64) {
                    return Err(CliError::Config(format!(
                        "agent count must be a positive integer, got {n}"
                    )));
                }
                self.topology.agents = n as usize;
            }
            SweepParam::Topology => {
                let SweepValue::Name(name) = value else {
                    return Err(CliError::Config(format!("expected a topology name, got {value}")));
                };
                self.topology.kind = TopologyKind::from_name(name)
                    .ok_or_else(|| CliError::Config(format!("unknown topology {name:?}")))?;
            }
            SweepParam::RingW => self.topology.ring_w = number()?,
            SweepParam::R => match &mut self.problem {
                ProblemConfig::Synthetic(s) => s.r = number()?,
                _ => return Err(CliError::Config("r applies to the synthetic problem only".into())),
            },
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the canonical JSON form of everything that
    /// affects the trace (output and sweep sections excluded).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.sweep = None;
        canonical.output = OutputConfig::default();
        canonical.algorithm.gamma = None;
        // serde_json's default map is ordered by key
        let value = serde_json::to_value(&canonical).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

impl SyntheticSection {
    /// `(train, validation)` samples per agent.
    pub fn per_agent(&self, agents: usize) -> (usize, usize) {
        (
            self.train_per_agent.unwrap_or(self.train_total / agents),
            self.val_per_agent.unwrap_or(self.val_total / agents),
        )
    }
}
