//! Datasets: synthetic generation, IDX image files, agent partitioning.

mod idx;
mod partition;
mod synthetic;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IdxImages};
pub use partition::{partition, PartitionPolicy};
pub use synthetic::{generate_synthetic, SyntheticData};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels<S> {
    /// Real-valued targets.
    Real(Vec<S>),
    /// Class indices in `[0, c)`.
    Class(Vec<u32>),
}

impl<S> Labels<S> {
    pub fn len(&self) -> usize {
        match self {
            Labels::Real(v) => v.len(),
            Labels::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major feature matrix with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    dim: usize,
    features: Vec<S>,
    labels: Labels<S>,
    split: Split,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(dim: usize, features: Vec<S>, labels: Labels<S>, split: Split) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature values do not match {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            dim,
            features,
            labels,
            split,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn labels(&self) -> &Labels<S> {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, S> {
        self.features.chunks_exact(self.dim)
    }

    /// Number of classes (`max label + 1`), or `None` for real labels.
    pub fn num_classes(&self) -> Option<usize> {
        match &self.labels {
            Labels::Class(c) => Some(c.iter().copied().max().map_or(0, |m| m as usize + 1)),
            Labels::Real(_) => None,
        }
    }

    /// New dataset holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = match &self.labels {
            Labels::Real(v) => Labels::Real(indices.iter().map(|&i| v[i]).collect()),
            Labels::Class(v) => Labels::Class(indices.iter().map(|&i| v[i]).collect()),
        };
        Self {
            dim: self.dim,
            features,
            labels,
            split: self.split,
        }
    }

    /// Concatenation of several datasets of equal dimension and label kind.
    pub fn concat(parts: &[Dataset<S>], split: Split) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut features = Vec::new();
        let mut labels = match first.labels {
            Labels::Real(_) => Labels::Real(Vec::new()),
            Labels::Class(_) => Labels::Class(Vec::new()),
        };
        for part in parts {
            if part.dim != first.dim {
                return Err(Error::InvalidArgument("dimension mismatch in concat".into()));
            }
            features.extend_from_slice(&part.features);
            match (&mut labels, &part.labels) {
                (Labels::Real(acc), Labels::Real(v)) => acc.extend_from_slice(v),
                (Labels::Class(acc), Labels::Class(v)) => acc.extend_from_slice(v),
                _ => return Err(Error::InvalidArgument("label kinds differ in concat".into())),
            }
        }
        Self::new(first.dim, features, labels, split)
    }

    /// Writes the dataset as CSV: feature columns, then the label column.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for (i, row) in self.rows().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let label = match &self.labels {
                Labels::Real(v) => format!("{:?}", v[i]),
                Labels::Class(v) => v[i].to_string(),
            };
            writeln!(out, "{},{label}", cells.join(","))?;
        }
        Ok(())
    }
}
