use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::rng::RngSpec;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "fraction")]
pub enum PartitionPolicy {
    /// Shuffle, then split into shards whose sizes differ by at most one.
    Equal,
    /// Agent `k mod n` receives this fraction of class `k`; the remainder is
    /// dealt round-robin to the other agents.
    ByClassSkew(f64),
}

/// Splits `dataset` into `n` disjoint shards covering every row.
pub fn partition<S: Scalar>(
    dataset: &Dataset<S>,
    n: usize,
    policy: PartitionPolicy,
    rng: &RngSpec,
) -> Result<Vec<Dataset<S>>> {
    if n == 0 || n > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot partition {} samples among {n} agents",
            dataset.len()
        )));
    }
    let mut r = rng.rng();
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n];
    match policy {
        PartitionPolicy::Equal => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut r);
            let base = idx.len() / n;
            let extra = idx.len() % n;
            let mut start = 0;
            for (k, shard) in shards.iter_mut().enumerate() {
                let size = base + usize::from(k < extra);
                shard.extend_from_slice(&idx[start..start + size]);
                start += size;
            }
        }
        PartitionPolicy::ByClassSkew(fraction) => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::InvalidArgument(format!(
                    "skew fraction {fraction} outside [0, 1]"
                )));
            }
            let Labels::Class(labels) = dataset.labels() else {
                return Err(Error::InvalidArgument("class skew needs class labels".into()));
            };
            let classes = dataset.num_classes().unwrap_or(0);
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &c) in labels.iter().enumerate() {
                by_class[c as usize].push(i);
            }
            for (class, mut members) in by_class.into_iter().enumerate() {
                members.shuffle(&mut r);
                let owner = class % n;
                let keep = ((fraction * members.len() as f64).ceil() as usize).min(members.len());
                shards[owner].extend_from_slice(&members[..keep]);
                let others: Vec<usize> = (0..n).filter(|&a| a != owner).collect();
                for (j, &i) in members[keep..].iter().enumerate() {
                    let target = if others.is_empty() {
                        owner
                    } else {
                        others[j % others.len()]
                    };
                    shards[target].push(i);
                }
            }
        }
    }
    Ok(shards
        .into_iter()
        .map(|mut s| {
            s.sort_unstable();
            dataset.select(&s)
        })
        .collect())
}
