use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};
use crate::rng;

/// One cross-validation fold. Index lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_index: usize,
    pub test_indices: Vec<usize>,
    pub valid_indices: Vec<usize>,
    pub train_indices: Vec<usize>,
    /// Training graphs whose labels are visible to the classification loss.
    pub labeled: Vec<usize>,
}

impl FoldPlan {
    pub fn is_labeled(&self, idx: usize) -> bool {
        self.labeled.binary_search(&idx).is_ok()
    }
}

/// Shuffles `0..n` once and cuts it into `k` parts whose sizes differ by at
/// most one. Fold `i` tests on part `i`, validates on part `(i + 1) % k` and
/// trains on the rest, with every training graph labeled.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<Vec<FoldPlan>> {
    if k < 3 {
        return Err(GlaError::Config(format!("need at least 3 folds, got {k}")));
    }
    if n < k {
        return Err(GlaError::Config(format!("{n} graphs cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "folds", &[]));

    let mut parts = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = n / k + usize::from(i < n % k);
        parts.push(order[start..start + size].to_vec());
        start += size;
    }

    Ok((0..k)
        .map(|i| {
            let valid = (i + 1) % k;
            let sorted = |mut v: Vec<usize>| {
                v.sort_unstable();
                v
            };
            let train = sorted(
                (0..k)
                    .filter(|&j| j != i && j != valid)
                    .flat_map(|j| parts[j].iter().copied())
                    .collect(),
            );
            FoldPlan {
                fold_index: i,
                test_indices: sorted(parts[i].clone()),
                valid_indices: sorted(parts[valid].clone()),
                labeled: train.clone(),
                train_indices: train,
            }
        })
        .collect())
}

/// Samples `round(ratio * |train|)` training graphs uniformly as labeled.
pub fn assign_labels(plan: &FoldPlan, ratio: f64, seed: u64) -> Result<FoldPlan> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(GlaError::Config(format!("label ratio {ratio} outside (0, 1]")));
    }
    let count = (ratio * plan.train_indices.len() as f64).round() as usize;
    let mut pool = plan.train_indices.clone();
    pool.shuffle(&mut rng::stream(seed, "labels", &[plan.fold_index as u64]));
    let mut labeled = pool[..count].to_vec();
    labeled.sort_unstable();
    Ok(FoldPlan {
        labeled,
        ..plan.clone()
    })
}
