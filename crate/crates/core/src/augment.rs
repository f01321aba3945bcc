//! Label-invariant augmentation in representation space.
//!
//! Each original representation `H^O` is pushed along `K` random unit
//! directions by a fixed length `η·d`, where `d` is the mean distance of the
//! representations to their centroid. A candidate qualifies when the current
//! classifier still assigns it the graph's target class; one qualified
//! candidate is then picked according to the [`Strategy`]. With no qualified
//! candidate the augmentation falls back to `H^O` itself.
//!
//! Candidate scoring never touches a tape: the chosen offset enters the loss
//! as a constant added to `H^O`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};
use crate::matrix::{argmax, Matrix};
use crate::model::{classify_values, Head};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Qualified candidate with the lowest target-class probability.
    Hardest,
    Random,
    /// Qualified candidate with the highest target-class probability.
    Easiest,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Hardest, Strategy::Random, Strategy::Easiest];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Hardest => "hardest",
            Strategy::Random => "random",
            Strategy::Easiest => "easiest",
        })
    }
}

impl FromStr for Strategy {
    type Err = GlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hardest" => Ok(Strategy::Hardest),
            "random" => Ok(Strategy::Random),
            "easiest" => Ok(Strategy::Easiest),
            _ => Err(GlaError::Config(format!(
                "unknown strategy {s:?} (hardest | random | easiest)"
            ))),
        }
    }
}

/// Which representations define the centroid distance `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistScope {
    /// The graphs of the current batch.
    Batch,
    /// All training graphs, refreshed once per epoch.
    Dataset,
}

impl fmt::Display for DistScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistScope::Batch => "batch",
            DistScope::Dataset => "dataset",
        })
    }
}

impl FromStr for DistScope {
    type Err = GlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(DistScope::Batch),
            "dataset" => Ok(DistScope::Dataset),
            _ => Err(GlaError::Config(format!("unknown distance scope {s:?} (batch | dataset)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub eta: f64,
    pub num_candidates: usize,
    pub strategy: Strategy,
    pub dist_scope: DistScope,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            num_candidates: 10,
            strategy: Strategy::Hardest,
            dist_scope: DistScope::Batch,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(GlaError::Config(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if self.num_candidates == 0 {
            return Err(GlaError::Config("need at least one candidate".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationOutcome {
    /// `H^A`, as a `1 × hidden` row.
    pub augmented: Matrix,
    /// `H^A − H^O` exactly as it was added; zero on fallback.
    pub offset: Matrix,
    pub target_class: usize,
    pub qualified_count: usize,
    pub chosen_target_prob: Option<f64>,
    pub fallback: bool,
    /// Target-class probabilities of the qualified candidates in draw order.
    pub qualified_probs: Vec<f64>,
}

/// Mean Euclidean distance of the rows of `reps` to their mean row.
pub fn centroid_distance(reps: &Matrix) -> Result<f64> {
    let n = reps.rows();
    if n == 0 {
        return Err(GlaError::Domain {
            op: "centroid_distance",
            detail: "no representations".into(),
        });
    }
    let mut centroid = vec![0.0; reps.cols()];
    for r in 0..n {
        for (c, &x) in centroid.iter_mut().zip(reps.row(r)) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n as f64);
    let total: f64 = (0..n)
        .map(|r| {
            reps.row(r)
                .iter()
                .zip(&centroid)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / n as f64)
}

/// Direction drawn uniformly from the unit sphere in `dim` dimensions.
pub fn sample_unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    assert!(dim >= 1, "sample_unit_vector needs dim >= 1");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// The additive term `η·d·Δ`.
pub fn perturbation_offset(d: f64, eta: f64, delta: &[f64]) -> Vec<f64> {
    delta.iter().map(|x| eta * d * x).collect()
}

/// `H^A = H^O + η·d·Δ`.
pub fn perturb(h: &[f64], d: f64, eta: f64, delta: &[f64]) -> Vec<f64> {
    assert_eq!(h.len(), delta.len(), "perturb: shape mismatch");
    h.iter()
        .zip(perturbation_offset(d, eta, delta))
        .map(|(x, o)| x + o)
        .collect()
}

/// Ground truth for labeled graphs, otherwise the classifier's argmax.
pub fn target_class(label: Option<usize>, original_probs: &[f64]) -> usize {
    label.unwrap_or_else(|| argmax(original_probs))
}

/// Index into `probs` chosen by `strategy`; ties go to the earliest entry.
pub fn select_index(probs: &[f64], strategy: Strategy, rng: &mut impl Rng) -> usize {
    debug_assert!(!probs.is_empty());
    match strategy {
        Strategy::Hardest => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p < probs[best] {
                    best = i;
                }
            }
            best
        }
        Strategy::Easiest => argmax(probs),
        Strategy::Random => rng.gen_range(0..probs.len()),
    }
}

/// Augments one representation. `candidate_rng` draws the perturbation
/// directions and `select_rng` is used only by [`Strategy::Random`], so the
/// candidate pool does not depend on the strategy.
pub fn augment<C: Rng, S: Rng>(
    h: &Matrix,
    target: usize,
    classifier: &Head,
    cfg: &AugmentationConfig,
    d: f64,
    candidate_rng: &mut C,
    select_rng: &mut S,
) -> Result<AugmentationOutcome> {
    let mut out = augment_batch(
        h,
        &[target],
        classifier,
        cfg,
        d,
        std::slice::from_mut(candidate_rng),
        std::slice::from_mut(select_rng),
    )?;
    Ok(out.remove(0))
}

/// Augments every row of `reps`; `targets[i]` is the target class of row `i`.
/// Row `i` draws from `candidate_rngs[i]` and `select_rngs[i]`. All
/// `rows × K` candidates are scored with one classifier pass.
pub fn augment_batch<C: Rng, S: Rng>(
    reps: &Matrix,
    targets: &[usize],
    classifier: &Head,
    cfg: &AugmentationConfig,
    d: f64,
    candidate_rngs: &mut [C],
    select_rngs: &mut [S],
) -> Result<Vec<AugmentationOutcome>> {
    cfg.validate()?;
    if !(d >= 0.0) || !d.is_finite() {
        return Err(GlaError::Domain {
            op: "augment",
            detail: format!("centroid distance {d}"),
        });
    }
    if targets.len() != reps.rows() || candidate_rngs.len() != reps.rows() || select_rngs.len() != reps.rows() {
        return Err(GlaError::Shape {
            op: "augment",
            left: reps.shape(),
            right: (targets.len(), 1),
        });
    }
    let (rows, dim) = reps.shape();
    let k = cfg.num_candidates;

    let mut offsets = Vec::with_capacity(rows * k * dim);
    let mut candidates = Vec::with_capacity(rows * k * dim);
    for (r, rng) in candidate_rngs.iter_mut().enumerate().take(rows) {
        for _ in 0..k {
            let delta = sample_unit_vector(dim, rng);
            let offset = perturbation_offset(d, cfg.eta, &delta);
            candidates.extend(reps.row(r).iter().zip(&offset).map(|(x, o)| x + o));
            offsets.push(offset);
        }
    }
    let candidates = Matrix::new(rows * k, dim, candidates)?;
    let probs = classify_values(classifier, &candidates)?;

    let mut outcomes = Vec::with_capacity(rows);
    for (r, &target) in targets.iter().enumerate() {
        let mut qualified = Vec::new();
        let mut qualified_probs = Vec::new();
        for c in r * k..(r + 1) * k {
            if probs.argmax_row(c) == target {
                qualified.push(c);
                qualified_probs.push(probs.get(c, target));
            }
        }
        let original = Matrix::row_vector(reps.row(r));
        let outcome = if qualified.is_empty() {
            AugmentationOutcome {
                augmented: original,
                offset: Matrix::zeros(1, dim),
                target_class: target,
                qualified_count: 0,
                chosen_target_prob: None,
                fallback: true,
                qualified_probs,
            }
        } else {
            let pick = select_index(&qualified_probs, cfg.strategy, &mut select_rngs[r]);
            let c = qualified[pick];
            AugmentationOutcome {
                augmented: Matrix::row_vector(candidates.row(c)),
                offset: Matrix::row_vector(&offsets[c]),
                target_class: target,
                qualified_count: qualified.len(),
                chosen_target_prob: Some(qualified_probs[pick]),
                fallback: false,
                qualified_probs,
            }
        };
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn centroid_distance_cases() {
        let same = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        assert_eq!(centroid_distance(&same).unwrap(), 0.0);
        let two = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(centroid_distance(&two).unwrap(), 1.0);
        assert!(centroid_distance(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn unit_vectors() {
        let mut r = rng::stream(0, "t", &[]);
        for dim in [1, 2, 7, 128] {
            let v = sample_unit_vector(dim, &mut r);
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        for _ in 0..20 {
            let v = sample_unit_vector(1, &mut r);
            assert!(v[0] == 1.0 || v[0] == -1.0);
        }
    }

    #[test]
    fn perturb_cases() {
        assert_eq!(perturb(&[3.0, -1.0], 2.0, 0.0, &[0.6, 0.8]), vec![3.0, -1.0]);
        assert_eq!(perturb(&[0.0, 0.0], 1.0, 1.0, &[1.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn target_class_rules() {
        assert_eq!(target_class(Some(1), &[0.9, 0.1]), 1);
        assert_eq!(target_class(None, &[0.3, 0.7]), 1);
        assert_eq!(target_class(None, &[0.5, 0.5]), 0);
    }

    #[test]
    fn selection_ties_use_draw_order() {
        let mut r = rng::stream(0, "t", &[]);
        assert_eq!(select_index(&[0.6, 0.6, 0.9], Strategy::Hardest, &mut r), 0);
        assert_eq!(select_index(&[0.6, 0.9, 0.9], Strategy::Easiest, &mut r), 1);
    }

    #[test]
    fn parse_names() {
        for s in Strategy::ALL {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("dataset".parse::<DistScope>().unwrap(), DistScope::Dataset);
        assert!("hard".parse::<Strategy>().is_err());
    }
}
