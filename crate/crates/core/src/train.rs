//! Integrated semi-supervised training: contrastive and classification
//! objectives are optimised together in a single phase.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::augment::{augment_batch, centroid_distance, select_index, target_class, AugmentationConfig, AugmentationOutcome, DistScope, Strategy};
use crate::autodiff::{Tape, Var};
use crate::data::{FoldPlan, GraphDataset};
use crate::error::{GlaError, Result};
use crate::loss::{classification_loss, contrastive_loss, ntxent_with_negatives, one_hot_targets, total_loss, LOG_EPS};
use crate::matrix::{argmax, Matrix};
use crate::model::{classify, classify_values, project, represent, represent_values, Head, HeadVars, ModelConfig, ModelParams, ParamVars, PreparedGraph};
use crate::rng::{self, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the classification loss.
    pub alpha: f64,
    pub augmentation: AugmentationConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_ratio: f64,
    pub seed: u64,
    /// Replace the positive-only loss with NT-Xent over in-batch negatives.
    pub negative_pairs: bool,
    /// NT-Xent temperature; unused without negative pairs.
    pub temperature: f64,
    pub model: ModelConfig,
    /// Full-batch epochs for the surrogate classifier that measures the
    /// label-invariant rate.
    pub surrogate_epochs: usize,
    pub surrogate_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            augmentation: AugmentationConfig::default(),
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            label_ratio: 0.5,
            seed: 0,
            negative_pairs: false,
            temperature: 0.5,
            model: ModelConfig::default(),
            surrogate_epochs: 200,
            surrogate_learning_rate: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(GlaError::Config(m));
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return err(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return err(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return err("epochs must be >= 1".into());
        }
        if self.batch_size == 0 || (self.negative_pairs && self.batch_size < 2) {
            return err(format!("batch size {} too small", self.batch_size));
        }
        if !(self.label_ratio > 0.0 && self.label_ratio <= 1.0) {
            return err(format!("label ratio {} outside (0, 1]", self.label_ratio));
        }
        if self.negative_pairs && !(self.temperature > 0.0) {
            return err(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.surrogate_learning_rate > 0.0) {
            return err(format!("surrogate learning rate must be > 0, got {}", self.surrogate_learning_rate));
        }
        self.augmentation.validate()
    }
}

/// Dataset with adjacency normalised once up front.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub name: String,
    pub graphs: Vec<PreparedGraph>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl PreparedDataset {
    pub fn new(ds: &GraphDataset) -> Self {
        Self {
            name: ds.name.clone(),
            graphs: ds.graphs.iter().map(PreparedGraph::new).collect(),
            num_classes: ds.num_classes,
            feature_dim: ds.feature_dim,
        }
    }

    fn select(&self, indices: &[usize]) -> Vec<&PreparedGraph> {
        indices.iter().map(|&i| &self.graphs[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub contrastive_loss: f64,
    pub classification_loss: f64,
    pub total_loss: f64,
    pub valid_accuracy: f64,
    /// Mean cross-entropy of the classifier on the validation graphs.
    pub valid_loss: f64,
    pub fallback_rate: f64,
}

/// Running tallies over every augmentation drawn during training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStats {
    pub augmentations: u64,
    pub fallbacks: u64,
    /// `qualified_histogram[q]` counts augmentations with `q` qualified candidates.
    pub qualified_histogram: Vec<u64>,
    pub chosen_target_prob_sum: f64,
    /// Non-fallback augmentations whose class was re-checked against the
    /// selecting classifier, and how many disagreed.
    pub invariance_checked: u64,
    pub invariance_violations: u64,
    /// Candidate pools with at least two qualified members on which the
    /// hardest ≤ random ≤ easiest ordering was checked, and failures.
    pub ordering_checked: u64,
    pub ordering_violations: u64,
}

impl AugmentationStats {
    fn new(k: usize) -> Self {
        Self {
            qualified_histogram: vec![0; k + 1],
            ..Default::default()
        }
    }

    pub fn fallback_rate(&self) -> f64 {
        ratio(self.fallbacks, self.augmentations)
    }

    pub fn chosen_target_prob_mean(&self) -> Option<f64> {
        let chosen = self.augmentations - self.fallbacks;
        (chosen > 0).then(|| self.chosen_target_prob_sum / chosen as f64)
    }

    pub fn merge(&mut self, other: &AugmentationStats) {
        self.augmentations += other.augmentations;
        self.fallbacks += other.fallbacks;
        if self.qualified_histogram.len() < other.qualified_histogram.len() {
            self.qualified_histogram.resize(other.qualified_histogram.len(), 0);
        }
        for (a, b) in self.qualified_histogram.iter_mut().zip(&other.qualified_histogram) {
            *a += b;
        }
        self.chosen_target_prob_sum += other.chosen_target_prob_sum;
        self.invariance_checked += other.invariance_checked;
        self.invariance_violations += other.invariance_violations;
        self.ordering_checked += other.ordering_checked;
        self.ordering_violations += other.ordering_violations;
    }

    fn record(&mut self, o: &AugmentationOutcome) {
        self.augmentations += 1;
        self.qualified_histogram[o.qualified_count] += 1;
        match o.chosen_target_prob {
            Some(p) => self.chosen_target_prob_sum += p,
            None => self.fallbacks += 1,
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantRate {
    pub rate: f64,
    pub graphs: usize,
    pub fallbacks: usize,
    pub surrogate_train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    /// 1-based epoch whose parameters scored best on validation.
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub test_accuracy: f64,
    pub labeled_count: usize,
    pub label_invariant: InvariantRate,
    pub augmentation: AugmentationStats,
    pub epochs: Vec<EpochStats>,
}

impl FoldResult {
    pub fn fallback_rate(&self) -> f64 {
        self.augmentation.fallback_rate()
    }

    pub fn validation_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.valid_accuracy).collect()
    }
}

/// Result of [`train_fold`]: the report plus the best-validation parameters.
#[derive(Clone, Debug)]
pub struct TrainedFold {
    pub result: FoldResult,
    pub params: ModelParams,
}

/// Fraction of `indices` whose classifier argmax matches the label.
pub fn accuracy(params: &ModelParams, data: &PreparedDataset, indices: &[usize]) -> Result<f64> {
    Ok(evaluate(params, data, indices)?.0)
}

/// Accuracy and mean cross-entropy over `indices`.
pub fn evaluate(params: &ModelParams, data: &PreparedDataset, indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Ok((0.0, 0.0));
    }
    let reps = represent_values(params, &data.select(indices))?;
    let probs = classify_values(&params.classifier, &reps)?;
    let mut correct = 0;
    let mut loss = 0.0;
    for (r, &i) in indices.iter().enumerate() {
        let label = data.graphs[i]
            .label
            .ok_or_else(|| GlaError::Dataset(format!("graph {i} has no label")))?;
        correct += usize::from(probs.argmax_row(r) == label);
        loss -= probs.get(r, label).max(LOG_EPS).ln();
    }
    let n = indices.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Cuts the epoch order into batches; a trailing batch of one graph joins
/// the previous batch so every batch has negatives available.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = order.len() - 1 - out.last().unwrap().len();
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

struct StepLosses {
    contrastive: f64,
    classification: f64,
    total: f64,
}

struct FoldTrainer<'a> {
    data: &'a PreparedDataset,
    fold: &'a FoldPlan,
    cfg: &'a TrainConfig,
    params: ModelParams,
    adam: AdamState,
    stats: AugmentationStats,
}

impl FoldTrainer<'_> {
    fn visible_label(&self, idx: usize) -> Option<usize> {
        if self.fold.is_labeled(idx) {
            self.data.graphs[idx].label
        } else {
            None
        }
    }

    fn step(&mut self, batch: &[usize], path: [u64; 3], epoch_distance: Option<f64>) -> Result<(StepLosses, u64, u64)> {
        let cfg = self.cfg;
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, true);

        let reps = batch
            .iter()
            .map(|&i| represent(&mut tape, &self.data.graphs[i], &vars))
            .collect::<Result<Vec<_>>>()?;
        let h_o = tape.concat_rows(&reps)?;
        let c_o = classify(&mut tape, h_o, &vars.classifier)?;

        let h_values = tape.value(h_o).clone();
        let c_values = tape.value(c_o).clone();
        let d = match epoch_distance {
            Some(d) => d,
            None => centroid_distance(&h_values)?,
        };
        let labels: Vec<Option<usize>> = batch.iter().map(|&i| self.visible_label(i)).collect();
        let targets: Vec<usize> = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| target_class(l, c_values.row(r)))
            .collect();

        let rng_path = |name: &str, i: usize| {
            rng::stream(cfg.seed, name, &[self.fold.fold_index as u64, path[0], path[1], path[2], i as u64])
        };
        let mut cand_rngs: Vec<StreamRng> = batch.iter().map(|&i| rng_path("perturb", i)).collect();
        let mut sel_rngs: Vec<StreamRng> = batch.iter().map(|&i| rng_path("select", i)).collect();
        let outcomes = augment_batch(
            &h_values,
            &targets,
            &self.params.classifier,
            &cfg.augmentation,
            d,
            &mut cand_rngs,
            &mut sel_rngs,
        )?;

        let mut fallbacks = 0;
        let mut offsets = Vec::with_capacity(h_values.len());
        for (r, o) in outcomes.iter().enumerate() {
            self.stats.record(o);
            fallbacks += u64::from(o.fallback);
            self.check_outcome(o, &rng_path("select", batch[r]))?;
            offsets.extend_from_slice(o.offset.as_slice());
        }
        let offsets = Matrix::new(h_values.rows(), h_values.cols(), offsets)?;
        let y = one_hot_targets(&labels, self.data.num_classes);
        let obj = objective(&mut tape, &vars, h_o, c_o, offsets, &y, cfg)?;
        let (l_p, l_c, loss) = (obj.contrastive, obj.classification, obj.total);
        let losses = StepLosses {
            contrastive: tape.value(l_p).get(0, 0),
            classification: tape.value(l_c).get(0, 0),
            total: tape.value(loss).get(0, 0),
        };

        let grads = tape.backward(loss)?;
        let shapes: Vec<(usize, usize)> = self.params.matrices().iter().map(|m| m.shape()).collect();
        let grads: Vec<Matrix> = vars
            .vars()
            .into_iter()
            .zip(shapes)
            .map(|(v, s)| grads.get_or_zeros(v, s))
            .collect();
        adam_step(&mut self.params.matrices_mut(), &grads, &mut self.adam, cfg.learning_rate)?;
        Ok((losses, fallbacks, batch.len() as u64))
    }

    /// Re-checks a selection against the classifier that made it: the chosen
    /// candidate must still carry the target class, and on the same pool the
    /// three strategies must order as hardest ≤ random ≤ easiest.
    fn check_outcome(&mut self, o: &AugmentationOutcome, select_rng: &StreamRng) -> Result<()> {
        if !o.fallback {
            self.stats.invariance_checked += 1;
            let probs = classify_values(&self.params.classifier, &o.augmented)?;
            if probs.argmax_row(0) != o.target_class {
                self.stats.invariance_violations += 1;
                return Err(GlaError::Invariant(format!(
                    "selected augmentation classified as {} instead of target {}",
                    probs.argmax_row(0),
                    o.target_class
                )));
            }
        }
        if o.qualified_count >= 2 {
            self.stats.ordering_checked += 1;
            let pick = |s: Strategy| {
                let mut r = select_rng.clone();
                o.qualified_probs[select_index(&o.qualified_probs, s, &mut r)]
            };
            let (h, r, e) = (pick(Strategy::Hardest), pick(Strategy::Random), pick(Strategy::Easiest));
            let chosen = o.chosen_target_prob.expect("qualified pool");
            if !(h <= r && r <= e) || chosen != pick(self.cfg.augmentation.strategy) {
                self.stats.ordering_violations += 1;
                return Err(GlaError::Invariant(format!(
                    "strategy ordering violated: hardest {h}, random {r}, easiest {e}"
                )));
            }
        }
        Ok(())
    }
}

/// Loss terms of one batch, as tape variables.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub h_augmented: Var,
    pub c_augmented: Var,
    pub p_original: Var,
    pub p_augmented: Var,
    pub contrastive: Var,
    pub classification: Var,
    pub total: Var,
}

/// Builds the training loss from the original batch representations `h_o`,
/// their class probabilities `c_o`, the (constant) augmentation offsets and
/// one-hot targets whose all-zero rows mark unlabeled graphs.
pub fn objective(
    tape: &mut Tape,
    vars: &ParamVars,
    h_o: Var,
    c_o: Var,
    offsets: Matrix,
    targets: &Matrix,
    cfg: &TrainConfig,
) -> Result<Objective> {
    let offsets = tape.constant(offsets);
    let h_a = tape.add(h_o, offsets)?;
    let c_a = classify(tape, h_a, &vars.classifier)?;
    let p_o = project(tape, h_o, &vars.projector)?;
    let p_a = project(tape, h_a, &vars.projector)?;
    let l_p = if cfg.negative_pairs {
        ntxent_with_negatives(tape, p_o, p_a, cfg.temperature)?
    } else {
        contrastive_loss(tape, p_o, p_a)?
    };
    let l_c = classification_loss(tape, c_o, c_a, targets)?;
    let total = total_loss(tape, l_p, l_c, cfg.alpha)?;
    Ok(Objective {
        h_augmented: h_a,
        c_augmented: c_a,
        p_original: p_o,
        p_augmented: p_a,
        contrastive: l_p,
        classification: l_c,
        total,
    })
}

/// Trains one fold and reports test accuracy at the best validation epoch.
pub fn train_fold(data: &PreparedDataset, fold: &FoldPlan, cfg: &TrainConfig) -> Result<TrainedFold> {
    cfg.validate()?;
    if fold.train_indices.is_empty() || fold.valid_indices.is_empty() || fold.test_indices.is_empty() {
        return Err(GlaError::Config(format!("fold {} has an empty split", fold.fold_index)));
    }
    let fold_id = fold.fold_index as u64;
    let params = ModelParams::init(
        data.feature_dim,
        data.num_classes,
        &cfg.model,
        &mut rng::stream(cfg.seed, "init", &[fold_id]),
    )?;
    let mut trainer = FoldTrainer {
        data,
        fold,
        cfg,
        adam: AdamState::new(params.matrices()),
        params,
        stats: AugmentationStats::new(cfg.augmentation.num_candidates),
    };

    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = fold.train_indices.clone();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", &[fold_id, epoch as u64]));

        let epoch_distance = match cfg.augmentation.dist_scope {
            DistScope::Batch => None,
            DistScope::Dataset => {
                let reps = represent_values(&trainer.params, &data.select(&fold.train_indices))?;
                Some(centroid_distance(&reps)?)
            }
        };

        let (mut lp, mut lc, mut lt) = (0.0, 0.0, 0.0);
        let (mut fallbacks, mut seen) = (0u64, 0u64);
        let batches = batches(&order, cfg.batch_size);
        for (step, batch) in batches.iter().enumerate() {
            let (losses, fb, n) = trainer.step(batch, [epoch as u64, step as u64, 0], epoch_distance)?;
            lp += losses.contrastive;
            lc += losses.classification;
            lt += losses.total;
            fallbacks += fb;
            seen += n;
        }
        let nb = batches.len() as f64;
        let (valid_accuracy, valid_loss) = evaluate(&trainer.params, data, &fold.valid_indices)?;
        epochs.push(EpochStats {
            epoch: epoch + 1,
            contrastive_loss: lp / nb,
            classification_loss: lc / nb,
            total_loss: lt / nb,
            valid_accuracy,
            valid_loss,
            fallback_rate: ratio(fallbacks, seen),
        });
        // Accuracy first; equal accuracy goes to the lower validation loss.
        let better = best.as_ref().is_none_or(|(acc, loss, _, _)| {
            valid_accuracy > *acc || (valid_accuracy == *acc && valid_loss < *loss)
        });
        if better {
            best = Some((valid_accuracy, valid_loss, epoch + 1, trainer.params.clone()));
        }
    }

    let (best_valid_accuracy, _, best_epoch, best_params) = best.expect("at least one epoch");
    let test_accuracy = accuracy(&best_params, data, &fold.test_indices)?;
    let label_invariant = label_invariant_rate(&best_params, data, fold, cfg)?;
    Ok(TrainedFold {
        result: FoldResult {
            fold_index: fold.fold_index,
            best_epoch,
            best_valid_accuracy,
            test_accuracy,
            labeled_count: fold.labeled.len(),
            label_invariant,
            augmentation: trainer.stats,
            epochs,
        },
        params: best_params,
    })
}

/// Trains a fresh classifier head on frozen representations with every
/// label visible.
pub fn train_surrogate(reps: &Matrix, labels: &[usize], classes: usize, cfg: &TrainConfig) -> Result<Head> {
    let mut rng = rng::stream(cfg.seed, "surrogate", &[]);
    let mut head = Head::init(reps.cols(), reps.cols(), classes, &mut rng);
    let y = one_hot_targets(&labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), classes);
    let mut adam = AdamState::new([&head.w1, &head.b1, &head.w2, &head.b2]);
    for _ in 0..cfg.surrogate_epochs {
        let mut tape = Tape::new();
        let vars = HeadVars::register(&head, &mut tape, true);
        let h = tape.constant(reps.clone());
        let c = classify(&mut tape, h, &vars)?;
        let c = tape.clamp(c, LOG_EPS, 1.0)?;
        let lc = tape.log(c)?;
        let yv = tape.constant(y.clone());
        let s = tape.dot(yv, lc)?;
        let loss = tape.scale(s, -1.0 / labels.len() as f64)?;
        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = vars
            .vars()
            .iter()
            .zip([&head.w1, &head.b1, &head.w2, &head.b2].map(|m| m.shape()))
            .map(|(&v, s)| grads.get_or_zeros(v, s))
            .collect();
        adam_step(&mut [&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2], &g, &mut adam, cfg.surrogate_learning_rate)?;
    }
    Ok(head)
}

/// Share of augmentations that a surrogate classifier, trained with all
/// labels on the frozen encoder, assigns to the same class as the original
/// representation. Selection is still gated by the model's own classifier.
pub fn label_invariant_rate(params: &ModelParams, data: &PreparedDataset, fold: &FoldPlan, cfg: &TrainConfig) -> Result<InvariantRate> {
    let all: Vec<usize> = (0..data.graphs.len()).collect();
    let labels = data
        .graphs
        .iter()
        .enumerate()
        .map(|(i, g)| g.label.ok_or_else(|| GlaError::Dataset(format!("graph {i} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let reps = represent_values(params, &data.select(&all))?;
    let surrogate = train_surrogate(&reps, &labels, data.num_classes, cfg)?;

    let own = classify_values(&params.classifier, &reps)?;
    let targets: Vec<usize> = all
        .iter()
        .map(|&i| {
            let visible = fold.is_labeled(i).then_some(labels[i]);
            target_class(visible, own.row(i))
        })
        .collect();
    let train_reps = represent_values(params, &data.select(&fold.train_indices))?;
    let d = centroid_distance(&train_reps)?;
    let fold_id = fold.fold_index as u64;
    let mut cand: Vec<StreamRng> = all.iter().map(|&i| rng::stream(cfg.seed, "rate-perturb", &[fold_id, i as u64])).collect();
    let mut sel: Vec<StreamRng> = all.iter().map(|&i| rng::stream(cfg.seed, "rate-select", &[fold_id, i as u64])).collect();
    let outcomes = augment_batch(&reps, &targets, &params.classifier, &cfg.augmentation, d, &mut cand, &mut sel)?;

    let mut augmented = Vec::with_capacity(reps.len());
    for o in &outcomes {
        augmented.extend_from_slice(o.augmented.as_slice());
    }
    let augmented = Matrix::new(reps.rows(), reps.cols(), augmented)?;
    let before = classify_values(&surrogate, &reps)?;
    let after = classify_values(&surrogate, &augmented)?;
    let same = (0..reps.rows()).filter(|&r| before.argmax_row(r) == after.argmax_row(r)).count();
    let surrogate_correct = (0..reps.rows()).filter(|&r| argmax(before.row(r)) == labels[r]).count();
    Ok(InvariantRate {
        rate: same as f64 / reps.rows() as f64,
        graphs: reps.rows(),
        fallbacks: outcomes.iter().filter(|o| o.fallback).count(),
        surrogate_train_accuracy: surrogate_correct as f64 / reps.rows() as f64,
    })
}
