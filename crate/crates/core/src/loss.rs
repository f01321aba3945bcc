//! Training objectives built on the tape.

use crate::autodiff::{Tape, Var};
use crate::error::{GlaError, Result};
use crate::matrix::Matrix;

/// Lower bound applied to probabilities before taking logarithms.
pub const LOG_EPS: f64 = 1e-12;
/// Lower bound applied to vector norms before dividing by them.
pub const NORM_EPS: f64 = 1e-12;

/// Rows of `p` scaled to unit length (norms clamped below by [`NORM_EPS`]).
pub fn normalize_rows(tape: &mut Tape, p: Var) -> Result<Var> {
    let norms = tape.l2_norm_rows(p)?;
    let norms = tape.clamp(norms, NORM_EPS, f64::INFINITY)?;
    let inv = tape.recip(norms)?;
    tape.row_scale(p, inv)
}

/// Positive-pair loss: mean over rows of `−cos(p_o[i], p_a[i])`.
pub fn contrastive_loss(tape: &mut Tape, p_o: Var, p_a: Var) -> Result<Var> {
    let rows = tape.value(p_o).rows();
    if rows == 0 {
        return Err(GlaError::Domain {
            op: "contrastive_loss",
            detail: "empty batch".into(),
        });
    }
    let no = normalize_rows(tape, p_o)?;
    let na = normalize_rows(tape, p_a)?;
    let prod = tape.mul(no, na)?;
    let total = tape.sum_all(prod)?;
    tape.scale(total, -1.0 / rows as f64)
}

/// NT-Xent with cross-graph negatives. Anchor `i` is `p_o[i]`, its positive
/// is `p_a[i]` and the other rows of `p_a` are negatives:
/// `ℓᵢ = −log softmaxⱼ(sim(p_o[i], p_a[j]) / τ)[i]`, averaged over `i`.
pub fn ntxent_with_negatives(tape: &mut Tape, p_o: Var, p_a: Var, temperature: f64) -> Result<Var> {
    let rows = tape.value(p_o).rows();
    if rows < 2 {
        return Err(GlaError::Domain {
            op: "ntxent_with_negatives",
            detail: format!("batch of {rows} has no negatives"),
        });
    }
    if !(temperature > 0.0) {
        return Err(GlaError::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let no = normalize_rows(tape, p_o)?;
    let na = normalize_rows(tape, p_a)?;
    let nat = tape.transpose(na)?;
    let sim = tape.matmul(no, nat)?;
    let logits = tape.scale(sim, 1.0 / temperature)?;
    let probs = tape.softmax_rows(logits)?;
    let probs = tape.clamp(probs, LOG_EPS, 1.0)?;
    let logp = tape.log(probs)?;
    let eye = tape.constant(Matrix::identity(rows));
    let diag = tape.dot(logp, eye)?;
    tape.scale(diag, -1.0 / rows as f64)
}

/// Cross-entropy of both the original and augmented predictions against
/// `targets` (one-hot rows; all-zero rows mark unlabeled graphs), averaged
/// over labeled rows. Exactly zero when no row is labeled.
pub fn classification_loss(tape: &mut Tape, c_o: Var, c_a: Var, targets: &Matrix) -> Result<Var> {
    let labeled = (0..targets.rows())
        .filter(|&r| targets.row(r).iter().any(|&v| v != 0.0))
        .count();
    if labeled == 0 {
        return Ok(tape.constant(Matrix::zeros(1, 1)));
    }
    let y = tape.constant(targets.clone());
    let mut total = None;
    for c in [c_o, c_a] {
        let p = tape.clamp(c, LOG_EPS, 1.0)?;
        let lp = tape.log(p)?;
        let term = tape.dot(y, lp)?;
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    tape.scale(total.expect("two terms"), -1.0 / labeled as f64)
}

/// `L_P + α·L_C`.
pub fn total_loss(tape: &mut Tape, contrastive: Var, classification: Var, alpha: f64) -> Result<Var> {
    let weighted = tape.scale(classification, alpha)?;
    tape.add(contrastive, weighted)
}

/// One-hot rows for labeled entries, zero rows otherwise.
pub fn one_hot_targets(labels: &[Option<usize>], classes: usize) -> Matrix {
    let mut y = Matrix::zeros(labels.len(), classes);
    for (r, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            y.set(r, *c, 1.0);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).get(0, 0)
    }

    #[test]
    fn identical_and_orthogonal_pairs() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_rows(&[[1.0, 2.0, -0.5]]));
        let l = contrastive_loss(&mut t, a, a).unwrap();
        assert!((scalar(&t, l) + 1.0).abs() < 1e-12);

        let b = t.constant(Matrix::from_rows(&[[1.0, 0.0]]));
        let c = t.constant(Matrix::from_rows(&[[0.0, 3.0]]));
        let l = contrastive_loss(&mut t, b, c).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
    }

    #[test]
    fn zero_projection_does_not_blow_up() {
        let mut t = Tape::new();
        let z = t.param(Matrix::zeros(1, 3));
        let o = t.param(Matrix::from_rows(&[[1.0, 0.0, 0.0]]));
        let l = contrastive_loss(&mut t, z, o).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
        t.backward(l).unwrap();
    }

    #[test]
    fn ntxent_uniform_when_all_identical() {
        let mut t = Tape::new();
        let p = t.constant(Matrix::filled(4, 3, 0.7));
        let l = ntxent_with_negatives(&mut t, p, p, 0.5).unwrap();
        assert!((scalar(&t, l) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ntxent_two_rows_closed_form() {
        // Anchors e1, e2; positives at angle with cosine s, cross terms orthogonal.
        let s: f64 = 0.6;
        let q = (1.0 - s * s).sqrt();
        let mut t = Tape::new();
        let po = t.constant(Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]));
        let pa = t.constant(Matrix::from_rows(&[[s, 0.0, q, 0.0], [0.0, s, 0.0, q]]));
        let l = ntxent_with_negatives(&mut t, po, pa, 1.0).unwrap();
        let expected = -(s.exp() / (s.exp() + 1.0)).ln();
        assert!((scalar(&t, l) - expected).abs() < 1e-12);
    }

    #[test]
    fn ntxent_rejects_single_row() {
        let mut t = Tape::new();
        let p = t.constant(Matrix::filled(1, 3, 1.0));
        assert!(ntxent_with_negatives(&mut t, p, p, 0.5).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let mut t = Tape::new();
        let exact = t.constant(Matrix::from_rows(&[[0.0, 1.0]]));
        let y = one_hot_targets(&[Some(1)], 2);
        let l = classification_loss(&mut t, exact, exact, &y).unwrap();
        assert_eq!(scalar(&t, l), 0.0);

        let uniform = t.constant(Matrix::from_rows(&[[0.5, 0.5]]));
        let l = classification_loss(&mut t, uniform, uniform, &y).unwrap();
        assert!((scalar(&t, l) - 2.0 * 2f64.ln()).abs() < 1e-15);

        let none = one_hot_targets(&[None], 2);
        let l = classification_loss(&mut t, uniform, uniform, &none).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
    }

    #[test]
    fn unlabeled_rows_do_not_change_cross_entropy() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::from_rows(&[[0.2, 0.8], [0.6, 0.4], [0.1, 0.9]]));
        let y = one_hot_targets(&[Some(1), None, Some(0)], 2);
        let full = classification_loss(&mut t, c, c, &y).unwrap();
        let c2 = t.constant(Matrix::from_rows(&[[0.2, 0.8], [0.1, 0.9]]));
        let y2 = one_hot_targets(&[Some(1), Some(0)], 2);
        let part = classification_loss(&mut t, c2, c2, &y2).unwrap();
        assert_eq!(scalar(&t, full), scalar(&t, part));
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut t = Tape::new();
        let lp = t.constant(Matrix::filled(1, 1, -1.0));
        let lc = t.constant(Matrix::filled(1, 1, 2.0 * 2f64.ln()));
        let l = total_loss(&mut t, lp, lc, 0.0).unwrap();
        assert_eq!(scalar(&t, l), -1.0);
        let l = total_loss(&mut t, lp, lc, 1.0).unwrap();
        assert_eq!(scalar(&t, l), -1.0 + 2.0 * 2f64.ln());
    }
}
