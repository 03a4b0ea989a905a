//! Evaluation metrics: weighted accuracy (WAR), unweighted per-class
//! average recall (UAR), concordance correlation for the two continuous
//! dimensions, and the 4×4 confusion matrix they are derived from.

use serde::{Deserialize, Serialize};

use crate::data::{Emotion, N_CLASSES};
use crate::losses::ccc;
use crate::tensor::TensorError;

/// Classification + regression scores over one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Weighted accuracy: correct / total.
    pub war: f64,
    /// Unweighted accuracy: mean of per-class recalls over classes that
    /// appear in the ground truth.
    pub uar: f64,
    /// Concordance correlation of predicted vs. true valence.
    pub ccc_valence: f64,
    /// Concordance correlation of predicted vs. true arousal.
    pub ccc_arousal: f64,
    /// `confusion[truth][predicted]` counts.
    pub confusion: [[u32; N_CLASSES]; N_CLASSES],
    pub n_samples: usize,
}

/// Builds the confusion matrix from parallel label slices.
pub fn confusion_matrix(
    predicted: &[Emotion],
    truth: &[Emotion],
) -> Result<[[u32; N_CLASSES]; N_CLASSES], TensorError> {
    if predicted.len() != truth.len() {
        return Err(TensorError::ShapeMismatch {
            op: "confusion_matrix",
            lhs: vec![predicted.len()],
            rhs: vec![truth.len()],
        });
    }
    let mut confusion = [[0u32; N_CLASSES]; N_CLASSES];
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[t.index()][p.index()] += 1;
    }
    Ok(confusion)
}

/// Weighted accuracy: the fraction of exactly correct labels.
pub fn weighted_accuracy(confusion: &[[u32; N_CLASSES]; N_CLASSES]) -> f64 {
    let total: u32 = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let correct: u32 = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    correct as f64 / total as f64
}

/// Unweighted accuracy: per-class recall averaged over the classes present
/// in the ground truth.
pub fn unweighted_accuracy(confusion: &[[u32; N_CLASSES]; N_CLASSES]) -> f64 {
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for c in 0..N_CLASSES {
        let row_total: u32 = confusion[c].iter().sum();
        if row_total > 0 {
            recall_sum += confusion[c][c] as f64 / row_total as f64;
            present += 1;
        }
    }
    if present == 0 {
        0.0
    } else {
        recall_sum / present as f64
    }
}

/// Computes the full report from pooled predictions. The CCC terms use all
/// samples at once (pooled over whatever set the caller accumulated), not a
/// mean of per-batch values.
pub fn compute_metrics(
    predicted: &[Emotion],
    truth: &[Emotion],
    pred_valence: &[f64],
    true_valence: &[f64],
    pred_arousal: &[f64],
    true_arousal: &[f64],
) -> Result<EvalReport, TensorError> {
    if predicted.is_empty() {
        return Err(TensorError::EmptyInputs {
            op: "compute_metrics",
        });
    }
    let n = predicted.len();
    for (name, len) in [
        ("truth", truth.len()),
        ("pred_valence", pred_valence.len()),
        ("true_valence", true_valence.len()),
        ("pred_arousal", pred_arousal.len()),
        ("true_arousal", true_arousal.len()),
    ] {
        if len != n {
            let _ = name;
            return Err(TensorError::ShapeMismatch {
                op: "compute_metrics",
                lhs: vec![n],
                rhs: vec![len],
            });
        }
    }
    let confusion = confusion_matrix(predicted, truth)?;
    Ok(EvalReport {
        war: weighted_accuracy(&confusion),
        uar: unweighted_accuracy(&confusion),
        ccc_valence: ccc(pred_valence, true_valence)?,
        ccc_arousal: ccc(pred_arousal, true_arousal)?,
        confusion,
        n_samples: n,
    })
}
