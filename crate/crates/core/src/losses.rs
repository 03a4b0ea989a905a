//! Loss terms and their multi-task combination: categorical cross-entropy,
//! the concordance-correlation losses for valence and arousal, and the
//! weighted sum `h₁·CE + h₂·L_CCC^V + h₃·L_CCC^A` with the weights summing
//! to one.

use serde::{Deserialize, Serialize};

use crate::tape::{CccStats, Tape, Var};
use crate::tensor::TensorError;

/// Weights of the three loss terms (cross-entropy, valence CCC, arousal
/// CCC). Always normalized to sum exactly 1, so triples given as e.g.
/// `(0.33, 0.33, 0.33)` become exact thirds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub h_ce: f64,
    pub h_valence: f64,
    pub h_arousal: f64,
}

impl LossWeights {
    /// Builds normalized weights from any non-negative triple with a
    /// positive sum.
    pub fn new(h_ce: f64, h_valence: f64, h_arousal: f64) -> Result<Self, TensorError> {
        let sum = h_ce + h_valence + h_arousal;
        if !(h_ce >= 0.0 && h_valence >= 0.0 && h_arousal >= 0.0) || !(sum > 0.0) {
            return Err(TensorError::NonFinite { op: "loss_weights" });
        }
        Ok(Self {
            h_ce: h_ce / sum,
            h_valence: h_valence / sum,
            h_arousal: h_arousal / sum,
        })
    }

    /// Equal contribution for all three tasks.
    pub fn balanced() -> Self {
        Self::new(1.0, 1.0, 1.0).expect("positive weights")
    }

    /// Categorical-only training (discrete single task).
    pub fn categorical_only() -> Self {
        Self::new(1.0, 0.0, 0.0).expect("positive weights")
    }

    /// Dimensional-only training (continuous single task).
    pub fn dimensional_only() -> Self {
        Self::new(0.0, 1.0, 1.0).expect("positive weights")
    }

    pub fn sum(&self) -> f64 {
        self.h_ce + self.h_valence + self.h_arousal
    }

    /// Errors unless the weights sum to 1 within 1e-9 and are non-negative.
    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.h_ce >= 0.0
            && self.h_valence >= 0.0
            && self.h_arousal >= 0.0
            && (self.sum() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op: "loss_weights" })
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::balanced()
    }
}

/// Mean categorical cross-entropy over the batch, via log-sum-exp on the
/// logits.
pub fn cross_entropy(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
    tape.cross_entropy_mean(logits, targets)
}

/// Lin's concordance correlation coefficient between two plain series, with
/// population (1/B) statistics and the squared mean-difference term. Returns
/// 0 (with a warning) for the degenerate both-constant-equal-means case.
pub fn ccc(pred: &[f64], truth: &[f64]) -> Result<f64, TensorError> {
    if pred.len() != truth.len() {
        return Err(TensorError::ShapeMismatch {
            op: "ccc",
            lhs: vec![pred.len()],
            rhs: vec![truth.len()],
        });
    }
    if pred.len() < 2 {
        return Err(TensorError::TooFewSamples {
            op: "ccc",
            min: 2,
            got: pred.len(),
        });
    }
    let stats = CccStats::from_pair(pred, truth);
    if stats.den == 0.0 {
        log::warn!("ccc: both inputs constant with equal means; returning 0");
    }
    Ok(stats.ccc())
}

/// Differentiable `1 − CCC(pred, truth)`; gradient flows into `pred` only.
pub fn ccc_loss(tape: &mut Tape, pred: Var, truth: &[f64]) -> Result<Var, TensorError> {
    tape.ccc_loss(pred, truth)
}

/// The weighted multi-task objective. Terms with zero weight are skipped
/// entirely, so single-task configurations contribute no gradient (and no
/// degenerate-CCC warnings) for the disabled tasks.
#[allow(clippy::too_many_arguments)]
pub fn multitask_loss(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    pred_valence: Var,
    truth_valence: &[f64],
    pred_arousal: Var,
    truth_arousal: &[f64],
    weights: &LossWeights,
) -> Result<Var, TensorError> {
    weights.validate()?;
    let mut total: Option<Var> = None;
    let mut accumulate = |tape: &mut Tape, term: Var, weight: f64| -> Result<(), TensorError> {
        let scaled = tape.mul_scalar(term, weight);
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
        Ok(())
    };
    if weights.h_ce > 0.0 {
        let ce = cross_entropy(tape, logits, targets)?;
        accumulate(tape, ce, weights.h_ce)?;
    }
    if weights.h_valence > 0.0 {
        let lv = ccc_loss(tape, pred_valence, truth_valence)?;
        accumulate(tape, lv, weights.h_valence)?;
    }
    if weights.h_arousal > 0.0 {
        let la = ccc_loss(tape, pred_arousal, truth_arousal)?;
        accumulate(tape, la, weights.h_arousal)?;
    }
    Ok(total.expect("weights sum to 1, so at least one term is positive"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independently coded Lin's-formula oracle (two-pass, textbook form).
    fn lins_ccc_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sx2 = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
        let sy2 = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
        let sxy = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - mx) * (b - my))
            .sum::<f64>()
            / n;
        2.0 * sxy / (sx2 + sy2 + (mx - my).powi(2))
    }

    #[test]
    fn ccc_agrees_with_lins_oracle_on_fixed_case() {
        let pred = [0.1, 0.4, 0.9];
        let truth = [0.2, 0.5, 0.7];
        let got = ccc(&pred, &truth).unwrap();
        let expected = lins_ccc_oracle(&pred, &truth);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn ccc_perfect_and_uncorrelated_cases() {
        let x = [0.1, 0.5, 0.9, 0.3];
        assert!((ccc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        // Constant predictions have zero covariance → CCC 0.
        let constant = [0.4; 4];
        assert_eq!(ccc(&constant, &x).unwrap(), 0.0);
    }

    #[test]
    fn ccc_is_symmetric_and_shift_invariant() {
        let x = [0.3, 0.9, 0.1, 0.6, 0.2];
        let y = [0.35, 0.7, 0.2, 0.55, 0.3];
        assert!((ccc(&x, &y).unwrap() - ccc(&y, &x).unwrap()).abs() < 1e-15);
        let shift = 0.37;
        let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
        assert!((ccc(&xs, &ys).unwrap() - ccc(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn weights_normalize_and_validate() {
        let w = LossWeights::new(0.33, 0.33, 0.33).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-15);
        assert!((w.h_ce - 1.0 / 3.0).abs() < 1e-15);
        w.validate().unwrap();
        let alt = LossWeights::new(0.5, 0.25, 0.25).unwrap();
        assert_eq!(alt.h_ce, 0.5);
        assert!(LossWeights::new(-0.1, 0.6, 0.5).is_err());
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        let tampered = LossWeights {
            h_ce: 0.5,
            h_valence: 0.5,
            h_arousal: 0.5,
        };
        assert!(tampered.validate().is_err());
    }

    #[test]
    fn single_task_weights_reduce_to_single_terms() {
        let mut tape = Tape::new();
        let logits = tape
            .constant(vec![2.0, -1.0, 0.3, 0.8, -0.5, 1.5, 0.0, 0.2], vec![2, 4])
            .unwrap();
        let targets = [0usize, 1usize];
        let pv = tape.constant(vec![0.4, 0.6], vec![2, 1]).unwrap();
        let pa = tape.constant(vec![0.3, 0.7], vec![2, 1]).unwrap();
        let tv = [0.5, 0.5];
        let ta = [0.2, 0.9];

        let only_ce = multitask_loss(
            &mut tape,
            logits,
            &targets,
            pv,
            &tv,
            pa,
            &ta,
            &LossWeights::categorical_only(),
        )
        .unwrap();
        let plain_ce = cross_entropy(&mut tape, logits, &targets).unwrap();
        assert_eq!(tape.data(only_ce)[0], tape.data(plain_ce)[0]);

        let only_dim = multitask_loss(
            &mut tape,
            logits,
            &targets,
            pv,
            &tv,
            pa,
            &ta,
            &LossWeights::dimensional_only(),
        )
        .unwrap();
        let lv = ccc_loss(&mut tape, pv, &tv).unwrap();
        let la = ccc_loss(&mut tape, pa, &ta).unwrap();
        let expected = 0.5 * tape.data(lv)[0] + 0.5 * tape.data(la)[0];
        assert!((tape.data(only_dim)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn multitask_loss_is_linear_in_weights() {
        let mut tape = Tape::new();
        let logits = tape
            .constant(vec![1.0, 0.2, -0.3, 0.5, 0.9, -1.2, 0.4, 0.0], vec![2, 4])
            .unwrap();
        let targets = [2usize, 0usize];
        let pv = tape.constant(vec![0.45, 0.52], vec![2, 1]).unwrap();
        let pa = tape.constant(vec![0.61, 0.38], vec![2, 1]).unwrap();
        let tv = [0.4, 0.6];
        let ta = [0.7, 0.3];
        let w1 = LossWeights::new(0.5, 0.25, 0.25).unwrap();
        let w2 = LossWeights::new(0.2, 0.5, 0.3).unwrap();
        let alpha = 0.3;
        let blended = LossWeights {
            h_ce: alpha * w1.h_ce + (1.0 - alpha) * w2.h_ce,
            h_valence: alpha * w1.h_valence + (1.0 - alpha) * w2.h_valence,
            h_arousal: alpha * w1.h_arousal + (1.0 - alpha) * w2.h_arousal,
        };
        let mut eval = |w: &LossWeights| -> f64 {
            let loss =
                multitask_loss(&mut tape, logits, &targets, pv, &tv, pa, &ta, w).unwrap();
            tape.data(loss)[0]
        };
        let l1 = eval(&w1);
        let l2 = eval(&w2);
        let lb = eval(&blended);
        assert!((lb - (alpha * l1 + (1.0 - alpha) * l2)).abs() < 1e-12);
    }
}
