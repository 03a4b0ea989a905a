//! Random Modality Masking: a per-epoch curriculum that zeroes one modality's
//! features under a cosine-decaying probability and freezes that modality's
//! refinement parameters for the epoch, forcing the rest of the network to
//! cope with a missing stream.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::ConfigError;
use crate::data::Batch;
use crate::model::FusionModel;

#[derive(Debug, Error)]
pub enum RmmError {
    #[error("epoch {epoch} out of range for a {total}-epoch schedule")]
    EpochOutOfRange { epoch: usize, total: usize },
}

/// The two input streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
}

/// Masking schedule. The probability starts at `p0`, follows a half-cosine
/// down over the fold's epochs, and snaps to zero once the raw value drops
/// below `floor`. When masking fires, text is chosen with `text_mask_prob`
/// (audio otherwise).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RmmSchedule {
    pub enabled: bool,
    pub p0: f64,
    pub floor: f64,
    pub text_mask_prob: f64,
    pub total_epochs: usize,
}

impl Default for RmmSchedule {
    fn default() -> Self {
        Self {
            enabled: false,
            p0: 0.8,
            floor: 0.1,
            text_mask_prob: 0.6,
            total_epochs: 20,
        }
    }
}

impl RmmSchedule {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0 <= self.floor && self.floor < self.p0 && self.p0 <= 1.0) {
            return Err(ConfigError::Invalid {
                field: "rmm",
                reason: format!(
                    "need 0 <= floor < p0 <= 1, got floor={} p0={}",
                    self.floor, self.p0
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.text_mask_prob) {
            return Err(ConfigError::Invalid {
                field: "rmm.text_mask_prob",
                reason: format!("{} outside [0,1]", self.text_mask_prob),
            });
        }
        if self.total_epochs == 0 {
            return Err(ConfigError::NonPositive {
                field: "rmm.total_epochs",
            });
        }
        Ok(())
    }
}

/// Per-epoch masking decision. `masked_modality` is present iff
/// `mask_active`; the constructors keep that invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMaskDecision {
    pub mask_active: bool,
    pub masked_modality: Option<Modality>,
}

impl EpochMaskDecision {
    pub fn none() -> Self {
        Self {
            mask_active: false,
            masked_modality: None,
        }
    }

    pub fn mask(modality: Modality) -> Self {
        Self {
            mask_active: true,
            masked_modality: Some(modality),
        }
    }
}

/// Masking probability at epoch `e`:
/// `raw = p0 · ½(1 + cos(π·e/(E−1)))`, snapped to 0 once `raw < floor`.
/// A single-epoch schedule sits at the start of the curve, `p0`.
pub fn masking_probability(epoch: usize, sched: &RmmSchedule) -> Result<f64, RmmError> {
    let total = sched.total_epochs;
    if epoch >= total {
        return Err(RmmError::EpochOutOfRange { epoch, total });
    }
    let raw = if total == 1 {
        sched.p0
    } else {
        let phase = std::f64::consts::PI * epoch as f64 / (total - 1) as f64;
        sched.p0 * 0.5 * (1.0 + phase.cos())
    };
    Ok(if raw >= sched.floor { raw } else { 0.0 })
}

/// Draws the epoch's decision. Consumes one rng draw when masking does not
/// fire and two when it does (the second picks the modality). With the
/// schedule disabled, no draws happen and the decision is always inactive,
/// so a disabled scheduler leaves training trajectories untouched.
pub fn decide_epoch(
    epoch: usize,
    sched: &RmmSchedule,
    rng: &mut impl Rng,
) -> Result<EpochMaskDecision, RmmError> {
    if !sched.enabled {
        return Ok(EpochMaskDecision::none());
    }
    let p = masking_probability(epoch, sched)?;
    if rng.random::<f64>() < p {
        let modality = if rng.random::<f64>() < sched.text_mask_prob {
            Modality::Text
        } else {
            Modality::Audio
        };
        Ok(EpochMaskDecision::mask(modality))
    } else {
        Ok(EpochMaskDecision::none())
    }
}

/// Applies a decision to one batch: returns the (possibly) masked batch and
/// the parameter indices to exclude from this epoch's optimizer steps. The
/// masked modality's features become all zeros; pad masks are left alone, so
/// sequence lengths and attention structure stay fixed.
pub fn apply_mask(
    decision: &EpochMaskDecision,
    batch: &Batch,
    model: &FusionModel,
) -> (Batch, Vec<usize>) {
    match decision.masked_modality {
        None => (batch.clone(), Vec::new()),
        Some(modality) => {
            let mut masked = batch.clone();
            let target = match modality {
                Modality::Audio => &mut masked.audio,
                Modality::Text => &mut masked.text,
            };
            target.data_mut().fill(0.0);
            (masked, model.frozen_indices(modality))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched(total_epochs: usize) -> RmmSchedule {
        RmmSchedule {
            enabled: true,
            total_epochs,
            ..RmmSchedule::default()
        }
    }

    #[test]
    fn probability_starts_at_p0_and_ends_at_zero() {
        let s = sched(20);
        assert_eq!(masking_probability(0, &s).unwrap(), 0.8);
        assert_eq!(masking_probability(19, &s).unwrap(), 0.0);
    }

    #[test]
    fn probability_matches_direct_formula_evaluation() {
        // Independent evaluation of the declared law at E=20, e=10.
        let s = sched(20);
        let expected = 0.8 * 0.5 * (1.0 + (10.0 * std::f64::consts::PI / 19.0).cos());
        let got = masking_probability(10, &s).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.3669).abs() < 5e-4);
    }

    #[test]
    fn probability_non_increasing_and_zero_after_floor_crossing() {
        let s = sched(20);
        let ps: Vec<f64> = (0..20)
            .map(|e| masking_probability(e, &s).unwrap())
            .collect();
        let mut crossed = false;
        for w in ps.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "not non-increasing: {ps:?}");
        }
        for &p in &ps {
            if p == 0.0 {
                crossed = true;
            }
            if crossed {
                assert_eq!(p, 0.0, "probability revived after floor: {ps:?}");
            }
        }
        assert!(crossed, "schedule never hit the floor: {ps:?}");
    }

    #[test]
    fn epoch_out_of_range_is_rejected() {
        assert!(matches!(
            masking_probability(20, &sched(20)),
            Err(RmmError::EpochOutOfRange { .. })
        ));
    }

    #[test]
    fn single_epoch_schedule_uses_p0() {
        assert_eq!(masking_probability(0, &sched(1)).unwrap(), 0.8);
    }

    #[test]
    fn decide_epoch_is_deterministic_per_seed() {
        let s = sched(20);
        let run = || -> Vec<EpochMaskDecision> {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            (0..20).map(|e| decide_epoch(e, &s, &mut rng).unwrap()).collect()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn disabled_schedule_makes_no_decisions_and_no_draws() {
        let s = RmmSchedule {
            enabled: false,
            ..sched(20)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let before = rng.clone().random::<f64>();
        for e in 0..20 {
            assert_eq!(decide_epoch(e, &s, &mut rng).unwrap(), EpochMaskDecision::none());
        }
        // rng untouched: the next draw is the same as before the loop.
        assert_eq!(rng.random::<f64>(), before);
    }

    #[test]
    fn monte_carlo_rate_and_modality_share() {
        // At a pinned p=0.8 (epoch 0), 10^4 decisions: mask rate within
        // 0.80 ± 0.02 and text share among masked within 0.60 ± 0.03.
        let s = sched(20);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 10_000;
        let mut masked = 0usize;
        let mut text = 0usize;
        for _ in 0..n {
            let d = decide_epoch(0, &s, &mut rng).unwrap();
            if d.mask_active {
                masked += 1;
                if d.masked_modality == Some(Modality::Text) {
                    text += 1;
                }
            }
        }
        let rate = masked as f64 / n as f64;
        let share = text as f64 / masked as f64;
        assert!((rate - 0.8).abs() <= 0.02, "mask rate {rate}");
        assert!((share - 0.6).abs() <= 0.03, "text share {share}");
    }

    #[test]
    fn invariant_mask_active_iff_modality_present() {
        assert!(EpochMaskDecision::none().masked_modality.is_none());
        let d = EpochMaskDecision::mask(Modality::Audio);
        assert!(d.mask_active && d.masked_modality == Some(Modality::Audio));
    }

    #[test]
    fn schedule_validation() {
        let bad = RmmSchedule {
            floor: 0.9,
            p0: 0.8,
            ..sched(20)
        };
        assert!(bad.validate().is_err());
        let bad = RmmSchedule {
            text_mask_prob: 1.5,
            ..sched(20)
        };
        assert!(bad.validate().is_err());
        sched(20).validate().unwrap();
    }
}
