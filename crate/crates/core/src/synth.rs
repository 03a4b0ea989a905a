//! Synthetic dataset generator with controllable class separability.
//!
//! Records are drawn from four Gaussian clusters in feature space. Each class
//! gets a mean vector along its own coordinate axis, scaled so that any two
//! class means are exactly `class_separation` apart; frames add unit Gaussian
//! noise on top. Valence/arousal come from fixed per-class anchors plus
//! uniform noise. Generation is a pure function of the seed, so a spec
//! regenerates the identical dataset on every run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataError, Emotion, UtteranceRecord, N_CLASSES, N_SPEAKERS};
use crate::tensor::Tensor;

/// Dimensional anchors per class, `(valence, arousal)`, indexed by
/// [`Emotion`]: neutral mid-valence/low arousal, happy high/high, sad
/// low/low, angry very-low/very-high. A documented convention of this
/// generator, not a property of any corpus.
pub const CLASS_ANCHORS: [(f64, f64); N_CLASSES] =
    [(0.5, 0.3), (0.8, 0.7), (0.2, 0.2), (0.15, 0.85)];

/// Parameters controlling synthetic generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_utterances: usize,
    /// Feature dimension shared by both modalities.
    pub d: usize,
    /// Inclusive range for per-modality sequence lengths.
    pub seq_len_range: (usize, usize),
    /// Exact Euclidean distance between any two class means (0 = chance-level
    /// data). Classes occupy distinct axes when `d >= 8`.
    pub class_separation: f64,
    /// Half-width of the uniform noise added to valence/arousal anchors.
    pub dim_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_utterances: 500,
            d: 16,
            seq_len_range: (4, 12),
            class_separation: 6.0,
            dim_noise: 0.05,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let reject = |reason: &str| {
            Err(DataError::InvalidSynthSpec {
                reason: reason.to_string(),
            })
        };
        if self.n_utterances == 0 || self.n_utterances % N_SPEAKERS != 0 {
            return reject("n_utterances must be a positive multiple of 10");
        }
        if self.d == 0 {
            return reject("d must be at least 1");
        }
        let (lo, hi) = self.seq_len_range;
        if lo == 0 || lo > hi {
            return reject("seq_len_range must satisfy 1 <= min <= max");
        }
        if !(self.class_separation >= 0.0) {
            return reject("class_separation must be >= 0");
        }
        if !(self.dim_noise >= 0.0) {
            return reject("dim_noise must be >= 0");
        }
        Ok(())
    }
}

/// Class mean for one modality: `scale · e_axis` with `scale =
/// class_separation / √2`, so distinct axes sit exactly `class_separation`
/// apart. Audio uses even axes, text odd ones (modulo `d`).
fn class_mean(class: usize, d: usize, separation: f64, audio: bool) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    let axis = if audio { 2 * class } else { 2 * class + 1 } % d;
    mean[axis] = separation / std::f64::consts::SQRT_2;
    mean
}

fn gen_sequence(
    rng: &mut ChaCha8Rng,
    mean: &[f64],
    t: usize,
) -> Tensor {
    let d = mean.len();
    let mut data = Vec::with_capacity(t * d);
    for _ in 0..t {
        for &m in mean {
            let noise: f64 = rng.sample(StandardNormal);
            data.push(m + noise);
        }
    }
    Tensor::new(vec![t, d], data).expect("sized above")
}

/// Generates the dataset described by `spec`; bitwise deterministic per seed.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<UtteranceRecord>, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.seq_len_range;
    let mut records = Vec::with_capacity(spec.n_utterances);
    for i in 0..spec.n_utterances {
        let class = rng.random_range(0..N_CLASSES);
        let t_a = rng.random_range(lo..=hi);
        let t_t = rng.random_range(lo..=hi);
        let mean_a = class_mean(class, spec.d, spec.class_separation, true);
        let mean_t = class_mean(class, spec.d, spec.class_separation, false);
        let audio_seq = gen_sequence(&mut rng, &mean_a, t_a);
        let text_seq = gen_sequence(&mut rng, &mean_t, t_t);
        let (anchor_v, anchor_a) = CLASS_ANCHORS[class];
        let valence =
            (anchor_v + rng.random_range(-spec.dim_noise..=spec.dim_noise)).clamp(0.0, 1.0);
        let arousal =
            (anchor_a + rng.random_range(-spec.dim_noise..=spec.dim_noise)).clamp(0.0, 1.0);
        let record = UtteranceRecord {
            utt_id: format!("synth-{i:05}"),
            speaker_id: i % N_SPEAKERS,
            audio_seq,
            text_seq,
            emotion: Emotion::from_index(class).expect("class < 4"),
            valence,
            arousal,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Separability oracle: classifies every record by the nearest class mean of
/// its mean-pooled audio features and returns the resulting accuracy. The
/// record's own class mean is computed leave-one-out, so a record never
/// counts toward its own centroid and zero-separation data scores at chance
/// level. Used to confirm that a synthetic dataset is learnable before
/// demanding that a model learns it.
pub fn nearest_mean_accuracy(records: &[UtteranceRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let d = records[0].feature_dim();
    let pooled: Vec<(usize, Vec<f64>)> = records
        .iter()
        .map(|r| {
            let t = r.audio_seq.shape()[0];
            let mut mean = vec![0.0; d];
            for row in 0..t {
                for (m, &v) in mean.iter_mut().zip(r.audio_seq.row(row)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= t as f64;
            }
            (r.emotion.index(), mean)
        })
        .collect();

    let mut class_sums = vec![vec![0.0; d]; N_CLASSES];
    let mut counts = vec![0usize; N_CLASSES];
    for (c, p) in &pooled {
        counts[*c] += 1;
        for (m, v) in class_sums[*c].iter_mut().zip(p) {
            *m += v;
        }
    }

    let sq_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let correct = pooled
        .iter()
        .filter(|(c, p)| {
            // The candidate mean for the record's own class excludes the
            // record itself (unless it is the sole member).
            let mean_for = |k: usize| -> Vec<f64> {
                let (sum, count) = (&class_sums[k], counts[k]);
                if k == *c && count > 1 {
                    sum.iter()
                        .zip(p.iter())
                        .map(|(s, v)| (s - v) / (count - 1) as f64)
                        .collect()
                } else {
                    sum.iter().map(|s| s / count as f64).collect()
                }
            };
            let best = (0..N_CLASSES)
                .filter(|&k| counts[k] > 0)
                .min_by(|&x, &y| {
                    sq_dist(p, &mean_for(x))
                        .partial_cmp(&sq_dist(p, &mean_for(y)))
                        .expect("finite distances")
                })
                .expect("at least one class present");
            best == *c
        })
        .count();
    correct as f64 / records.len() as f64
}
