//! Dataset model: utterance records, manifest + feature-file ingestion,
//! label merging, padded batching, and the speaker-independent fold plan.
//!
//! On-disk layout is a two-part format: a manifest with one JSON object per
//! line describing each utterance, plus one raw feature file per modality
//! (little-endian f32, row-major, exactly `T·d` values — widened to f64 in
//! memory). Synthetic datasets are written in the same format so every
//! consumer has a single ingestion path.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const N_CLASSES: usize = 4;
pub const N_SPEAKERS: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed manifest row: {source}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: feature file holds {actual} values, manifest declares {expected}")]
    FeatureSize {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("label {label:?} is not in the merged 4-class set")]
    ExcludedLabel { label: String },
    #[error("{utt_id}: speaker id {speaker_id} outside 0..{}", N_SPEAKERS - 1)]
    SpeakerRange { utt_id: String, speaker_id: usize },
    #[error("{utt_id}: {field} = {value} outside [0,1] after rescaling")]
    DimRange {
        utt_id: String,
        field: &'static str,
        value: f64,
    },
    #[error("{utt_id}: empty {modality} sequence")]
    EmptySequence {
        utt_id: String,
        modality: &'static str,
    },
    #[error("{utt_id}: audio dim {audio_d} != text dim {text_d}")]
    DimMismatch {
        utt_id: String,
        audio_d: usize,
        text_d: usize,
    },
    #[error("fold plan requires exactly {} speakers, got {got}", N_SPEAKERS)]
    NotTenSpeakers { got: usize },
    #[error("dataset speakers {present:?} do not cover 0..{}", N_SPEAKERS - 1)]
    MissingSpeakers { present: Vec<usize> },
    #[error("cannot batch an empty record list")]
    EmptyRecords,
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("records mix feature dims {first} and {other}")]
    MixedFeatureDims { first: usize, other: usize },
    #[error("invalid synthetic spec: {reason}")]
    InvalidSynthSpec { reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The four merged emotion classes, in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral = 0,
    Happy = 1,
    Sad = 2,
    Angry = 3,
}

impl Emotion {
    pub const ALL: [Emotion; N_CLASSES] = [
        Emotion::Neutral,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Angry,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Emotion::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
        }
    }
}

/// Maps a raw dataset label onto the merged 4-class scheme: `excited` folds
/// into `happy`, the four canonical names map to themselves, and everything
/// else is rejected as an excluded class.
pub fn merge_labels(raw_label: &str) -> Result<Emotion, DataError> {
    match raw_label {
        "neutral" => Ok(Emotion::Neutral),
        "happy" | "excited" => Ok(Emotion::Happy),
        "sad" => Ok(Emotion::Sad),
        "angry" => Ok(Emotion::Angry),
        other => Err(DataError::ExcludedLabel {
            label: other.to_string(),
        }),
    }
}

/// One utterance: two feature sequences plus categorical and dimensional
/// targets. Valence/arousal are stored post-rescaling, always in `[0,1]`.
#[derive(Debug, Clone)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub speaker_id: usize,
    /// `[T_a, d]` audio feature sequence.
    pub audio_seq: Tensor,
    /// `[T_t, d]` text feature sequence.
    pub text_seq: Tensor,
    pub emotion: Emotion,
    pub valence: f64,
    pub arousal: f64,
}

impl UtteranceRecord {
    pub fn feature_dim(&self) -> usize {
        self.audio_seq.shape()[1]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.speaker_id >= N_SPEAKERS {
            return Err(DataError::SpeakerRange {
                utt_id: self.utt_id.clone(),
                speaker_id: self.speaker_id,
            });
        }
        let (t_a, d_a) = self.audio_seq.dims2().map_err(|_| DataError::EmptySequence {
            utt_id: self.utt_id.clone(),
            modality: "audio",
        })?;
        let (t_t, d_t) = self.text_seq.dims2().map_err(|_| DataError::EmptySequence {
            utt_id: self.utt_id.clone(),
            modality: "text",
        })?;
        if t_a == 0 {
            return Err(DataError::EmptySequence {
                utt_id: self.utt_id.clone(),
                modality: "audio",
            });
        }
        if t_t == 0 {
            return Err(DataError::EmptySequence {
                utt_id: self.utt_id.clone(),
                modality: "text",
            });
        }
        if d_a != d_t {
            return Err(DataError::DimMismatch {
                utt_id: self.utt_id.clone(),
                audio_d: d_a,
                text_d: d_t,
            });
        }
        for (field, value) in [("valence", self.valence), ("arousal", self.arousal)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(DataError::DimRange {
                    utt_id: self.utt_id.clone(),
                    field,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// One manifest line. Field names are part of the on-disk format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRow {
    utt_id: String,
    speaker_id: usize,
    raw_label: String,
    valence: f64,
    arousal: f64,
    audio_path: String,
    text_path: String,
    #[serde(rename = "T_a")]
    t_a: usize,
    #[serde(rename = "T_t")]
    t_t: usize,
    d: usize,
    /// When set, valence/arousal are on the raw 0–5 scale and are divided by
    /// 5 at ingestion; already-normalized data is never double-scaled.
    raw_scale_0_5: bool,
}

fn read_features(path: &Path, t: usize, d: usize) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let expected = t * d;
    if bytes.len() != expected * 4 {
        return Err(DataError::FeatureSize {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() / 4,
        });
    }
    let mut data = Vec::with_capacity(expected);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    Ok(Tensor::new(vec![t, d], data).expect("length checked above"))
}

fn write_features(path: &Path, seq: &Tensor) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(seq.len() * 4);
    for &v in seq.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Loads a manifest and every feature file it references. Paths inside the
/// manifest are resolved relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>, DataError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow =
            serde_json::from_str(&line).map_err(|source| DataError::ManifestParse {
                path: path.to_path_buf(),
                line: line_no + 1,
                source,
            })?;
        let emotion = merge_labels(&row.raw_label)?;
        let scale = if row.raw_scale_0_5 { 1.0 / 5.0 } else { 1.0 };
        let record = UtteranceRecord {
            utt_id: row.utt_id,
            speaker_id: row.speaker_id,
            audio_seq: read_features(&base.join(&row.audio_path), row.t_a, row.d)?,
            text_seq: read_features(&base.join(&row.text_path), row.t_t, row.d)?,
            emotion,
            valence: row.valence * scale,
            arousal: row.arousal * scale,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records to `dir` in the manifest + feature-file format (values
/// already normalized, so `raw_scale_0_5` is false). Returns the manifest path.
pub fn write_dataset(dir: &Path, records: &[UtteranceRecord]) -> Result<PathBuf, DataError> {
    let features = dir.join("features");
    fs::create_dir_all(&features).map_err(|e| io_err(&features, e))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest = Vec::new();
    for r in records {
        r.validate()?;
        let audio_rel = format!("features/{}.audio.bin", r.utt_id);
        let text_rel = format!("features/{}.text.bin", r.utt_id);
        write_features(&dir.join(&audio_rel), &r.audio_seq)?;
        write_features(&dir.join(&text_rel), &r.text_seq)?;
        let row = ManifestRow {
            utt_id: r.utt_id.clone(),
            speaker_id: r.speaker_id,
            raw_label: r.emotion.name().to_string(),
            valence: r.valence,
            arousal: r.arousal,
            audio_path: audio_rel,
            text_path: text_rel,
            t_a: r.audio_seq.shape()[0],
            t_t: r.text_seq.shape()[0],
            d: r.feature_dim(),
            raw_scale_0_5: false,
        };
        manifest
            .extend_from_slice(serde_json::to_string(&row).expect("row serializes").as_bytes());
        manifest.push(b'\n');
    }
    let mut f = fs::File::create(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    f.write_all(&manifest).map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest_path)
}

/// One speaker-independent split: 8 train speakers, 1 validation, 1 test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fold {
    pub train_speakers: Vec<usize>,
    pub val_speaker: usize,
    pub test_speaker: usize,
}

/// The full 10-fold rotation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Builds the deterministic rotation: fold `k` tests on speaker `k`,
/// validates on `(k+1) mod 10`, and trains on the remaining eight.
pub fn make_fold_plan(n_speakers: usize) -> Result<FoldPlan, DataError> {
    if n_speakers != N_SPEAKERS {
        return Err(DataError::NotTenSpeakers { got: n_speakers });
    }
    let folds = (0..N_SPEAKERS)
        .map(|k| {
            let test_speaker = k;
            let val_speaker = (k + 1) % N_SPEAKERS;
            let train_speakers = (0..N_SPEAKERS)
                .filter(|&s| s != test_speaker && s != val_speaker)
                .collect();
            Fold {
                train_speakers,
                val_speaker,
                test_speaker,
            }
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Errors unless the records' speaker set is exactly `{0..9}`.
pub fn check_speaker_coverage(records: &[UtteranceRecord]) -> Result<(), DataError> {
    let present: BTreeSet<usize> = records.iter().map(|r| r.speaker_id).collect();
    if present.len() != N_SPEAKERS || present.iter().max() != Some(&(N_SPEAKERS - 1)) {
        return Err(DataError::MissingSpeakers {
            present: present.into_iter().collect(),
        });
    }
    Ok(())
}

/// A padded minibatch. Both modalities are padded to the batch-wide maximum
/// sequence length `N` (taken across audio *and* text), so cross-modal
/// attention can pair position-aligned key/value streams. Padded positions
/// hold zero rows and are flagged `false` in the per-modality masks.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, N, d]`
    pub audio: Tensor,
    /// `[B, N, d]`
    pub text: Tensor,
    /// `true` = real frame; one row per batch item.
    pub pad_mask_audio: Vec<Vec<bool>>,
    pub pad_mask_text: Vec<Vec<bool>>,
    pub emotions: Vec<usize>,
    pub valence: Vec<f64>,
    pub arousal: Vec<f64>,
}

impl Batch {
    /// Number of records in the batch.
    pub fn len(&self) -> usize {
        self.emotions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emotions.is_empty()
    }

    /// Padded sequence length N.
    pub fn seq_len(&self) -> usize {
        self.audio.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.audio.shape()[2]
    }

    /// Copy of item `i`'s padded audio sequence as an `[N, d]` tensor.
    pub fn audio_sample(&self, i: usize) -> Tensor {
        let (n, d) = (self.seq_len(), self.feature_dim());
        Tensor::new(vec![n, d], self.audio.row(i).to_vec()).expect("row slice is n*d")
    }

    pub fn text_sample(&self, i: usize) -> Tensor {
        let (n, d) = (self.seq_len(), self.feature_dim());
        Tensor::new(vec![n, d], self.text.row(i).to_vec()).expect("row slice is n*d")
    }

    /// Builds one padded batch from records (order preserved).
    pub fn from_records(records: &[&UtteranceRecord]) -> Result<Batch, DataError> {
        if records.is_empty() {
            return Err(DataError::EmptyRecords);
        }
        let d = records[0].feature_dim();
        let mut n = 0;
        for r in records {
            r.validate()?;
            if r.feature_dim() != d {
                return Err(DataError::MixedFeatureDims {
                    first: d,
                    other: r.feature_dim(),
                });
            }
            n = n.max(r.audio_seq.shape()[0]).max(r.text_seq.shape()[0]);
        }
        let b = records.len();
        let mut audio = vec![0.0; b * n * d];
        let mut text = vec![0.0; b * n * d];
        let mut pad_mask_audio = Vec::with_capacity(b);
        let mut pad_mask_text = Vec::with_capacity(b);
        for (i, r) in records.iter().enumerate() {
            let t_a = r.audio_seq.shape()[0];
            let t_t = r.text_seq.shape()[0];
            audio[i * n * d..i * n * d + t_a * d].copy_from_slice(r.audio_seq.data());
            text[i * n * d..i * n * d + t_t * d].copy_from_slice(r.text_seq.data());
            pad_mask_audio.push((0..n).map(|t| t < t_a).collect());
            pad_mask_text.push((0..n).map(|t| t < t_t).collect());
        }
        Ok(Batch {
            audio: Tensor::new(vec![b, n, d], audio).expect("sized above"),
            text: Tensor::new(vec![b, n, d], text).expect("sized above"),
            pad_mask_audio,
            pad_mask_text,
            emotions: records.iter().map(|r| r.emotion.index()).collect(),
            valence: records.iter().map(|r| r.valence).collect(),
            arousal: records.iter().map(|r| r.arousal).collect(),
        })
    }
}

/// Shuffles records with `rng` and chunks them into padded batches; the last
/// batch may be smaller. Each batch is padded to its own maximum length.
pub fn make_batches(
    records: &[UtteranceRecord],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::InvalidBatchSize);
    }
    if records.is_empty() {
        return Err(DataError::EmptyRecords);
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&UtteranceRecord> = chunk.iter().map(|&i| &records[i]).collect();
            Batch::from_records(&refs)
        })
        .collect()
}

/// Batches records in their given order (deterministic evaluation path).
pub fn make_batches_ordered(
    records: &[UtteranceRecord],
    batch_size: usize,
) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::InvalidBatchSize);
    }
    if records.is_empty() {
        return Err(DataError::EmptyRecords);
    }
    let refs: Vec<&UtteranceRecord> = records.iter().collect();
    refs.chunks(batch_size).map(Batch::from_records).collect()
}
