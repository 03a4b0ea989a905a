//! Multi-task multimodal emotion recognition at desk scale.
//!
//! The crate trains a two-modality (audio + text feature sequences) model that
//! jointly predicts a categorical emotion and continuous valence/arousal
//! scores. The pipeline: per-modality self-attention refinement, cross-modal
//! fusion through a bank of learnable bridge tokens, mean-pooled fusion, and
//! two output heads trained with a weighted sum of cross-entropy and
//! concordance-correlation losses. Training supports cosine-decayed random
//! modality masking and speaker-independent k-fold evaluation.
//!
//! Everything is plain-Rust f64 numerics on a reverse-mode autodiff tape; no
//! external tensor runtime is involved, which keeps runs bit-reproducible
//! from a seed.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod heads;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod rmm;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use attention::{ConfigError, FusionConfig};
pub use data::{Batch, DataError, Emotion, FoldPlan, UtteranceRecord};
pub use losses::LossWeights;
pub use metrics::EvalReport;
pub use model::FusionModel;
pub use report::ExperimentSummary;
pub use rmm::{Modality, RmmSchedule};
pub use synth::SynthSpec;
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorError};
pub use train::{ExperimentConfig, TrainConfig, TrainError};
