//! The full fusion model: per-modality refinement, cross-modal fusion, and
//! the two prediction heads, assembled according to a [`FusionConfig`].
//!
//! A forward pass processes each batch item on the shared tape (parameters
//! are bound once, so gradients accumulate across the batch automatically)
//! and concatenates per-sample head outputs into batch-level `[B,4]` logits
//! and `[B,2]` dimensional predictions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    bridge_cross_attend, classic_cross_attend, fuse, self_refine, ConfigError, FusionConfig,
    MhaLayer,
};
use crate::data::Batch;
use crate::heads::HeadLayers;
use crate::params::ParamSet;
use crate::rmm::Modality;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Parameter name prefixes for the two refinement layers; the freeze
/// mechanism of modality masking selects parameters by these.
pub const REFINE_AUDIO_PREFIX: &str = "refine_audio.";
pub const REFINE_TEXT_PREFIX: &str = "refine_text.";

#[derive(Debug, Clone)]
struct BridgeParts {
    q_audio: usize,
    q_text: usize,
    layer_audio: MhaLayer,
    layer_text: MhaLayer,
}

#[derive(Debug, Clone)]
struct ClassicParts {
    layer_audio: MhaLayer,
    layer_text: MhaLayer,
}

#[derive(Debug, Clone)]
enum CrossStage {
    None,
    Bridge(BridgeParts),
    Classic(ClassicParts),
}

/// The assembled model: configuration, parameter store, and layer wiring.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub params: ParamSet,
    refine_audio: Option<MhaLayer>,
    refine_text: Option<MhaLayer>,
    cross: CrossStage,
    heads: HeadLayers,
}

/// Batch-level tape handles from a forward pass.
pub struct BatchForward {
    /// `[B, 4]` logits.
    pub logits: Var,
    /// `[B, 1]` valence predictions.
    pub pred_valence: Var,
    /// `[B, 1]` arousal predictions.
    pub pred_arousal: Var,
}

/// Plain-value predictions for a batch (no gradient bookkeeping).
#[derive(Debug, Clone)]
pub struct BatchPrediction {
    /// argmax class per sample.
    pub labels: Vec<usize>,
    /// Raw logits per sample.
    pub logits: Vec<[f64; 4]>,
    pub valence: Vec<f64>,
    pub arousal: Vec<f64>,
}

impl FusionModel {
    /// Builds and initializes a model; all randomness comes from `init_seed`.
    pub fn new(config: &FusionConfig, init_seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParamSet::new();
        let d = config.d_model;

        let (refine_audio, refine_text) = if config.use_self_attention {
            (
                Some(MhaLayer::init(
                    &mut params,
                    "refine_audio",
                    d,
                    config.n_heads_self,
                    &mut rng,
                )?),
                Some(MhaLayer::init(
                    &mut params,
                    "refine_text",
                    d,
                    config.n_heads_self,
                    &mut rng,
                )?),
            )
        } else {
            (None, None)
        };

        let cross = if !config.use_cross_attention {
            CrossStage::None
        } else if config.use_bridge_tokens {
            let l = config.n_bridge_tokens;
            // Token banks start uniform in ±√(6/(L+d)).
            let limit = (6.0 / (l + d) as f64).sqrt();
            let mut bank = |name: &str, rng: &mut ChaCha8Rng| {
                let data = (0..l * d)
                    .map(|_| rand::Rng::random_range(rng, -limit..=limit))
                    .collect();
                params.register(
                    name,
                    Tensor::new(vec![l, d], data).expect("sized bank"),
                )
            };
            let q_audio = bank("bridge.q_audio", &mut rng);
            let q_text = bank("bridge.q_text", &mut rng);
            CrossStage::Bridge(BridgeParts {
                q_audio,
                q_text,
                layer_audio: MhaLayer::init(
                    &mut params,
                    "cross_audio",
                    d,
                    config.n_heads_cross,
                    &mut rng,
                )?,
                layer_text: MhaLayer::init(
                    &mut params,
                    "cross_text",
                    d,
                    config.n_heads_cross,
                    &mut rng,
                )?,
            })
        } else {
            CrossStage::Classic(ClassicParts {
                layer_audio: MhaLayer::init(
                    &mut params,
                    "cross_audio",
                    d,
                    config.n_heads_cross,
                    &mut rng,
                )?,
                layer_text: MhaLayer::init(
                    &mut params,
                    "cross_text",
                    d,
                    config.n_heads_cross,
                    &mut rng,
                )?,
            })
        };

        let heads = HeadLayers::init(
            &mut params,
            d,
            config.hidden_width(),
            config.split_regressor,
            &mut rng,
        );

        Ok(Self {
            config: config.clone(),
            params,
            refine_audio,
            refine_text,
            cross,
            heads,
        })
    }

    /// Total number of trainable scalar values.
    pub fn param_count(&self) -> usize {
        self.params.total_values()
    }

    /// Parameter indices frozen when `modality` is masked: that modality's
    /// self-attention refinement layer (empty if refinement is disabled).
    pub fn frozen_indices(&self, modality: Modality) -> Vec<usize> {
        let prefix = match modality {
            Modality::Audio => REFINE_AUDIO_PREFIX,
            Modality::Text => REFINE_TEXT_PREFIX,
        };
        self.params.indices_with_prefix(prefix)
    }

    /// Forward pass for one sample: padded `[N,d]` sequences plus their pad
    /// masks. Returns `([1,4] logits, [1,2] dims)` tape handles.
    fn forward_sample(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        audio: &Tensor,
        text: &Tensor,
        mask_audio: &[bool],
        mask_text: &[bool],
    ) -> Result<(Var, Var), TensorError> {
        let km_audio = self.config.mask_padded_keys.then_some(mask_audio);
        let km_text = self.config.mask_padded_keys.then_some(mask_text);

        let mut a = tape.input(audio);
        let mut t = tape.input(text);
        if let (Some(layer_a), Some(layer_t)) = (&self.refine_audio, &self.refine_text) {
            a = self_refine(tape, layer_a, vars, a, km_audio)?;
            t = self_refine(tape, layer_t, vars, t, km_text)?;
        }

        // Pooling always restricts to real positions; key masking inside the
        // attention softmax is what the mask_padded_keys flag governs.
        let e_s = match &self.cross {
            CrossStage::Bridge(parts) => {
                let (e_a, e_t) = bridge_cross_attend(
                    tape,
                    &parts.layer_audio,
                    &parts.layer_text,
                    vars,
                    vars[parts.q_audio],
                    vars[parts.q_text],
                    a,
                    t,
                    km_audio,
                    km_text,
                )?;
                fuse(tape, e_a, e_t, None, None)?
            }
            CrossStage::Classic(parts) => {
                let (e_a, e_t) = classic_cross_attend(
                    tape,
                    &parts.layer_audio,
                    &parts.layer_text,
                    vars,
                    a,
                    t,
                    km_audio,
                    km_text,
                )?;
                // Row i of e_a is audio position i's query output, so each
                // stream pools over its own modality's real positions.
                fuse(tape, e_a, e_t, Some(mask_audio), Some(mask_text))?
            }
            CrossStage::None => fuse(tape, a, t, Some(mask_audio), Some(mask_text))?,
        };

        let out = self.heads.predict(tape, vars, e_s)?;
        Ok((out.logits, out.dims))
    }

    /// Records the whole batch on `tape` against an existing parameter
    /// binding and returns batch-level output handles.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &Batch,
    ) -> Result<BatchForward, TensorError> {
        let mut logit_rows = Vec::with_capacity(batch.len());
        let mut dim_rows = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let audio = batch.audio_sample(i);
            let text = batch.text_sample(i);
            let (logits, dims) = self.forward_sample(
                tape,
                vars,
                &audio,
                &text,
                &batch.pad_mask_audio[i],
                &batch.pad_mask_text[i],
            )?;
            logit_rows.push(logits);
            dim_rows.push(dims);
        }
        let logits = tape.concat_rows(&logit_rows)?;
        let dims = tape.concat_rows(&dim_rows)?;
        let pred_valence = tape.slice_cols(dims, 0, 1)?;
        let pred_arousal = tape.slice_cols(dims, 1, 1)?;
        Ok(BatchForward {
            logits,
            pred_valence,
            pred_arousal,
        })
    }

    /// Inference: runs the batch on a throwaway tape and extracts plain values.
    pub fn predict_batch(&self, batch: &Batch) -> Result<BatchPrediction, TensorError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let fw = self.forward_batch(&mut tape, &vars, batch)?;
        let logits_data = tape.data(fw.logits);
        let mut labels = Vec::with_capacity(batch.len());
        let mut logits = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let row = &logits_data[i * 4..(i + 1) * 4];
            let mut best = 0;
            for c in 1..4 {
                if row[c] > row[best] {
                    best = c;
                }
            }
            labels.push(best);
            logits.push([row[0], row[1], row[2], row[3]]);
        }
        Ok(BatchPrediction {
            labels,
            logits,
            valence: tape.data(fw.pred_valence).to_vec(),
            arousal: tape.data(fw.pred_arousal).to_vec(),
        })
    }
}
