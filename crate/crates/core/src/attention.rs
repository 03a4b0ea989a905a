//! Attention building blocks: scaled dot-product attention, multi-head
//! layers, per-modality self-attention refinement, the two cross-attention
//! variants (learnable bridge-token queries and the classic
//! query-from-the-other-modality form), and the mean-stack fusion that
//! produces the shared embedding `e_s`.
//!
//! All functions record onto a [`Tape`], so gradients flow through every
//! projection and through the bridge-token banks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{glorot_uniform, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::TensorError;

/// Configuration errors, reported before any numeric work starts.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("d_model {d_model} is not divisible by n_heads {n_heads}")]
    HeadsDivide { d_model: usize, n_heads: usize },
    #[error("bridge tokens require cross-attention to be enabled")]
    BridgeNeedsCross,
    #[error("{field} must be positive")]
    NonPositive { field: &'static str },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// Architecture switches and sizes for the fusion model.
///
/// The three `use_*` flags compose monotonically: bridge tokens only make
/// sense on top of cross-attention. `mask_padded_keys` keeps padded frames
/// out of every softmax (required for padding-invariant evaluation) and is
/// only exposed for ablation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub d_model: usize,
    pub n_heads_self: usize,
    pub n_heads_cross: usize,
    /// Rows per bridge-token bank (L).
    pub n_bridge_tokens: usize,
    pub use_self_attention: bool,
    pub use_cross_attention: bool,
    pub use_bridge_tokens: bool,
    pub mask_padded_keys: bool,
    /// Hidden width of both prediction heads; defaults to `d_model / 2`.
    pub d_hidden: Option<usize>,
    /// Separate per-dimension regressors instead of one shared 2-output block.
    pub split_regressor: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 1024,
            n_heads_self: 32,
            n_heads_cross: 32,
            n_bridge_tokens: 30,
            use_self_attention: true,
            use_cross_attention: true,
            use_bridge_tokens: true,
            mask_padded_keys: true,
            d_hidden: None,
            split_regressor: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d_model == 0 {
            return Err(ConfigError::NonPositive { field: "d_model" });
        }
        if self.use_bridge_tokens && !self.use_cross_attention {
            return Err(ConfigError::BridgeNeedsCross);
        }
        if self.use_self_attention && self.d_model % self.n_heads_self != 0 {
            return Err(ConfigError::HeadsDivide {
                d_model: self.d_model,
                n_heads: self.n_heads_self,
            });
        }
        if self.use_cross_attention {
            if self.d_model % self.n_heads_cross != 0 {
                return Err(ConfigError::HeadsDivide {
                    d_model: self.d_model,
                    n_heads: self.n_heads_cross,
                });
            }
            if self.use_bridge_tokens && self.n_bridge_tokens == 0 {
                return Err(ConfigError::NonPositive {
                    field: "n_bridge_tokens",
                });
            }
        }
        if self.use_self_attention && self.n_heads_self == 0 {
            return Err(ConfigError::NonPositive {
                field: "n_heads_self",
            });
        }
        if self.use_cross_attention && self.n_heads_cross == 0 {
            return Err(ConfigError::NonPositive {
                field: "n_heads_cross",
            });
        }
        if self.d_hidden == Some(0) {
            return Err(ConfigError::NonPositive { field: "d_hidden" });
        }
        Ok(())
    }

    pub fn hidden_width(&self) -> usize {
        self.d_hidden.unwrap_or((self.d_model / 2).max(1))
    }
}

/// One multi-head attention layer's parameter slots in a [`ParamSet`].
///
/// The per-head projections are stored packed: `wq/wk/wv` are
/// `d_model×d_model` with head `i` occupying columns `i·d_head..(i+1)·d_head`,
/// which is exactly the concatenation of the per-head `d_model×d_head`
/// matrices. `wo` maps the concatenated heads back to `d_model`. No biases.
#[derive(Debug, Clone)]
pub struct MhaLayer {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

impl MhaLayer {
    /// Registers fresh glorot-initialized projections under `prefix`.
    pub fn init(
        params: &mut ParamSet,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<Self, ConfigError> {
        if n_heads == 0 {
            return Err(ConfigError::NonPositive { field: "n_heads" });
        }
        if d_model % n_heads != 0 {
            return Err(ConfigError::HeadsDivide { d_model, n_heads });
        }
        Ok(Self {
            d_model,
            n_heads,
            d_head: d_model / n_heads,
            wq: params.register(format!("{prefix}.wq"), glorot_uniform(d_model, d_model, rng)),
            wk: params.register(format!("{prefix}.wk"), glorot_uniform(d_model, d_model, rng)),
            wv: params.register(format!("{prefix}.wv"), glorot_uniform(d_model, d_model, rng)),
            wo: params.register(format!("{prefix}.wo"), glorot_uniform(d_model, d_model, rng)),
        })
    }
}

/// `softmax(QKᵀ/√d_head)·V` over one head.
///
/// `key_mask` (length = number of key rows) excludes padded keys: masked
/// positions get exactly zero attention weight. `d_head` is taken from Q's
/// column count.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    key_mask: Option<&[bool]>,
) -> Result<Var, TensorError> {
    let d_head = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.mul_scalar(scores, 1.0 / (d_head as f64).sqrt());
    let probs = tape.softmax_rows(scaled, key_mask)?;
    tape.matmul(probs, v)
}

/// Full multi-head attention: per-head projections of `q_in/k_in/v_in`,
/// independent scaled-dot attention per head, concatenation, and the output
/// projection. Output shape `[L_q, d_model]`.
pub fn multihead(
    tape: &mut Tape,
    layer: &MhaLayer,
    vars: &[Var],
    q_in: Var,
    k_in: Var,
    v_in: Var,
    key_mask: Option<&[bool]>,
) -> Result<Var, TensorError> {
    let q = tape.matmul(q_in, vars[layer.wq])?;
    let k = tape.matmul(k_in, vars[layer.wk])?;
    let v = tape.matmul(v_in, vars[layer.wv])?;
    let mut heads = Vec::with_capacity(layer.n_heads);
    for h in 0..layer.n_heads {
        let start = h * layer.d_head;
        let qh = tape.slice_cols(q, start, layer.d_head)?;
        let kh = tape.slice_cols(k, start, layer.d_head)?;
        let vh = tape.slice_cols(v, start, layer.d_head)?;
        heads.push(scaled_dot_attention(tape, qh, kh, vh, key_mask)?);
    }
    let concat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    tape.matmul(concat, vars[layer.wo])
}

/// Self-attention refinement of one modality's padded sequence: multi-head
/// attention with the sequence as query, key, and value, keyed off its own
/// pad mask.
pub fn self_refine(
    tape: &mut Tape,
    layer: &MhaLayer,
    vars: &[Var],
    x: Var,
    pad_mask: Option<&[bool]>,
) -> Result<Var, TensorError> {
    multihead(tape, layer, vars, x, x, x, pad_mask)
}

/// Bridge-token cross-attention. The audio-side bank attends with the audio
/// sequence as key and the *text* sequence as value; the text-side bank with
/// text keys and audio values. The two layers have independent parameters.
/// Returns `(e_a, e_t)`, each `[L, d_model]`.
#[allow(clippy::too_many_arguments)]
pub fn bridge_cross_attend(
    tape: &mut Tape,
    layer_a: &MhaLayer,
    layer_t: &MhaLayer,
    vars: &[Var],
    q_audio: Var,
    q_text: Var,
    audio: Var,
    text: Var,
    audio_mask: Option<&[bool]>,
    text_mask: Option<&[bool]>,
) -> Result<(Var, Var), TensorError> {
    let e_a = multihead(tape, layer_a, vars, q_audio, audio, text, audio_mask)?;
    let e_t = multihead(tape, layer_t, vars, q_text, text, audio, text_mask)?;
    Ok((e_a, e_t))
}

/// Classic cross-attention (no learned queries): each modality queries the
/// other's key/value stream. Returns `(e_a, e_t)`, each `[N, d_model]`, with
/// rows aligned to the querying modality's positions.
#[allow(clippy::too_many_arguments)]
pub fn classic_cross_attend(
    tape: &mut Tape,
    layer_at: &MhaLayer,
    layer_ta: &MhaLayer,
    vars: &[Var],
    audio: Var,
    text: Var,
    audio_mask: Option<&[bool]>,
    text_mask: Option<&[bool]>,
) -> Result<(Var, Var), TensorError> {
    let e_a = multihead(tape, layer_at, vars, audio, text, text, text_mask)?;
    let e_t = multihead(tape, layer_ta, vars, text, audio, audio, audio_mask)?;
    Ok((e_a, e_t))
}

/// `e_s = Mean(Stack(Mean(e_a), Mean(e_t)))`: pool each stream over its
/// token/sequence axis (restricted to real rows when a pooling mask is
/// given), stack the two pooled vectors, and average them into a single
/// `d_model` embedding.
pub fn fuse(
    tape: &mut Tape,
    e_a: Var,
    e_t: Var,
    pool_mask_a: Option<&[bool]>,
    pool_mask_t: Option<&[bool]>,
) -> Result<Var, TensorError> {
    let pooled_a = match pool_mask_a {
        Some(mask) => tape.mean_rows_masked(e_a, mask)?,
        None => tape.mean_axis(e_a, 0)?,
    };
    let pooled_t = match pool_mask_t {
        Some(mask) => tape.mean_rows_masked(e_t, mask)?,
        None => tape.mean_axis(e_t, 0)?,
    };
    let stack = tape.stack_rows(&[pooled_a, pooled_t])?;
    tape.mean_axis(stack, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{approx_eq_slices, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Brute-force single-head attention: explicit per-row softmax with plain
    /// exp, no shared code with the tape implementation.
    fn brute_force_attention(
        q: &[f64],
        k: &[f64],
        v: &[f64],
        l_q: usize,
        l_k: usize,
        d: usize,
        d_v: usize,
        mask: Option<&[bool]>,
    ) -> Vec<f64> {
        let mut out = vec![0.0; l_q * d_v];
        for i in 0..l_q {
            let mut weights = vec![0.0; l_k];
            let mut denom = 0.0;
            for j in 0..l_k {
                if mask.map_or(true, |m| m[j]) {
                    let mut score = 0.0;
                    for c in 0..d {
                        score += q[i * d + c] * k[j * d + c];
                    }
                    weights[j] = (score / (d as f64).sqrt()).exp();
                    denom += weights[j];
                }
            }
            for j in 0..l_k {
                let w = weights[j] / denom;
                for c in 0..d_v {
                    out[i * d_v + c] += w * v[j * d_v + c];
                }
            }
        }
        out
    }

    #[test]
    fn single_key_attention_returns_value_exactly() {
        let mut tape = Tape::new();
        let q = tape.constant(vec![0.3, -0.8], vec![1, 2]).unwrap();
        let k = tape.constant(vec![1.5, 0.2], vec![1, 2]).unwrap();
        let v = tape.constant(vec![7.0, -3.0], vec![1, 2]).unwrap();
        let out = scaled_dot_attention(&mut tape, q, k, v, None).unwrap();
        assert_eq!(tape.data(out), &[7.0, -3.0]);
    }

    #[test]
    fn orthogonal_queries_average_the_values() {
        // All scores zero → uniform softmax → column mean of V.
        let mut tape = Tape::new();
        let q = tape.constant(vec![0.0, 0.0], vec![1, 2]).unwrap();
        let k = tape
            .constant(vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.5], vec![3, 2])
            .unwrap();
        let v = tape
            .constant(vec![3.0, 0.0, 6.0, 3.0, 0.0, 3.0], vec![3, 2])
            .unwrap();
        let out = scaled_dot_attention(&mut tape, q, k, v, None).unwrap();
        assert!(approx_eq_slices(tape.data(out), &[3.0, 2.0], 1e-12));
    }

    #[test]
    fn scaled_dot_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let (l_q, l_k, d) = (3, 4, 5);
            let qv = random_matrix(&mut rng, l_q, d);
            let kv = random_matrix(&mut rng, l_k, d);
            let vv = random_matrix(&mut rng, l_k, d);
            let mask_vec = [true, trial % 2 == 0, true, trial % 3 != 0];
            let mask = (trial % 4 == 0).then_some(&mask_vec[..]);
            let mut tape = Tape::new();
            let q = tape.constant(qv.clone(), vec![l_q, d]).unwrap();
            let k = tape.constant(kv.clone(), vec![l_k, d]).unwrap();
            let v = tape.constant(vv.clone(), vec![l_k, d]).unwrap();
            let out = scaled_dot_attention(&mut tape, q, k, v, mask).unwrap();
            let expected = brute_force_attention(&qv, &kv, &vv, l_q, l_k, d, d, mask);
            assert!(approx_eq_slices(tape.data(out), &expected, 1e-12));
        }
    }

    #[test]
    fn multihead_matches_brute_force_composition() {
        // Independent oracle: slice the packed projections into per-head
        // matrices, run brute-force attention per head, concatenate, project.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (d_model, n_heads, l_q, l_k) = (4, 2, 3, 4);
        let d_head = d_model / n_heads;
        let mut params = ParamSet::new();
        let layer = MhaLayer::init(&mut params, "t", d_model, n_heads, &mut rng).unwrap();
        let qv = random_matrix(&mut rng, l_q, d_model);
        let kv = random_matrix(&mut rng, l_k, d_model);
        let vv = random_matrix(&mut rng, l_k, d_model);

        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let q = tape.constant(qv.clone(), vec![l_q, d_model]).unwrap();
        let k = tape.constant(kv.clone(), vec![l_k, d_model]).unwrap();
        let v = tape.constant(vv.clone(), vec![l_k, d_model]).unwrap();
        let out = multihead(&mut tape, &layer, &vars, q, k, v, None).unwrap();

        let project = |x: &[f64], rows: usize, w: &Tensor, col0: usize, cols: usize| -> Vec<f64> {
            let mut out = vec![0.0; rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    for c in 0..d_model {
                        out[i * cols + j] += x[i * d_model + c] * w.get2(c, col0 + j);
                    }
                }
            }
            out
        };
        let mut concat = vec![0.0; l_q * d_model];
        for h in 0..n_heads {
            let qh = project(&qv, l_q, params.tensor(layer.wq), h * d_head, d_head);
            let kh = project(&kv, l_k, params.tensor(layer.wk), h * d_head, d_head);
            let vh = project(&vv, l_k, params.tensor(layer.wv), h * d_head, d_head);
            let head = brute_force_attention(&qh, &kh, &vh, l_q, l_k, d_head, d_head, None);
            for i in 0..l_q {
                for j in 0..d_head {
                    concat[i * d_model + h * d_head + j] = head[i * d_head + j];
                }
            }
        }
        let expected = project(&concat, l_q, params.tensor(layer.wo), 0, d_model);
        assert!(approx_eq_slices(tape.data(out), &expected, 1e-12));
    }

    #[test]
    fn one_head_identity_projections_reduce_to_scaled_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 3;
        let mut params = ParamSet::new();
        let layer = MhaLayer::init(&mut params, "t", d, 1, &mut rng).unwrap();
        for idx in [layer.wq, layer.wk, layer.wv, layer.wo] {
            let eye = Tensor::identity(d);
            params.tensor_mut(idx).data_mut().copy_from_slice(eye.data());
        }
        let qv = random_matrix(&mut rng, 2, d);
        let kv = random_matrix(&mut rng, 4, d);
        let vv = random_matrix(&mut rng, 4, d);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let q = tape.constant(qv.clone(), vec![2, d]).unwrap();
        let k = tape.constant(kv.clone(), vec![4, d]).unwrap();
        let v = tape.constant(vv.clone(), vec![4, d]).unwrap();
        let mh = multihead(&mut tape, &layer, &vars, q, k, v, None).unwrap();
        let q2 = tape.constant(qv, vec![2, d]).unwrap();
        let k2 = tape.constant(kv, vec![4, d]).unwrap();
        let v2 = tape.constant(vv, vec![4, d]).unwrap();
        let plain = scaled_dot_attention(&mut tape, q2, k2, v2, None).unwrap();
        assert_eq!(tape.data(mh), tape.data(plain));
    }

    #[test]
    fn bridge_symmetry_with_shared_inputs_and_params() {
        // Same sequences, same bank, same layer params → e_a == e_t.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (d, l, n) = (4, 2, 3);
        let mut params = ParamSet::new();
        let layer = MhaLayer::init(&mut params, "shared", d, 2, &mut rng).unwrap();
        let xv = random_matrix(&mut rng, n, d);
        let bank = random_matrix(&mut rng, l, d);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let x = tape.constant(xv, vec![n, d]).unwrap();
        let q = tape.constant(bank, vec![l, d]).unwrap();
        let (e_a, e_t) =
            bridge_cross_attend(&mut tape, &layer, &layer, &vars, q, q, x, x, None, None).unwrap();
        assert_eq!(tape.data(e_a), tape.data(e_t));
        assert_eq!(tape.shape(e_a), &[l, d]);
    }

    #[test]
    fn bridge_matches_per_token_brute_force() {
        // N=2, L=2, d=4, single head: e_a must equal explicit softmax over
        // audio keys applied to text values, token row by token row.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (d, l, n) = (4, 2, 2);
        let mut params = ParamSet::new();
        let layer_a = MhaLayer::init(&mut params, "a", d, 1, &mut rng).unwrap();
        let layer_t = MhaLayer::init(&mut params, "t", d, 1, &mut rng).unwrap();
        let audio = random_matrix(&mut rng, n, d);
        let text = random_matrix(&mut rng, n, d);
        let bank_a = random_matrix(&mut rng, l, d);
        let bank_t = random_matrix(&mut rng, l, d);

        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let a = tape.constant(audio.clone(), vec![n, d]).unwrap();
        let t = tape.constant(text.clone(), vec![n, d]).unwrap();
        let qa = tape.constant(bank_a.clone(), vec![l, d]).unwrap();
        let qt = tape.constant(bank_t.clone(), vec![l, d]).unwrap();
        let (e_a, _) = bridge_cross_attend(
            &mut tape, &layer_a, &layer_t, &vars, qa, qt, a, t, None, None,
        )
        .unwrap();

        let mat = |w: usize| params.tensor(w).clone();
        let apply = |x: &[f64], rows: usize, w: &Tensor| -> Vec<f64> {
            let mut out = vec![0.0; rows * d];
            for i in 0..rows {
                for j in 0..d {
                    for c in 0..d {
                        out[i * d + j] += x[i * d + c] * w.get2(c, j);
                    }
                }
            }
            out
        };
        let q = apply(&bank_a, l, &mat(layer_a.wq));
        let k = apply(&audio, n, &mat(layer_a.wk));
        let v = apply(&text, n, &mat(layer_a.wv));
        let head = brute_force_attention(&q, &k, &v, l, n, d, d, None);
        let expected = apply(&head, l, &mat(layer_a.wo));
        assert!(approx_eq_slices(tape.data(e_a), &expected, 1e-12));
    }

    #[test]
    fn classic_symmetry_with_shared_inputs_and_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (d, n) = (4, 3);
        let mut params = ParamSet::new();
        let layer = MhaLayer::init(&mut params, "shared", d, 2, &mut rng).unwrap();
        let xv = random_matrix(&mut rng, n, d);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let x = tape.constant(xv, vec![n, d]).unwrap();
        let (e_a, e_t) =
            classic_cross_attend(&mut tape, &layer, &layer, &vars, x, x, None, None).unwrap();
        assert_eq!(tape.data(e_a), tape.data(e_t));
        assert_eq!(tape.shape(e_a), &[n, d]);
    }

    #[test]
    fn fuse_averages_the_two_pooled_streams() {
        let mut tape = Tape::new();
        // e_a rows all (2,4), e_t rows all (6,0) → e_s = (4,2).
        let e_a = tape
            .constant(vec![2.0, 4.0, 2.0, 4.0, 2.0, 4.0], vec![3, 2])
            .unwrap();
        let e_t = tape.constant(vec![6.0, 0.0, 6.0, 0.0], vec![2, 2]).unwrap();
        let e_s = fuse(&mut tape, e_a, e_t, None, None).unwrap();
        assert_eq!(tape.data(e_s), &[4.0, 2.0]);
        assert_eq!(tape.shape(e_s), &[2]);
        // Idempotence: identical streams collapse to their own mean.
        let same = fuse(&mut tape, e_a, e_a, None, None).unwrap();
        assert_eq!(tape.data(same), &[2.0, 4.0]);
    }

    #[test]
    fn fuse_is_invariant_to_token_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows = random_matrix(&mut rng, 4, 3);
        let mut permuted = vec![0.0; 12];
        for (dst, src) in [2usize, 0, 3, 1].iter().enumerate() {
            permuted[dst * 3..(dst + 1) * 3].copy_from_slice(&rows[src * 3..(src + 1) * 3]);
        }
        let other = random_matrix(&mut rng, 2, 3);
        let mut tape = Tape::new();
        let e_a = tape.constant(rows, vec![4, 3]).unwrap();
        let e_a_perm = tape.constant(permuted, vec![4, 3]).unwrap();
        let e_t = tape.constant(other, vec![2, 3]).unwrap();
        let s1 = fuse(&mut tape, e_a, e_t, None, None).unwrap();
        let s2 = fuse(&mut tape, e_a_perm, e_t, None, None).unwrap();
        assert!(approx_eq_slices(tape.data(s1), tape.data(s2), 1e-12));
    }

    #[test]
    fn self_refine_is_padding_invariant_with_masking() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = 4;
        let mut params = ParamSet::new();
        let layer = MhaLayer::init(&mut params, "refine", d, 2, &mut rng).unwrap();
        let real = random_matrix(&mut rng, 3, d);
        let mut padded = real.clone();
        padded.extend_from_slice(&[0.0; 8]); // two zero rows

        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let x = tape.constant(real, vec![3, d]).unwrap();
        let out = self_refine(&mut tape, &layer, &vars, x, Some(&[true; 3])).unwrap();
        let xp = tape.constant(padded, vec![5, d]).unwrap();
        let out_p = self_refine(
            &mut tape,
            &layer,
            &vars,
            xp,
            Some(&[true, true, true, false, false]),
        )
        .unwrap();
        let unpadded_rows = &tape.data(out_p)[..3 * d];
        assert!(approx_eq_slices(tape.data(out), unpadded_rows, 1e-9));
    }

    #[test]
    fn config_validation_rules() {
        let ok = FusionConfig {
            d_model: 16,
            n_heads_self: 4,
            n_heads_cross: 4,
            ..FusionConfig::default()
        };
        ok.validate().unwrap();
        let bad_heads = FusionConfig {
            d_model: 16,
            n_heads_self: 5,
            ..ok.clone()
        };
        assert!(matches!(
            bad_heads.validate(),
            Err(ConfigError::HeadsDivide { .. })
        ));
        let bridge_without_cross = FusionConfig {
            use_cross_attention: false,
            use_bridge_tokens: true,
            ..ok.clone()
        };
        assert!(matches!(
            bridge_without_cross.validate(),
            Err(ConfigError::BridgeNeedsCross)
        ));
        // Disabled components skip their head-count constraints.
        let no_attention = FusionConfig {
            d_model: 10,
            n_heads_self: 3,
            n_heads_cross: 3,
            use_self_attention: false,
            use_cross_attention: false,
            use_bridge_tokens: false,
            ..ok
        };
        no_attention.validate().unwrap();
    }
}
