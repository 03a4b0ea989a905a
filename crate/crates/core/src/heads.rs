//! Prediction heads: a 4-way emotion classifier and a sigmoid regressor for
//! valence/arousal, both reading the shared embedding `e_s`. The two heads
//! mirror each other (one hidden rectified layer of the same width), and the
//! regressor can optionally be split into independent per-dimension blocks.

use rand::Rng;

use crate::params::{glorot_uniform, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Parameter slots of one linear→relu→linear block.
#[derive(Debug, Clone)]
struct Block {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Block {
    fn init(
        params: &mut ParamSet,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w1: params.register(format!("{prefix}.w1"), glorot_uniform(d_in, d_hidden, rng)),
            b1: params.register(
                format!("{prefix}.b1"),
                Tensor::zeros(vec![d_hidden]).with_requires_grad(true),
            ),
            w2: params.register(format!("{prefix}.w2"), glorot_uniform(d_hidden, d_out, rng)),
            b2: params.register(
                format!("{prefix}.b2"),
                Tensor::zeros(vec![d_out]).with_requires_grad(true),
            ),
        }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, TensorError> {
        let h = tape.matmul(x, vars[self.w1])?;
        let h = tape.add_bias(h, vars[self.b1])?;
        let h = tape.relu(h);
        let out = tape.matmul(h, vars[self.w2])?;
        tape.add_bias(out, vars[self.b2])
    }
}

#[derive(Debug, Clone)]
enum Regressor {
    /// One block with two sigmoid outputs (valence, arousal).
    Shared(Block),
    /// Independent single-output blocks per dimension.
    Split { valence: Block, arousal: Block },
}

/// Both heads' parameter slots.
#[derive(Debug, Clone)]
pub struct HeadLayers {
    classifier: Block,
    regressor: Regressor,
}

impl HeadLayers {
    pub fn init(
        params: &mut ParamSet,
        d_model: usize,
        d_hidden: usize,
        split_regressor: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let classifier = Block::init(params, "head_cls", d_model, d_hidden, 4, rng);
        let regressor = if split_regressor {
            Regressor::Split {
                valence: Block::init(params, "head_reg_v", d_model, d_hidden, 1, rng),
                arousal: Block::init(params, "head_reg_a", d_model, d_hidden, 1, rng),
            }
        } else {
            Regressor::Shared(Block::init(params, "head_reg", d_model, d_hidden, 2, rng))
        };
        Self {
            classifier,
            regressor,
        }
    }

    /// Runs both heads on a single `e_s` (1-D, length `d_model`): returns
    /// unnormalized class logits `[1,4]` and sigmoid-squashed dimensional
    /// outputs `[1,2]` (valence first).
    pub fn predict(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        e_s: Var,
    ) -> Result<HeadOutput, TensorError> {
        let d = tape.shape(e_s)[0];
        let x = tape.reshape(e_s, vec![1, d])?;
        let logits = self.classifier.forward(tape, vars, x)?;
        let dims = match &self.regressor {
            Regressor::Shared(block) => {
                let raw = block.forward(tape, vars, x)?;
                tape.sigmoid(raw)
            }
            Regressor::Split { valence, arousal } => {
                let v = valence.forward(tape, vars, x)?;
                let a = arousal.forward(tape, vars, x)?;
                let both = tape.concat_cols(&[v, a])?;
                tape.sigmoid(both)
            }
        };
        Ok(HeadOutput { logits, dims })
    }
}

/// One sample's head outputs on the tape.
pub struct HeadOutput {
    /// `[1, 4]` unnormalized logits.
    pub logits: Var,
    /// `[1, 2]` sigmoid outputs: column 0 valence, column 1 arousal.
    pub dims: Var,
}
