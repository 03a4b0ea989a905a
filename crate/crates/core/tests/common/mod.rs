//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use emofuse::data::Batch;
use emofuse::losses::{multitask_loss, LossWeights};
use emofuse::model::FusionModel;
use emofuse::tape::Tape;

/// Weighted batch loss of `model` on `batch`, forward only.
pub fn batch_loss(model: &FusionModel, batch: &Batch, weights: &LossWeights) -> f64 {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let fw = model.forward_batch(&mut tape, &vars, batch).expect("forward");
    let loss = multitask_loss(
        &mut tape,
        fw.logits,
        &batch.emotions,
        fw.pred_valence,
        &batch.valence,
        fw.pred_arousal,
        &batch.arousal,
        weights,
    )
    .expect("loss");
    tape.data(loss)[0]
}

/// Reverse-mode gradients of the batch loss for every parameter scalar,
/// flattened in registration order.
pub fn analytic_grads(model: &mut FusionModel, batch: &Batch, weights: &LossWeights) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape);
    let fw = model.forward_batch(&mut tape, &vars, batch).expect("forward");
    let loss = multitask_loss(
        &mut tape,
        fw.logits,
        &batch.emotions,
        fw.pred_valence,
        &batch.valence,
        fw.pred_arousal,
        &batch.arousal,
        weights,
    )
    .expect("loss");
    tape.backward(loss).expect("backward");
    model.params.absorb_grads(&tape, &vars);
    let mut flat = Vec::with_capacity(model.param_count());
    for idx in 0..model.params.len() {
        flat.extend_from_slice(
            model
                .params
                .tensor(idx)
                .grad
                .as_deref()
                .expect("all parameters reach the loss"),
        );
    }
    model.params.clear_grads();
    flat
}

/// Central-difference gradients with step `h`, same flattening as
/// [`analytic_grads`].
pub fn numerical_grads(
    model: &mut FusionModel,
    batch: &Batch,
    weights: &LossWeights,
    h: f64,
) -> Vec<f64> {
    let mut flat = Vec::with_capacity(model.param_count());
    for idx in 0..model.params.len() {
        for j in 0..model.params.tensor(idx).len() {
            let original = model.params.tensor(idx).data()[j];
            model.params.tensor_mut(idx).data_mut()[j] = original + h;
            let up = batch_loss(model, batch, weights);
            model.params.tensor_mut(idx).data_mut()[j] = original - h;
            let down = batch_loss(model, batch, weights);
            model.params.tensor_mut(idx).data_mut()[j] = original;
            flat.push((up - down) / (2.0 * h));
        }
    }
    flat
}

/// Largest relative error between paired gradient estimates, with an
/// absolute floor so near-zero pairs compare absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
