//! Named, ordered store of trainable parameters.
//!
//! Registration order is fixed at model construction and shared by the
//! optimizer state, checkpoints, and tape bindings, so an index is a stable
//! identity for a parameter within one model configuration. Names use
//! dotted `group.tensor` form (e.g. `refine_audio.wq`), which lets callers
//! select whole groups by prefix — the freeze mechanism during modality
//! masking works that way.

use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Glorot/fan-balanced uniform init in `±√(6/(rows+cols))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::new(vec![rows, cols], data)
        .expect("sized by construction")
        .with_requires_grad(true)
}

/// Ordered collection of named trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor under a unique name and returns its stable index.
    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        let name = name.into();
        debug_assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, tensor.with_requires_grad(true)));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar values across all parameters.
    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Indices of all parameters whose name starts with `prefix`.
    pub fn indices_with_prefix(&self, prefix: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, (n, _))| n.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    }

    /// Registers every parameter as a tape leaf, in index order. The returned
    /// vector is indexed by parameter index.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.input(t)).collect()
    }

    /// Copies tape gradients (post-`backward`) into each tensor's `grad`.
    pub fn absorb_grads(&mut self, tape: &Tape, vars: &[Var]) {
        debug_assert_eq!(vars.len(), self.entries.len());
        for ((_, t), &v) in self.entries.iter_mut().zip(vars) {
            t.grad = tape.grad(v).map(|g| g.to_vec());
        }
    }

    /// Drops the gradients of the given parameters (freeze for this step).
    pub fn drop_grads(&mut self, indices: &[usize]) {
        for &i in indices {
            self.entries[i].1.grad = None;
        }
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.grad = None;
        }
    }

    /// Snapshot of all tensors (weights only, gradients stripped).
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|(n, t)| {
                let mut clean = t.clone();
                clean.grad = None;
                (n.clone(), clean)
            })
            .collect()
    }

    /// Restores weights from a snapshot; names and shapes must match the
    /// registration order exactly.
    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) -> Result<(), String> {
        if snapshot.len() != self.entries.len() {
            return Err(format!(
                "snapshot has {} parameters, model has {}",
                snapshot.len(),
                self.entries.len()
            ));
        }
        for ((name, tensor), (snap_name, snap)) in self.entries.iter_mut().zip(snapshot) {
            if name != snap_name {
                return Err(format!("parameter {name} does not match snapshot {snap_name}"));
            }
            if tensor.shape() != snap.shape() {
                return Err(format!(
                    "parameter {name}: shape {:?} does not match snapshot {:?}",
                    tensor.shape(),
                    snap.shape()
                ));
            }
            tensor.data_mut().copy_from_slice(snap.data());
            tensor.grad = None;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = glorot_uniform(20, 30, &mut rng);
        let limit = (6.0 / 50.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= limit));
        assert!(t.requires_grad);
    }

    #[test]
    fn prefix_lookup_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let a = params.register("refine_audio.wq", glorot_uniform(2, 2, &mut rng));
        let b = params.register("refine_audio.wk", glorot_uniform(2, 2, &mut rng));
        let c = params.register("refine_text.wq", glorot_uniform(2, 2, &mut rng));
        assert_eq!(params.indices_with_prefix("refine_audio."), vec![a, b]);
        assert_eq!(params.indices_with_prefix("refine_text."), vec![c]);
        assert_eq!(params.total_values(), 12);
        assert_eq!(params.index_of("refine_text.wq"), Some(c));
    }

    #[test]
    fn bind_absorb_and_drop_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let w = params.register("w", glorot_uniform(2, 2, &mut rng));
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let s = tape.sum_all(vars[w]);
        tape.backward(s).unwrap();
        params.absorb_grads(&tape, &vars);
        assert_eq!(params.tensor(w).grad.as_deref().unwrap(), &[1.0; 4]);
        params.drop_grads(&[w]);
        assert!(params.tensor(w).grad.is_none());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        let w = params.register("w", glorot_uniform(3, 3, &mut rng));
        let snap = params.snapshot();
        params.tensor_mut(w).data_mut()[0] = 42.0;
        params.restore(&snap).unwrap();
        assert_eq!(params.tensor(w).data(), snap[0].1.data());
        // Mismatched names refuse to restore.
        let mut renamed = snap.clone();
        renamed[0].0 = "other".into();
        assert!(params.restore(&renamed).is_err());
    }
}
