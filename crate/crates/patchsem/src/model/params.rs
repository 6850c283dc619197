//! Parameter storage, seeded initialization and graph binding.

use super::{param_specs, Init, ModelConfig, ModelError};
use crate::tensor::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Named parameter tensors. The map is ordered so every walk over the
/// parameters (checkpointing, optimizer steps, gradient checks) is
/// deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub(crate) fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ModelParams { tensors }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Check that the stored tensors are exactly the set the config calls
    /// for, with matching shapes.
    pub fn validate_against(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let specs = param_specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "{} parameter tensors, config calls for {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for spec in &specs {
            let t = self.tensors.get(&spec.name).ok_or_else(|| {
                ModelError::ConfigMismatch(format!("parameter {} missing", spec.name))
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::ConfigMismatch(format!(
                    "parameter {} has shape {:?}, config calls for {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }
}

/// Initialize every parameter from a seeded generator: weights uniform on
/// [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero, embedding row 0 (the
/// padding row) zeroed. The same (config, seed) pair always produces
/// bit-identical parameters.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for spec in param_specs(cfg) {
        let len: usize = spec.shape.iter().product();
        let mut tensor = match spec.init {
            Init::Zero => Tensor::zeros(spec.shape.clone()),
            Init::Uniform => {
                let bound = 1.0 / (spec.fan_in as f64).sqrt();
                let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
                Tensor::new(spec.shape.clone(), data).expect("spec shapes are consistent")
            }
        };
        if spec.zero_first_row {
            let cols = *spec.shape.last().unwrap();
            tensor.data_mut()[..cols].fill(0.0);
        }
        tensors.insert(spec.name, tensor);
    }
    Ok(ModelParams { tensors })
}

/// Graph handles for every bound parameter tensor.
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a String, NodeId)>) -> Self {
        BoundParams {
            ids: pairs
                .into_iter()
                .map(|(name, id)| (name.clone(), id))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, NodeId)> {
        self.ids.iter().map(|(n, id)| (n, *id))
    }
}

/// Insert every parameter into `graph` as a leaf. Training binds with
/// `requires_grad`; scoring binds constants.
pub fn bind(graph: &mut Graph, params: &ModelParams, requires_grad: bool) -> BoundParams {
    let ids = params
        .iter()
        .map(|(name, tensor)| (name.clone(), graph.leaf(tensor.clone(), requires_grad)))
        .collect();
    BoundParams { ids }
}
