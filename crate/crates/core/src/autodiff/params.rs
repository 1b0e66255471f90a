use std::collections::HashMap;

use rand::Rng;

use super::tape::{Gradients, Tape};
use crate::tensor::{NdArray, TensorError};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: NdArray,
    pub grad: NdArray,
    pub trainable: bool,
}

/// Registry owning every parameter of a model, keyed by a unique dotted name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        value: NdArray,
        trainable: bool,
    ) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = NdArray::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
            trainable,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Overwrites a parameter's value, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: NdArray) -> Result<(), TensorError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::shape(
                "set_value",
                format!("{:?}", p.value.shape()),
                value.shape(),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Zeroes every grad, then copies in the gradients a backward sweep
    /// produced for the parameters recorded on `tape`. Parameters the loss
    /// never reached keep a zero grad.
    pub fn load_grads(&mut self, tape: &Tape, grads: &Gradients) {
        self.zero_grads();
        for (var, id) in tape.param_vars() {
            if let Some(g) = grads.get(var) {
                let dst = self.params[id.0].grad.data_mut();
                for (d, s) in dst.iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
    }
}

/// He-uniform initialisation: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> NdArray {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    NdArray::from_parts(shape.to_vec(), data)
}
