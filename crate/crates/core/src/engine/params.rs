use std::collections::BTreeMap;

use super::{EngineError, Shape, Tensor};

/// Whether SGD updates an entry or it is carried state (running statistics,
/// input normalization).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub momentum: Tensor,
    pub kind: ParamKind,
}

/// Named tensors keyed by hierarchical dotted names, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert_kind(
        &mut self,
        name: &str,
        value: Tensor,
        kind: ParamKind,
    ) -> Result<(), EngineError> {
        if self.entries.contains_key(name) {
            return Err(EngineError::DuplicateParameter(name.to_string()));
        }
        let momentum = Tensor::zeros(value.shape());
        self.entries.insert(
            name.to_string(),
            Parameter {
                value,
                grad: None,
                momentum,
                kind,
            },
        );
        Ok(())
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), EngineError> {
        self.insert_kind(name, value, ParamKind::Trainable)
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor) -> Result<(), EngineError> {
        self.insert_kind(name, value, ParamKind::Buffer)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter, EngineError> {
        self.entries
            .get(name)
            .ok_or_else(|| EngineError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter, EngineError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| EngineError::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, EngineError> {
        Ok(&self.get(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Overwrites the value of an existing entry, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), EngineError> {
        let p = self.get_mut(name)?;
        if p.value.shape() != value.shape() {
            return Err(EngineError::ShapeMismatch {
                op: "set_value",
                left: p.value.shape(),
                right: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, grad: &[f64]) -> Result<(), EngineError> {
        let p = self.get_mut(name)?;
        let shape: Shape = p.value.shape();
        let g = p.grad.get_or_insert_with(|| Tensor::zeros(shape));
        for (acc, v) in g.data_mut().iter_mut().zip(grad) {
            *acc += v;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().fill(0.0);
            }
        }
    }

    /// Momentum SGD: `v <- momentum*v - lr*g; p <- p + v`, then zeroes the
    /// gradients. Every trainable entry must carry a gradient.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) -> Result<(), EngineError> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(EngineError::InvalidHyperparameter {
                name: "lr",
                value: lr,
            });
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(EngineError::InvalidHyperparameter {
                name: "momentum",
                value: momentum,
            });
        }
        if let Some((name, _)) = self
            .entries
            .iter()
            .find(|(_, p)| p.kind == ParamKind::Trainable && p.grad.is_none())
        {
            return Err(EngineError::MissingGradient(name.clone()));
        }
        for p in self.entries.values_mut() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let g = p.grad.as_mut().expect("checked above");
            for ((v, w), gi) in p
                .momentum
                .data_mut()
                .iter_mut()
                .zip(p.value.data_mut().iter_mut())
                .zip(g.data_mut().iter_mut())
            {
                *v = momentum * *v - lr * *gi;
                *w += *v;
                *gi = 0.0;
            }
        }
        Ok(())
    }
}
