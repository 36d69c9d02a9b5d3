use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named parameter tensor with an optional accumulated gradient.
#[derive(Debug)]
pub struct Param {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.value.len() {
            return Err(Error::shape(format!(
                "gradient for '{}' has {} entries, parameter has {}",
                self.name,
                grad.len(),
                self.value.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub(crate) fn value_and_grad_mut(&mut self) -> (&mut Tensor, Option<&[f64]>) {
        (&mut self.value, self.grad.as_deref())
    }
}

/// Ordered, uniquely named collection of model parameters.
///
/// Student and teacher share one layout; elementwise updates between two
/// sets rely on iteration order never changing.
#[derive(Debug, Default)]
pub struct ParamSet {
    entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(Error::contract(format!("duplicate parameter name '{name}'")));
        }
        self.entries.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(())
    }

    /// Number of parameter tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.entries.iter_mut()
    }

    pub fn get(&self, index: usize) -> Option<&Param> {
        self.entries.get(index)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    /// Deep copy of the values; gradients are not carried over.
    pub fn clone_params(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.clone(),
                    grad: None,
                })
                .collect(),
        }
    }

    /// Errors unless `other` has identical names and shapes in identical order.
    pub fn check_congruent(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::shape(format!(
                "parameter sets hold {} and {} tensors",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::shape(format!(
                    "parameter '{}' {:?} does not match '{}' {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = Some(vec![0.0; p.value.len()]);
        }
    }

    /// Adds `scale * grad` into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, grads: &[Vec<f64>], scale: f64) -> Result<()> {
        if grads.len() != self.entries.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.entries.len()
            )));
        }
        for (p, g) in self.entries.iter_mut().zip(grads) {
            if g.len() != p.value.len() {
                return Err(Error::shape(format!("gradient size mismatch for '{}'", p.name)));
            }
            let acc = p.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (a, v) in acc.iter_mut().zip(g) {
                *a += scale * v;
            }
        }
        Ok(())
    }

    /// All values concatenated in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for p in &self.entries {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    /// Overwrites all values from a flat buffer in parameter order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(Error::shape(format!(
                "flat buffer has {} values, parameter set has {}",
                flat.len(),
                self.total_len()
            )));
        }
        let mut offset = 0;
        for p in &mut self.entries {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|p| p.value.is_finite())
    }
}

impl<'a> IntoIterator for &'a ParamSet {
    type Item = &'a Param;
    type IntoIter = std::slice::Iter<'a, Param>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
