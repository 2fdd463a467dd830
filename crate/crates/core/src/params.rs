//! Named parameter storage, decoupled from any tape.
//!
//! Parameters live as plain buffers between steps; each training step binds
//! them onto a fresh tape as gradient-tracked leaves, and reads gradients
//! back out after `backward`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of model parameters. Order is the serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param { name, shape, data });
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Bind every parameter onto `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &Tape) -> Result<Binding> {
        let mut tensors = Vec::with_capacity(self.params.len());
        for p in &self.params {
            tensors.push(tape.leaf(p.data.clone(), &p.shape, true)?);
        }
        Ok(Binding { names: self.params.iter().map(|p| p.name.clone()).collect(), tensors })
    }
}

/// Tape-bound view of a [`ParamSet`], aligned index-for-index.
#[derive(Debug, Clone)]
pub struct Binding {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Binding {
    pub fn get(&self, name: &str) -> Result<Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.tensors[i].clone())
            .ok_or_else(|| CoreError::MissingParam { name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Gradients for every bound parameter, in parameter order.
    /// Errors with the parameter name if one received no gradient.
    pub fn grads(&self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.tensors.len());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            match t.grad() {
                Some(g) => out.push(g),
                None => return Err(CoreError::MissingGradient { name: name.clone() }),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn bind_and_collect_grads() {
        let mut set = ParamSet::new();
        set.push("w".to_string(), vec![2], vec![1.0, 2.0]);
        let tape = Tape::new();
        let bind = set.bind(&tape).unwrap();
        let w = bind.get("w").unwrap();
        w.sum_all().unwrap().backward().unwrap();
        assert_eq!(bind.grads().unwrap(), vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut set = ParamSet::new();
        set.push("dead".to_string(), vec![1], vec![0.0]);
        let tape = Tape::new();
        let bind = set.bind(&tape).unwrap();
        match bind.grads() {
            Err(CoreError::MissingGradient { name }) => assert_eq!(name, "dead"),
            other => panic!("expected missing gradient, got {other:?}"),
        }
    }

    #[test]
    fn unknown_name_rejected() {
        let set = ParamSet::new();
        let tape = Tape::new();
        let bind = set.bind(&tape).unwrap();
        assert!(matches!(bind.get("nope"), Err(CoreError::MissingParam { .. })));
    }
}
