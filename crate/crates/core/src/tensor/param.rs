//! Named trainable parameters and their tape bindings.

use super::{Tape, Tensor};
use crate::scalar::Scalar;
use std::sync::{Arc, RwLock};

/// A named, persistent parameter. The value lives outside any tape; each
/// training step binds it onto a fresh tape as a leaf. Binding is cached per
/// tape so a parameter used several times in one forward pass accumulates its
/// gradient in a single slot.
pub struct Param<S: Scalar> {
    name: String,
    rows: usize,
    cols: usize,
    value: RwLock<Arc<Vec<S>>>,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<S>) -> Arc<Self> {
        assert_eq!(data.len(), rows * cols, "param data does not match shape");
        Arc::new(Param {
            name: name.into(),
            rows,
            cols,
            value: RwLock::new(Arc::new(data)),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub(crate) fn key(&self) -> usize {
        self as *const _ as usize
    }

    /// Snapshot of the current value.
    pub fn value(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.value.read().unwrap())
    }

    pub fn set_value(&self, data: Vec<S>) {
        assert_eq!(data.len(), self.numel(), "param update does not match shape");
        *self.value.write().unwrap() = Arc::new(data);
    }

    /// Differentiable binding onto `tape`.
    pub fn bind(&self, tape: &Tape<S>) -> Tensor<S> {
        let key = self.key();
        if let Some((node, snapshot)) = tape.binding(key) {
            return Tensor {
                data: snapshot,
                rows: self.rows,
                cols: self.cols,
                node: Some((tape.clone(), node)),
            };
        }
        let snapshot = self.value();
        let node = tape.push_node(Vec::new(), None);
        tape.record_binding(key, node, Arc::clone(&snapshot));
        Tensor {
            data: snapshot,
            rows: self.rows,
            cols: self.cols,
            node: Some((tape.clone(), node)),
        }
    }

    /// Read-only binding for evaluation: no tape, no gradient.
    pub fn constant(&self) -> Tensor<S> {
        Tensor {
            data: self.value(),
            rows: self.rows,
            cols: self.cols,
            node: None,
        }
    }
}

/// How a forward pass should view parameters: recorded on a tape for
/// training, or as plain constants for evaluation.
#[derive(Clone, Copy)]
pub enum Binder<'a, S: Scalar> {
    Train(&'a Tape<S>),
    Eval,
}

impl<'a, S: Scalar> Binder<'a, S> {
    pub fn get(&self, p: &Param<S>) -> Tensor<S> {
        match self {
            Binder::Train(tape) => p.bind(tape),
            Binder::Eval => p.constant(),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Binder::Train(_))
    }
}

/// Ordered collection of parameters; insertion order is the checkpoint and
/// optimizer order.
#[derive(Default)]
pub struct ParamSet<S: Scalar> {
    params: Vec<Arc<Param<S>>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<S>) -> Arc<Param<S>> {
        let p = Param::new(name, rows, cols, data);
        assert!(
            self.get(p.name()).is_none(),
            "duplicate parameter name {}",
            p.name()
        );
        self.params.push(Arc::clone(&p));
        p
    }

    pub fn push(&mut self, p: Arc<Param<S>>) {
        self.params.push(p);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Param<S>>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Param<S>>> {
        self.params.iter().find(|p| p.name() == name)
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// All parameters of `self` followed by all of `other`.
    pub fn chained(&self, other: &ParamSet<S>) -> ParamSet<S> {
        let mut params = self.params.clone();
        params.extend(other.params.iter().cloned());
        ParamSet { params }
    }
}
