//! Dense 2-D tensors with a reverse-mode differentiation tape.
//!
//! A [`Tape`] records every primitive applied to tensors that participate in
//! it. [`Tensor`]s are cheap handles: an `Arc` to the value buffer plus an
//! optional (tape, node) link. Tensors without a node are constants; an
//! operation only records a tape node when at least one input is on a tape,
//! so evaluation-mode forward passes pay no tracking cost.
//!
//! Backward walks the node list in reverse creation order, which is a valid
//! topological order because operands always exist before their results.
//! Gradients of fan-out tensors accumulate by addition. A tape is confined to
//! one thread; independent tapes may run in parallel.

mod adam;
mod checkpoint;
pub(crate) mod kernels;
mod ops;
mod param;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointEntry};
pub use param::{Binder, Param, ParamSet};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

type BackFn<S> = Box<dyn Fn(&[S], &mut GradSink<S>)>;

struct Node<S: Scalar> {
    parents: Vec<usize>,
    back: Option<BackFn<S>>,
}

pub(crate) struct TapeInner<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    // param address -> (node id, value snapshot); keeps one leaf per param per tape
    bindings: RefCell<HashMap<usize, (usize, Arc<Vec<S>>)>>,
}

/// Recording context for one forward/backward pass.
pub struct Tape<S: Scalar> {
    inner: Rc<TapeInner<S>>,
}

impl<S: Scalar> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
                bindings: RefCell::new(HashMap::new()),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push_node(&self, parents: Vec<usize>, back: Option<BackFn<S>>) -> usize {
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes.push(Node { parents, back });
        nodes.len() - 1
    }

    /// A differentiable leaf holding `data`. Its gradient can be queried from
    /// the [`Gradients`] of any loss computed on this tape.
    pub fn leaf(&self, data: Vec<S>, rows: usize, cols: usize) -> Tensor<S> {
        assert_eq!(data.len(), rows * cols, "leaf data does not match shape");
        let id = self.push_node(Vec::new(), None);
        Tensor {
            data: Arc::new(data),
            rows,
            cols,
            node: Some((self.clone(), id)),
        }
    }

    pub(crate) fn same_tape(&self, other: &Tape<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn binding(&self, key: usize) -> Option<(usize, Arc<Vec<S>>)> {
        self.inner.bindings.borrow().get(&key).cloned()
    }

    pub(crate) fn record_binding(&self, key: usize, node: usize, snapshot: Arc<Vec<S>>) {
        self.inner
            .bindings
            .borrow_mut()
            .insert(key, (node, snapshot));
    }
}

/// Dense row-major 2-D array of scalars, possibly linked to a tape node.
pub struct Tensor<S: Scalar> {
    data: Arc<Vec<S>>,
    rows: usize,
    cols: usize,
    node: Option<(Tape<S>, usize)>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            data: Arc::clone(&self.data),
            rows: self.rows,
            cols: self.cols,
            node: self.node.clone(),
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// Constant (detached) tensor.
    pub fn constant(data: Vec<S>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "data does not match shape");
        debug_check_finite(&data, "constant");
        Tensor {
            data: Arc::new(data),
            rows,
            cols,
            node: None,
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor::constant(vec![v], 1, 1)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::constant(vec![S::zero(); rows * cols], rows, cols)
    }

    /// Constant row vector `[1 x n]`.
    pub fn row(data: Vec<S>) -> Self {
        let n = data.len();
        Tensor::constant(data, 1, n)
    }

    /// Constant column vector `[n x 1]`.
    pub fn col(data: Vec<S>) -> Self {
        let n = data.len();
        Tensor::constant(data, n, 1)
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.data)
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    /// Scalar value of a `[1 x 1]` tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_on_tape(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    pub(crate) fn tape(&self) -> Option<&Tape<S>> {
        self.node.as_ref().map(|(t, _)| t)
    }

    pub(crate) fn with_node(data: Vec<S>, rows: usize, cols: usize, node: Option<(Tape<S>, usize)>) -> Self {
        debug_check_finite(&data, "op output");
        Tensor {
            data: Arc::new(data),
            rows,
            cols,
            node,
        }
    }

    /// Same value, detached from any tape: ancestors receive zero gradient
    /// through this tensor.
    pub fn stop_gradient(&self) -> Tensor<S> {
        Tensor {
            data: Arc::clone(&self.data),
            rows: self.rows,
            cols: self.cols,
            node: None,
        }
    }

    /// Reverse-mode sweep from a scalar loss. Returns the gradient of the
    /// loss with respect to every tensor recorded on the tape; tensors the
    /// loss does not reach have zero gradient.
    pub fn backward(&self) -> Result<Gradients<S>> {
        let (tape, root) = self
            .node
            .as_ref()
            .ok_or_else(|| Error::invalid_state("backward on a detached tensor"))?;
        if self.numel() != 1 {
            return Err(Error::invalid_state("backward requires a scalar loss"));
        }
        if !self.data[0].is_finite() {
            return Err(Error::numeric(format!(
                "backward on non-finite loss {}",
                self.data[0]
            )));
        }
        let nodes = tape.inner.nodes.borrow();
        let root = *root;

        // Restrict the sweep to ancestors of the loss.
        let mut reachable = vec![false; root + 1];
        let mut stack = vec![root];
        reachable[root] = true;
        while let Some(id) = stack.pop() {
            for &p in &nodes[id].parents {
                if !reachable[p] {
                    reachable[p] = true;
                    stack.push(p);
                }
            }
        }

        let mut sink = GradSink {
            slots: (0..nodes.len()).map(|_| None).collect(),
        };
        sink.slot(root, 1)[0] = S::one();
        for id in (0..=root).rev() {
            if !reachable[id] {
                continue;
            }
            let grad = match sink.slots[id].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some(back) = &nodes[id].back {
                back(&grad, &mut sink);
            }
            sink.slots[id] = Some(grad);
        }
        Ok(Gradients {
            tape: tape.clone(),
            slots: sink.slots,
        })
    }
}

/// Accumulator the backward closures write parent gradients into.
pub(crate) struct GradSink<S: Scalar> {
    slots: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> GradSink<S> {
    /// Gradient buffer for node `id`, zero-initialized to `len` on first use.
    pub(crate) fn slot(&mut self, id: usize, len: usize) -> &mut [S] {
        let entry = &mut self.slots[id];
        if entry.is_none() {
            *entry = Some(vec![S::zero(); len]);
        }
        let buf = entry.as_mut().unwrap();
        debug_assert_eq!(buf.len(), len, "gradient shape mismatch at node {id}");
        buf
    }

    pub(crate) fn add_scaled(&mut self, id: usize, len: usize, src: &[S], scale: S) {
        let slot = self.slot(id, len);
        for (o, &s) in slot.iter_mut().zip(src) {
            *o = *o + s * scale;
        }
    }
}

/// Result of one backward sweep.
pub struct Gradients<S: Scalar> {
    tape: Tape<S>,
    slots: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient w.r.t. `t`, or `None` if `t` is off-tape / unreached.
    pub fn wrt(&self, t: &Tensor<S>) -> Option<&[S]> {
        let (tape, id) = t.node.as_ref()?;
        if !tape.same_tape(&self.tape) {
            return None;
        }
        self.slots.get(*id)?.as_deref()
    }

    /// Gradient w.r.t. a parameter bound on this tape; zeros if the loss does
    /// not reach it.
    pub fn of_param(&self, p: &Param<S>) -> Vec<S> {
        match self.tape.binding(p.key()) {
            Some((node, _)) => match self.slots.get(node).and_then(|s| s.as_ref()) {
                Some(g) => g.clone(),
                None => vec![S::zero(); p.numel()],
            },
            None => vec![S::zero(); p.numel()],
        }
    }

    /// Gradients for every parameter in `set`, in set order.
    pub fn of_params(&self, set: &ParamSet<S>) -> Vec<Vec<S>> {
        set.iter().map(|p| self.of_param(p)).collect()
    }
}

pub(crate) fn merged_tape<S: Scalar>(inputs: &[&Tensor<S>]) -> Option<Tape<S>> {
    let mut found: Option<Tape<S>> = None;
    for t in inputs {
        if let Some((tape, _)) = &t.node {
            match &found {
                None => found = Some(tape.clone()),
                Some(existing) => {
                    assert!(
                        existing.same_tape(tape),
                        "operands recorded on different tapes"
                    );
                }
            }
        }
    }
    found
}

#[inline]
pub(crate) fn debug_check_finite<S: Scalar>(data: &[S], what: &str) {
    #[cfg(debug_assertions)]
    {
        for (i, v) in data.iter().enumerate() {
            assert!(
                v.is_finite(),
                "numeric error: non-finite value {v} at index {i} in {what}"
            );
        }
    }
    #[cfg(not(debug_assertions))]
    {
        let _ = (data, what);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, -2.0, 3.0, 0.5], 2, 2);
        let loss = x.sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum_is_two_x() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, -2.0, 3.0], 1, 3);
        let loss = x.mul(&x).sum();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_on_detached_errors() {
        let x: Tensor<f64> = Tensor::scalar(4.0);
        match x.backward() {
            Err(Error::InvalidState(_)) => {}
            Err(e) => panic!("expected invalid-state error, got {e}"),
            Ok(_) => panic!("expected invalid-state error, got gradients"),
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let tape = Tape::new();
        let x = tape.leaf(vec![0.3f64, -1.2, 0.7], 1, 3);
        let a = x.tanh().sum();
        let b = x.mul(&x).sum();
        let combined = a.add(&b);

        let ga = a.backward().unwrap();
        let gb = b.backward().unwrap();
        let gc = combined.backward().unwrap();
        let (ga, gb, gc) = (ga.wrt(&x).unwrap(), gb.wrt(&x).unwrap(), gc.wrt(&x).unwrap());
        for i in 0..3 {
            assert!((ga[i] + gb[i] - gc[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn unreachable_parameters_get_zero() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], 1, 2);
        let y = tape.leaf(vec![3.0, 4.0], 1, 2);
        let loss = x.sum();
        let grads = loss.backward().unwrap();
        // y never feeds the loss; its slot is empty and reads as None
        assert!(grads.wrt(&y).is_none());
        assert_eq!(grads.wrt(&x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn stop_gradient_blocks_ancestors() {
        let tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], 1, 2);
        let y = tape.leaf(vec![5.0, 7.0], 1, 2);
        let loss = x.stop_gradient().mul(&y).sum();
        assert_eq!(loss.item(), 1.0 * 5.0 + 2.0 * 7.0);
        let grads = loss.backward().unwrap();
        assert!(grads.wrt(&x).is_none(), "stopped input must get no gradient");
        assert_eq!(grads.wrt(&y).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(vec![2.0], 1, 1);
        // loss = x*x + 3x -> dloss/dx = 2x + 3 = 7
        let loss = x.mul(&x).add(&x.scale(3.0));
        let grads = loss.backward().unwrap();
        assert_eq!(grads.wrt(&x).unwrap(), &[7.0]);
    }
}
