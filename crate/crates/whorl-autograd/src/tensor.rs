//! The tensor handle and the reverse pass.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::ops::Op;
use crate::param::Param;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct Inner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
    pub(crate) sink: Option<Param>,
}

/// Immutable row-major array of `f64` values, optionally carrying the history
/// needed to differentiate through it. Cloning is cheap (reference counted).
///
/// A scalar is a rank-0 tensor with one element.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<Inner>,
}

impl Tensor {
    pub(crate) fn make(shape: Vec<usize>, data: Vec<f64>, op: Op, sink: Option<Param>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        let requires_grad = sink.is_some() || op.parents().iter().any(|p| p.requires_grad());
        // Drop the history when nothing upstream is trainable so inference
        // does not retain intermediate buffers.
        let op = if requires_grad { op } else { Op::Leaf };
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data,
                requires_grad,
                op,
                sink,
            }),
        }
    }

    /// Builds a constant (non-differentiable) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::make(shape.to_vec(), data, Op::Leaf, None)
    }

    /// Rank-0 constant.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::make(Vec::new(), vec![v], Op::Leaf, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a rank-0 tensor.
    pub fn scalar_value(&self) -> f64 {
        assert!(
            self.rank() == 0,
            "scalar_value on rank-{} tensor",
            self.rank()
        );
        self.inner.data[0]
    }

    /// Element accessor for rank-2 tensors.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        assert_eq!(self.rank(), 2, "at2 on rank-{} tensor", self.rank());
        self.inner.data[r * self.inner.shape[1] + c]
    }

    /// Copy of the values with the history severed.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(&self.inner.shape, self.inner.data.clone())
    }

    pub fn is_all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

/// Post-order over the subgraph that requires gradients.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // Stack entries carry the index of the next parent to visit so the walk
    // is iterative (graphs can be thousands of nodes deep).
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, child)) = stack.pop() {
        let parents: Vec<Tensor> = node
            .inner
            .op
            .parents()
            .into_iter()
            .filter(|p| p.requires_grad())
            .cloned()
            .collect();
        if child < parents.len() {
            stack.push((node, child + 1));
            let next = parents[child].clone();
            if visited.insert(next.id()) {
                stack.push((next, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

/// Runs the reverse pass from a scalar loss, accumulating into every
/// reachable [`crate::Parameter`]'s gradient buffer.
///
/// Panics if `loss` is not rank-0 or does not depend on any parameter.
pub fn backward(loss: &Tensor) {
    assert!(
        loss.rank() == 0,
        "backward requires a scalar loss, got shape {:?}",
        loss.shape()
    );
    assert!(
        loss.requires_grad(),
        "backward on a graph with no trainable parameters"
    );
    let order = topo_order(loss);
    let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
    grads.insert(loss.id(), vec![1.0]);
    for node in order.iter().rev() {
        let Some(grad) = grads.remove(&node.id()) else {
            continue;
        };
        if let Some(param) = &node.inner.sink {
            param.accumulate_grad(&grad);
        }
        crate::ops::accumulate_parent_grads(node, &grad, &mut grads);
    }
}

pub(crate) fn add_into(grads: &mut HashMap<u64, Vec<f64>>, target: &Tensor, delta: Vec<f64>) {
    if !target.requires_grad() {
        return;
    }
    grads
        .entry(target.id())
        .and_modify(|acc| {
            for (a, d) in acc.iter_mut().zip(&delta) {
                *a += d;
            }
        })
        .or_insert(delta);
}

impl std::ops::Add for &Tensor {
    type Output = Tensor;
    fn add(self, rhs: &Tensor) -> Tensor {
        Tensor::add(self, rhs)
    }
}

impl std::ops::Sub for &Tensor {
    type Output = Tensor;
    fn sub(self, rhs: &Tensor) -> Tensor {
        Tensor::sub(self, rhs)
    }
}

impl std::ops::Mul for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: &Tensor) -> Tensor {
        Tensor::mul(self, rhs)
    }
}
