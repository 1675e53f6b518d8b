//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Operations on
//! tensors that require gradients record a backward rule on the result; the
//! recorded graph is linearised into a [`Tape`] when [`Tensor::backward`] is
//! called. Gradients are returned in a [`Gradients`] map keyed by tensor
//! identity rather than written into the tensors themselves.

mod gradcheck;
mod io;
mod nn;
mod ops;
mod param;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{arg_err, shape_err, Result};
use crate::scalar::Scalar;

pub use gradcheck::{check_gradients, finite_diff_check, GradCheckReport};
pub use io::{read_rten, write_rten};
pub use nn::{BatchNormStats, UpsampleMode};
pub use param::Parameter;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule: maps the output gradient to one optional gradient per input.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

struct GradFn<T: Scalar> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Scalar>(Arc<Node<T>>);

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.grad_fn.as_ref().map(|g| g.op).unwrap_or("leaf");
        write!(f, "Tensor{:?}[{}]", self.0.shape, op)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", self.data())?;
        }
        Ok(())
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        requires_grad: bool,
        grad_fn: Option<GradFn<T>>,
    ) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                numel_of(shape),
                data.len()
            ));
        }
        if shape.contains(&0) {
            return Err(shape_err!("zero-sized dimension in {:?}", shape));
        }
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Leaf tensor that receives gradients.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(t.into_parameter())
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![1], Arc::new(vec![v]), false, None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::build(
            shape.to_vec(),
            Arc::new(vec![v; numel_of(shape)]),
            false,
            None,
        )
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let data = (0..numel_of(shape)).map(f).collect();
        Self::build(shape.to_vec(), Arc::new(data), false, None)
    }

    /// Converts element type, dropping graph history.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|&v| U::lit(v.as_f64())).collect();
        Tensor::build(
            self.shape().to_vec(),
            Arc::new(data),
            self.requires_grad() && self.is_leaf(),
            None,
        )
    }

    /// A fresh leaf sharing this tensor's data, with no history.
    pub fn detach(&self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// A fresh gradient-receiving leaf sharing this tensor's data.
    pub fn into_parameter(self) -> Self {
        Self::build(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        self.0.data.clone()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the op that produced this tensor, or `"leaf"`.
    pub fn op(&self) -> &'static str {
        self.0.grad_fn.as_ref().map(|g| g.op).unwrap_or("leaf")
    }

    pub fn item(&self) -> T {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape()
        );
        self.0.data[0]
    }

    pub fn has_non_finite(&self) -> bool {
        self.data().iter().any(|v| !v.is_finite())
    }

    /// Creates the result of an op. The backward rule is kept only when graph
    /// recording is on and some input requires gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        Self::from_op_arc(op, shape, Arc::new(data), inputs, backward)
    }

    pub(crate) fn from_op_arc(
        op: &'static str,
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        inputs: &[&Tensor<T>],
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op}");
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let grad_fn = track.then(|| GradFn {
            op,
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            backward: Box::new(backward),
        });
        Self::build(shape, data, track, grad_fn)
    }

    /// Reverse-mode sweep from a scalar.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(arg_err!(
                "backward() needs a scalar loss, got shape {:?}",
                self.shape()
            ));
        }
        let tape = Tape::record(self);
        Ok(tape.run(self))
    }
}

/// `(op, output shape, input shapes)` of one recorded node.
pub type TraceEntry<'a> = (&'static str, &'a [usize], Vec<&'a [usize]>);

/// Topologically ordered list of the graph nodes reachable from a root.
pub struct Tape<T: Scalar> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Linearises every gradient-carrying node reachable from `root`; inputs
    /// precede the nodes that consume them.
    pub fn record(root: &Tensor<T>) -> Self {
        let mut nodes = Vec::new();
        let mut seen = HashSet::new();
        if !root.requires_grad() {
            return Self { nodes };
        }
        // Iterative post-order DFS: (node, children already pushed).
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                nodes.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(g) = &t.0.grad_fn {
                for inp in g.inputs.iter().rev() {
                    if inp.requires_grad() && !seen.contains(&inp.id()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op names in recording order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|t| t.op()).collect()
    }

    /// `(op, output shape, input shapes)` for every non-leaf node, in
    /// recording order.
    pub fn entries(&self) -> Vec<TraceEntry<'_>> {
        self.nodes
            .iter()
            .filter_map(|t| {
                let g = t.0.grad_fn.as_ref()?;
                Some((
                    g.op,
                    t.shape(),
                    g.inputs.iter().map(|i| i.shape()).collect(),
                ))
            })
            .collect()
    }

    pub fn position(&self, t: &Tensor<T>) -> Option<usize> {
        self.nodes.iter().position(|n| n.id() == t.id())
    }

    fn run(&self, root: &Tensor<T>) -> Gradients<T> {
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        let mut leaves = HashMap::new();
        if self.nodes.is_empty() {
            return Gradients { grads: leaves };
        }
        pending.insert(root.id(), vec![T::one()]);
        for node in self.nodes.iter().rev() {
            let Some(g_out) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    leaves.insert(node.id(), g_out);
                }
                Some(gf) => {
                    let g_in = (gf.backward)(&g_out);
                    debug_assert_eq!(g_in.len(), gf.inputs.len(), "{}", gf.op);
                    for (inp, g) in gf.inputs.iter().zip(g_in) {
                        let Some(g) = g else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), inp.numel(), "grad size from {}", gf.op);
                        match pending.get_mut(&inp.id()) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                            None => {
                                pending.insert(inp.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Gradients { grads: leaves }
    }
}

/// Gradients of a scalar with respect to the leaves of its graph.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    grads: HashMap<u64, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id()).map(|v| v.as_slice())
    }

    /// Gradient for `t`, zeros when `t` did not contribute to the loss.
    pub fn wrt(&self, t: &Tensor<T>) -> Vec<T> {
        self.get(t)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![T::zero(); t.numel()])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
