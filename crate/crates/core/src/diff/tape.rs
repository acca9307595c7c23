//! Reverse-mode gradient tape.
//!
//! Every differentiable operation appends one node holding its output value,
//! the ids of its inputs and a closure that maps the output gradient to input
//! gradients. Nodes are appended in execution order, so the node vector is
//! already a topological order and `backward` is a single reverse sweep.
//!
//! A tape is single-use: a second `backward` call fails with
//! [`Error::TapeConsumed`] until [`Tape::reset`] clears it.

use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};
use crate::Real;

/// Arguments handed to a node's backward closure.
pub(crate) struct BackwardArgs<'a, T> {
    /// Gradient of the loss w.r.t. this node's output.
    pub grad: &'a [T],
    /// This node's output value.
    pub out: &'a [T],
    /// Values of the node's inputs, in the order they were recorded.
    pub inputs: Vec<&'a [T]>,
    /// Whether each input needs a gradient at all.
    pub needs: Vec<bool>,
}

/// Writes `Some(grad)` into the slot of every input that needs a gradient.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>, &mut [Option<Vec<T>>])>;

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node and re-arms the tape.
    ///
    /// Needs `&mut self`, so no [`Var`] borrowed from this tape can survive it.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.consumed.set(false);
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn leaf(&self, data: Vec<T>, shape: &[usize]) -> Result<Var<'_, T>> {
        self.input(data, shape, true)
    }

    /// Constant input: never receives a gradient.
    pub fn constant(&self, data: Vec<T>, shape: &[usize]) -> Result<Var<'_, T>> {
        self.input(data, shape, false)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.push(vec![v], Vec::new(), Vec::new(), false, None)
    }

    fn input(&self, data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Var<'_, T>> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(crate::error::shape_err(
                "leaf",
                format!("{} values for shape {:?}", data.len(), shape),
            ));
        }
        Ok(self.push(data, shape.to_vec(), Vec::new(), requires_grad, None))
    }

    fn push(
        &self,
        value: Vec<T>,
        shape: Vec<usize>,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            shape,
            parents,
            requires_grad,
            backward,
        });
        Var { tape: self, id }
    }

    /// Appends the result of a differentiable operation.
    ///
    /// The backward closure is only kept when some input requires a gradient.
    pub(crate) fn record<F>(
        &self,
        value: Vec<T>,
        shape: Vec<usize>,
        parents: &[Var<'_, T>],
        backward: F,
    ) -> Var<'_, T>
    where
        F: Fn(&BackwardArgs<'_, T>, &mut [Option<Vec<T>>]) + 'static,
    {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        let bw: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(value, shape, ids, requires_grad, bw)
    }

    pub(crate) fn value_of(&self, id: usize) -> Ref<'_, [T]> {
        Ref::map(self.nodes.borrow(), |n| n[id].value.as_slice())
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    /// Propagates gradients from a scalar `loss` back to every leaf.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        assert!(
            std::ptr::eq(loss.tape, self),
            "loss was recorded on a different tape"
        );
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_node.shape.clone()));
        }
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let args = BackwardArgs {
                grad: &grad,
                out: &node.value,
                inputs: node.parents.iter().map(|&p| nodes[p].value.as_slice()).collect(),
                needs: node.parents.iter().map(|&p| nodes[p].requires_grad).collect(),
            };
            let mut slots: Vec<Option<Vec<T>>> = vec![None; node.parents.len()];
            bw(&args, &mut slots);
            for (&p, slot) in node.parents.iter().zip(slots) {
                let Some(g) = slot else { continue };
                assert!(p < id, "tape order violated: input {p} after node {id}");
                debug_assert_eq!(g.len(), nodes[p].value.len());
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    empty => *empty = Some(g),
                }
            }
        }

        // Only leaves keep their gradients.
        for (id, node) in nodes.iter().enumerate() {
            if node.backward.is_some() || !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when the leaf did not influence the loss.
    pub fn get(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Gradient of `var`, or zeros of the right length if it had no influence.
    pub fn get_or_zero(&self, var: Var<'_, T>) -> Vec<T> {
        match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); var.numel()],
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.tape.value_of(self.id).len()
    }

    pub fn value(&self) -> Vec<T> {
        self.tape.value_of(self.id).to_vec()
    }

    /// Borrow the value without copying.
    pub fn data(&self) -> Ref<'t, [T]> {
        self.tape.value_of(self.id)
    }

    /// First element; intended for scalars.
    pub fn item(&self) -> T {
        self.tape.value_of(self.id)[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}
