//! Reverse-mode differentiation over a flat, append-only tape.
//!
//! Every operator evaluates eagerly and records a node holding its value,
//! its parents and (when any parent needs a gradient) a closure mapping the
//! output gradient to parent gradients. Node ids increase in evaluation
//! order, so a reverse sweep over ids is a valid topological order.

use std::cell::RefCell;
use std::rc::Rc;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Maps the output gradient to one optional gradient per parent.
/// The flag slice marks which parents actually need one.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    check_finite: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    /// Per-operator finiteness checks are on in debug builds only.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            check_finite,
        }
    }

    pub fn checks_finite(&self) -> bool {
        self.check_finite
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an input value. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes.borrow()[v.0].op
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: Vec<Var>,
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        if self.check_finite {
            if let Some(i) = value.first_non_finite() {
                return Err(Error::Numeric {
                    op: op.to_string(),
                    detail: format!("output element {i} of {:?} is {}", value.shape(), value.data()[i]),
                });
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents,
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Propagate from `root`, seeding its gradient with ones (so a
    /// non-scalar root behaves like the sum of its elements).
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::ones(nodes[root.0].value.shape().to_vec()));

        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|p| nodes[p.0].requires_grad).collect();
            let parent_grads = bw(&grad, &needs)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((parent, g), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else {
                    continue;
                };
                if g.shape() != nodes[parent.0].value.shape() {
                    return Err(Error::dim(
                        node.op,
                        format!(
                            "backward produced {:?} for parent of shape {:?}",
                            g.shape(),
                            nodes[parent.0].value.shape()
                        ),
                    ));
                }
                if self.check_finite {
                    if let Some(i) = g.first_non_finite() {
                        return Err(Error::Numeric {
                            op: format!("{} (backward)", node.op),
                            detail: format!("gradient element {i} is non-finite"),
                        });
                    }
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaf values after a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
