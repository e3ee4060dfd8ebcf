//! Reverse-mode automatic differentiation over dynamically shaped `f64`
//! arrays.
//!
//! A [`Tape`] records every operation as a node holding the forward value and
//! a backward closure; [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients. Gradients of intermediate nodes are dropped as soon
//! as they have been propagated; leaf gradients are retained and can be read
//! from the returned [`Gradients`].

mod ops;

pub mod check;

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::ArrayD;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<ArrayD<f64>>>;

struct Node {
    value: Rc<ArrayD<f64>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Records a computation graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    /// Registers an input node. Leaves keep their gradient after `backward`.
    pub fn leaf(&self, value: ArrayD<f64>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), parents: Vec::new(), backward: None });
        Var(nodes.len() - 1)
    }

    pub(crate) fn push(
        &self,
        value: ArrayD<f64>,
        parents: Vec<usize>,
        backward: BackwardFn,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), parents, backward: Some(backward) });
        Var(nodes.len() - 1)
    }

    /// The forward value of `var`.
    pub fn value(&self, var: Var) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.nodes.borrow()[var.0].value)
    }

    /// The forward value of a 0-d (scalar) node.
    pub fn scalar(&self, var: Var) -> f64 {
        let v = self.value(var);
        debug_assert_eq!(v.len(), 1, "scalar() on a non-scalar node");
        *v.first().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Runs reverse accumulation from `root` (seeded with ones) and returns
    /// the retained leaf gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::ones(nodes[root.0].value.raw_dim()));
        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            if node.backward.is_none() {
                continue; // leaf: keep its accumulated gradient
            }
            let Some(grad) = grads[id].take() else { continue };
            let backward = node.backward.as_ref().unwrap();
            let parent_grads = backward(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                match &mut grads[pid] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `var`. `None` when the
    /// root does not depend on `var` (or `var` is not a leaf).
    pub fn get(&self, var: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<ArrayD<f64>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}
