use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded op. Receives the output cotangent and
/// a mask of which parents need a cotangent; returns one entry per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Append-only record of a forward pass. Node order is a topological order,
/// so the reverse sweep is a single backwards scan.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input. Gradients are reported only for leaves with `requires_grad`.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf".into() });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Ok(Var(nodes.len() - 1))
    }

    pub fn constant(&self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.into() });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.0].requires_grad);
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.0];
        if out.value.len() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                detail: format!("output must be scalar, got shape {:?}", out.value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out.value.shape(), 1.0));
        let mut leaves = HashMap::new();
        for i in (0..=output.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let Some(backward) = &node.backward else {
                leaves.insert(i, g);
                continue;
            };
            let need: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &need);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), needed) in node.parents.iter().zip(parent_grads).zip(need) {
                let Some(pg) = pg else { continue };
                if !needed {
                    continue;
                }
                if !pg.is_finite() {
                    return Err(Error::NonFinite {
                        op: format!("{} (backward)", node.op),
                    });
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "cotangent shape of {}", node.op);
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { by_leaf: leaves })
    }
}

/// Cotangents of the trainable leaves after a reverse sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<usize, Tensor>,
}

impl Gradients {
    /// `None` when the leaf does not require grad or did not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_leaf.get(&v.0)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.by_leaf.remove(&v.0)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}
