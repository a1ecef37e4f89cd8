//! Reverse-mode differentiation over the real parameterization of complex
//! tensors.
//!
//! Every complex value is treated as two independent real planes. The
//! gradient attached to a node is itself a [`CTensor`] whose real plane
//! holds ∂E/∂(real part) and whose imaginary plane holds ∂E/∂(imag part).
//!
//! Nodes are appended to a [`Graph`] in execution order, so replaying the
//! node list backwards is a valid topological order and visits every node
//! once.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, CoordError, GradCheckReport, Part};
pub use ops::{add, cmul, concat_channels, herm_dot, real_part, scale, sub, sum_all};

use crate::ctensor::CTensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Adjoint of a recorded operation.
///
/// `grad` has the shape of `output`; the result holds one entry per input,
/// `None` meaning "no contribution".
pub trait Backward {
    fn backward(&self, grad: &CTensor, inputs: &[&CTensor], output: &CTensor) -> Vec<Option<CTensor>>;
}

struct Node {
    value: CTensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
    leaf: bool,
    grad: Option<CTensor>,
}

/// A tape of executed operations.
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
    backward_done: bool,
    kink_margin: f64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true, backward_done: false, kink_margin: f64::INFINITY }
    }

    /// A graph that never stores adjoints; leaves never require gradients.
    pub fn no_grad() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn leaf(&mut self, value: CTensor, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.recording;
        self.push(Node { value, inputs: Vec::new(), op: None, requires_grad, leaf: true, grad: None })
    }

    pub fn constant(&mut self, value: CTensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Records `output = op(inputs)`.
    pub fn apply(&mut self, inputs: &[Var], output: CTensor, op: impl Backward + 'static) -> Var {
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn Backward>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.push(Node { value: output, inputs: inputs.to_vec(), op, requires_grad, leaf: false, grad: None })
    }

    pub fn value(&self, v: Var) -> &CTensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&CTensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records the distance of some input from a non-differentiable switch.
    pub fn note_kink_margin(&mut self, margin: f64) {
        if margin < self.kink_margin {
            self.kink_margin = margin;
        }
    }

    /// Smallest distance to a switching boundary seen so far (∞ if none).
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Reads a real scalar loss value.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.numel() != 1 {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        if t.im()[0] != 0.0 {
            return Err(Error::NonRealLoss(t.im()[0]));
        }
        Ok(t.re()[0])
    }

    /// Back-propagates from a real scalar `loss`.
    ///
    /// Afterwards every leaf created with `requires_grad` holds a gradient,
    /// all-zero when the loss does not depend on it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.scalar(loss)?;
        self.backward_done = true;

        let mut grads: Vec<Option<CTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        grads[loss.0] = Some(CTensor::full(&seed_shape, num_complex::Complex64::new(1.0, 0.0)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if node.leaf {
                continue;
            }
            let Some(op) = node.op.as_ref() else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&CTensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let contributions = op.backward(&g, &inputs, &node.value);
            debug_assert_eq!(contributions.len(), node.inputs.len());
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                accumulate(&mut grads[input.0], contrib);
            }
        }

        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if node.leaf && node.requires_grad {
                let g = grads[idx].take().unwrap_or_else(|| CTensor::zeros(node.value.shape()));
                node.grad = Some(g);
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<CTensor>, contrib: CTensor) {
    match slot {
        None => *slot = Some(contrib),
        Some(acc) => {
            debug_assert_eq!(acc.shape(), contrib.shape());
            let (ar, ai) = acc.planes_mut();
            for (a, c) in ar.iter_mut().zip(contrib.re()) {
                *a += c;
            }
            for (a, c) in ai.iter_mut().zip(contrib.im()) {
                *a += c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn c1(re: f64, im: f64) -> CTensor {
        CTensor::from_complex(vec![1], &[Complex64::new(re, im)]).unwrap()
    }

    #[test]
    fn quadratic_gradient() {
        // E = herm_dot(w, w) / 2 at w = 3 + 4i.
        let mut g = Graph::new();
        let w = g.leaf(c1(3.0, 4.0), true);
        let d = herm_dot(&mut g, w, w).unwrap();
        let e = scale(&mut g, d, 0.5);
        assert_eq!(g.scalar(e).unwrap(), 12.5);
        g.backward(e).unwrap();
        let grad = g.grad(w).unwrap();
        assert_eq!((grad.re()[0], grad.im()[0]), (3.0, 4.0));
    }

    #[test]
    fn independent_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(c1(1.0, 2.0), true);
        let unused = g.leaf(CTensor::full(&[2, 2], Complex64::new(5.0, 5.0)), true);
        let d = herm_dot(&mut g, w, w).unwrap();
        let e = real_part(&mut g, d);
        g.backward(e).unwrap();
        assert_eq!(g.grad(unused).unwrap(), &CTensor::zeros(&[2, 2]));
    }

    #[test]
    fn chain_through_cmul() {
        // E = Re(i·w) = −w_I.
        let mut g = Graph::new();
        let w = g.leaf(c1(1.0, 1.0), true);
        let i = g.constant(c1(0.0, 1.0));
        let p = cmul(&mut g, i, w).unwrap();
        let e = real_part(&mut g, p);
        assert_eq!(g.scalar(e).unwrap(), -1.0);
        g.backward(e).unwrap();
        let grad = g.grad(w).unwrap();
        assert_eq!((grad.re()[0], grad.im()[0]), (0.0, -1.0));
    }

    #[test]
    fn rejects_bad_losses_and_double_backward() {
        let mut g = Graph::new();
        let w = g.leaf(CTensor::full(&[2], Complex64::new(1.0, 0.0)), true);
        assert!(matches!(g.backward(w), Err(Error::NonScalarLoss(_))));

        let z = g.leaf(c1(1.0, 1.0), true);
        assert!(matches!(g.backward(z), Err(Error::NonRealLoss(_))));

        let d = herm_dot(&mut g, z, z).unwrap();
        g.backward(d).unwrap();
        assert!(matches!(g.backward(d), Err(Error::BackwardTwice)));
    }

    #[test]
    fn backward_is_linear_over_sums() {
        let a0 = CTensor::from_complex(vec![3], &[Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5), Complex64::new(-0.7, 0.1)]).unwrap();
        let b0 = CTensor::from_complex(vec![3], &[Complex64::new(1.1, 0.4), Complex64::new(-0.2, 0.9), Complex64::new(0.6, -0.6)]).unwrap();

        let term = |which: u8| {
            let mut g = Graph::new();
            let a = g.leaf(a0.clone(), true);
            let b = g.leaf(b0.clone(), true);
            let t1 = { let p = cmul(&mut g, a, b).unwrap(); let s = sum_all(&mut g, p); real_part(&mut g, s) };
            let t2 = { let d = herm_dot(&mut g, a, a).unwrap(); real_part(&mut g, d) };
            let e = match which {
                1 => t1,
                2 => t2,
                _ => add(&mut g, t1, t2).unwrap(),
            };
            g.backward(e).unwrap();
            (g.grad(a).unwrap().clone(), g.grad(b).unwrap().clone())
        };
        let (a1, b1) = term(1);
        let (a2, b2) = term(2);
        let (a12, b12) = term(0);
        assert!(a12.max_abs_diff(&a1.add(&a2).unwrap()) <= 1e-12);
        assert!(b12.max_abs_diff(&b1.add(&b2).unwrap()) <= 1e-12);
    }

    #[test]
    fn no_grad_graph_records_nothing() {
        let mut g = Graph::no_grad();
        let w = g.leaf(c1(1.0, 1.0), true);
        assert!(!g.requires_grad(w));
        let d = herm_dot(&mut g, w, w).unwrap();
        assert!(!g.requires_grad(d));
    }
}
