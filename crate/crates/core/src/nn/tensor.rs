use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Mat, NodeId, Tape};
use crate::math::Fnv64;
use crate::{Error, Result};

/// A trainable parameter: shape, values and an optional gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(alloc::format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, values: vec![0.0; n], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::Shape("gradient length".into()));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major matrix view: rank-1 tensors become a single row.
    pub fn as_mat(&self) -> Mat {
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (1, self.values.len()),
        };
        Mat::from_vec(rows, cols, self.values.clone())
    }

    fn accumulate(&mut self, delta: &[f64]) {
        match &mut self.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => self.grad = Some(delta.to_vec()),
        }
    }
}

/// Anything that owns an ordered list of parameters.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |t| t.grad = None);
    }

    /// Every parameter value in visit order.
    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |t| out.extend_from_slice(&t.values));
        out
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        self.visit(&mut |t| out.push(t.shape.clone()));
        out
    }

    /// Overwrites every parameter from a flat list produced by
    /// [`Module::flat_values`] on an identically shaped module.
    fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(alloc::format!(
                "expected {} parameter values, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut offset = 0;
        self.visit_mut(&mut |t| {
            let n = t.values.len();
            t.values.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    /// Stable 64-bit digest of shapes and exact parameter bits.
    fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        self.visit(&mut |t| {
            h.write_u64(t.shape.len() as u64);
            for &d in &t.shape {
                h.write_u64(d as u64);
            }
            for v in &t.values {
                h.write_u64(v.to_bits());
            }
        });
        h.finish()
    }
}

/// Tape nodes for a module's parameters, in visit order.
#[derive(Debug, Clone)]
pub struct Binding {
    nodes: Vec<NodeId>,
}

impl Binding {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }
}

pub fn bind<M: Module + ?Sized>(module: &M, tape: &mut Tape) -> Binding {
    let mut nodes = Vec::new();
    module.visit(&mut |t| nodes.push(tape.leaf(t.as_mat())));
    Binding { nodes }
}

/// Adds the adjoints of a binding into the module's gradient buffers.
/// Parameters that did not influence the loss receive zeros.
pub fn absorb_grads<M: Module + ?Sized>(module: &mut M, binding: &Binding, grads: &Gradients) {
    let mut i = 0;
    module.visit_mut(&mut |t| {
        match grads.wrt(binding.nodes[i]) {
            Some(g) => t.accumulate(&g.data),
            None => t.accumulate(&vec![0.0; t.len()]),
        }
        i += 1;
    });
}

impl Module for Tensor {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(self)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(self)
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        for m in self {
            m.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for m in self {
            m.visit_mut(f);
        }
    }
}
