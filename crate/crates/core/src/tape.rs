//! Scalar reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every arithmetic operation on tracked [`Var`]s as a node
//! with at most two parents. Multi-input, multi-output operations whose
//! adjoint is known in closed form (the QP solution map, for instance) are
//! recorded as *blocks* through [`Tape::custom`]: the block's outputs are
//! contiguous leaf nodes, and during the reverse sweep the block's backward
//! closure maps output adjoints to input adjoints.
//!
//! Constants (created with [`Real::cst`]) carry no tape reference and never
//! allocate nodes.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::Real;

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Vector-Jacobian product of a block: output adjoints to input adjoints.
pub type Backward = Box<dyn Fn(&[f64]) -> Vec<f64>>;

struct Block {
    start: u32,
    len: u32,
    inputs: Vec<u32>,
    backward: Backward,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    blocks: RefCell<Vec<Block>>,
}

/// Adjoints of every node on a tape, as returned by [`Tape::gradient`].
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    pub fn of(&self, v: Var<'_>) -> f64 {
        match v.tape {
            Some(_) => self.0[v.idx as usize],
            None => 0.0,
        }
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.tape.is_some() {
            write!(f, "Var#{}({})", self.idx, self.val)
        } else {
            write!(f, "Const({})", self.val)
        }
    }
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

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NO_PARENT as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// New independent (leaf) variable.
    pub fn var(&self, val: f64) -> Var<'_> {
        let idx = self.push(Node { parents: [NO_PARENT; 2], partials: [0.0; 2] });
        Var { tape: Some(self), idx, val }
    }

    /// Records a block operation. `outputs` are the forward values; `backward`
    /// receives the output adjoints and must return one adjoint per input.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        outputs: &[f64],
        backward: impl Fn(&[f64]) -> Vec<f64> + 'static,
    ) -> Vec<Var<'t>> {
        let start = self.len() as u32;
        let outs: Vec<Var<'t>> = outputs.iter().map(|&v| self.var(v)).collect();
        let inputs = inputs
            .iter()
            .map(|v| if v.tape.is_some() { v.idx } else { NO_PARENT })
            .collect();
        self.blocks.borrow_mut().push(Block {
            start,
            len: outputs.len() as u32,
            inputs,
            backward: Box::new(backward),
        });
        outs
    }

    /// Reverse sweep seeded with `(output, adjoint)` pairs.
    pub fn gradient(&self, seeds: &[(Var<'_>, f64)]) -> Adjoints {
        let nodes = self.nodes.borrow();
        let blocks = self.blocks.borrow();
        let mut adj = vec![0.0; nodes.len()];
        for &(v, s) in seeds {
            if v.tape.is_some() {
                adj[v.idx as usize] += s;
            }
        }
        let mut next_block = blocks.len();
        for idx in (0..nodes.len()).rev() {
            let node = nodes[idx];
            let a = adj[idx];
            if a != 0.0 {
                for k in 0..2 {
                    let p = node.parents[k];
                    if p != NO_PARENT {
                        adj[p as usize] += a * node.partials[k];
                    }
                }
            }
            while next_block > 0 && blocks[next_block - 1].start as usize == idx {
                let block = &blocks[next_block - 1];
                let s = block.start as usize;
                let out_adj = &adj[s..s + block.len as usize];
                if out_adj.iter().any(|&x| x != 0.0) {
                    let in_adj = (block.backward)(out_adj);
                    debug_assert_eq!(in_adj.len(), block.inputs.len());
                    for (&i, g) in block.inputs.iter().zip(in_adj) {
                        if i != NO_PARENT {
                            adj[i as usize] += g;
                        }
                    }
                }
                next_block -= 1;
            }
        }
        Adjoints(adj)
    }
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Var { tape: None, idx: NO_PARENT, val }
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.is_some()
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => {
                let idx = t.push(Node { parents: [self.idx, NO_PARENT], partials: [d, 0.0] });
                Var { tape: Some(t), idx, val }
            }
        }
    }

    fn binary(a: Self, b: Self, val: f64, da: f64, db: f64) -> Self {
        match (a.tape, b.tape) {
            (None, None) => Var::constant(val),
            (Some(t), None) => {
                let idx = t.push(Node { parents: [a.idx, NO_PARENT], partials: [da, 0.0] });
                Var { tape: Some(t), idx, val }
            }
            (None, Some(t)) => {
                let idx = t.push(Node { parents: [b.idx, NO_PARENT], partials: [db, 0.0] });
                Var { tape: Some(t), idx, val }
            }
            (Some(t), Some(_)) => {
                let idx = t.push(Node { parents: [a.idx, b.idx], partials: [da, db] });
                Var { tape: Some(t), idx, val }
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Var::binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        Var::binary(self, rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Real for Var<'t> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }

    fn value(self) -> f64 {
        self.val
    }

    fn exp(self) -> Self {
        let e = libm::exp(self.val);
        self.unary(e, e)
    }

    fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(libm::fabs(self.val), d)
    }

    fn tanh(self) -> Self {
        let t = libm::tanh(self.val);
        self.unary(t, 1.0 - t * t)
    }

    fn scale(self, c: f64) -> Self {
        self.unary(self.val * c, c)
    }

    fn block(inputs: &[Self], outputs: &[f64], backward: Box<dyn Fn(&[f64]) -> Vec<f64>>) -> Vec<Self> {
        match inputs.iter().find_map(|v| v.tape) {
            Some(t) => t.custom(inputs, outputs, backward),
            None => outputs.iter().map(|&v| Var::constant(v)).collect(),
        }
    }
}
