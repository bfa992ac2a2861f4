//! Scalar reverse-mode tape for small loss heads.
//!
//! Network bodies have hand-written backward passes; the tape differentiates
//! the per-sample heads built on top of their outputs (cross-entropies,
//! logit pairing) and provides [`stop_gradient`].

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone)]
struct Node {
    value: f64,
    /// (parent index, local partial derivative)
    parents: Vec<(usize, f64)>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: f64, parents: Vec<(usize, f64)>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents });
        Var {
            tape: self,
            index: nodes.len() - 1,
        }
    }

    /// d(output)/d(node) for every node on the tape.
    pub fn gradients(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            for &(p, local) in &nodes[i].parents {
                adjoint[p] += a * local;
            }
        }
        Gradients(adjoint)
    }
}

#[derive(Debug, Clone)]
pub struct Gradients(Vec<f64>);

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.0.get(v.index).copied().unwrap_or(0.0)
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.tape.nodes.borrow()[self.index].value
    }

    fn unary(self, value: f64, local: f64) -> Var<'t> {
        self.tape.push(value, vec![(self.index, local)])
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value();
        self.unary(v * v, 2.0 * v)
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value().exp();
        self.unary(e, e)
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.value();
        self.unary(v.ln(), 1.0 / v)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let s = super::loss::sigmoid(self.value());
        self.unary(s, s * (1.0 - s))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(c * self.value(), c)
    }

    /// Same value, no gradient flows back to `self`.
    pub fn stop_gradient(self) -> Var<'t> {
        self.tape.push(self.value(), Vec::new())
    }

    pub fn sum(vars: &[Var<'t>]) -> Var<'t> {
        let tape = vars[0].tape;
        let value = vars.iter().map(Var::value).sum();
        tape.push(value, vars.iter().map(|v| (v.index, 1.0)).collect())
    }

    pub fn log_sum_exp(vars: &[Var<'t>]) -> Var<'t> {
        let tape = vars[0].tape;
        let values: Vec<f64> = vars.iter().map(Var::value).collect();
        let probs = super::loss::softmax(&values);
        let value = super::loss::log_sum_exp(&values);
        tape.push(
            value,
            vars.iter().zip(probs).map(|(v, p)| (v.index, p)).collect(),
        )
    }
}

pub fn stop_gradient(v: Var<'_>) -> Var<'_> {
    v.stop_gradient()
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(
            self.value() + rhs.value(),
            vec![(self.index, 1.0), (rhs.index, 1.0)],
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(
            self.value() - rhs.value(),
            vec![(self.index, 1.0), (rhs.index, -1.0)],
        )
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(a * b, vec![(self.index, b), (rhs.index, a)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
