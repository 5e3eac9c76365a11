//! Reverse-mode tape. One tape per evaluation; [`Var`]s are cheap copies
//! carrying a node index and the primal value. Constants never touch the
//! tape, so lifting a large parameter vector records only what the
//! computation actually uses.

use super::Scalar;
use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

#[derive(Default, Debug)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    v: f64,
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

    /// New leaf variable.
    pub fn var(&self, v: f64) -> Var<'_> {
        Var {
            tape: Some(self),
            idx: self.push(NONE, 0.0, NONE, 0.0),
            v,
        }
    }

    fn push(&self, p0: u32, d0: f64, p1: u32, d1: f64) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: [p0, p1],
            partials: [d0, d1],
        });
        (nodes.len() - 1) as u32
    }

    /// Adjoints of every node given a unit seed on `out`.
    pub fn adjoints(&self, out: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        if out.idx == NONE {
            return adj; // constant output: all derivatives vanish
        }
        adj[out.idx as usize] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = &nodes[i];
            for k in 0..2 {
                if n.parents[k] != NONE {
                    adj[n.parents[k] as usize] += a * n.partials[k];
                }
            }
        }
        adj
    }

    /// Gradient of `out` with respect to the given leaves.
    pub fn gradient(&self, out: Var<'_>, wrt: &[Var<'_>]) -> Vec<f64> {
        let adj = self.adjoints(out);
        wrt.iter()
            .map(|v| if v.idx == NONE { 0.0 } else { adj[v.idx as usize] })
            .collect()
    }
}

impl<'t> Var<'t> {
    fn tape_of(a: &Self, b: &Self) -> Option<&'t Tape> {
        a.tape.or(b.tape)
    }

    fn record1(tape: Option<&'t Tape>, v: f64, p: u32, d: f64) -> Self {
        match tape {
            Some(t) if p != NONE => Var {
                tape: Some(t),
                idx: t.push(p, d, NONE, 0.0),
                v,
            },
            _ => Var { tape, idx: NONE, v },
        }
    }

    fn record2(a: &Self, b: &Self, v: f64, da: f64, db: f64) -> Self {
        let tape = Self::tape_of(a, b);
        match tape {
            Some(t) if a.idx != NONE || b.idx != NONE => Var {
                tape: Some(t),
                idx: t.push(a.idx, da, b.idx, db),
                v,
            },
            _ => Var { tape, idx: NONE, v },
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::record2(&self, &rhs, self.v + rhs.v, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::record2(&self, &rhs, self.v - rhs.v, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::record2(&self, &rhs, self.v * rhs.v, rhs.v, self.v)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.v / rhs.v;
        Self::record2(&self, &rhs, q, 1.0 / rhs.v, -q / rhs.v)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::record1(self.tape, -self.v, self.idx, -1.0)
    }
}

impl<'t> Scalar for Var<'t> {
    fn from_f64(v: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            v,
        }
    }

    fn value(&self) -> f64 {
        self.v
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        Self::record1(self.tape, e, self.idx, e)
    }

    fn ln(self) -> Self {
        Self::record1(self.tape, self.v.ln(), self.idx, 1.0 / self.v)
    }

    fn ln_1p(self) -> Self {
        Self::record1(self.tape, self.v.ln_1p(), self.idx, 1.0 / (1.0 + self.v))
    }

    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        Self::record1(self.tape, r, self.idx, 0.5 / r)
    }

    fn max0(self) -> Self {
        if self.v > 0.0 {
            self
        } else {
            Self::from_f64(0.0)
        }
    }
}
