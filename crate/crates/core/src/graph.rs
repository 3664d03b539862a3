//! A hash-consed numeric DAG for evaluating and differentiating expressions
//! too large to expand symbolically (four-dimensional curvature, chiefly).
//!
//! Nodes are shared aggressively: construction interns structurally equal
//! nodes, and the partial- and total-derivative transforms are memoized per
//! (node, direction), so repeated differentiation preserves sharing instead
//! of exploding. Evaluation is iterative and memoized per point.

use crate::atom::Atom;
use crate::expr::Expr;
use crate::model::ModelSpec;
use crate::rational::{coeff_to_f64, Coeff, Exp};
use num_traits::{One, Zero};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum GraphError {
    #[error("negative base under a fractional power")]
    Domain,
    #[error("no value for atom `{0}`")]
    Unassigned(String),
    #[error("derivative order limit {0} exceeded")]
    OrderLimit(usize),
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
enum Op {
    Const(f64),
    Leaf(Atom),
    Add(Vec<Node>),
    Mul(Vec<Node>),
    Pow(Node, Exp),
}

#[derive(Debug)]
pub struct Inner {
    id: u64,
    op: Op,
}

/// A shared handle into the DAG; clones are cheap.
#[derive(Clone, Debug)]
pub struct Node(Arc<Inner>);

impl Node {
    pub fn id(&self) -> u64 {
        self.0.id
    }

    fn as_const(&self) -> Option<f64> {
        match &self.0.op {
            Op::Const(c) => Some(*c),
            _ => None,
        }
    }
}

/// Structural key used to intern nodes.
#[derive(Hash, PartialEq, Eq)]
enum Key {
    Const(u64),
    Leaf(Atom),
    Add(Vec<u64>),
    Mul(Vec<u64>),
    Pow(u64, Exp),
}

/// Builder and transform context. Holds the interning table and the
/// derivative memos; nodes stay valid after the context is dropped.
pub struct Graph {
    intern: HashMap<Key, Node>,
    partial_memo: HashMap<(u64, Atom), Node>,
    total_memo: HashMap<(u64, usize), Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            intern: HashMap::new(),
            partial_memo: HashMap::new(),
            total_memo: HashMap::new(),
        }
    }

    fn mk(&mut self, key: Key, op: impl FnOnce() -> Op) -> Node {
        if let Some(n) = self.intern.get(&key) {
            return n.clone();
        }
        let n = Node(Arc::new(Inner { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), op: op() }));
        self.intern.insert(key, n.clone());
        n
    }

    pub fn constant(&mut self, c: f64) -> Node {
        self.mk(Key::Const(c.to_bits()), || Op::Const(c))
    }

    pub fn zero(&mut self) -> Node {
        self.constant(0.0)
    }

    pub fn one(&mut self) -> Node {
        self.constant(1.0)
    }

    pub fn leaf(&mut self, a: &Atom) -> Node {
        self.mk(Key::Leaf(a.clone()), || Op::Leaf(a.clone()))
    }

    /// n-ary sum with constant folding and flattening of nested sums.
    pub fn add(&mut self, xs: Vec<Node>) -> Node {
        let mut flat: Vec<Node> = Vec::new();
        let mut c = 0.0f64;
        for x in xs {
            match &x.0.op {
                Op::Const(v) => c += v,
                Op::Add(inner) => {
                    for y in inner {
                        match y.as_const() {
                            Some(v) => c += v,
                            None => flat.push(y.clone()),
                        }
                    }
                }
                _ => flat.push(x),
            }
        }
        if c != 0.0 {
            flat.push(self.constant(c));
        }
        match flat.len() {
            0 => self.zero(),
            1 => flat.pop().expect("one element"),
            _ => {
                flat.sort_by_key(|n| n.id());
                let key = Key::Add(flat.iter().map(|n| n.id()).collect());
                self.mk(key, || Op::Add(flat))
            }
        }
    }

    /// n-ary product with constant folding, flattening, and zero
    /// annihilation.
    pub fn mul(&mut self, xs: Vec<Node>) -> Node {
        let mut flat: Vec<Node> = Vec::new();
        let mut c = 1.0f64;
        for x in xs {
            match &x.0.op {
                Op::Const(v) => c *= v,
                Op::Mul(inner) => {
                    for y in inner {
                        match y.as_const() {
                            Some(v) => c *= v,
                            None => flat.push(y.clone()),
                        }
                    }
                }
                _ => flat.push(x),
            }
        }
        if c == 0.0 {
            return self.zero();
        }
        if c != 1.0 {
            flat.push(self.constant(c));
        }
        match flat.len() {
            0 => self.one(),
            1 => flat.pop().expect("one element"),
            _ => {
                flat.sort_by_key(|n| n.id());
                let key = Key::Mul(flat.iter().map(|n| n.id()).collect());
                self.mk(key, || Op::Mul(flat))
            }
        }
    }

    pub fn pow(&mut self, b: Node, e: Exp) -> Node {
        if e.is_zero() {
            return self.one();
        }
        if e.is_one() {
            return b;
        }
        if let Some(c) = b.as_const() {
            if e.is_integer() {
                return self.constant(c.powi(*e.numer() as i32));
            }
            if c >= 0.0 {
                return self.constant(c.powf(*e.numer() as f64 / *e.denom() as f64));
            }
        }
        if let Op::Pow(inner, e0) = &b.0.op {
            let (inner, e0) = (inner.clone(), *e0);
            return self.pow(inner, e0 * e);
        }
        let key = Key::Pow(b.id(), e);
        self.mk(key, || Op::Pow(b, e))
    }

    fn coeff_node(&mut self, c: &Coeff) -> Node {
        self.constant(coeff_to_f64(c))
    }

    /// Lower a canonical expression, sharing equal subtrees.
    pub fn from_expr(&mut self, e: &Expr) -> Node {
        let mut terms = Vec::with_capacity(e.terms().len());
        for t in e.terms() {
            let mut factors = Vec::new();
            if !t.coeff.is_one() {
                factors.push(self.coeff_node(&t.coeff));
            }
            for (a, ex) in t.mono.pairs() {
                let base = match a {
                    Atom::SumPow(b) => self.from_expr(b.expr()),
                    other => self.leaf(other),
                };
                let p = self.pow(base, *ex);
                factors.push(p);
            }
            if factors.is_empty() {
                factors.push(self.one());
            }
            let m = self.mul(factors);
            terms.push(m);
        }
        self.add(terms)
    }

    /// Structural partial derivative with respect to one atom, memoized.
    pub fn partial(&mut self, n: &Node, a: &Atom) -> Node {
        if let Some(d) = self.partial_memo.get(&(n.id(), a.clone())) {
            return d.clone();
        }
        let d = match &n.0.op {
            Op::Const(_) => self.zero(),
            Op::Leaf(l) => {
                if l == a {
                    self.one()
                } else {
                    self.zero()
                }
            }
            Op::Add(xs) => {
                let xs = xs.clone();
                let parts = xs.iter().map(|x| self.partial(x, a)).collect();
                self.add(parts)
            }
            Op::Mul(xs) => {
                let xs = xs.clone();
                let mut terms = Vec::new();
                for (k, x) in xs.iter().enumerate() {
                    let dx = self.partial(x, a);
                    if dx.as_const() == Some(0.0) {
                        continue;
                    }
                    let mut fs: Vec<Node> =
                        xs.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, y)| y.clone()).collect();
                    fs.push(dx);
                    let t = self.mul(fs);
                    terms.push(t);
                }
                self.add(terms)
            }
            Op::Pow(b, e) => {
                let (b, e) = (b.clone(), *e);
                let db = self.partial(&b, a);
                if db.as_const() == Some(0.0) {
                    self.zero()
                } else {
                    let c = self.constant(*e.numer() as f64 / *e.denom() as f64);
                    let p = self.pow(b, e - Exp::one());
                    self.mul(vec![c, p, db])
                }
            }
        };
        self.partial_memo.insert((n.id(), a.clone()), d.clone());
        d
    }

    /// Structural total derivative d_i: jets promote, base coordinates
    /// differentiate to deltas, symbols die; memoized per direction.
    pub fn total_derivative(
        &mut self,
        n: &Node,
        model: &ModelSpec,
        i: usize,
    ) -> Result<Node, GraphError> {
        if let Some(d) = self.total_memo.get(&(n.id(), i)) {
            return Ok(d.clone());
        }
        let d = match &n.0.op {
            Op::Const(_) => self.zero(),
            Op::Leaf(a) => match a {
                Atom::Base(j) => {
                    if *j as usize == i {
                        self.one()
                    } else {
                        self.zero()
                    }
                }
                Atom::Sym(_) => self.zero(),
                Atom::Jet(jv) => {
                    if jv.order() + 1 > model.order_limit() {
                        return Err(GraphError::OrderLimit(model.order_limit()));
                    }
                    self.leaf(&Atom::Jet(jv.promoted(i)))
                }
                Atom::SumPow(_) => unreachable!("power bodies are lowered to Pow nodes"),
            },
            Op::Add(xs) => {
                let xs = xs.clone();
                let parts: Result<Vec<Node>, GraphError> =
                    xs.iter().map(|x| self.total_derivative(x, model, i)).collect();
                self.add(parts?)
            }
            Op::Mul(xs) => {
                let xs = xs.clone();
                let mut terms = Vec::new();
                for (k, x) in xs.iter().enumerate() {
                    let dx = self.total_derivative(x, model, i)?;
                    if dx.as_const() == Some(0.0) {
                        continue;
                    }
                    let mut fs: Vec<Node> =
                        xs.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, y)| y.clone()).collect();
                    fs.push(dx);
                    let t = self.mul(fs);
                    terms.push(t);
                }
                self.add(terms)
            }
            Op::Pow(b, e) => {
                let (b, e) = (b.clone(), *e);
                let db = self.total_derivative(&b, model, i)?;
                if db.as_const() == Some(0.0) {
                    self.zero()
                } else {
                    let c = self.constant(*e.numer() as f64 / *e.denom() as f64);
                    let p = self.pow(b, e - Exp::one());
                    self.mul(vec![c, p, db])
                }
            }
        };
        self.total_memo.insert((n.id(), i), d.clone());
        Ok(d)
    }
}

/// One evaluation point: atom values plus the per-point node memo.
pub struct Evaluation<'v> {
    values: &'v HashMap<Atom, f64>,
    memo: HashMap<u64, f64>,
}

impl<'v> Evaluation<'v> {
    pub fn new(values: &'v HashMap<Atom, f64>) -> Self {
        Evaluation { values, memo: HashMap::new() }
    }

    /// Iterative memoized evaluation (safe for deep DAGs).
    pub fn eval(&mut self, root: &Node) -> Result<f64, GraphError> {
        let mut stack: Vec<Node> = vec![root.clone()];
        while let Some(n) = stack.last().cloned() {
            if self.memo.contains_key(&n.id()) {
                stack.pop();
                continue;
            }
            let children: &[Node] = match &n.0.op {
                Op::Const(_) | Op::Leaf(_) => &[],
                Op::Add(xs) | Op::Mul(xs) => xs,
                Op::Pow(b, _) => std::slice::from_ref(b),
            };
            let mut ready = true;
            for c in children {
                if !self.memo.contains_key(&c.id()) {
                    ready = false;
                    stack.push(c.clone());
                }
            }
            if !ready {
                continue;
            }
            let v = match &n.0.op {
                Op::Const(c) => *c,
                Op::Leaf(a) => *self
                    .values
                    .get(a)
                    .ok_or_else(|| GraphError::Unassigned(a.to_string()))?,
                Op::Add(xs) => xs.iter().map(|x| self.memo[&x.id()]).sum(),
                Op::Mul(xs) => xs.iter().map(|x| self.memo[&x.id()]).product(),
                Op::Pow(b, e) => {
                    let base = self.memo[&b.id()];
                    if e.is_integer() {
                        if base == 0.0 && *e < Exp::zero() {
                            return Err(GraphError::Domain);
                        }
                        base.powi(*e.numer() as i32)
                    } else {
                        if base < 0.0 || (base == 0.0 && *e < Exp::zero()) {
                            return Err(GraphError::Domain);
                        }
                        base.powf(*e.numer() as f64 / *e.denom() as f64)
                    }
                }
            };
            self.memo.insert(n.id(), v);
            stack.pop();
        }
        Ok(self.memo[&root.id()])
    }
}
