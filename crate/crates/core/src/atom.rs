//! Atoms: the indeterminates of the expression kernel.
//!
//! An atom is a base coordinate `x^i`, a jet coordinate `y^σ_{i1...ik}` of a
//! declared field component (symmetric in the derivative indices, stored as a
//! sorted multiset), a free external symbol, or a rational power of a
//! normalized sum. Distinct atoms are algebraically independent; everything
//! the kernel does reduces to polynomial arithmetic over them.
//!
//! The total order on atoms is fixed and documented: base coordinates, then
//! jet coordinates, then external symbols, then powers of sums. Normal forms
//! and printed output depend on it, so it must never change silently.

use crate::expr::Expr;
use crate::rational::Exp;
use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// Identifier of a declared field (bundle) within a model.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct FieldId(pub u16);

/// Maximum number of base dimensions the packed derivative multiset supports.
pub const MAX_DIM: usize = 8;

/// Sorted multiset of derivative indices, packed one byte of multiplicity per
/// base dimension. Symmetry of repeated total derivatives is built in: the
/// multiset `{0,1}` and `{1,0}` are the same value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct DerivIdx(u64);

impl DerivIdx {
    /// The empty multiset (order-0 jet).
    pub fn none() -> Self {
        DerivIdx(0)
    }

    /// Build from a list of indices in any order.
    ///
    /// Panics if an index is ≥ `MAX_DIM` or a multiplicity overflows a byte.
    pub fn from_indices(idx: &[usize]) -> Self {
        let mut d = DerivIdx(0);
        for &i in idx {
            d = d.plus(i);
        }
        d
    }

    /// Multiset with one more copy of index `i`.
    pub fn plus(self, i: usize) -> Self {
        assert!(i < MAX_DIM, "derivative index {i} out of range");
        let shift = 8 * i as u64;
        let count = (self.0 >> shift) & 0xff;
        assert!(count < 0xff, "derivative multiplicity overflow");
        DerivIdx(self.0 + (1u64 << shift))
    }

    /// Total order of the jet (number of derivative indices).
    pub fn order(self) -> usize {
        (0..MAX_DIM).map(|i| self.count(i)).sum()
    }

    /// Multiplicity of index `i`.
    pub fn count(self, i: usize) -> usize {
        ((self.0 >> (8 * i as u64)) & 0xff) as usize
    }

    /// Indices in ascending order, with multiplicity.
    pub fn indices(self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.order());
        for i in 0..MAX_DIM {
            for _ in 0..self.count(i) {
                out.push(i);
            }
        }
        out
    }

    /// Number of distinct orderings of this multiset: `order! / ∏ count_i!`.
    pub fn orderings(self) -> u64 {
        let mut num: u64 = 1;
        for k in 1..=self.order() as u64 {
            num *= k;
        }
        let mut den: u64 = 1;
        for i in 0..MAX_DIM {
            for k in 1..=self.count(i) as u64 {
                den *= k;
            }
        }
        num / den
    }
}

impl fmt::Display for DerivIdx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, i) in self.indices().iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

/// One jet coordinate: a field component together with a derivative multiset.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct JetVar {
    pub field: FieldId,
    /// Flat component index; the model knows the component shape.
    pub comp: u32,
    pub derivs: DerivIdx,
}

impl JetVar {
    pub fn order(&self) -> usize {
        self.derivs.order()
    }

    /// The jet coordinate one total derivative `d_i` further.
    pub fn promoted(&self, i: usize) -> JetVar {
        JetVar { field: self.field, comp: self.comp, derivs: self.derivs.plus(i) }
    }
}

/// Free external symbol, identified by name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SymName(pub Arc<str>);

impl SymName {
    pub fn new(name: &str) -> Self {
        SymName(Arc::from(name))
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Body of a power-of-sum atom, with cached hash and primitivity flag.
///
/// The atom's identity is the body alone; the rational exponent lives in the
/// monomial slot next to the atom, so powers of the same body merge by
/// exponent addition exactly like ordinary atoms.
#[derive(Clone, Debug)]
pub struct SumBody {
    inner: Arc<BodyInner>,
}

#[derive(Debug)]
struct BodyInner {
    expr: Expr,
    hash: u64,
    /// True when the body is a multi-term sum with coprime integer
    /// coefficients and no common monomial factor; its sign is part of its
    /// identity. Only such bodies may carry arbitrary negative exponents; all
    /// others are kept at proper fractions in (0,1) so that every value has
    /// one representation per signed base.
    unit_primitive: bool,
}

impl SumBody {
    /// Crate-internal constructor; `unit_primitive` is computed by the
    /// normalization code, which owns content/sign extraction.
    pub(crate) fn new(expr: Expr, unit_primitive: bool) -> Self {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        expr.hash(&mut h);
        SumBody {
            inner: Arc::new(BodyInner { expr, hash: h.finish(), unit_primitive }),
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.inner.expr
    }

    pub(crate) fn unit_primitive(&self) -> bool {
        self.inner.unit_primitive
    }
}

impl PartialEq for SumBody {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.hash == other.inner.hash && self.inner.expr == other.inner.expr)
    }
}
impl Eq for SumBody {}

impl PartialOrd for SumBody {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SumBody {
    fn cmp(&self, other: &Self) -> Ordering {
        if Arc::ptr_eq(&self.inner, &other.inner) {
            return Ordering::Equal;
        }
        self.inner.expr.cmp(&other.inner.expr)
    }
}

impl Hash for SumBody {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.inner.hash);
    }
}

/// An indeterminate of the expression kernel.
///
/// Variant order defines the atom order: base coordinates < jet coordinates <
/// external symbols < powers of sums.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Atom {
    /// Base coordinate `x^i`.
    Base(u8),
    /// Jet coordinate of a declared field component.
    Jet(JetVar),
    /// Free external symbol (scales, parameters, the homotopy variable).
    Sym(SymName),
    /// Rational power of a normalized sum; the exponent is stored in the
    /// monomial, not here.
    SumPow(SumBody),
}

impl Atom {
    pub fn jet(field: FieldId, comp: u32, derivs: DerivIdx) -> Self {
        Atom::Jet(JetVar { field, comp, derivs })
    }

    pub fn sym(name: &str) -> Self {
        Atom::Sym(SymName::new(name))
    }

    pub fn is_sum_pow(&self) -> bool {
        matches!(self, Atom::SumPow(_))
    }
}

impl fmt::Display for Atom {
    /// Model-less rendering for diagnostics; pretty printing with field names
    /// is the renderer's job.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Base(i) => write!(f, "x[{i}]"),
            Atom::Jet(j) => {
                write!(f, "F{}c{}", j.field.0, j.comp)?;
                if j.derivs.order() > 0 {
                    write!(f, "d[{}]", j.derivs)?;
                }
                Ok(())
            }
            Atom::Sym(s) => write!(f, "{}", s.as_str()),
            Atom::SumPow(b) => write!(f, "({})", b.expr()),
        }
    }
}

/// A (atom, exponent) slot of a monomial.
pub type AtomPow = (Atom, Exp);
