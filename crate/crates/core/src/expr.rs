//! The expression kernel: canonical sum-of-products normal form.
//!
//! An expression is a sum of terms; a term is an exact rational coefficient
//! times a monomial; a monomial is a sorted list of (atom, rational exponent)
//! pairs. Integer powers of sums expand; other rational powers of sums become
//! power-of-sum atoms differentiated by the chain rule. Two expressions are
//! equal exactly when their normal forms are identical, and a difference of
//! equal expressions normalizes to the empty sum.
//!
//! Beyond plain polynomial arithmetic the normalizer performs an exact-division
//! rewrite: terms sharing the same power-of-sum factors are grouped, and when
//! the group's polynomial part is exactly divisible by a body carried at a
//! negative exponent, the quotient is taken and the exponent bumped toward
//! zero. This is what reduces `g^{ia} g_{aj}` to `δ^i_j` when the lowered
//! metric is represented as adjugate times inverse determinant, and it is
//! load-bearing for every curvature and balance identity downstream.
//!
//! Expressions are immutable after normalization; all operations are pure.

use crate::atom::{Atom, AtomPow, SumBody};
use crate::rational::{coeff_content, rational_pow, Coeff, Exp};
use num_traits::{One, Zero};
use smallvec::SmallVec;
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use thiserror::Error;

/// Errors raised while bringing a raw tree to normal form.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum NormError {
    #[error("zero raised to a non-positive power")]
    ZeroToNonPositivePower,
    #[error("rational power of a numeric literal has no rational value")]
    NonRationalConstantPower,
    #[error("floating-point literals are rejected; use exact rationals")]
    FloatLiteral,
    #[error("partial derivative with respect to a power-of-sum atom; differentiate through its body instead")]
    PartialWrtPower,
    #[error("substitution keys must not be power-of-sum atoms")]
    SubstituteKeyPower,
    #[error("singular substitution: {0}")]
    SingularSubstitution(String),
}

/// Sorted multiset of (atom, exponent) pairs with nonzero exponents.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct Monomial(pub(crate) SmallVec<[AtomPow; 4]>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(SmallVec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pairs(&self) -> &[AtomPow] {
        &self.0
    }

    /// Exponent of `a` in this monomial (0 when absent).
    pub fn exponent_of(&self, a: &Atom) -> Exp {
        self.0
            .iter()
            .find(|(b, _)| b == a)
            .map(|(_, e)| *e)
            .unwrap_or_else(Exp::zero)
    }

    fn from_sorted(pairs: SmallVec<[AtomPow; 4]>) -> Self {
        debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
        Monomial(pairs)
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Monomial {
    /// Exponent-vector lexicographic order over the union of atoms: at the
    /// first atom (in atom order) where the exponents differ, the monomial
    /// with the larger exponent is the larger monomial. This order is
    /// compatible with multiplication, which the exact-division rewrite
    /// relies on.
    fn cmp(&self, other: &Self) -> Ordering {
        let (mut i, mut j) = (0usize, 0usize);
        let (a, b) = (&self.0, &other.0);
        loop {
            match (a.get(i), b.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some((_, ae)), None) => {
                    return if *ae > Exp::zero() { Ordering::Greater } else { Ordering::Less }
                }
                (None, Some((_, be))) => {
                    return if *be > Exp::zero() { Ordering::Less } else { Ordering::Greater }
                }
                (Some((aa, ae)), Some((ba, be))) => match aa.cmp(ba) {
                    Ordering::Less => {
                        return if *ae > Exp::zero() { Ordering::Greater } else { Ordering::Less }
                    }
                    Ordering::Greater => {
                        return if *be > Exp::zero() { Ordering::Less } else { Ordering::Greater }
                    }
                    Ordering::Equal => {
                        if ae != be {
                            return ae.cmp(be);
                        }
                        i += 1;
                        j += 1;
                    }
                },
            }
        }
    }
}

/// One term of a normal form: coefficient times monomial.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Term {
    pub mono: Monomial,
    pub coeff: Coeff,
}

/// A normalized expression.
///
/// Invariants: terms sorted in strictly decreasing monomial order, no zero
/// coefficients, no duplicate monomials, and every power-of-sum pair satisfies
/// the canonical exponent rules enforced by `Expr::pow`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Expr {
    terms: Vec<Term>,
}

/// Raw, unnormalized expression tree accepted by [`normalize`].
#[derive(Clone, Debug)]
pub enum RawExpr {
    Rat(Coeff),
    Int(i64),
    /// Always rejected: the kernel is exact.
    Float(f64),
    Atom(Atom),
    Neg(Box<RawExpr>),
    Add(Vec<RawExpr>),
    Sub(Box<RawExpr>, Box<RawExpr>),
    Mul(Vec<RawExpr>),
    Div(Box<RawExpr>, Box<RawExpr>),
    Pow(Box<RawExpr>, Exp),
}

/// Bring a raw tree to canonical normal form.
pub fn normalize(raw: &RawExpr) -> Result<Expr, NormError> {
    match raw {
        RawExpr::Rat(c) => Ok(Expr::from_coeff(c.clone())),
        RawExpr::Int(n) => Ok(Expr::from_coeff(Coeff::from_integer((*n).into()))),
        RawExpr::Float(_) => Err(NormError::FloatLiteral),
        RawExpr::Atom(a) => match a {
            // A bare power-of-sum atom denotes its body to the first power,
            // which expands back into the body.
            Atom::SumPow(b) => Ok(b.expr().clone()),
            _ => Ok(Expr::from_atom(a.clone())),
        },
        RawExpr::Neg(x) => Ok(normalize(x)?.neg()),
        RawExpr::Add(xs) => {
            let mut acc = Expr::zero();
            for x in xs {
                acc = acc.add(&normalize(x)?);
            }
            Ok(acc)
        }
        RawExpr::Sub(a, b) => Ok(normalize(a)?.sub(&normalize(b)?)),
        RawExpr::Mul(xs) => {
            let mut acc = Expr::one();
            for x in xs {
                acc = acc.mul(&normalize(x)?);
            }
            Ok(acc)
        }
        RawExpr::Div(a, b) => {
            let d = normalize(b)?.pow(-Exp::one())?;
            Ok(normalize(a)?.mul(&d))
        }
        RawExpr::Pow(b, e) => normalize(b)?.pow(*e),
    }
}

impl Expr {
    pub fn zero() -> Self {
        Expr { terms: vec![] }
    }

    pub fn one() -> Self {
        Expr::from_coeff(Coeff::one())
    }

    pub fn from_coeff(c: Coeff) -> Self {
        if c.is_zero() {
            Expr::zero()
        } else {
            Expr { terms: vec![Term { mono: Monomial::one(), coeff: c }] }
        }
    }

    pub fn from_int(n: i64) -> Self {
        Expr::from_coeff(Coeff::from_integer(n.into()))
    }

    pub fn from_atom(a: Atom) -> Self {
        debug_assert!(!a.is_sum_pow(), "power-of-sum atoms are built through pow");
        Expr {
            terms: vec![Term {
                mono: Monomial(SmallVec::from_buf_and_len([(a, Exp::one()), EMPTY_PAIR, EMPTY_PAIR, EMPTY_PAIR], 1)),
                coeff: Coeff::one(),
            }],
        }
    }

    /// `atom^e` for a non-power atom; `e` may be any nonzero rational.
    pub fn atom_pow(a: Atom, e: Exp) -> Self {
        debug_assert!(!a.is_sum_pow());
        if e.is_zero() {
            return Expr::one();
        }
        Expr {
            terms: vec![Term {
                mono: Monomial(SmallVec::from_buf_and_len([(a, e), EMPTY_PAIR, EMPTY_PAIR, EMPTY_PAIR], 1)),
                coeff: Coeff::one(),
            }],
        }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.terms[0].mono.is_empty() && self.terms[0].coeff.is_one()
    }

    /// The constant value, if the expression is one.
    pub fn as_coeff(&self) -> Option<Coeff> {
        if self.is_zero() {
            Some(Coeff::zero())
        } else if self.terms.len() == 1 && self.terms[0].mono.is_empty() {
            Some(self.terms[0].coeff.clone())
        } else {
            None
        }
    }

    pub fn neg(&self) -> Expr {
        Expr {
            terms: self
                .terms
                .iter()
                .map(|t| Term { mono: t.mono.clone(), coeff: -t.coeff.clone() })
                .collect(),
        }
    }

    pub fn add(&self, other: &Expr) -> Expr {
        // Merge two sorted term lists.
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0usize, 0usize);
        while i < self.terms.len() || j < other.terms.len() {
            match (self.terms.get(i), other.terms.get(j)) {
                (Some(a), Some(b)) => match a.mono.cmp(&b.mono) {
                    Ordering::Greater => {
                        out.push(a.clone());
                        i += 1;
                    }
                    Ordering::Less => {
                        out.push(b.clone());
                        j += 1;
                    }
                    Ordering::Equal => {
                        let c = &a.coeff + &b.coeff;
                        if !c.is_zero() {
                            out.push(Term { mono: a.mono.clone(), coeff: c });
                        }
                        i += 1;
                        j += 1;
                    }
                },
                (Some(a), None) => {
                    out.push(a.clone());
                    i += 1;
                }
                (None, Some(b)) => {
                    out.push(b.clone());
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        div_reduce(Expr { terms: out })
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Coeff) -> Expr {
        if c.is_zero() {
            return Expr::zero();
        }
        Expr {
            terms: self
                .terms
                .iter()
                .map(|t| Term { mono: t.mono.clone(), coeff: &t.coeff * c })
                .collect(),
        }
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        if self.is_zero() || other.is_zero() {
            return Expr::zero();
        }
        if let Some(c) = self.as_coeff() {
            return other.scale(&c);
        }
        if let Some(c) = other.as_coeff() {
            return self.scale(&c);
        }
        let mut acc: HashMap<Monomial, Coeff> = HashMap::with_capacity(self.terms.len() * other.terms.len());
        let mut pending: Vec<Expr> = Vec::new();
        for ta in &self.terms {
            for tb in &other.terms {
                let coeff = &ta.coeff * &tb.coeff;
                match mono_mul(&ta.mono, &tb.mono) {
                    MonoMul::Plain(m) => add_to(&mut acc, m, coeff),
                    MonoMul::Rebuild(pieces, kept) => {
                        // Some power-of-sum exponent left its canonical range;
                        // rebuild those factors and fold the product back in.
                        let mut e = Expr {
                            terms: vec![Term { mono: kept, coeff }],
                        };
                        for p in pieces {
                            e = e.mul(&p);
                        }
                        pending.push(e);
                    }
                }
            }
        }
        let mut out = finish_map(acc);
        for p in pending {
            out = out.add(&p);
        }
        div_reduce(out)
    }

    /// Raise to a rational power. Integer powers of sums expand; fractional
    /// powers become power-of-sum atoms in canonical position.
    pub fn pow(&self, q: Exp) -> Result<Expr, NormError> {
        pow_expr(self, q)
    }

    /// Partial derivative with respect to a non-power atom. Distinct atoms are
    /// independent; power-of-sum factors differentiate by the chain rule.
    pub fn partial(&self, a: &Atom) -> Result<Expr, NormError> {
        if a.is_sum_pow() {
            return Err(NormError::PartialWrtPower);
        }
        let mut acc = Expr::zero();
        for t in &self.terms {
            for (k, (atom, e)) in t.mono.0.iter().enumerate() {
                if atom == a {
                    let mut pairs: SmallVec<[AtomPow; 4]> = t.mono.0.clone();
                    let ne = *e - Exp::one();
                    if ne.is_zero() {
                        pairs.remove(k);
                    } else {
                        pairs[k].1 = ne;
                    }
                    let coeff = &t.coeff * exp_coeff(*e);
                    acc = acc.add(&assemble(coeff, pairs));
                } else if let Atom::SumPow(body) = atom {
                    let db = body.expr().partial(a)?;
                    if db.is_zero() {
                        continue;
                    }
                    let mut pairs: SmallVec<[AtomPow; 4]> = t.mono.0.clone();
                    pairs.remove(k);
                    let coeff = &t.coeff * exp_coeff(*e);
                    let outer = assemble(coeff, pairs);
                    let chain = pow_expr(body.expr(), *e - Exp::one())
                        .expect("canonical body power cannot fail");
                    acc = acc.add(&outer.mul(&chain).mul(&db));
                }
            }
        }
        Ok(acc)
    }

    /// Simultaneous substitution of atoms by expressions. Keys must not be
    /// power-of-sum atoms; substitution descends into power bodies.
    pub fn substitute(&self, map: &HashMap<Atom, Expr>) -> Result<Expr, NormError> {
        if map.keys().any(|a| a.is_sum_pow()) {
            return Err(NormError::SubstituteKeyPower);
        }
        if map.is_empty() {
            return Ok(self.clone());
        }
        let mut acc = Expr::zero();
        for t in &self.terms {
            let mut piece = Expr::from_coeff(t.coeff.clone());
            for (atom, e) in t.mono.pairs() {
                let factor = if let Some(rep) = map.get(atom) {
                    pow_expr(rep, *e).map_err(|err| match err {
                        NormError::ZeroToNonPositivePower => {
                            NormError::SingularSubstitution(format!("{atom} -> 0 with exponent {e}"))
                        }
                        e => e,
                    })?
                } else if let Atom::SumPow(body) = atom {
                    let nb = body.expr().substitute(map)?;
                    pow_expr(&nb, *e).map_err(|err| match err {
                        NormError::ZeroToNonPositivePower => {
                            NormError::SingularSubstitution(format!("power body -> 0 with exponent {e}"))
                        }
                        e => e,
                    })?
                } else {
                    Expr::atom_pow(atom.clone(), *e)
                };
                piece = piece.mul(&factor);
            }
            acc = acc.add(&piece);
        }
        Ok(acc)
    }

    /// Atoms appearing at the top level of any monomial.
    pub fn atoms_top(&self) -> impl Iterator<Item = &Atom> {
        self.terms.iter().flat_map(|t| t.mono.0.iter().map(|(a, _)| a))
    }

    /// All atoms, descending into power-of-sum bodies, without duplicates.
    pub fn atoms_deep(&self) -> Vec<Atom> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        collect_atoms(self, &mut seen, &mut out);
        out
    }

    /// True if `a` occurs anywhere, including inside power bodies.
    pub fn contains_atom(&self, a: &Atom) -> bool {
        self.atoms_deep().iter().any(|b| b == a)
    }

    pub fn nterms(&self) -> usize {
        self.terms.len()
    }
}

fn collect_atoms(e: &Expr, seen: &mut HashSet<Atom>, out: &mut Vec<Atom>) {
    for t in &e.terms {
        for (a, _) in t.mono.pairs() {
            if seen.insert(a.clone()) {
                out.push(a.clone());
            }
            if let Atom::SumPow(b) = a {
                collect_atoms(b.expr(), seen, out);
            }
        }
    }
}

const EMPTY_PAIR: AtomPow = (Atom::Base(0), Exp::new_raw(0, 1));

fn exp_coeff(e: Exp) -> Coeff {
    Coeff::new((*e.numer()).into(), (*e.denom()).into())
}

fn add_to(acc: &mut HashMap<Monomial, Coeff>, m: Monomial, c: Coeff) {
    use std::collections::hash_map::Entry;
    match acc.entry(m) {
        Entry::Occupied(mut o) => {
            *o.get_mut() += c;
            if o.get().is_zero() {
                o.remove();
            }
        }
        Entry::Vacant(v) => {
            if !c.is_zero() {
                v.insert(c);
            }
        }
    }
}

fn finish_map(acc: HashMap<Monomial, Coeff>) -> Expr {
    let mut terms: Vec<Term> = acc
        .into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(mono, coeff)| Term { mono, coeff })
        .collect();
    terms.sort_unstable_by(|a, b| b.mono.cmp(&a.mono));
    Expr { terms }
}

/// Whether a power-of-sum pair `(body, e)` is in canonical position.
fn legal_sumpow_exp(body: &SumBody, e: Exp) -> bool {
    if e.is_zero() {
        return false;
    }
    let zero = Exp::zero();
    let one = Exp::one();
    if body.unit_primitive() {
        e < zero || (e > zero && e < one)
    } else {
        e > zero && e < one
    }
}

enum MonoMul {
    Plain(Monomial),
    /// Pairs that fell out of canonical range were removed; the caller must
    /// multiply the rebuilt factors back in.
    Rebuild(Vec<Expr>, Monomial),
}

fn mono_mul(a: &Monomial, b: &Monomial) -> MonoMul {
    let mut out: SmallVec<[AtomPow; 4]> = SmallVec::with_capacity(a.0.len() + b.0.len());
    let mut rebuild: Vec<Expr> = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let push = |pair: AtomPow, rebuild: &mut Vec<Expr>, out: &mut SmallVec<[AtomPow; 4]>| {
        if pair.1.is_zero() {
            return;
        }
        if let Atom::SumPow(body) = &pair.0 {
            if !legal_sumpow_exp(body, pair.1) {
                rebuild.push(
                    pow_expr(body.expr(), pair.1).expect("canonical body power cannot fail"),
                );
                return;
            }
        }
        out.push(pair);
    };
    while i < a.0.len() || j < b.0.len() {
        match (a.0.get(i), b.0.get(j)) {
            (Some(pa), Some(pb)) => match pa.0.cmp(&pb.0) {
                Ordering::Less => {
                    push(pa.clone(), &mut rebuild, &mut out);
                    i += 1;
                }
                Ordering::Greater => {
                    push(pb.clone(), &mut rebuild, &mut out);
                    j += 1;
                }
                Ordering::Equal => {
                    push((pa.0.clone(), pa.1 + pb.1), &mut rebuild, &mut out);
                    i += 1;
                    j += 1;
                }
            },
            (Some(pa), None) => {
                push(pa.clone(), &mut rebuild, &mut out);
                i += 1;
            }
            (None, Some(pb)) => {
                push(pb.clone(), &mut rebuild, &mut out);
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    if rebuild.is_empty() {
        MonoMul::Plain(Monomial::from_sorted(out))
    } else {
        MonoMul::Rebuild(rebuild, Monomial::from_sorted(out))
    }
}

/// Build `coeff · ∏ pairs`, routing out-of-range power-of-sum exponents
/// through `pow_expr`. Input pairs need not be sorted or unique.
fn assemble(coeff: Coeff, pairs: SmallVec<[AtomPow; 4]>) -> Expr {
    if coeff.is_zero() {
        return Expr::zero();
    }
    let mut merged: BTreeMap<Atom, Exp> = BTreeMap::new();
    for (a, e) in pairs {
        let slot = merged.entry(a).or_insert_with(Exp::zero);
        *slot += e;
    }
    let mut out: SmallVec<[AtomPow; 4]> = SmallVec::new();
    let mut rebuild: Vec<Expr> = Vec::new();
    for (a, e) in merged {
        if e.is_zero() {
            continue;
        }
        if let Atom::SumPow(body) = &a {
            if !legal_sumpow_exp(body, e) {
                rebuild.push(pow_expr(body.expr(), e).expect("canonical body power cannot fail"));
                continue;
            }
        }
        out.push((a, e));
    }
    let mut expr = Expr { terms: vec![Term { mono: Monomial::from_sorted(out), coeff }] };
    for p in rebuild {
        expr = expr.mul(&p);
    }
    expr
}

/// Largest common monomial factor over all terms: atoms present in every term,
/// extracted at their minimum exponent.
fn extract_mono_gcd(e: &Expr) -> (Vec<AtomPow>, Expr) {
    if e.terms.is_empty() {
        return (vec![], e.clone());
    }
    let mut common: Vec<AtomPow> = e.terms[0].mono.0.to_vec();
    for t in &e.terms[1..] {
        common.retain_mut(|(a, ce)| {
            for (b, be) in t.mono.pairs() {
                if b == a {
                    if *be < *ce {
                        *ce = *be;
                    }
                    return true;
                }
            }
            false
        });
        if common.is_empty() {
            break;
        }
    }
    if common.is_empty() {
        return (vec![], e.clone());
    }
    let mut stripped = Expr::zero();
    for t in &e.terms {
        let mut pairs = t.mono.0.clone();
        for (a, ce) in &common {
            for p in pairs.iter_mut() {
                if &p.0 == a {
                    p.1 -= *ce;
                    break;
                }
            }
        }
        pairs.retain(|p| !p.1.is_zero());
        stripped = stripped.add(&assemble(t.coeff.clone(), pairs));
    }
    (common, stripped)
}

/// Multiply `acc` by `atom^e`, rebuilding when the pair is out of range.
fn mul_atom_pow(acc: Expr, atom: &Atom, e: Exp) -> Expr {
    if e.is_zero() {
        return acc;
    }
    if let Atom::SumPow(body) = atom {
        if !legal_sumpow_exp(body, e) {
            let p = pow_expr(body.expr(), e).expect("canonical body power cannot fail");
            return acc.mul(&p);
        }
    }
    acc.mul(&Expr {
        terms: vec![Term {
            mono: Monomial(SmallVec::from_buf_and_len([(atom.clone(), e), EMPTY_PAIR, EMPTY_PAIR, EMPTY_PAIR], 1)),
            coeff: Coeff::one(),
        }],
    })
}

fn bin_pow(base: &Expr, n: i64) -> Expr {
    debug_assert!(n >= 1);
    let mut result = Expr::one();
    let mut sq = base.clone();
    let mut k = n;
    loop {
        if k & 1 == 1 {
            result = result.mul(&sq);
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        sq = sq.mul(&sq);
    }
    result
}

/// Canonical rational power of a normalized expression.
fn pow_expr(base: &Expr, q: Exp) -> Result<Expr, NormError> {
    if base.is_zero() {
        return if q > Exp::zero() { Ok(Expr::zero()) } else { Err(NormError::ZeroToNonPositivePower) };
    }
    if q.is_zero() {
        return Ok(Expr::one());
    }
    if q.is_one() {
        return Ok(base.clone());
    }
    // Single term with a fully rational coefficient power: distribute the
    // exponent over the coefficient and the atoms.
    if base.terms.len() == 1 {
        let t = &base.terms[0];
        if let Some(r) = rational_pow(&t.coeff, q) {
            let mut acc = Expr::from_coeff(r);
            for (a, e) in t.mono.pairs() {
                acc = mul_atom_pow(acc, a, *e * q);
            }
            return Ok(acc);
        }
        if t.mono.is_empty() {
            return Err(NormError::NonRationalConstantPower);
        }
        // Irrational coefficient part: fall through and keep the whole term
        // as a power body.
    }
    if q.is_integer() {
        let n = *q.numer();
        if n >= 1 {
            return Ok(bin_pow(base, n));
        }
        // Negative integer power: extract the common monomial factor and the
        // positive coefficient content, both of which have exact rational
        // integer powers. The sign of the body is part of its identity, so
        // integer and fractional powers of one signed polynomial share a base
        // (√g and the lowered metric ride on the same determinant body).
        let (gcd, stripped) = extract_mono_gcd(base);
        let content = coeff_content(stripped.terms.iter().map(|t| &t.coeff));
        let prim = stripped.scale(&Coeff::one().div_checked(&content));
        let mut acc =
            Expr::from_coeff(rational_pow(&content, q).expect("integer power of rational"));
        for (a, e) in &gcd {
            acc = mul_atom_pow(acc, a, *e * q);
        }
        return Ok(acc.mul(&sum_pow_factor(SumBody::new(prim, true), q)));
    }
    // Fractional exponent.
    let n = q.floor();
    let f = q - n; // in (0,1)
    let n_int = *n.numer();
    let (gcd, stripped) = extract_mono_gcd(base);
    let mut acc = Expr::one();
    for (a, e) in &gcd {
        acc = mul_atom_pow(acc, a, *e * q);
    }
    if stripped.terms.len() == 1 {
        // Single non-atomic term body; content and sign stay inside, the
        // exponent is kept as a proper fraction.
        let t = stripped.terms[0].clone();
        if t.mono.is_empty() {
            return Err(NormError::NonRationalConstantPower);
        }
        if n_int != 0 {
            // Exact integer power of the single term.
            let c = rational_pow(&t.coeff, n).expect("integer power of rational");
            acc = acc.mul(&Expr::from_coeff(c));
            for (a, e) in t.mono.pairs() {
                acc = mul_atom_pow(acc, a, *e * n);
            }
        }
        return Ok(acc.mul(&sum_pow_factor(SumBody::new(stripped, false), f)));
    }
    let content = coeff_content(stripped.terms.iter().map(|t| &t.coeff));
    if !content.is_one() {
        if let Some(cq) = rational_pow(&content, q) {
            // Content is a perfect power: strip it and recurse on the
            // primitive body.
            let prim = stripped.scale(&Coeff::one().div_checked(&content));
            let rest = pow_expr(&prim, q)?;
            return Ok(acc.mul(&Expr::from_coeff(cq)).mul(&rest));
        }
        // Content with no exact fractional power: the integer part goes
        // through the primitive body, the proper fraction keeps the body
        // as-is, content and all.
        if n_int != 0 {
            let prim = stripped.scale(&Coeff::one().div_checked(&content));
            let cpow = rational_pow(&content, n).expect("integer power of rational");
            acc = acc.mul(&Expr::from_coeff(cpow));
            if n_int >= 1 {
                acc = acc.mul(&bin_pow(&prim, n_int));
            } else {
                acc = acc.mul(&sum_pow_factor(SumBody::new(prim, true), n));
            }
        }
        return Ok(acc.mul(&sum_pow_factor(SumBody::new(stripped, false), f)));
    }
    // Primitive body: negative and proper-fraction exponents sit in one slot;
    // exponents above 1 split into an expanded integer part.
    let body = SumBody::new(stripped.clone(), true);
    if q < Exp::zero() || n_int == 0 {
        return Ok(acc.mul(&sum_pow_factor(body, q)));
    }
    let expanded = bin_pow(&stripped, n_int);
    Ok(acc.mul(&expanded).mul(&sum_pow_factor(body, f)))
}

/// Single power-of-sum factor `body^e` as an expression. The pair must be in
/// canonical position.
fn sum_pow_factor(body: SumBody, e: Exp) -> Expr {
    debug_assert!(legal_sumpow_exp(&body, e));
    Expr {
        terms: vec![Term {
            mono: Monomial(SmallVec::from_buf_and_len(
                [(Atom::SumPow(body), e), EMPTY_PAIR, EMPTY_PAIR, EMPTY_PAIR],
                1,
            )),
            coeff: Coeff::one(),
        }],
    }
}

trait DivChecked {
    fn div_checked(&self, other: &Coeff) -> Coeff;
}
impl DivChecked for Coeff {
    fn div_checked(&self, other: &Coeff) -> Coeff {
        debug_assert!(!other.is_zero());
        self / other
    }
}

// ---------------------------------------------------------------------------
// Exact-division rewrite
// ---------------------------------------------------------------------------

/// Split a monomial into its power-of-sum part and its ordinary part.
fn split_mono(m: &Monomial) -> (Monomial, Monomial) {
    let mut sp: SmallVec<[AtomPow; 4]> = SmallVec::new();
    let mut ord: SmallVec<[AtomPow; 4]> = SmallVec::new();
    for p in m.pairs() {
        if p.0.is_sum_pow() {
            sp.push(p.clone());
        } else {
            ord.push(p.clone());
        }
    }
    (Monomial::from_sorted(sp), Monomial::from_sorted(ord))
}

fn mono_union_disjoint(a: &Monomial, b: &Monomial) -> Monomial {
    let mut pairs: SmallVec<[AtomPow; 4]> = SmallVec::with_capacity(a.0.len() + b.0.len());
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.0.len() || j < b.0.len() {
        match (a.0.get(i), b.0.get(j)) {
            (Some(pa), Some(pb)) => {
                if pa.0 < pb.0 {
                    pairs.push(pa.clone());
                    i += 1;
                } else {
                    pairs.push(pb.clone());
                    j += 1;
                }
            }
            (Some(pa), None) => {
                pairs.push(pa.clone());
                i += 1;
            }
            (None, Some(pb)) => {
                pairs.push(pb.clone());
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    Monomial::from_sorted(pairs)
}

/// Exact division of a polynomial (list of ordinary monomials) by a
/// power-free polynomial `p`. Returns the quotient when the division is
/// exact; `None` otherwise. With rational exponents any monomial divides any
/// other, so non-divisibility surfaces as a failure to terminate and is cut
/// off by an iteration cap.
fn try_div_exact(q: &BTreeMap<Monomial, Coeff>, p: &Expr) -> Option<Vec<Term>> {
    debug_assert!(p.terms.len() >= 2);
    let p_lead = &p.terms[0];
    let mut rem: BTreeMap<Monomial, Coeff> = q.clone();
    let mut quot: Vec<Term> = Vec::new();
    // An exact quotient has on the order of q.len()/p.len() terms; a failed
    // division must give up quickly because it runs inside every add and mul.
    let cap = 4 * (q.len() / p.terms.len()) + 24;
    while let Some((rm, rc)) = rem.iter().next_back().map(|(m, c)| (m.clone(), c.clone())) {
        if quot.len() >= cap {
            return None;
        }
        // Quotient term: leading(rem) / leading(p).
        let mut pairs: BTreeMap<Atom, Exp> = BTreeMap::new();
        for (a, e) in rm.pairs() {
            pairs.insert(a.clone(), *e);
        }
        for (a, e) in p_lead.mono.pairs() {
            *pairs.entry(a.clone()).or_insert_with(Exp::zero) -= *e;
        }
        let t_mono = Monomial::from_sorted(pairs.into_iter().filter(|(_, e)| !e.is_zero()).collect());
        let t_coeff = &rc / &p_lead.coeff;
        // rem -= t * p
        for tp in &p.terms {
            let mut pm: BTreeMap<Atom, Exp> = BTreeMap::new();
            for (a, e) in t_mono.pairs() {
                pm.insert(a.clone(), *e);
            }
            for (a, e) in tp.mono.pairs() {
                *pm.entry(a.clone()).or_insert_with(Exp::zero) += *e;
            }
            let m = Monomial::from_sorted(pm.into_iter().filter(|(_, e)| !e.is_zero()).collect());
            let delta = -(&t_coeff * &tp.coeff);
            let slot = rem.entry(m).or_insert_with(Coeff::zero);
            *slot += delta;
            if slot.is_zero() {
                // Leave removal to the cleanup below to keep borrowck simple.
            }
        }
        rem.retain(|_, c| !c.is_zero());
        quot.push(Term { mono: t_mono, coeff: t_coeff });
    }
    quot.sort_unstable_by(|a, b| b.mono.cmp(&a.mono));
    Some(quot)
}

/// The division rewrite: group terms by their power-of-sum factors and divide
/// each group's polynomial part by bodies held at negative exponents whenever
/// the division is exact.
fn div_reduce(e: Expr) -> Expr {
    // Fast path: nothing to do unless some term carries a power-of-sum atom
    // at a negative exponent.
    let needs = e.terms.iter().any(|t| {
        t.mono
            .pairs()
            .iter()
            .any(|(a, e)| a.is_sum_pow() && *e < Exp::zero())
    });
    if !needs {
        return e;
    }
    let mut groups: BTreeMap<Monomial, BTreeMap<Monomial, Coeff>> = BTreeMap::new();
    for t in e.terms {
        let (sp, ord) = split_mono(&t.mono);
        let slot = groups
            .entry(sp)
            .or_default()
            .entry(ord)
            .or_insert_with(Coeff::zero);
        *slot += t.coeff;
    }
    let mut failed: HashSet<(u64, u64)> = HashSet::new();
    for _round in 0..256 {
        let mut changed = false;
        let keys: Vec<Monomial> = groups.keys().cloned().collect();
        for key in keys {
            let Some(poly) = groups.get(&key) else { continue };
            if poly.is_empty() {
                groups.remove(&key);
                continue;
            }
            let mut rewrite: Option<(usize, Vec<Term>)> = None;
            for (idx, (atom, exp)) in key.pairs().iter().enumerate() {
                if *exp >= Exp::zero() {
                    continue;
                }
                let Atom::SumPow(body) = atom else { continue };
                let be = body.expr();
                if be.terms.len() < 2 || be.atoms_top().any(|a| a.is_sum_pow()) {
                    continue;
                }
                // A monomial multiple of the body has exactly as many terms
                // as the body. A poly with fewer terms divides only through
                // coefficient cancellation across quotient terms, which is
                // not worth probing on every add and mul.
                if poly.len() < be.terms.len() {
                    continue;
                }
                let sig = (hash_poly(poly), hash_expr(be));
                if failed.contains(&sig) {
                    continue;
                }
                match try_div_exact(poly, be) {
                    Some(quot) => {
                        rewrite = Some((idx, quot));
                        break;
                    }
                    None => {
                        failed.insert(sig);
                    }
                }
            }
            if let Some((idx, quot)) = rewrite {
                let poly = groups.remove(&key).expect("group present");
                drop(poly);
                let mut pairs = key.0.clone();
                let ne = pairs[idx].1 + Exp::one();
                if ne.is_zero() {
                    pairs.remove(idx);
                } else {
                    pairs[idx].1 = ne;
                }
                let new_key = Monomial::from_sorted(pairs);
                let slot = groups.entry(new_key).or_default();
                for t in quot {
                    let c = slot.entry(t.mono).or_insert_with(Coeff::zero);
                    *c += t.coeff;
                }
                slot.retain(|_, c| !c.is_zero());
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut terms: Vec<Term> = Vec::new();
    for (key, poly) in groups {
        for (ord, coeff) in poly {
            if coeff.is_zero() {
                continue;
            }
            terms.push(Term { mono: mono_union_disjoint(&key, &ord), coeff });
        }
    }
    terms.sort_unstable_by(|a, b| b.mono.cmp(&a.mono));
    Expr { terms }
}

fn hash_poly(p: &BTreeMap<Monomial, Coeff>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for (m, c) in p {
        m.hash(&mut h);
        c.hash(&mut h);
    }
    h.finish()
}

fn hash_expr(e: &Expr) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    e.hash(&mut h);
    h.finish()
}

/// Decide symbolic equality to zero: by canonicity this is emptiness of the
/// normal form.
pub fn is_zero_symbolic(e: &Expr) -> bool {
    e.is_zero()
}

impl fmt::Display for Expr {
    /// Model-less rendering for diagnostics.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            let mut first = true;
            if !t.coeff.is_one() || t.mono.is_empty() {
                write!(f, "{}", crate::rational::coeff_to_string(&t.coeff))?;
                first = false;
            }
            for (a, e) in t.mono.pairs() {
                if !first {
                    write!(f, "*")?;
                }
                first = false;
                write!(f, "{a}")?;
                if !e.is_one() {
                    write!(f, "^({})", crate::rational::exp_to_string(*e))?;
                }
            }
        }
        Ok(())
    }
}
