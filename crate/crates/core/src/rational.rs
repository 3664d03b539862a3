//! Exact rational scalars used throughout the kernel.
//!
//! Coefficients are arbitrary-precision rationals (`Coeff`): determinant and
//! curvature expansions in dimension 4 overflow machine words quickly.
//! Monomial exponents are machine-word rationals (`Exp`): in practice they are
//! tiny (integers and halves), and keeping them `Copy` keeps monomial
//! arithmetic cheap. Both are always stored in lowest terms with positive
//! denominator by the `num-rational` representation.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Arbitrary-precision rational coefficient.
pub type Coeff = num_rational::BigRational;

/// Small rational exponent (numerator/denominator fit in a machine word).
pub type Exp = num_rational::Rational64;

/// Build a coefficient from an integer.
pub fn coeff_int(n: i64) -> Coeff {
    Coeff::from_integer(BigInt::from(n))
}

/// Build a coefficient from a numerator/denominator pair.
///
/// Panics if `den == 0`.
pub fn coeff_ratio(num: i64, den: i64) -> Coeff {
    Coeff::new(BigInt::from(num), BigInt::from(den))
}

/// Build an exponent from a numerator/denominator pair.
///
/// Panics if `den == 0`.
pub fn exp_ratio(num: i64, den: i64) -> Exp {
    Exp::new(num, den)
}

/// Build an integer exponent.
pub fn exp_int(n: i64) -> Exp {
    Exp::from_integer(n)
}

/// True if `e` is an integer.
pub fn exp_is_integer(e: Exp) -> bool {
    e.is_integer()
}

/// Exact integer k-th root of a non-negative big integer, if one exists.
fn exact_root(n: &BigInt, k: u32) -> Option<BigInt> {
    if n.is_negative() {
        return None;
    }
    let r = n.nth_root(k);
    if num_traits::pow::pow(r.clone(), k as usize) == *n {
        Some(r)
    } else {
        None
    }
}

/// Exact value of `c^e` as a rational, if it is rational.
///
/// Integer exponents always succeed (for nonzero bases); fractional exponents
/// succeed only when numerator and denominator of `c` are exact powers. A
/// negative base under a fractional exponent never yields a rational.
/// `0^e` yields 0 for positive `e` and `None` otherwise.
pub fn rational_pow(c: &Coeff, e: Exp) -> Option<Coeff> {
    if c.is_zero() {
        return if e > Exp::zero() { Some(Coeff::zero()) } else { None };
    }
    if e.is_zero() {
        return Some(Coeff::one());
    }
    let num_pow = |base: &BigInt, n: i64| -> BigInt {
        num_traits::pow::pow(base.clone(), n.unsigned_abs() as usize)
    };
    let (en, ed) = (*e.numer(), *e.denom());
    // Root step first (smaller numbers), then the integer power.
    let (mut rn, mut rd) = (c.numer().clone(), c.denom().clone());
    if ed > 1 {
        if rn.is_negative() {
            return None;
        }
        rn = exact_root(&rn, ed as u32)?;
        rd = exact_root(&rd, ed as u32)?;
    }
    let (pn, pd) = (num_pow(&rn, en), num_pow(&rd, en));
    let v = if en >= 0 {
        Coeff::new(pn, pd)
    } else {
        Coeff::new(pd, pn)
    };
    Some(v)
}

/// Positive gcd content of a set of coefficients: gcd of numerators over lcm
/// of denominators. Returns 1 for an empty slice.
pub fn coeff_content<'a>(cs: impl Iterator<Item = &'a Coeff>) -> Coeff {
    let mut gn = BigInt::zero();
    let mut ld = BigInt::one();
    for c in cs {
        gn = gn.gcd(&c.numer().abs());
        ld = ld.lcm(c.denom());
    }
    if gn.is_zero() {
        Coeff::one()
    } else {
        Coeff::new(gn, ld)
    }
}

/// Render a coefficient in `p` or `p/q` form.
pub fn coeff_to_string(c: &Coeff) -> String {
    if c.denom().is_one() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

/// Render an exponent in `p` or `p/q` form.
pub fn exp_to_string(e: Exp) -> String {
    if e.is_integer() {
        e.numer().to_string()
    } else {
        format!("{}/{}", e.numer(), e.denom())
    }
}

/// Lossy conversion to `f64` (used only at the numeric-evaluation boundary).
pub fn coeff_to_f64(c: &Coeff) -> f64 {
    c.to_f64().unwrap_or_else(|| {
        // Fall back to separate conversions when the ratio overflows.
        let n = c.numer().to_f64().unwrap_or(f64::INFINITY);
        let d = c.denom().to_f64().unwrap_or(f64::INFINITY);
        n / d
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_pow_integer_exponents() {
        let c = coeff_ratio(-3, 2);
        assert_eq!(rational_pow(&c, exp_int(2)).unwrap(), coeff_ratio(9, 4));
        assert_eq!(rational_pow(&c, exp_int(-1)).unwrap(), coeff_ratio(-2, 3));
        assert_eq!(rational_pow(&c, exp_int(0)).unwrap(), coeff_int(1));
    }

    #[test]
    fn rational_pow_fractional_exponents() {
        assert_eq!(
            rational_pow(&coeff_ratio(4, 9), exp_ratio(1, 2)).unwrap(),
            coeff_ratio(2, 3)
        );
        assert_eq!(
            rational_pow(&coeff_int(8), exp_ratio(-2, 3)).unwrap(),
            coeff_ratio(1, 4)
        );
        assert!(rational_pow(&coeff_int(2), exp_ratio(1, 2)).is_none());
        assert!(rational_pow(&coeff_int(-4), exp_ratio(1, 2)).is_none());
    }

    #[test]
    fn rational_pow_zero_base() {
        assert_eq!(rational_pow(&coeff_int(0), exp_ratio(1, 2)).unwrap(), Coeff::zero());
        assert!(rational_pow(&coeff_int(0), exp_int(0)).is_none());
        assert!(rational_pow(&coeff_int(0), exp_int(-1)).is_none());
    }

    #[test]
    fn content_of_coefficients() {
        let cs = [coeff_ratio(4, 3), coeff_ratio(-2, 9), coeff_int(6)];
        assert_eq!(coeff_content(cs.iter()), coeff_ratio(2, 9));
    }
}
