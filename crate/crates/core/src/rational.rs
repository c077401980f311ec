//! Exact rational arithmetic used by the certification routines.
//!
//! Certification must be exact: some builtin coefficients have ~55-digit
//! numerators, far beyond what f64 can verify. We use arbitrary-precision
//! rationals (always stored in lowest terms with a positive denominator)
//! and only convert to f64 at the stepper boundary.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Parse a `"p/q"` or `"p"` literal into an exact rational.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    let parse_int = |t: &str| -> Result<BigInt> {
        t.parse::<BigInt>()
            .map_err(|_| Error::ParseRational(text.to_string()))
    };
    match s.split_once('/') {
        None => Ok(Rational::from_integer(parse_int(s)?)),
        Some((num, den)) => {
            let d = parse_int(den)?;
            if d.is_zero() {
                return Err(Error::ParseRational(text.to_string()));
            }
            Ok(Rational::new(parse_int(num)?, d))
        }
    }
}

/// Format a rational as `"p/q"`, or `"p"` when the denominator is one.
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rational_from_i64(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Best rational approximation of `x` with denominator at most `max_den`,
/// by walking the continued-fraction convergents of `x`.
///
/// Returns `None` for non-finite input.
pub fn rationalize(x: f64, max_den: u64) -> Option<Rational> {
    if !x.is_finite() || max_den == 0 {
        return None;
    }
    let exact = BigRational::from_float(x)?;
    if exact.denom().magnitude() <= &BigUint::from(max_den) {
        return Some(exact);
    }
    let bound = BigInt::from(max_den);

    // Convergents p_k/q_k of the continued fraction of x.
    let mut a = exact.numer().clone();
    let mut b = exact.denom().clone();
    let (mut p_prev, mut q_prev) = (BigInt::one(), BigInt::zero());
    let (mut p, mut q) = (a.clone() / b.clone(), BigInt::one());
    // floor division for negatives
    if exact.numer().is_negative() && !(a.clone() % b.clone()).is_zero() {
        p -= 1;
    }
    let mut rem = a - &p * &b;
    while !rem.is_zero() {
        a = b;
        b = rem;
        let mut quot = a.clone() / b.clone();
        let r = a.clone() - &quot * &b;
        if r.is_negative() {
            quot -= 1;
        }
        rem = a.clone() - &quot * &b;
        let p_next = &quot * &p + &p_prev;
        let q_next = &quot * &q + &q_prev;
        if q_next > bound {
            // Semiconvergent with the largest admissible partial quotient.
            let t = (&bound - &q_prev) / &q;
            if t >= BigInt::one() {
                let ps = &t * &p + &p_prev;
                let qs = &t * &q + &q_prev;
                let semi = BigRational::new(ps, qs.clone());
                let conv = BigRational::new(p.clone(), q.clone());
                if !qs.is_zero() && (&semi - &exact).abs() < (&conv - &exact).abs() {
                    return Some(semi);
                }
            }
            return Some(BigRational::new(p, q));
        }
        p_prev = p;
        q_prev = q;
        p = p_next;
        q = q_next;
    }
    Some(BigRational::new(p, q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["5", "-2", "3/14", "44/7", "-287591/148306", "0"] {
            let r = parse_rational(s).unwrap();
            assert_eq!(format_rational(&r), s);
        }
    }

    #[test]
    fn parse_normalizes() {
        assert_eq!(format_rational(&parse_rational("6/4").unwrap()), "3/2");
        assert_eq!(format_rational(&parse_rational("5/-10").unwrap()), "-1/2");
        assert_eq!(format_rational(&parse_rational(" 44/7 ").unwrap()), "44/7");
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("a/b").is_err());
        assert!(parse_rational("1.5").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn rationalize_recovers_simple_fractions() {
        let r = rationalize(3.0 / 14.0, 1000).unwrap();
        assert_eq!(format_rational(&r), "3/14");
        let r = rationalize(44.0 / 7.0, 1000).unwrap();
        assert_eq!(format_rational(&r), "44/7");
        let r = rationalize(-11.0 / 6.0, 1000).unwrap();
        assert_eq!(format_rational(&r), "-11/6");
        let r = rationalize(0.5, 10).unwrap();
        assert_eq!(format_rational(&r), "1/2");
    }

    #[test]
    fn rationalize_respects_denominator_bound() {
        let x = std::f64::consts::PI;
        let r = rationalize(x, 1000).unwrap();
        assert!(*r.denom() <= BigInt::from(1000));
        assert!((to_f64(&r) - x).abs() < 1e-6);
    }

    #[test]
    fn rationalize_handles_exact_floats() {
        let r = rationalize(0.25, 100).unwrap();
        assert_eq!(format_rational(&r), "1/4");
        let r = rationalize(-8.0, 100).unwrap();
        assert_eq!(format_rational(&r), "-8");
    }
}
