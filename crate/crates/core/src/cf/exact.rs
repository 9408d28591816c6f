//! Exact arithmetic over ℚ(√5) for prefix rotation numbers.
//!
//! A finite coefficient prefix `[a_1..a_N]` is completed with an all-ones
//! tail, so the represented value is `(p_{N+1} + p_N·g) / (q_{N+1} + q_N·g)`
//! with `g = (√5−1)/2`.  Rationalizing puts every such number in the form
//! `(x + y√5)/z` with integers `x, y, z`.  All comparisons, floors and
//! fractional parts below are exact: a sign is decided by comparing `x²`
//! against `5y²`, never by floating point.  This is what lets the nested-arc
//! containments be checked as genuine integer inequalities.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// `(x + y√5) / z` in lowest terms with `z > 0`.
///
/// The canonical form (gcd(x,y,z) = 1, z > 0) is unique, so derived
/// structural equality agrees with numerical equality.
#[derive(Clone, PartialEq, Eq)]
pub struct Qs5 {
    x: BigInt,
    y: BigInt,
    z: BigInt,
}

impl Qs5 {
    pub fn new(x: BigInt, y: BigInt, z: BigInt) -> Qs5 {
        assert!(!z.is_zero(), "zero denominator");
        let mut v = Qs5 { x, y, z };
        v.normalize();
        v
    }

    pub fn from_int(n: i64) -> Qs5 {
        Qs5 { x: BigInt::from(n), y: BigInt::zero(), z: BigInt::from(1) }
    }

    pub fn from_ratio(num: i128, den: i128) -> Qs5 {
        Qs5::new(BigInt::from(num), BigInt::zero(), BigInt::from(den))
    }

    pub fn zero() -> Qs5 {
        Qs5::from_int(0)
    }

    pub fn one() -> Qs5 {
        Qs5::from_int(1)
    }

    /// `g = (√5−1)/2`, the all-ones continued fraction.
    pub fn golden() -> Qs5 {
        Qs5::new(BigInt::from(-1), BigInt::from(1), BigInt::from(2))
    }

    fn normalize(&mut self) {
        if self.z.is_negative() {
            self.x = -std::mem::take(&mut self.x);
            self.y = -std::mem::take(&mut self.y);
            self.z = -std::mem::take(&mut self.z);
        }
        let g = self.x.gcd(&self.y).gcd(&self.z);
        if !g.is_zero() && !g.is_one() {
            self.x /= &g;
            self.y /= &g;
            self.z /= &g;
        }
    }

    pub fn is_rational(&self) -> bool {
        self.y.is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.x.is_zero() && self.y.is_zero()
    }

    /// Sign of the value: -1, 0, or +1.  Exact.
    pub fn sign(&self) -> i8 {
        // z > 0, so only the numerator x + y√5 matters.
        let sx = sign_of(&self.x);
        let sy = sign_of(&self.y);
        if sy == 0 {
            return sx;
        }
        if sx == sy || sx == 0 {
            return sy;
        }
        // Mixed signs: compare x² with 5y².  Equality would force √5 = |x/y|,
        // impossible for y ≠ 0.
        let xx = &self.x * &self.x;
        let yy5 = BigInt::from(5) * &self.y * &self.y;
        match xx.cmp(&yy5) {
            Ordering::Greater => sx,
            Ordering::Less => sy,
            Ordering::Equal => unreachable!("√5 is irrational"),
        }
    }

    /// Multiplicative inverse.  Panics on zero (callers check first).
    pub fn inv(&self) -> Qs5 {
        assert!(!self.is_zero(), "inverse of zero");
        // 1/((x+y√5)/z) = z(x − y√5)/(x² − 5y²)
        let norm = &self.x * &self.x - BigInt::from(5) * &self.y * &self.y;
        Qs5::new(&self.z * &self.x, -(&self.z * &self.y), norm)
    }

    /// Exact floor.  Uses floor(y√5) = ±⌊√(5y²)⌋ (corrected for sign), then
    /// integer floor-division; valid because the numerator is irrational
    /// whenever y ≠ 0.
    pub fn floor(&self) -> BigInt {
        let fy5 = if self.y.is_zero() {
            BigInt::zero()
        } else {
            let s = (BigInt::from(5) * &self.y * &self.y).sqrt();
            if self.y.is_positive() { s } else { -s - 1 }
        };
        let n0 = &self.x + fy5; // n0 ≤ x + y√5 < n0 + 1
        n0.div_floor(&self.z)
    }

    /// Fractional part, in [0, 1).
    pub fn frac(&self) -> Qs5 {
        let f = self.floor();
        self - &Qs5 { x: f, y: BigInt::zero(), z: BigInt::from(1) }
    }

    pub fn to_f64(&self) -> f64 {
        let x = self.x.to_f64().unwrap_or(f64::NAN);
        let y = self.y.to_f64().unwrap_or(f64::NAN);
        let z = self.z.to_f64().unwrap_or(f64::NAN);
        (x + y * 5.0_f64.sqrt()) / z
    }
}

fn sign_of(n: &BigInt) -> i8 {
    if n.is_positive() {
        1
    } else if n.is_negative() {
        -1
    } else {
        0
    }
}

impl fmt::Debug for Qs5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} + {}√5)/{} ≈ {}", self.x, self.y, self.z, self.to_f64())
    }
}

impl Add for &Qs5 {
    type Output = Qs5;
    fn add(self, o: &Qs5) -> Qs5 {
        Qs5::new(
            &self.x * &o.z + &o.x * &self.z,
            &self.y * &o.z + &o.y * &self.z,
            &self.z * &o.z,
        )
    }
}

impl Sub for &Qs5 {
    type Output = Qs5;
    fn sub(self, o: &Qs5) -> Qs5 {
        Qs5::new(
            &self.x * &o.z - &o.x * &self.z,
            &self.y * &o.z - &o.y * &self.z,
            &self.z * &o.z,
        )
    }
}

impl Mul for &Qs5 {
    type Output = Qs5;
    fn mul(self, o: &Qs5) -> Qs5 {
        Qs5::new(
            &self.x * &o.x + BigInt::from(5) * &self.y * &o.y,
            &self.x * &o.y + &self.y * &o.x,
            &self.z * &o.z,
        )
    }
}

impl Div for &Qs5 {
    type Output = Qs5;
    fn div(self, o: &Qs5) -> Qs5 {
        self * &o.inv()
    }
}

impl Neg for &Qs5 {
    type Output = Qs5;
    fn neg(self) -> Qs5 {
        Qs5 { x: -self.x.clone(), y: -self.y.clone(), z: self.z.clone() }
    }
}

impl PartialOrd for Qs5 {
    fn partial_cmp(&self, other: &Qs5) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Qs5 {
    fn cmp(&self, other: &Qs5) -> Ordering {
        match (self - other).sign() {
            1 => Ordering::Greater,
            -1 => Ordering::Less,
            _ => Ordering::Equal,
        }
    }
}

/// Exact value of the prefix `[a_1..a_N]` completed with an all-ones tail:
/// `(p_{N+1} + p_N·g)/(q_{N+1} + q_N·g)`.
pub fn value(coeffs: &[u64]) -> Qs5 {
    assert!(!coeffs.is_empty());
    // Forward recurrence: q_{n} = a_{n-1} q_{n-1} + q_{n-2}, same for p.
    let (mut q0, mut q1) = (BigInt::zero(), BigInt::from(1));
    let (mut p0, mut p1) = (BigInt::from(1), BigInt::zero());
    for &a in coeffs {
        let a = BigInt::from(a);
        let q2 = &a * &q1 + &q0;
        let p2 = &a * &p1 + &p0;
        q0 = std::mem::replace(&mut q1, q2);
        p0 = std::mem::replace(&mut p1, p2);
    }
    // Now q1 = q_{N+1}, q0 = q_N; p likewise.  With g = (−1+√5)/2:
    //   p_{N+1} + p_N g = ((2p_{N+1} − p_N) + p_N √5)/2.
    let num = Qs5::new(BigInt::from(2) * &p1 - &p0, p0, BigInt::from(2));
    let den = Qs5::new(BigInt::from(2) * &q1 - &q0, q0, BigInt::from(2));
    &num / &den
}

/// Exact continued-fraction expansion of `x ∈ (0,1)` to `depth` coefficients.
/// A value whose expansion terminates before `depth` is rejected as rational.
pub fn expand(x: &Qs5, depth: usize) -> Result<Vec<u64>> {
    if x.sign() <= 0 || x >= &Qs5::one() {
        return Err(Error::InvalidContinuedFraction(format!(
            "expansion needs x in (0,1), got {:?}",
            x
        )));
    }
    let mut t = x.clone();
    let mut out = Vec::with_capacity(depth);
    for k in 0..depth {
        if t.is_zero() {
            return Err(Error::InvalidContinuedFraction(format!(
                "rational input: expansion terminates after {} coefficients",
                k
            )));
        }
        let inv = t.inv();
        let a = inv.floor();
        let a = a.to_u64().ok_or_else(|| {
            Error::InvalidContinuedFraction("partial quotient exceeds u64".into())
        })?;
        debug_assert!(a >= 1);
        out.push(a);
        t = inv.frac();
    }
    Ok(out)
}

/// Position of the orbit point `c_k` of the rigid rotation by `rho`:
/// `frac(k·rho)`, exactly.
pub fn position(rho: &Qs5, k: i128) -> Qs5 {
    let kq = Qs5::new(BigInt::from(k), BigInt::zero(), BigInt::from(1));
    (&kq * rho).frac()
}

/// An open arc on ℝ/ℤ, counterclockwise from `start` to `end`, with exact
/// endpoints in [0,1).  `start == end` is excluded (no full-circle arcs).
#[derive(Clone, Debug)]
pub struct ExactArc {
    pub start: Qs5,
    pub end: Qs5,
}

impl ExactArc {
    /// The arc of length < 1/2 with endpoints `a` and `b` ("combinatorial
    /// arc" convention).  Panics when the points are antipodal or equal,
    /// which cannot happen for distinct orbit points of an irrational
    /// rotation.
    pub fn short(a: &Qs5, b: &Qs5) -> ExactArc {
        let half = Qs5::from_ratio(1, 2);
        let d = (b - a).frac();
        assert!(!d.is_zero() && d != half, "degenerate combinatorial arc");
        if d < half {
            ExactArc { start: a.clone(), end: b.clone() }
        } else {
            ExactArc { start: b.clone(), end: a.clone() }
        }
    }

    /// The arc with endpoints `a` and `b` whose interior contains `p`.
    /// Panics when `p` coincides with an endpoint.
    pub fn around(a: &Qs5, b: &Qs5, p: &Qs5) -> ExactArc {
        let fwd = ExactArc { start: a.clone(), end: b.clone() };
        if fwd.contains(p) {
            return fwd;
        }
        let rev = ExactArc { start: b.clone(), end: a.clone() };
        assert!(rev.contains(p), "point lies on the arc boundary");
        rev
    }

    /// Image under the rotation `x ↦ x + delta`, exactly.
    pub fn rotated(&self, delta: &Qs5) -> ExactArc {
        ExactArc {
            start: (&self.start + delta).frac(),
            end: (&self.end + delta).frac(),
        }
    }

    /// Counterclockwise length, in (0,1).
    pub fn length(&self) -> Qs5 {
        (&self.end - &self.start).frac()
    }

    /// Offset of `p` from `start`, counterclockwise, in [0,1).
    fn offset(&self, p: &Qs5) -> Qs5 {
        (p - &self.start).frac()
    }

    /// Strict interior membership.
    pub fn contains(&self, p: &Qs5) -> bool {
        let d = self.offset(p);
        !d.is_zero() && d < self.length()
    }

    /// `self ⊆ other` as subsets of the circle (shared endpoints allowed).
    pub fn subset_of(&self, other: &ExactArc) -> bool {
        let a = other.offset(&self.start);
        let b = other.offset(&self.end);
        a <= b && b <= other.length()
    }

    /// Compact containment: the closure of `self` lies in the open `other`.
    pub fn compactly_inside(&self, other: &ExactArc) -> bool {
        let a = other.offset(&self.start);
        let b = other.offset(&self.end);
        a.sign() > 0 && a <= b && b < other.length()
    }

    /// Set equality of open arcs.
    pub fn same_as(&self, other: &ExactArc) -> bool {
        self.start == other.start && self.end == other.end
    }
}
