//! Continued fractions, convergents, and closest-return times.
//!
//! Rotation numbers are carried as finite coefficient prefixes
//! `ρ = [a_1, a_2, ...] = 1/(a_1 + 1/(a_2 + ...))`, completed with an
//! all-ones tail so the represented value is a genuine bounded-type
//! irrational (a rational value would make every circle-map experiment
//! downstream degenerate).  Convergent denominators `q_n`, numerators `p_n`,
//! return times `r_n = q_n + q_{n+1}` and their partial sums `𝐫_n` are exact
//! integers; the growth inequalities and the nested-arc containments are
//! checked in integer arithmetic only — see [`exact`].

pub mod exact;

use serde::Serialize;

use crate::error::{Error, Result};
use exact::{ExactArc, Qs5};

/// Tail value used to complete finite prefixes: `(√5−1)/2`.
pub const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Partial quotients above this are treated as float artifacts of a rational
/// input rather than genuine coefficients.
const RATIONAL_CUTOFF: f64 = 1e12;

/// A bounded-type rotation number, given by a coefficient prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RotationNumber {
    coeffs: Vec<u64>,
    bound: Option<u64>,
}

impl RotationNumber {
    /// `coeffs` must be nonempty with every entry ≥ 1; when `bound` is given
    /// every entry must be ≤ bound.
    pub fn new(coeffs: Vec<u64>, bound: Option<u64>) -> Result<RotationNumber> {
        if coeffs.is_empty() {
            return Err(Error::InvalidContinuedFraction(
                "empty coefficient prefix".into(),
            ));
        }
        if coeffs.iter().any(|&a| a == 0) {
            return Err(Error::InvalidContinuedFraction(
                "continued-fraction coefficients must be ≥ 1".into(),
            ));
        }
        if let Some(t) = bound {
            if let Some(&bad) = coeffs.iter().find(|&&a| a > t) {
                return Err(Error::InvalidContinuedFraction(format!(
                    "coefficient {} exceeds type bound {}",
                    bad, t
                )));
            }
        }
        Ok(RotationNumber { coeffs, bound })
    }

    /// The golden prefix `[1, 1, ..., 1]` of length `n`.
    pub fn golden(n: usize) -> RotationNumber {
        RotationNumber { coeffs: vec![1; n], bound: Some(1) }
    }

    /// Constant prefix `[a, a, ..., a]` of length `n`.
    pub fn constant(a: u64, n: usize) -> RotationNumber {
        assert!(a >= 1 && n >= 1);
        RotationNumber { coeffs: vec![a; n], bound: Some(a) }
    }

    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn bound(&self) -> Option<u64> {
        self.bound
    }

    pub fn depth(&self) -> usize {
        self.coeffs.len()
    }

    /// Value of the prefix completed with the all-ones tail, by backward
    /// recurrence (no cancellation: every intermediate is in (0,1)).
    pub fn value(&self) -> f64 {
        let mut t = GOLDEN;
        for &a in self.coeffs.iter().rev() {
            t = 1.0 / (a as f64 + t);
        }
        t
    }

    /// Same value, exactly, as an element of ℚ(√5).
    pub fn value_exact(&self) -> Qs5 {
        exact::value(&self.coeffs)
    }

    /// Exact convergents and return times up to index `N = self.depth()`.
    pub fn return_times(&self) -> Result<ReturnTimes> {
        ReturnTimes::compute(&self.coeffs)
    }
}

/// True iff every coefficient is ≤ `tau`.
pub fn is_bounded_type(coeffs: &[u64], tau: u64) -> bool {
    coeffs.iter().all(|&a| a >= 1 && a <= tau)
}

/// Continued-fraction expansion of `x ∈ (0,1)` to `depth` coefficients,
/// in floating point.  Rejects inputs that terminate (rationals) before
/// reaching `depth`.
pub fn cf_expand(x: f64, depth: usize) -> Result<Vec<u64>> {
    if !(0.0 < x && x < 1.0) {
        return Err(Error::InvalidContinuedFraction(format!(
            "expansion needs x in (0,1), got {}",
            x
        )));
    }
    if depth == 0 {
        return Err(Error::InvalidContinuedFraction("depth must be ≥ 1".into()));
    }
    let mut t = x;
    let mut out = Vec::with_capacity(depth);
    for _ in 0..depth {
        let inv = 1.0 / t;
        if !inv.is_finite() || inv > RATIONAL_CUTOFF {
            return Err(Error::InvalidContinuedFraction(format!(
                "rational input: partial quotient {:e} exceeds cutoff",
                inv
            )));
        }
        let a = inv.floor();
        out.push(a as u64);
        t = inv - a;
    }
    Ok(out)
}

/// Convergents `p_n/q_n` and closest-return times for a prefix `[a_1..a_N]`.
///
/// Index ranges: `q` and `p` hold indices `0..=N` (`q_0 = 0`, `q_1 = 1`,
/// `q_n = a_{n-1} q_{n-1} + q_{n-2}`).  `r[n] = q_n + q_{n+1}` and
/// `big_r[n] = Σ_{i=1}^n r_i` also hold indices `0..=N`; the single
/// lookahead value `q_{N+1}` they need is kept in `q_next`.
#[derive(Clone, Debug, Serialize)]
pub struct ReturnTimes {
    pub q: Vec<i128>,
    pub p: Vec<i128>,
    pub r: Vec<i128>,
    #[serde(rename = "R")]
    pub big_r: Vec<i128>,
    #[serde(skip)]
    pub q_next: i128,
}

impl ReturnTimes {
    fn compute(coeffs: &[u64]) -> Result<ReturnTimes> {
        let n = coeffs.len();
        let overflow = |i: usize| Error::ReturnTimeOverflow { index: i };
        let mut q: Vec<i128> = Vec::with_capacity(n + 1);
        let mut p: Vec<i128> = Vec::with_capacity(n + 1);
        q.extend([0, 1]);
        p.extend([1, 0]);
        // q_k for k = 2..=N+1 uses a_{k-1} = coeffs[k-2].
        for k in 2..=n + 1 {
            let a = coeffs[k - 2] as i128;
            let qk = a
                .checked_mul(q[k - 1])
                .and_then(|v| v.checked_add(q[k - 2]))
                .ok_or_else(|| overflow(k))?;
            let pk = a
                .checked_mul(p[k - 1])
                .and_then(|v| v.checked_add(p[k - 2]))
                .ok_or_else(|| overflow(k))?;
            q.push(qk);
            p.push(pk);
        }
        let q_next = q.pop().expect("q has N+2 entries");
        p.pop();
        let mut r: Vec<i128> = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let qk1 = if k + 1 <= n { q[k + 1] } else { q_next };
            r.push(q[k].checked_add(qk1).ok_or_else(|| overflow(k))?);
        }
        let mut big_r: Vec<i128> = vec![0; n + 1];
        for k in 1..=n {
            big_r[k] = big_r[k - 1]
                .checked_add(r[k])
                .ok_or_else(|| overflow(k))?;
        }
        Ok(ReturnTimes { q, p, r, big_r, q_next })
    }

    pub fn max_index(&self) -> usize {
        self.q.len() - 1
    }
}

/// One growth inequality `lhs ≥ rhs` (strict for the last clause) at index
/// `n`, with its exact operands and the coefficient-pattern prediction of
/// when equality occurs.
#[derive(Clone, Debug, Serialize)]
pub struct ClauseCheck {
    pub n: usize,
    pub lhs: i128,
    pub rhs: i128,
    pub holds: bool,
    pub equality: bool,
    /// Whether the coefficient pattern predicts equality; absent for the
    /// strict clause.
    pub equality_predicted: Option<bool>,
    /// True when the observed equality matches the prediction.
    pub iff_consistent: bool,
}

impl ClauseCheck {
    fn geq(n: usize, lhs: i128, rhs: i128, predicted: bool) -> ClauseCheck {
        let equality = lhs == rhs;
        ClauseCheck {
            n,
            lhs,
            rhs,
            holds: lhs >= rhs,
            equality,
            equality_predicted: Some(predicted),
            iff_consistent: equality == predicted,
        }
    }

    fn strict(n: usize, lhs: i128, rhs: i128) -> ClauseCheck {
        ClauseCheck {
            n,
            lhs,
            rhs,
            holds: lhs > rhs,
            equality: lhs == rhs,
            equality_predicted: None,
            iff_consistent: true,
        }
    }

    fn ok(&self) -> bool {
        self.holds && self.iff_consistent
    }
}

/// Exact containment results for the closest-return arcs
/// `J±_n = (±q_n, ±q_{n+1})_c` around the marked point at index `n`.
#[derive(Clone, Debug, Serialize)]
pub struct ArcCheck {
    pub n: usize,
    /// Both arcs are neighborhoods of the marked orbit point `c_0`.
    pub contains_c0: bool,
    /// `J⁺_n ⋐ J⁻_{n−1}` (compactly).
    pub plus_compactly_in_minus_prev: bool,
    /// `J⁻_{n−1} ⊂ J⁻_{n−2}` (subset; they share an endpoint).
    pub minus_prev_in_minus_prev2: bool,
    /// The `r_n`-fold preimage of `J⁺_n` under the rotation is `J⁻_n`.
    pub pullback_is_minus: bool,
    /// `J⁻_n ⋐ g^{−r_n}(J⁻_{n−1}) ⋐ J⁻_{n−2}`.
    pub pullback_chain: bool,
    pub ok: bool,
}

/// Full report: the four growth clauses plus the nested-arc containments,
/// all decided in exact integer arithmetic.  A failing entry is recorded,
/// not raised.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub clause_i: Vec<ClauseCheck>,
    pub clause_ii: Vec<ClauseCheck>,
    pub clause_iii: Vec<ClauseCheck>,
    pub clause_iv: Vec<ClauseCheck>,
    pub arcs: Vec<ArcCheck>,
    pub all_hold: bool,
}

/// Checks, for every index in range:
///
/// i)   `q_n ≥ r_{n−2}`, equality iff `a_{n−1} = 1`;
/// ii)  `q_{n+1} ≥ r_{n−2} + r_{n−3}`, equality iff `a_n = a_{n−1} = a_{n−2} = 1`;
/// iii) `𝐫_{n−2} ≥ 𝐫_n − r_{n+1}`, equality iff `a_{n+1} = a_n = 1`;
/// iv)  `r_n > 𝐫_{n−2}` (always strict);
///
/// and the arc containments `J⁺_n ⋐ J⁻_{n−1} ⊂ J⁻_{n−2}`,
/// `J⁻_n = g^{−r_n}(J⁺_n) ⋐ g^{−r_n}(J⁻_{n−1}) ⋐ J⁻_{n−2}` with exact
/// endpoint positions of the rigid rotation, for `4 ≤ n < N`.
///
/// Requires a prefix of length ≥ 6 so that every clause has a nonempty range.
pub fn verify_growth_lemmas(rho: &RotationNumber) -> Result<GrowthReport> {
    let n_max = rho.depth();
    if n_max < 6 {
        return Err(Error::BadRequest(format!(
            "growth report needs a prefix of length ≥ 6, got {}",
            n_max
        )));
    }
    let rt = rho.return_times()?;
    let a = |i: usize| rho.coeffs[i - 1]; // a_i, 1-based
    let (q, r, big_r) = (&rt.q, &rt.r, &rt.big_r);

    let mut clause_i = Vec::new();
    let mut clause_ii = Vec::new();
    let mut clause_iii = Vec::new();
    let mut clause_iv = Vec::new();
    for n in 3..=n_max {
        clause_i.push(ClauseCheck::geq(n, q[n], r[n - 2], a(n - 1) == 1));
        clause_iv.push(ClauseCheck::strict(n, r[n], big_r[n - 2]));
        if n + 1 <= n_max {
            clause_ii.push(ClauseCheck::geq(
                n,
                q[n + 1],
                r[n - 2] + r[n - 3],
                a(n) == 1 && a(n - 1) == 1 && a(n - 2) == 1,
            ));
            clause_iii.push(ClauseCheck::geq(
                n,
                big_r[n - 2],
                big_r[n] - r[n + 1],
                a(n + 1) == 1 && a(n) == 1,
            ));
        }
    }

    let value = rho.value_exact();
    let pos = |k: i128| exact::position(&value, k);
    let c0 = Qs5::zero();
    // J±_n: the arc with endpoints c_{±q_n}, c_{±q_{n+1}} containing c_0.
    // (The endpoints straddle c_0 for n ≥ 2 because q_nρ − p_n alternates in
    // sign; J⁻_1 can degenerate — q_1 = q_2 when a_1 = 1 — so the checks
    // start where the outermost arc is J⁻_2.)
    let j_arc = |sgn: i128, n: usize| -> ExactArc {
        ExactArc::around(&pos(sgn * q[n]), &pos(sgn * q[n + 1]), &c0)
    };
    let mut arcs = Vec::new();
    for n in 4..n_max {
        let jp_n = j_arc(1, n);
        let jm_n = j_arc(-1, n);
        let jm_prev = j_arc(-1, n - 1);
        let jm_prev2 = j_arc(-1, n - 2);
        let contains_c0 = jp_n.contains(&c0) && jm_n.contains(&c0);
        let plus_in_prev = jp_n.compactly_inside(&jm_prev);
        let prev_in_prev2 = jm_prev.subset_of(&jm_prev2);
        // g^{−r_n} is the rotation by −r_n·ρ; images are exact in position
        // space, no shortest-arc assumption needed.
        let back = -&pos(r[n]);
        let pull_plus = jp_n.rotated(&back);
        let pull_prev = jm_prev.rotated(&back);
        let pullback_is_minus = pull_plus.same_as(&jm_n);
        let pullback_chain = jm_n.compactly_inside(&pull_prev)
            && pull_prev.compactly_inside(&jm_prev2);
        let ok = contains_c0
            && plus_in_prev
            && prev_in_prev2
            && pullback_is_minus
            && pullback_chain;
        arcs.push(ArcCheck {
            n,
            contains_c0,
            plus_compactly_in_minus_prev: plus_in_prev,
            minus_prev_in_minus_prev2: prev_in_prev2,
            pullback_is_minus,
            pullback_chain,
            ok,
        });
    }

    let all_hold = clause_i.iter().all(ClauseCheck::ok)
        && clause_ii.iter().all(ClauseCheck::ok)
        && clause_iii.iter().all(ClauseCheck::ok)
        && clause_iv.iter().all(ClauseCheck::ok)
        && arcs.iter().all(|c| c.ok);
    Ok(GrowthReport {
        clause_i,
        clause_ii,
        clause_iii,
        clause_iv,
        arcs,
        all_hold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_returns_are_fibonacci() {
        let rho = RotationNumber::golden(5);
        let rt = rho.return_times().unwrap();
        assert_eq!(rt.q, vec![0, 1, 1, 2, 3, 5]);
        assert_eq!(rt.r[2], 3);
        assert_eq!(rt.r[3], 5);
    }

    #[test]
    fn silver_returns_match_hand_recurrence() {
        let rho = RotationNumber::constant(2, 5);
        let rt = rho.return_times().unwrap();
        assert_eq!(rt.q, vec![0, 1, 2, 5, 12, 29]);
    }

    #[test]
    fn convergents_are_coprime_and_increasing() {
        let rho = RotationNumber::new(vec![3, 1, 4, 1, 5, 9, 2, 6], None).unwrap();
        let rt = rho.return_times().unwrap();
        for n in 1..rt.q.len() {
            assert_eq!(num_integer::gcd(rt.p[n], rt.q[n]), 1, "n = {}", n);
            if n >= 3 {
                assert!(rt.q[n] > rt.q[n - 1]);
            }
        }
    }

    #[test]
    fn expand_golden() {
        let x = (5.0_f64.sqrt() - 1.0) / 2.0;
        assert_eq!(cf_expand(x, 6).unwrap(), vec![1; 6]);
    }

    #[test]
    fn expand_rejects_one_third() {
        assert!(matches!(
            cf_expand(1.0 / 3.0, 4),
            Err(Error::InvalidContinuedFraction(_))
        ));
    }

    #[test]
    fn expand_silver_and_reconstruct() {
        let x = 2.0_f64.sqrt() - 1.0;
        assert_eq!(cf_expand(x, 5).unwrap(), vec![2; 5]);
        // Reconstruction error is below 1/q² for the convergent denominator
        // q = 70 of the depth-5 prefix.
        let rational = 29.0 / 70.0;
        assert!((rational - x).abs() < 1.0 / (70.0 * 70.0));
        // A deeper prefix pins the expansion to well under 1e-6.
        assert_eq!(cf_expand(x, 12).unwrap(), vec![2; 12]);
        let deep = RotationNumber::constant(2, 12).value();
        assert!((deep - x).abs() < 1e-6);
    }

    #[test]
    fn value_lies_between_consecutive_convergents() {
        let rho = RotationNumber::new(vec![2, 1, 3, 1, 1, 2, 1, 4], None).unwrap();
        let rt = rho.return_times().unwrap();
        let x = rho.value();
        for n in 2..rt.q.len() - 1 {
            let a = rt.p[n] as f64 / rt.q[n] as f64;
            let b = rt.p[n + 1] as f64 / rt.q[n + 1] as f64;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(lo < x && x < hi, "n = {}: {} not in ({}, {})", n, x, lo, hi);
        }
    }

    #[test]
    fn closest_return_distances_decrease() {
        // |q_n ρ − p_n| strictly decreasing, alternating sign: the oracle
        // for closest-return geometry, checked exactly.
        let rho = RotationNumber::new(vec![1, 2, 1, 1, 3, 1, 2, 1, 1, 1], None).unwrap();
        let rt = rho.return_times().unwrap();
        let v = rho.value_exact();
        let beta = |n: usize| {
            let q = exact::Qs5::from_ratio(rt.q[n], 1);
            let p = exact::Qs5::from_ratio(rt.p[n], 1);
            &(&q * &v) - &p
        };
        let mut prev = beta(0); // = −1
        for n in 1..rt.q.len() {
            let b = beta(n);
            assert_eq!(b.sign(), -prev.sign(), "alternation at n = {}", n);
            let abs_b = if b.sign() >= 0 { b.clone() } else { -&b };
            let abs_p = if prev.sign() >= 0 { prev.clone() } else { -&prev };
            assert!(abs_b < abs_p, "|β| not decreasing at n = {}", n);
            prev = b;
        }
    }

    #[test]
    fn golden_growth_all_equalities() {
        let rho = RotationNumber::golden(10);
        let rep = verify_growth_lemmas(&rho).unwrap();
        assert!(rep.all_hold);
        assert!(rep.clause_i.iter().all(|c| c.equality));
        assert!(rep.clause_ii.iter().all(|c| c.equality));
        assert!(rep.clause_iii.iter().all(|c| c.equality));
    }

    #[test]
    fn silver_growth_all_strict() {
        let rho = RotationNumber::constant(2, 10);
        let rep = verify_growth_lemmas(&rho).unwrap();
        assert!(rep.all_hold);
        assert!(rep.clause_i.iter().all(|c| !c.equality));
        assert!(rep.clause_ii.iter().all(|c| !c.equality));
        assert!(rep.clause_iii.iter().all(|c| !c.equality));
    }

    #[test]
    fn growth_report_rejects_short_prefix() {
        let rho = RotationNumber::golden(5);
        assert!(verify_growth_lemmas(&rho).is_err());
    }

    #[test]
    fn return_times_overflow_is_reported() {
        let rho = RotationNumber::new(vec![u64::MAX / 2; 5], None).unwrap();
        assert!(matches!(
            rho.return_times(),
            Err(Error::ReturnTimeOverflow { .. })
        ));
    }

    #[test]
    fn serialization_shape() {
        let rt = RotationNumber::golden(4).return_times().unwrap();
        let js = serde_json::to_value(&rt).unwrap();
        assert!(js.get("q").is_some());
        assert!(js.get("p").is_some());
        assert!(js.get("r").is_some());
        assert!(js.get("R").is_some());
        assert!(js.get("q_next").is_none());
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn bounded_prefix(max_a: u64, len: std::ops::RangeInclusive<usize>)
        -> impl Strategy<Value = Vec<u64>>
    {
        prop::collection::vec(1..=max_a, len)
    }

    proptest! {
        #[test]
        fn exact_round_trip(coeffs in bounded_prefix(10, 8..=20)) {
            let rho = RotationNumber::new(coeffs.clone(), Some(10)).unwrap();
            let v = rho.value_exact();
            prop_assert!(v.sign() > 0 && v < exact::Qs5::one());
            let back = exact::expand(&v, coeffs.len()).unwrap();
            prop_assert_eq!(back, coeffs);
        }

        #[test]
        fn f64_round_trip_shallow(coeffs in bounded_prefix(2, 6..=8)) {
            let rho = RotationNumber::new(coeffs.clone(), Some(2)).unwrap();
            let back = cf_expand(rho.value(), coeffs.len()).unwrap();
            prop_assert_eq!(back, coeffs);
        }

        #[test]
        fn growth_lemmas_hold(coeffs in bounded_prefix(10, 6..=20)) {
            let rho = RotationNumber::new(coeffs, Some(10)).unwrap();
            let rep = verify_growth_lemmas(&rho).unwrap();
            prop_assert!(rep.all_hold);
        }

        #[test]
        fn convergents_coprime(coeffs in bounded_prefix(9, 6..=18)) {
            let rho = RotationNumber::new(coeffs, None).unwrap();
            let rt = rho.return_times().unwrap();
            for n in 1..rt.q.len() {
                prop_assert_eq!(num_integer::gcd(rt.p[n], rt.q[n]), 1);
            }
        }

        #[test]
        fn value_matches_exact(coeffs in bounded_prefix(5, 6..=14)) {
            let rho = RotationNumber::new(coeffs, None).unwrap();
            let f = rho.value();
            let e = rho.value_exact().to_f64();
            prop_assert!((f - e).abs() < 1e-12);
        }
    }
}
