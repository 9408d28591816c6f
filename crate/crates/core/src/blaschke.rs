//! The Herman family of Blaschke-type rational maps
//! `F(z) = λ z^d ∏ (1 − ā_i z)/(z − a_i)` with `|λ| = 1`, `|a_i| < 1`:
//! construction, validation, the circle restriction as a lift, solving the
//! rotation parameter λ, and the critical set.
//!
//! The restriction of `F` to the unit circle has winding number 1 and is a
//! homeomorphism for admissible zero configurations; with the canonical
//! member (`d = 2`, `a_1 = 1/3`) it carries one critical angle at `z = 1`
//! of local degree 3.  `F` commutes with the reflection `z ↦ 1/z̄`, which
//! pairs the interior and exterior dynamics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::cf::RotationNumber;
use crate::circle::{rotation_number, CircleMapLift, LiftKind, RotationEstimate};
use crate::error::{Error, Result};
use crate::geom::{self, TAU};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

// ---------------------------------------------------------------------------
// small dense polynomial kit (coefficients low-to-high)

pub(crate) fn poly_eval(c: &[Complex64], z: Complex64) -> Complex64 {
    let mut v = Complex64::new(0.0, 0.0);
    for k in (0..c.len()).rev() {
        v = v * z + c[k];
    }
    v
}

pub(crate) fn poly_deriv(c: &[Complex64]) -> Vec<Complex64> {
    if c.len() <= 1 {
        return vec![Complex64::new(0.0, 0.0)];
    }
    (1..c.len()).map(|k| c[k] * k as f64).collect()
}

pub(crate) fn poly_mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Drops trailing coefficients that are negligible against the largest one.
pub(crate) fn poly_trim(c: &[Complex64]) -> Vec<Complex64> {
    let scale = c.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let mut v = c.to_vec();
    while v.len() > 1 && v.last().unwrap().norm() <= 1e-14 * scale {
        v.pop();
    }
    v
}

/// Backward-error style relative residual of `p` at `z`.
pub(crate) fn poly_residual(c: &[Complex64], z: Complex64) -> f64 {
    let mut scale = 0.0;
    let mut zp = 1.0;
    for ck in c {
        scale += ck.norm() * zp;
        zp *= z.norm();
    }
    poly_eval(c, z).norm() / scale.max(f64::MIN_POSITIVE)
}

/// All complex roots by Aberth–Ehrlich simultaneous iteration (no
/// deflation).  Multiple roots come out as tight clusters; callers merge.
pub(crate) fn aberth_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let c = poly_trim(coeffs);
    let n = c.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    let lead = c[n];
    let radius = 1.0
        + c[..n]
            .iter()
            .map(|a| (a / lead).norm())
            .fold(0.0, f64::max);
    let dc = poly_deriv(&c);
    // Slightly irrational start angles so symmetric configurations do not
    // stall on a symmetric (non-converging) iterate.
    let mut z: Vec<Complex64> = (0..n)
        .map(|j| Complex64::from_polar(0.7 * radius, TAU * (j as f64 + 0.27) / n as f64 + 0.33))
        .collect();
    for _ in 0..400 {
        let mut worst = 0.0f64;
        for j in 0..n {
            let pj = poly_eval(&c, z[j]);
            let dpj = poly_eval(&dc, z[j]);
            let newton = if dpj.norm() > f64::MIN_POSITIVE {
                pj / dpj
            } else {
                Complex64::new(1e-6, 1e-6)
            };
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..n {
                if i != j {
                    let d = z[j] - z[i];
                    if d.norm() > f64::MIN_POSITIVE {
                        s += d.inv();
                    }
                }
            }
            let denom = ONE - newton * s;
            let step = if denom.norm() > 1e-12 { newton / denom } else { newton };
            z[j] -= step;
            worst = worst.max(step.norm() / (1.0 + z[j].norm()));
        }
        if worst < 1e-15 {
            break;
        }
    }
    z
}

/// Newton polish adapted to a root of known multiplicity `m`
/// (`z ← z − m·p/p′` is quadratically convergent at an `m`-fold root).
fn polish_multiple(c: &[Complex64], dc: &[Complex64], z0: Complex64, m: usize) -> Complex64 {
    let mut z = z0;
    let mut best = (poly_residual(c, z), z);
    for _ in 0..40 {
        let p = poly_eval(c, z);
        let dp = poly_eval(dc, z);
        if dp.norm() < f64::MIN_POSITIVE {
            break;
        }
        z -= p / dp * m as f64;
        let r = poly_residual(c, z);
        if r < best.0 {
            best = (r, z);
        }
        if r < 1e-16 {
            break;
        }
    }
    best.1
}

/// Arbitrary-precision fallback: exact rational Newton on the f64
/// coefficients, with intermediate values rounded to 720 fractional bits
/// (comfortably beyond 200 decimal digits).  Only called when the f64
/// polish cannot reach the residual gate.
fn polish_rational(c: &[Complex64], z0: Complex64, m: usize) -> Complex64 {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{One, Signed, ToPrimitive, Zero};

    type Q = BigRational;
    #[derive(Clone)]
    struct Cq {
        re: Q,
        im: Q,
    }
    fn q(x: f64) -> Q {
        Q::from_float(x).unwrap_or_else(Q::zero)
    }
    fn round_bits(x: &Q, bits: usize) -> Q {
        let scale: BigInt = BigInt::one() << bits;
        let scaled = x * Q::from_integer(scale.clone());
        Q::new(scaled.round().to_integer(), scale)
    }
    impl Cq {
        fn from(z: Complex64) -> Cq {
            Cq { re: q(z.re), im: q(z.im) }
        }
        fn to_c64(&self) -> Complex64 {
            Complex64::new(self.re.to_f64().unwrap_or(0.0), self.im.to_f64().unwrap_or(0.0))
        }
        fn add(&self, o: &Cq) -> Cq {
            Cq { re: &self.re + &o.re, im: &self.im + &o.im }
        }
        fn sub(&self, o: &Cq) -> Cq {
            Cq { re: &self.re - &o.re, im: &self.im - &o.im }
        }
        fn mul(&self, o: &Cq) -> Cq {
            Cq {
                re: &self.re * &o.re - &self.im * &o.im,
                im: &self.re * &o.im + &self.im * &o.re,
            }
        }
        fn div(&self, o: &Cq) -> Option<Cq> {
            let den = &o.re * &o.re + &o.im * &o.im;
            if den.is_zero() {
                return None;
            }
            let num = self.mul(&Cq { re: o.re.clone(), im: -o.im.clone() });
            Some(Cq { re: num.re / &den, im: num.im / &den })
        }
        fn scale(&self, k: i64) -> Cq {
            let k = Q::from_integer(BigInt::from(k));
            Cq { re: &self.re * &k, im: &self.im * &k }
        }
        fn rounded(&self, bits: usize) -> Cq {
            Cq { re: round_bits(&self.re, bits), im: round_bits(&self.im, bits) }
        }
        fn norm_est(&self) -> f64 {
            self.to_c64().norm()
        }
    }

    let cq: Vec<Cq> = c.iter().map(|&x| Cq::from(x)).collect();
    let dq: Vec<Cq> = poly_deriv(c).iter().map(|&x| Cq::from(x)).collect();
    let eval = |p: &[Cq], z: &Cq| -> Cq {
        let mut v = Cq { re: Q::zero(), im: Q::zero() };
        for k in (0..p.len()).rev() {
            v = v.mul(z).add(&p[k]).rounded(720);
        }
        v
    };
    let mut z = Cq::from(z0);
    for _ in 0..12 {
        let p = eval(&cq, &z);
        let dp = eval(&dq, &z);
        let Some(step) = p.div(&dp) else { break };
        let step = step.scale(m as i64).rounded(720);
        if step.norm_est() < 1e-60 {
            break;
        }
        z = z.sub(&step).rounded(720);
    }
    let _ = Signed::abs(&Q::zero()); // keep the Signed import exercised
    z.to_c64()
}

// ---------------------------------------------------------------------------
// the family

/// A member of the Herman family `F(z) = λ z^d ∏ (1 − ā_i z)/(z − a_i)`.
///
/// Construction checks only structure (`d ≥ 2`, `d − 1` zeros, finite
/// entries); the analytic admissibility conditions live in
/// [`validate_family`] so that deliberately broken members can be examined.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HermanBlaschke {
    d: usize,
    lambda: Complex64,
    zeros: Vec<Complex64>,
}

impl HermanBlaschke {
    pub fn new(d: usize, lambda: Complex64, zeros: Vec<Complex64>) -> Result<HermanBlaschke> {
        if d < 2 {
            return Err(Error::InvalidMember(format!("degree parameter d = {} < 2", d)));
        }
        if zeros.len() != d - 1 {
            return Err(Error::InvalidMember(format!(
                "expected {} zeros for d = {}, got {}",
                d - 1,
                d,
                zeros.len()
            )));
        }
        if !lambda.is_finite() || zeros.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidMember("non-finite parameter".into()));
        }
        Ok(HermanBlaschke { d, lambda, zeros })
    }

    /// The canonical member: `d = 2`, one zero at `1/3`.  Its circle
    /// restriction is a critical circle map with critical angle 0 (the
    /// critical point `z = 1` has local degree 3).
    pub fn classical(lambda: Complex64) -> HermanBlaschke {
        HermanBlaschke { d: 2, lambda, zeros: vec![Complex64::new(1.0 / 3.0, 0.0)] }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    pub fn zeros(&self) -> &[Complex64] {
        &self.zeros
    }

    /// Degree of `F` as a rational map (numerator degree `2d − 1`).
    pub fn rational_degree(&self) -> usize {
        2 * self.d - 1
    }

    /// `lim F(z)/z^d` as `z → ∞`: the leading constant `λ ∏ (−ā_i)`.
    pub fn leading_constant(&self) -> Complex64 {
        self.zeros.iter().fold(self.lambda, |acc, a| acc * (-a.conj()))
    }

    fn pole_guard(&self, z: Complex64) -> Result<()> {
        for a in &self.zeros {
            let dist = (z - a).norm();
            if dist < 1e-13 {
                return Err(Error::NearPole { pole: *a, dist });
            }
        }
        Ok(())
    }

    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        self.pole_guard(z)?;
        let mut v = self.lambda * z.powu(self.d as u32);
        for a in &self.zeros {
            v *= (ONE - a.conj() * z) / (z - a);
        }
        Ok(v)
    }

    /// `F′(z)` by the analytic formula `λ z^{d−1} M(z)/Q(z)²` with
    /// `M = d·P·Q + z(P′Q − PQ′)`; robust at zeros of `F` where the plain
    /// logarithmic derivative degenerates.
    pub fn deriv(&self, z: Complex64) -> Result<Complex64> {
        self.pole_guard(z)?;
        let (p, dp) = self.p_and_deriv(z);
        let (q, dq) = self.q_and_deriv(z);
        let m = p * q * self.d as f64 + z * (dp * q - p * dq);
        Ok(self.lambda * z.powu(self.d as u32 - 1) * m / (q * q))
    }

    fn p_and_deriv(&self, z: Complex64) -> (Complex64, Complex64) {
        let mut p = ONE;
        for a in &self.zeros {
            p *= ONE - a.conj() * z;
        }
        let mut dp = Complex64::new(0.0, 0.0);
        for j in 0..self.zeros.len() {
            let mut t = -self.zeros[j].conj();
            for (i, a) in self.zeros.iter().enumerate() {
                if i != j {
                    t *= ONE - a.conj() * z;
                }
            }
            dp += t;
        }
        (p, dp)
    }

    fn q_and_deriv(&self, z: Complex64) -> (Complex64, Complex64) {
        let mut q = ONE;
        for a in &self.zeros {
            q *= z - a;
        }
        let mut dq = Complex64::new(0.0, 0.0);
        for j in 0..self.zeros.len() {
            let mut t = ONE;
            for (i, a) in self.zeros.iter().enumerate() {
                if i != j {
                    t *= z - a;
                }
            }
            dq += t;
        }
        (q, dq)
    }

    /// Numerator coefficients of `F` (low-to-high): `λ z^d P(z)`.
    pub fn numerator_coeffs(&self) -> Vec<Complex64> {
        let mut p = vec![ONE];
        for a in &self.zeros {
            p = poly_mul(&p, &[ONE, -a.conj()]);
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.d];
        out.extend(p.iter().map(|c| c * self.lambda));
        out
    }

    /// Denominator coefficients of `F` (low-to-high): `Q(z) = ∏(z − a_i)`.
    pub fn denominator_coeffs(&self) -> Vec<Complex64> {
        let mut q = vec![ONE];
        for a in &self.zeros {
            q = poly_mul(&q, &[-a, ONE]);
        }
        q
    }

    /// All solutions of `F(z) = w` (roots of `λ z^d P − w Q`), Aberth-style.
    pub fn preimages(&self, w: Complex64) -> Vec<Complex64> {
        let mut num = self.numerator_coeffs();
        let den = self.denominator_coeffs();
        for (k, c) in den.iter().enumerate() {
            num[k] -= w * c;
        }
        let dc = poly_deriv(&poly_trim(&num));
        let raw = aberth_roots(&num);
        raw.into_iter().map(|z| polish_multiple(&poly_trim(&num), &dc, z, 1)).collect()
    }

    /// Finite fixed points of `F` (roots of `λ z^d P − z Q`).  The point at
    /// infinity, also fixed, is not included.
    pub fn fixed_points(&self) -> Vec<Complex64> {
        let mut num = self.numerator_coeffs();
        let den = self.denominator_coeffs();
        if num.len() < den.len() + 1 {
            num.resize(den.len() + 1, Complex64::new(0.0, 0.0));
        }
        for (k, c) in den.iter().enumerate() {
            num[k + 1] -= c;
        }
        let num = poly_trim(&num);
        let dc = poly_deriv(&num);
        let raw = aberth_roots(&num);
        raw.into_iter().map(|z| polish_multiple(&num, &dc, z, 1)).collect()
    }

    /// Coefficients of `M(z) = d·P·Q + z(P′Q − PQ′)`, whose roots are the
    /// critical points of `F` in the punctured plane.
    fn critical_numerator(&self) -> Vec<Complex64> {
        let mut p = vec![ONE];
        let mut q = vec![ONE];
        for a in &self.zeros {
            p = poly_mul(&p, &[ONE, -a.conj()]);
            q = poly_mul(&q, &[-a, ONE]);
        }
        let dp = poly_deriv(&p);
        let dq = poly_deriv(&q);
        let pq = poly_mul(&p, &q);
        let cross_len = (dp.len() + q.len() - 1).max(p.len() + dq.len() - 1);
        let mut cross = vec![Complex64::new(0.0, 0.0); cross_len];
        for (k, c) in poly_mul(&dp, &q).iter().enumerate() {
            cross[k] += c;
        }
        for (k, c) in poly_mul(&p, &dq).iter().enumerate() {
            cross[k] -= c;
        }
        let mut m = vec![Complex64::new(0.0, 0.0); (pq.len()).max(cross.len() + 1)];
        for (k, c) in pq.iter().enumerate() {
            m[k] += c * self.d as f64;
        }
        for (k, c) in cross.iter().enumerate() {
            m[k + 1] += c;
        }
        poly_trim(&m)
    }

    /// The circle restriction as a degree-1 lift in turns:
    /// `ĝ(x) = x + arg λ/2π + (1/π) Σ Arg(1 − ā_i e^{2πix})`, with
    /// derivative `Re(z F′/F)`.  The translation is normalized to `[0, 1)`.
    pub fn circle_lift(&self) -> CircleMapLift {
        self.circle_lift_offset(geom::frac(self.lambda.arg() / TAU))
    }

    /// Same lift with an explicit translation `t` (in turns) in place of
    /// `arg λ/2π`; lets a solver move through `t > 1/2` without the branch
    /// jump of the principal argument.
    pub(crate) fn circle_lift_offset(&self, t: f64) -> CircleMapLift {
        let zeros = self.zeros.clone();
        let zeros_d = self.zeros.clone();
        let d = self.d as f64;
        CircleMapLift::new(
            move |x: f64| {
                let z = geom::unit(x);
                let mut y = x + t;
                for a in &zeros {
                    y += (ONE - a.conj() * z).arg() / PI;
                }
                y
            },
            move |x: f64| {
                let z = geom::unit(x);
                let mut s = Complex64::new(d, 0.0);
                for a in &zeros_d {
                    s -= a.conj() * z / (ONE - a.conj() * z);
                    s -= z / (z - a);
                }
                s.re
            },
            LiftKind::Blaschke,
        )
    }
}

// ---------------------------------------------------------------------------
// validation

/// Diagnostic report for one member against a target rotation number.
/// `all_pass` aggregates the admissibility conditions and the rotation
/// check.
#[derive(Clone, Debug, Serialize)]
pub struct FamilyReport {
    pub zeros_in_disk: bool,
    pub lambda_unit: bool,
    pub unit_circle_max_defect: f64,
    pub symmetry_max_defect: f64,
    pub min_circle_derivative: f64,
    pub monotone_circle: bool,
    pub rotation_estimate: f64,
    pub rotation_err_bound: f64,
    pub rotation_target: f64,
    pub rotation_ok: bool,
    pub all_pass: bool,
}

/// Gate for the rotation-number comparison in [`validate_family`]; solved
/// members sit orders of magnitude below it.
const ROTATION_GATE: f64 = 1e-6;

/// Checks the admissibility of a member (zeros in the disk, unimodular λ,
/// unit circle preserved, restriction monotone, reflection symmetry) and
/// compares the measured rotation number of the circle restriction with
/// `rho`.
pub fn validate_family(f: &HermanBlaschke, rho: &RotationNumber) -> Result<FamilyReport> {
    let zeros_in_disk = f.zeros().iter().all(|a| a.norm() < 1.0);
    let lambda_unit = (f.lambda().norm() - 1.0).abs() <= 1e-14;

    // |F| = 1 on the circle, sampled on a low-discrepancy angle set.
    let mut unit_defect = 0.0f64;
    for k in 0..257 {
        let theta = geom::frac(k as f64 * crate::cf::GOLDEN + 0.123);
        if let Ok(v) = f.eval(geom::unit(theta)) {
            unit_defect = unit_defect.max((v.norm() - 1.0).abs());
        }
    }

    // Reflection identity F(1/z̄) · conj(F(z)) = 1 at off-circle samples.
    let mut sym_defect = 0.0f64;
    for k in 0..64 {
        let z = Complex64::from_polar(
            0.45 + 0.5 * geom::frac(k as f64 * 0.381_966),
            TAU * geom::frac(k as f64 * crate::cf::GOLDEN + 0.05),
        );
        let mirrored = z.conj().inv();
        let (Ok(fz), Ok(fm)) = (f.eval(z), f.eval(mirrored)) else { continue };
        if fz.norm() < 1e-8 || fz.norm() > 1e8 {
            continue;
        }
        sym_defect = sym_defect.max((fm * fz.conj() - ONE).norm() / fz.norm().max(1.0));
    }

    let lift = f.circle_lift();
    let mut min_deriv = f64::INFINITY;
    for k in 0..4096 {
        min_deriv = min_deriv.min(lift.deriv(k as f64 / 4096.0));
    }
    let monotone_circle = min_deriv > -1e-9 && lift.check_degree_one(64);

    // Rotation estimate at the best precision the prefix supports.
    let rt = rho.return_times()?;
    let n_max = rt.max_index();
    let floor = 1.0 / (rt.q[n_max] as f64 * rt.q_next as f64) + 2e-15;
    let est = if monotone_circle {
        rotation_number(&lift, 0.0, Some(&rt), (1e-8f64).max(floor * 1.01))?
    } else {
        RotationEstimate { value: f64::NAN, err_bound: f64::INFINITY, iterates: 0 }
    };
    let target = rho.value();
    let rotation_ok = geom::circ_dist(geom::frac(est.value), geom::frac(target))
        <= ROTATION_GATE.max(4.0 * est.err_bound);

    let all_pass = zeros_in_disk
        && lambda_unit
        && unit_defect < 1e-10
        && sym_defect < 1e-10
        && monotone_circle
        && rotation_ok;
    Ok(FamilyReport {
        zeros_in_disk,
        lambda_unit,
        unit_circle_max_defect: unit_defect,
        symmetry_max_defect: sym_defect,
        min_circle_derivative: min_deriv,
        monotone_circle,
        rotation_estimate: est.value,
        rotation_err_bound: est.err_bound,
        rotation_target: target,
        rotation_ok,
        all_pass,
    })
}

// ---------------------------------------------------------------------------
// lambda solve

/// Finds `λ = e^{2πit}` such that the circle restriction of
/// `(d, λ, zeros)` has rotation number `value(rho)` within `tol`.
///
/// The lift depends on `t` by a plain translation (`ĝ_t = ĝ_0 + t`), so the
/// rotation response is a monotone (devil's-staircase) function of `t`;
/// after a coarse-grid sanity check the solver runs plain bisection.  The
/// procedure is deterministic: fixed grids, fixed iteration counts, no
/// randomness.
pub fn solve_lambda(
    zeros: &[Complex64],
    d: usize,
    rho: &RotationNumber,
    tol: f64,
) -> Result<(Complex64, RotationEstimate)> {
    if !(tol > 0.0) {
        return Err(Error::BadRequest("tolerance must be > 0".into()));
    }
    let base = HermanBlaschke::new(d, ONE, zeros.to_vec())?;
    if !base.zeros().iter().all(|a| a.norm() < 1.0) {
        return Err(Error::InvalidMember(
            "invalid zero configuration: zero outside the open unit disk".into(),
        ));
    }
    // ĝ′ does not depend on arg λ, so one monotonicity scan covers the
    // whole λ-circle.
    let lift0 = base.circle_lift();
    let mut min_deriv = f64::INFINITY;
    for k in 0..4096 {
        min_deriv = min_deriv.min(lift0.deriv(k as f64 / 4096.0));
    }
    if min_deriv < -1e-9 {
        return Err(Error::InvalidMember(format!(
            "invalid zero configuration: circle restriction not monotone (min ĝ′ = {:.3e})",
            min_deriv
        )));
    }

    let rt = rho.return_times()?;
    let n_max = rt.max_index();
    // Sample at the deepest return time available (capped); at
    // closest-return times the estimate converges geometrically, far
    // faster than the 1/n worst case.
    let q_est = (2..=n_max)
        .map(|k| rt.q[k])
        .filter(|&q| q <= 2_000_000)
        .max()
        .unwrap_or(rt.q[n_max]) as u64;
    let est_at = |t: f64, n: u64| -> f64 {
        base.circle_lift_offset(t).mean_displacement(0.0, n)
    };

    // Coarse grid: bracket the target and check monotonicity of the
    // response within the grid estimator's error.
    const GRID: usize = 64;
    let n_grid = q_est.min(4000);
    let grid: Vec<f64> = (0..=GRID)
        .map(|i| est_at(i as f64 / GRID as f64, n_grid))
        .collect();
    let slack = 2.5 / n_grid as f64 + 1e-3;
    for w in grid.windows(2) {
        if w[1] < w[0] - slack {
            return Err(Error::InvalidMember(format!(
                "invalid zero configuration: rotation response not monotone ({:.6} → {:.6})",
                w[0], w[1]
            )));
        }
    }
    let mut target = rho.value();
    if target < grid[0] - slack {
        target += 1.0;
    }
    if target > grid[GRID] + slack {
        return Err(Error::SolveFailed(format!(
            "target {:.6} outside the response range [{:.6}, {:.6}]",
            target, grid[0], grid[GRID]
        )));
    }
    let i0 = (0..GRID).find(|&i| grid[i + 1] >= target).unwrap_or(GRID - 1);
    let (mut lo, mut hi) = (i0 as f64 / GRID as f64, (i0 + 1) as f64 / GRID as f64);

    // Bisection on the full-precision estimator.
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..64 {
        mid = 0.5 * (lo + hi);
        let e = est_at(mid, q_est);
        if (e - target).abs() <= 0.25 * tol {
            break;
        }
        if e < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-17 {
            break;
        }
    }
    let t_star = mid;
    let lambda = Complex64::from_polar(1.0, TAU * t_star);

    // Achieved rotation with an empirical error bar from two consecutive
    // return-time depths.
    let est_deep = est_at(t_star, q_est);
    let prev_q = (2..=n_max)
        .map(|k| rt.q[k])
        .filter(|&q| (q as u64) < q_est)
        .max()
        .unwrap_or(rt.q[2]) as u64;
    let est_prev = est_at(t_star, prev_q);
    let err_emp = (est_deep - est_prev).abs() + 1.0 / (q_est as f64 * rt.q_next as f64) + 2e-15;
    let achieved = geom::circ_dist(geom::frac(est_deep), geom::frac(rho.value()));
    if achieved > tol {
        return Err(Error::SolveFailed(format!(
            "best member arg λ = {:.15} misses the target by {:.3e} (tol {:.1e})",
            t_star, achieved, tol
        )));
    }
    Ok((
        lambda,
        RotationEstimate { value: geom::frac(est_deep), err_bound: err_emp, iterates: q_est },
    ))
}

// ---------------------------------------------------------------------------
// critical set

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub location: Complex64,
    pub local_degree: usize,
    pub on_circle: bool,
}

/// The critical set of a member: the finite critical points in the
/// punctured plane (roots of `M`, merged by multiplicity) plus the
/// superattracting local degrees at `0` and `∞` coming from the `z^d`
/// factor.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalSet {
    pub points: Vec<CriticalPoint>,
    pub degree_at_zero: usize,
    pub degree_at_infinity: usize,
    /// Largest relative residual |M(c)|/scale over the reported points.
    pub max_residual: f64,
}

/// Roots closer than this merge into one multiple critical point.
const MERGE_TOL: f64 = 1e-7;
/// Relative-residual gate; beyond it the rational-arithmetic polish runs.
const RESIDUAL_GATE: f64 = 1e-10;

pub fn critical_points(f: &HermanBlaschke) -> Result<CriticalSet> {
    let m = f.critical_numerator();
    let dm = poly_deriv(&m);
    let raw = aberth_roots(&m);

    // Greedy clustering at MERGE_TOL; cluster mean cancels the leading
    // error of a symmetric multiple-root cluster.
    let mut used = vec![false; raw.len()];
    let mut clusters: Vec<(Complex64, usize)> = Vec::new();
    for i in 0..raw.len() {
        if used[i] {
            continue;
        }
        let mut members = vec![raw[i]];
        used[i] = true;
        let mut grew = true;
        while grew {
            grew = false;
            for j in 0..raw.len() {
                if used[j] {
                    continue;
                }
                if members.iter().any(|&c| (c - raw[j]).norm() < MERGE_TOL) {
                    members.push(raw[j]);
                    used[j] = true;
                    grew = true;
                }
            }
        }
        let mean = members.iter().sum::<Complex64>() / members.len() as f64;
        clusters.push((mean, members.len()));
    }

    let mut points = Vec::with_capacity(clusters.len());
    let mut max_residual = 0.0f64;
    for (mean, mult) in clusters {
        let mut z = polish_multiple(&m, &dm, mean, mult);
        if poly_residual(&m, z) > RESIDUAL_GATE {
            z = polish_rational(&m, z, mult);
        }
        let res = poly_residual(&m, z);
        if res > RESIDUAL_GATE {
            return Err(Error::RootFinding(format!(
                "critical point near {:.6} stuck at relative residual {:.3e}",
                z, res
            )));
        }
        max_residual = max_residual.max(res);
        let on_circle = (z.norm() - 1.0).abs() < 1e-8;
        if on_circle {
            // Reflection-symmetric: a circle root is exactly unimodular.
            z /= z.norm();
        }
        points.push(CriticalPoint { location: z, local_degree: mult + 1, on_circle });
    }

    // Enforce closure under z ↦ 1/z̄ by symmetrizing mated pairs.
    let snapshot = points.clone();
    for p in points.iter_mut() {
        if p.on_circle || p.location.norm() < 1e-12 {
            continue;
        }
        let mirror = p.location.conj().inv();
        let mate = snapshot
            .iter()
            .filter(|q| q.local_degree == p.local_degree)
            .min_by(|a, b| {
                (a.location - mirror)
                    .norm()
                    .total_cmp(&(b.location - mirror).norm())
            })
            .ok_or_else(|| Error::RootFinding("empty critical set with off-circle root".into()))?;
        let gap = (mate.location - mirror).norm();
        if gap > 1e-6 * (1.0 + mirror.norm()) {
            return Err(Error::RootFinding(format!(
                "critical set not closed under reflection: {:.8} has no mate (gap {:.3e})",
                p.location, gap
            )));
        }
        p.location = (p.location + mate.location.conj().inv()) * 0.5;
    }
    points.sort_by(|a, b| {
        (a.location.re, a.location.im)
            .partial_cmp(&(b.location.re, b.location.im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    Ok(CriticalSet {
        points,
        degree_at_zero: f.d(),
        degree_at_infinity: f.d(),
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::GOLDEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn classical_unit() -> HermanBlaschke {
        HermanBlaschke::classical(Complex64::from_polar(1.0, 1.234))
    }

    #[test]
    fn value_at_one_is_lambda() {
        for arg in [0.0, 0.7, 2.5, -1.1] {
            let lam = Complex64::from_polar(1.0, arg);
            let f = HermanBlaschke::classical(lam);
            let v = f.eval(ONE).unwrap();
            assert!((v - lam).norm() < 1e-14);
        }
    }

    #[test]
    fn unit_circle_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = classical_unit();
        let g = HermanBlaschke::new(
            3,
            Complex64::from_polar(1.0, 0.4),
            vec![Complex64::new(0.3, 0.2), Complex64::new(-0.1, 0.45)],
        )
        .unwrap();
        for _ in 0..100 {
            let theta: f64 = rng.gen();
            for member in [&f, &g] {
                let v = member.eval(geom::unit(theta)).unwrap();
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_at_origin() {
        let f = classical_unit();
        assert_eq!(f.eval(Complex64::new(0.0, 0.0)).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let f = HermanBlaschke::new(
            3,
            Complex64::from_polar(1.0, 0.9),
            vec![Complex64::new(0.25, -0.3), Complex64::new(-0.4, 0.1)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..25 {
            let z = Complex64::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
            if f.zeros().iter().any(|a| (z - a).norm() < 0.05) {
                continue;
            }
            let d = f.deriv(z).unwrap();
            let fd = (f.eval(z + Complex64::new(h, 0.0)).unwrap()
                - f.eval(z - Complex64::new(h, 0.0)).unwrap())
                / (2.0 * h);
            assert!(
                (d - fd).norm() <= 1e-5 * (1.0 + d.norm()),
                "z = {}, analytic {} vs fd {}",
                z,
                d,
                fd
            );
        }
    }

    #[test]
    fn pole_guard_fires() {
        let f = classical_unit();
        let z = Complex64::new(1.0 / 3.0 + 1e-14, 0.0);
        match f.eval(z) {
            Err(Error::NearPole { .. }) => {}
            other => panic!("expected NearPole, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn reflection_symmetry() {
        let f = HermanBlaschke::new(
            3,
            Complex64::from_polar(1.0, 2.2),
            vec![Complex64::new(0.5, 0.1), Complex64::new(0.0, -0.35)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let z = Complex64::from_polar(0.3 + 1.5 * rng.gen::<f64>(), TAU * rng.gen::<f64>());
            let (Ok(fz), Ok(fm)) = (f.eval(z), f.eval(z.conj().inv())) else { continue };
            if fz.norm() < 1e-6 {
                continue;
            }
            assert!((fm - fz.conj().inv()).norm() < 1e-10 * (1.0 + fm.norm()));
        }
    }

    #[test]
    fn leading_constant_at_infinity() {
        let f = classical_unit();
        let z = Complex64::new(1e6, 3e5);
        let ratio = f.eval(z).unwrap() / z.powu(2);
        assert!((ratio - f.leading_constant()).norm() < 1e-5);
        assert!((f.leading_constant() - f.lambda() * Complex64::new(-1.0 / 3.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn classical_critical_set() {
        let f = classical_unit();
        let cs = critical_points(&f).unwrap();
        assert_eq!(cs.degree_at_zero, 2);
        assert_eq!(cs.degree_at_infinity, 2);
        assert_eq!(cs.points.len(), 1);
        let c = &cs.points[0];
        assert!(c.on_circle);
        assert_eq!(c.local_degree, 3);
        assert!((c.location - ONE).norm() < 1e-9, "critical point at {}", c.location);
        assert!(cs.max_residual < 1e-10);
    }

    #[test]
    fn critical_set_reflection_closed() {
        let f = HermanBlaschke::new(
            3,
            Complex64::from_polar(1.0, 0.3),
            vec![Complex64::new(0.3, 0.2), Complex64::new(-0.1, 0.4)],
        )
        .unwrap();
        let cs = critical_points(&f).unwrap();
        assert_eq!(cs.points.len(), 4); // deg M = 2d−2 = 4, simple roots
        for p in &cs.points {
            let mirror = p.location.conj().inv();
            let mate = cs
                .points
                .iter()
                .map(|q| (q.location - mirror).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(mate < 1e-8, "no mate for {}", p.location);
        }
    }

    #[test]
    fn preimages_solve_f_of_z_eq_w() {
        let f = classical_unit();
        let w = Complex64::new(0.3, -0.7);
        let pre = f.preimages(w);
        assert_eq!(pre.len(), 3); // rational degree 2d−1
        for z in pre {
            assert!((f.eval(z).unwrap() - w).norm() < 1e-9);
        }
    }

    #[test]
    fn circle_lift_consistency() {
        // The closed-form lift must agree with arg F on the circle.
        let f = classical_unit();
        let lift = f.circle_lift();
        assert!(lift.check_degree_one(32));
        for k in 0..64 {
            let x = k as f64 / 64.0;
            let fx = f.eval(geom::unit(x)).unwrap();
            let lifted = geom::frac(lift.eval(x));
            assert!(
                geom::circ_dist(lifted, geom::angle_of(fx)) < 1e-12,
                "x = {}: lift {} vs arg {}",
                x,
                lifted,
                geom::angle_of(fx)
            );
        }
        // Critical angle: derivative vanishes at x = 0 for the classical
        // member (cubic critical point at z = 1).
        assert!(lift.deriv(0.0).abs() < 1e-12);
        assert!(lift.min_derivative(512) > -1e-12);
    }

    #[test]
    fn solve_lambda_golden() {
        let rho = RotationNumber::golden(14);
        let zeros = [Complex64::new(1.0 / 3.0, 0.0)];
        let (lam, est) = solve_lambda(&zeros, 2, &rho, 1e-6).unwrap();
        assert!((lam.norm() - 1.0).abs() < 1e-14);
        assert!(
            geom::circ_dist(est.value, geom::frac(rho.value())) < 1e-6,
            "rotation {} vs target {}",
            est.value,
            rho.value()
        );
        assert!((est.value - GOLDEN).abs() < 1e-5);
        // Determinism to the last bit.
        let (lam2, est2) = solve_lambda(&zeros, 2, &rho, 1e-6).unwrap();
        assert_eq!(lam, lam2);
        assert_eq!(est.value, est2.value);
    }

    #[test]
    fn solve_lambda_silver() {
        let rho = RotationNumber::constant(2, 12);
        let zeros = [Complex64::new(1.0 / 3.0, 0.0)];
        let (lam, est) = solve_lambda(&zeros, 2, &rho, 1e-7).unwrap();
        assert!(geom::circ_dist(est.value, geom::frac(rho.value())) < 1e-7);
        let f = HermanBlaschke::new(2, lam, zeros.to_vec()).unwrap();
        let report = validate_family(&f, &rho).unwrap();
        assert!(report.all_pass, "report: {:?}", report);
    }

    #[test]
    fn validate_flags_bad_members() {
        let rho = RotationNumber::golden(10);
        let bad_zero = HermanBlaschke::new(
            2,
            Complex64::from_polar(1.0, 0.5),
            vec![Complex64::new(1.1, 0.0)],
        )
        .unwrap();
        let rep = validate_family(&bad_zero, &rho).unwrap();
        assert!(!rep.zeros_in_disk);
        assert!(!rep.all_pass);

        let bad_lambda =
            HermanBlaschke::new(2, Complex64::new(2.0, 0.0), vec![Complex64::new(1.0 / 3.0, 0.0)])
                .unwrap();
        let rep = validate_family(&bad_lambda, &rho).unwrap();
        assert!(!rep.lambda_unit);
        assert!(!rep.all_pass);
    }

    #[test]
    fn member_json_round_trip() {
        let f = classical_unit();
        let j = serde_json::to_value(&f).unwrap();
        assert_eq!(j["d"], 2);
        assert!(j["lambda"].is_array());
        assert!(j["zeros"][0].is_array());
        let back: HermanBlaschke = serde_json::from_value(j).unwrap();
        assert_eq!(back, f);
    }
}
