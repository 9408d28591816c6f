//! Böttcher potential at infinity, external/internal rays, and
//! equipotential curves for maps with a superattracting fixed point at ∞.
//!
//! Everything is parameterized over [`ExteriorMap`] so the power map `z^d`
//! serves as an exactly-solvable reference next to the Blaschke members.
//! Angles are exact rationals (turns); folding by the degree is integer
//! arithmetic, so deep levels never lose the angle to float drift.

use num_complex::Complex64;
use serde::Serialize;
use std::fmt::Write as _;

use crate::blaschke::HermanBlaschke;
use crate::error::{Error, Result};
use crate::geom::{self, TAU};

/// Potential of the seeding circle: `ln 10⁴`.  At this radius the Böttcher
/// correction series (summed explicitly below) is accurate to ~1e−13.
pub const SEED_POTENTIAL: f64 = 9.210_340_371_976_184;

const DEFAULT_ESCAPE_BUDGET: usize = 50_000;
/// Escape radius where the correction series is evaluated.
const SERIES_RADIUS: f64 = 1e6;

/// A holomorphic map with `F(z) ~ c·z^d` at ∞, exposing what potential
/// theory needs.
pub trait ExteriorMap {
    /// Local degree `d ≥ 2` at infinity.
    fn degree_at_infinity(&self) -> usize;
    /// Leading constant `c = lim F(z)/z^d`.
    fn leading_coefficient(&self) -> Complex64;
    fn apply(&self, z: Complex64) -> Result<Complex64>;
    fn apply_deriv(&self, z: Complex64) -> Result<Complex64>;
}

impl ExteriorMap for HermanBlaschke {
    fn degree_at_infinity(&self) -> usize {
        self.d()
    }
    fn leading_coefficient(&self) -> Complex64 {
        self.leading_constant()
    }
    fn apply(&self, z: Complex64) -> Result<Complex64> {
        self.eval(z)
    }
    fn apply_deriv(&self, z: Complex64) -> Result<Complex64> {
        self.deriv(z)
    }
}

/// The reference map `z ↦ z^d` (Green's function `log |z|` exactly).
pub struct PowerMap(pub u32);

impl ExteriorMap for PowerMap {
    fn degree_at_infinity(&self) -> usize {
        self.0 as usize
    }
    fn leading_coefficient(&self) -> Complex64 {
        Complex64::new(1.0, 0.0)
    }
    fn apply(&self, z: Complex64) -> Result<Complex64> {
        Ok(z.powu(self.0))
    }
    fn apply_deriv(&self, z: Complex64) -> Result<Complex64> {
        Ok(z.powu(self.0 - 1) * self.0 as f64)
    }
}

// ---------------------------------------------------------------------------
// angles

/// An external angle as an exact rational number of turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Angle {
    pub num: u128,
    pub den: u128,
}

impl Angle {
    pub fn new(num: u128, den: u128) -> Result<Angle> {
        if den == 0 {
            return Err(Error::BadRequest("angle denominator must be positive".into()));
        }
        let num = num % den;
        if num == 0 {
            return Ok(Angle { num: 0, den: 1 });
        }
        let g = gcd_u128(num, den);
        Ok(Angle { num: num / g, den: den / g })
    }

    pub fn zero() -> Angle {
        Angle { num: 0, den: 1 }
    }

    /// `d·t mod 1` exactly.
    pub fn fold(&self, d: usize) -> Angle {
        let num = (self.num * d as u128) % self.den;
        let g = gcd_u128(num.max(1), self.den);
        if num == 0 {
            Angle { num: 0, den: 1 }
        } else {
            Angle { num: num / g, den: self.den / g }
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd_u128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

// ---------------------------------------------------------------------------
// potential

/// `ln φ(z)` from the Böttcher correction series; requires `|z|` large
/// (callers escape first).  The real part is the Green's function there.
fn bottcher_log<M: ExteriorMap>(m: &M, z: Complex64) -> Result<Complex64> {
    let d = m.degree_at_infinity() as f64;
    let c = m.leading_coefficient();
    let log_gamma = c.ln() / (d - 1.0);
    let mut acc = z.ln() + log_gamma;
    let mut w = z;
    let mut scale = 1.0 / d;
    // Stop once |w|^{2d} would overflow; the neglected tail is O(1/|w|).
    let cap = 10f64.powf((150.0 / d).min(20.0));
    for _ in 0..8 {
        if w.norm() > cap {
            break;
        }
        let fw = m.apply(w)?;
        // F(w)/(c w^d) → 1; its principal log is the next correction term.
        let ratio = fw / (c * w.powu(m.degree_at_infinity() as u32));
        acc += ratio.ln() * scale;
        scale /= d;
        w = fw;
    }
    Ok(acc)
}

/// Inverts the Böttcher coordinate: finds `z` with `ln φ(z) = target`
/// (`Re target ≥ SEED_POTENTIAL` so the series converges fast).
fn bottcher_invert<M: ExteriorMap>(m: &M, target: Complex64) -> Result<Complex64> {
    let d = m.degree_at_infinity() as f64;
    let c = m.leading_coefficient();
    let log_gamma = c.ln() / (d - 1.0);
    let mut z = (target - log_gamma).exp();
    for _ in 0..5 {
        let defect = bottcher_log(m, z)? - target;
        z *= (-defect).exp();
        if defect.norm() < 1e-15 {
            break;
        }
    }
    Ok(z)
}

/// Green's function of the basin of ∞: `G(z) = lim d^{−n} ln |Fⁿ(z)|`,
/// evaluated by escaping to the series radius and summing the correction
/// series there.  Satisfies `G(F(z)) = d·G(z)`.
pub fn green_potential<M: ExteriorMap>(m: &M, z: Complex64) -> Result<f64> {
    green_with_budget(m, z, DEFAULT_ESCAPE_BUDGET)
}

pub fn green_with_budget<M: ExteriorMap>(m: &M, z: Complex64, budget: usize) -> Result<f64> {
    let d = m.degree_at_infinity() as f64;
    let mut w = z;
    let mut scale = 1.0;
    for _ in 0..budget {
        if w.norm() >= SERIES_RADIUS {
            return Ok(scale * bottcher_log(m, w)?.re);
        }
        w = m.apply(w)?;
        scale /= d;
    }
    Err(Error::NotInBasin(budget))
}

// ---------------------------------------------------------------------------
// ray tracing

#[derive(Clone, Debug, Serialize)]
pub struct RayTrace {
    pub angle: Angle,
    /// One point per level, ordered by strictly decreasing potential.
    pub points: Vec<Complex64>,
    /// `potentials[k] = SEED_POTENTIAL · d^{−k}`.
    pub potentials: Vec<f64>,
    /// Landing point and tail diameter when the Cauchy tail criterion
    /// fires; `None` makes no claim.
    pub landing: Option<(Complex64, f64)>,
    /// Set when tracing needed the perturbed-angle fallback near a
    /// critical-value shadow.
    pub degenerate: bool,
}

impl RayTrace {
    /// CSV rows `potential,re,im`, seed first.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("potential,re,im\n");
        for (g, z) in self.potentials.iter().zip(&self.points) {
            let _ = writeln!(s, "{:.17},{:.17},{:.17}", g, z.re, z.im);
        }
        s
    }

    /// Diameter of the last `n` points.
    pub fn tail_diameter(&self, n: usize) -> f64 {
        let tail = &self.points[self.points.len().saturating_sub(n)..];
        geom::diameter(tail)
    }

    /// Reflects the trace through the unit circle (`z ↦ 1/z̄`).
    pub fn reflected(&self) -> RayTrace {
        RayTrace {
            angle: self.angle,
            points: self.points.iter().map(|z| geom::reflect(*z)).collect(),
            potentials: self.potentials.clone(),
            landing: self.landing.map(|(z, d)| (geom::reflect(z), d)),
            degenerate: self.degenerate,
        }
    }
}

/// How many of the last trace points feed the landing criterion.
const LANDING_TAIL: usize = 10;
const LANDING_DIAMETER: f64 = 1e-6;
const MAX_SUBSTEPS: usize = 1024;

/// Newton solve of `F^folds(z) = target` from `guess`.  `Err` is soft: the
/// caller retries with more continuation substeps.
fn newton_level<M: ExteriorMap>(
    m: &M,
    guess: Complex64,
    target: Complex64,
    folds: usize,
) -> std::result::Result<Complex64, String> {
    let mut z = guess;
    for _ in 0..40 {
        let mut w = z;
        let mut dw = Complex64::new(1.0, 0.0);
        for _ in 0..folds {
            dw *= m.apply_deriv(w).map_err(|e| e.to_string())?;
            w = m.apply(w).map_err(|e| e.to_string())?;
            if w.norm() > 1e120 {
                return Err("orbit overflow during newton".into());
            }
        }
        if dw.norm() < 1e-290 || !dw.is_finite() {
            return Err("derivative collapsed (critical-value shadow)".into());
        }
        let step = (w - target) / dw;
        if !step.is_finite() || step.norm() > 0.5 * (1.0 + z.norm()) {
            return Err(format!("newton step rejected (|Δ| = {:.3e})", step.norm()));
        }
        z -= step;
        // Step-based criterion: deep fold counts amplify roundoff in the
        // residual, but the implied z-accuracy stays near machine epsilon.
        if step.norm() <= 5e-14 * (1.0 + z.norm()) {
            return Ok(z);
        }
    }
    Err("newton did not converge".into())
}

/// Traces the external ray at angle `t` down `depth` potential levels
/// (`SEED_POTENTIAL · d^{−k}`, one stored point per level) by Newton
/// continuation against the exactly-folded angle at the seeding circle.
pub fn trace_external_ray<M: ExteriorMap>(
    m: &M,
    t: Angle,
    depth: usize,
    steps_per_level: usize,
) -> Result<RayTrace> {
    let d = m.degree_at_infinity();
    let g0 = SEED_POTENTIAL;
    let seed = bottcher_invert(m, Complex64::new(g0, TAU * t.to_f64()))?;
    let mut points = vec![seed];
    let mut potentials = vec![g0];
    let mut degenerate = false;
    let mut stagnation_diam: Option<f64> = None;
    let mut top_angle = t;
    for k in 0..depth {
        // Once consecutive level points are indistinguishable at the
        // f64 accuracy floor the ray has landed as far as doubles can
        // tell; deeper levels are clamped to the stagnation point.
        if k >= 2 {
            let gap = (points[k] - points[k - 1]).norm();
            if gap <= 1e-12 * (1.0 + points[k].norm()) {
                stagnation_diam =
                    Some(geom::diameter(&points[points.len().saturating_sub(LANDING_TAIL)..]));
                let z = points[k];
                for j in k..depth {
                    points.push(z);
                    potentials.push(g0 / (d as f64).powi(j as i32 + 1));
                }
                break;
            }
        }
        top_angle = top_angle.fold(d);
        let folds = k + 1;
        let mut steps = steps_per_level.max(1);
        let mut perturb = 0.0f64;
        'level: loop {
            let mut z = points[k];
            let mut failed: Option<String> = None;
            for i in 1..=steps {
                let u = i as f64 / steps as f64;
                let g_top = g0 * (d as f64).powf(1.0 - u);
                let target = match bottcher_invert(
                    m,
                    Complex64::new(g_top, TAU * (top_angle.to_f64() + perturb)),
                ) {
                    Ok(w) => w,
                    Err(e) => {
                        failed = Some(e.to_string());
                        break;
                    }
                };
                match newton_level(m, z, target, folds) {
                    Ok(nz) => z = nz,
                    Err(msg) => {
                        failed = Some(msg);
                        break;
                    }
                }
            }
            match failed {
                None => {
                    points.push(z);
                    potentials.push(g0 / (d as f64).powi(folds as i32));
                    break 'level;
                }
                Some(msg) => {
                    if steps < MAX_SUBSTEPS {
                        steps *= 2;
                    } else if perturb == 0.0 {
                        // Degenerate angle: the folded angle sits on a
                        // critical-value shadow; nudge and flag.
                        perturb = 1e-12;
                        degenerate = true;
                        steps = steps_per_level.max(1);
                    } else {
                        return Err(Error::RayTrace { level: folds, reason: msg });
                    }
                }
            }
        }
    }
    let landing = if points.len() > LANDING_TAIL {
        // When levels were clamped the trailing points coincide; the honest
        // diameter is the spread over the last resolvable approach.
        let diam = stagnation_diam
            .unwrap_or_else(|| geom::diameter(&points[points.len() - LANDING_TAIL..]));
        (diam < LANDING_DIAMETER).then(|| (*points.last().unwrap(), diam))
    } else {
        None
    };
    Ok(RayTrace { angle: t, points, potentials, landing, degenerate })
}

/// Internal ray: the reflection `z ↦ 1/z̄` of the external trace.
pub fn internal_ray<M: ExteriorMap>(m: &M, t: Angle, depth: usize) -> Result<RayTrace> {
    Ok(trace_external_ray(m, t, depth, 8)?.reflected())
}

// ---------------------------------------------------------------------------
// equipotentials

#[derive(Clone, Debug, Serialize)]
pub struct Equipotential {
    /// Level `l`: the curve carries potential `ln l`.
    pub level: f64,
    pub points: Vec<Complex64>,
}

impl Equipotential {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("potential,re,im\n");
        for z in &self.points {
            let _ = writeln!(s, "{:.17},{:.17},{:.17}", self.level.ln(), z.re, z.im);
        }
        s
    }

    /// Winding number of the closed polyline about the origin.
    pub fn winding_number(&self) -> i64 {
        let mut total = 0.0;
        let n = self.points.len();
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            total += (b / a).arg();
        }
        (total / TAU).round() as i64
    }
}

/// Closed equipotential `G ≡ ln l` sampled at `n_samples` angles `j/n`,
/// built by angular Newton continuation at fixed potential.
pub fn equipotential<M: ExteriorMap>(m: &M, l: f64, n_samples: usize) -> Result<Equipotential> {
    if !(l > 1.0) {
        return Err(Error::BadRequest(format!("equipotential level {} must be > 1", l)));
    }
    if n_samples < 8 {
        return Err(Error::BadRequest("need at least 8 samples".into()));
    }
    let d = m.degree_at_infinity();
    let g = l.ln();
    // Fold up until the working potential reaches the seeding circle.
    let mut folds = 0usize;
    let mut g_top = g;
    while g_top < SEED_POTENTIAL {
        g_top *= d as f64;
        folds += 1;
    }
    // d^folds mod n, for exact folded angles of j/n.
    let mut dk_mod = 1u128;
    for _ in 0..folds {
        dk_mod = (dk_mod * d as u128) % n_samples as u128;
    }

    // First sample: radial descent along angle 0 from the seed circle.
    let mut z = bottcher_invert(m, Complex64::new(g_top, 0.0))?;
    if folds > 0 {
        let ray = trace_external_ray(m, Angle::zero(), folds, 8)?;
        // Continue in potential from the ray's level-`folds` point down to
        // exactly ln l (they differ when SEED/g is not a power of d).
        let mut guess = ray.points[folds];
        let from = SEED_POTENTIAL / (d as f64).powi(folds as i32);
        let steps = 8;
        for i in 1..=steps {
            let u = i as f64 / steps as f64;
            let pot = from * (g / from).powf(u);
            let target = bottcher_invert(m, Complex64::new(pot * (d as f64).powi(folds as i32), 0.0))?;
            guess = newton_level(m, guess, target, folds)
                .map_err(|reason| Error::RayTrace { level: folds, reason })?;
        }
        z = guess;
    }

    let mut points = Vec::with_capacity(n_samples);
    points.push(z);
    for j in 1..n_samples {
        let folded = (j as u128 * dk_mod) % n_samples as u128;
        let theta = folded as f64 / n_samples as f64;
        let target = bottcher_invert(m, Complex64::new(g_top, TAU * theta))?;
        let mut attempt = newton_level(m, points[j - 1], target, folds);
        if attempt.is_err() {
            // Angular gap too wide: insert intermediate continuation angles.
            let prev_folded = ((j - 1) as u128 * dk_mod) % n_samples as u128;
            let mut zz = points[j - 1];
            let sub = 32;
            let mut ok = true;
            for i in 1..=sub {
                let th = (prev_folded as f64
                    + (folded as f64 - prev_folded as f64
                        + if folded < prev_folded { n_samples as f64 } else { 0.0 })
                        * i as f64
                        / sub as f64)
                    / n_samples as f64;
                let tg = bottcher_invert(m, Complex64::new(g_top, TAU * th))?;
                match newton_level(m, zz, tg, folds) {
                    Ok(nz) => zz = nz,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            attempt = if ok { Ok(zz) } else { attempt };
        }
        let zj = attempt.map_err(|reason| Error::RayTrace { level: folds, reason })?;
        points.push(zj);
    }
    Ok(Equipotential { level: l, points })
}

// ---------------------------------------------------------------------------
// scenes

/// Aggregate of traced objects, serialized as one JSON scene for the
/// renderer.
#[derive(Clone, Debug, Serialize, Default)]
pub struct RayScene {
    pub rays: Vec<RayTrace>,
    pub internal_rays: Vec<RayTrace>,
    pub equipotentials: Vec<Equipotential>,
}

impl RayScene {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blaschke::solve_lambda;
    use crate::cf::RotationNumber;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solved_classical() -> HermanBlaschke {
        let rho = RotationNumber::golden(14);
        let zeros = [Complex64::new(1.0 / 3.0, 0.0)];
        let (lam, _) = solve_lambda(&zeros, 2, &rho, 1e-6).unwrap();
        HermanBlaschke::new(2, lam, zeros.to_vec()).unwrap()
    }

    #[test]
    fn power_map_green_is_log_abs() {
        let m = PowerMap(2);
        for z in [
            Complex64::new(5.0, 0.0),
            Complex64::new(1.3, -2.0),
            Complex64::new(-0.4, 1.2),
        ] {
            let g = green_potential(&m, z).unwrap();
            assert!((g - z.norm().ln()).abs() < 1e-12, "z = {}: {} vs {}", z, g, z.norm().ln());
        }
    }

    #[test]
    fn green_functional_equation() {
        let f = solved_classical();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for _ in 0..200 {
            if checked >= 100 {
                break;
            }
            let z = Complex64::from_polar(1.2 + 30.0 * rng.gen::<f64>(), TAU * rng.gen::<f64>());
            let (Ok(g), Ok(fz)) = (green_potential(&f, z), f.eval(z)) else { continue };
            let gf = green_potential(&f, fz).unwrap();
            assert!((gf - 2.0 * g).abs() < 1e-9, "G(F) = {}, 2G = {}", gf, 2.0 * g);
            checked += 1;
        }
        assert!(checked >= 100);
    }

    #[test]
    fn green_two_evaluation_orders() {
        // Direct escape-limit evaluation vs. one pulled through the
        // functional equation; and the asymptotic form at large |z|.
        let f = solved_classical();
        let z = Complex64::new(10.0, 0.0);
        let direct = green_potential(&f, z).unwrap();
        let via_image = green_potential(&f, f.eval(z).unwrap()).unwrap() / 2.0;
        assert!((direct - via_image).abs() < 1e-9);
        let big = Complex64::new(1e8, 0.0);
        let g_big = green_potential(&f, big).unwrap();
        let asymptotic = big.norm().ln() + f.leading_constant().norm().ln();
        assert!((g_big - asymptotic).abs() < 1e-6);
    }

    #[test]
    fn interior_point_not_in_basin() {
        let f = solved_classical();
        match green_with_budget(&f, Complex64::new(0.2, 0.1), 2000) {
            Err(Error::NotInBasin(2000)) => {}
            other => panic!("expected NotInBasin, got {:?}", other),
        }
    }

    #[test]
    fn power_ray_zero_is_real_axis() {
        let m = PowerMap(2);
        let ray = trace_external_ray(&m, Angle::zero(), 40, 8).unwrap();
        for (z, g) in ray.points.iter().zip(&ray.potentials) {
            assert!(z.im.abs() < 1e-10);
            assert!(z.re > 1.0 - 1e-12);
            assert!((z.norm().ln() - g).abs() < 1e-10);
        }
        let (land, diam) = ray.landing.expect("ray should land");
        assert!(diam < 1e-6);
        assert!((land - Complex64::new(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn power_ray_lands_on_circle_angle() {
        let m = PowerMap(2);
        // 1/3 is periodic under doubling, landing at e^{2πi/3}.
        let ray = trace_external_ray(&m, Angle::new(1, 3).unwrap(), 45, 8).unwrap();
        let (land, _) = ray.landing.expect("should land");
        assert!((land - geom::unit(1.0 / 3.0)).norm() < 1e-6);
    }

    #[test]
    fn classical_ray_zero_lands() {
        let f = solved_classical();
        let ray = trace_external_ray(&f, Angle::zero(), 40, 8).unwrap();
        assert!(!ray.degenerate);
        let (land, diam) = ray.landing.expect("fixed ray should land");
        assert!(diam < 1e-6, "tail diameter {}", diam);
        // t = 0 is fixed under doubling, so the landing point is fixed.
        assert!((f.eval(land).unwrap() - land).norm() < 1e-5);
        // Landing stability: doubling depth moves the landing estimate by
        // less than 10 tail diameters.
        let deeper = trace_external_ray(&f, Angle::zero(), 80, 8).unwrap();
        let (land2, _) = deeper.landing.unwrap();
        assert!((land2 - land).norm() < 10.0 * diam);
    }

    #[test]
    fn ray_potentials_match_green() {
        let f = solved_classical();
        let ray = trace_external_ray(&f, Angle::new(1, 5).unwrap(), 30, 8).unwrap();
        for (z, g) in ray.points.iter().zip(&ray.potentials) {
            let measured = green_potential(&f, *z).unwrap();
            assert!(
                (measured - g).abs() < 1e-8,
                "potential {} vs green {}",
                g,
                measured
            );
        }
        for w in ray.potentials.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn ray_push_forward_is_doubled_angle() {
        let f = solved_classical();
        let t = Angle::new(1, 3).unwrap();
        let ray = trace_external_ray(&f, t, 25, 8).unwrap();
        let image = trace_external_ray(&f, t.fold(2), 25, 8).unwrap();
        // F maps the level-(k+1) point of ray t to the level-k point of
        // ray 2t.
        for k in 0..24 {
            let pushed = f.eval(ray.points[k + 1]).unwrap();
            let expect = image.points[k];
            assert!(
                (pushed - expect).norm() < 1e-7,
                "level {}: {} vs {}",
                k,
                pushed,
                expect
            );
        }
        let pushed: Vec<Complex64> =
            ray.points[1..25].iter().map(|&z| f.eval(z).unwrap()).collect();
        let hd = geom::hausdorff_to_polyline(&pushed, &image.points[..24]);
        assert!(hd < 1e-6, "hausdorff {}", hd);
    }

    #[test]
    fn power_equipotential_is_circle() {
        let m = PowerMap(2);
        let q = equipotential(&m, 2.0, 128).unwrap();
        for z in &q.points {
            assert!((z.norm() - 2.0).abs() < 1e-9);
        }
        assert_eq!(q.winding_number(), 1);
    }

    #[test]
    fn equipotential_functional_equation_and_nesting() {
        let f = solved_classical();
        let outer = equipotential(&f, 2.0, 256).unwrap();
        let inner = equipotential(&f, 2f64.sqrt(), 256).unwrap();
        assert_eq!(outer.winding_number(), 1);
        assert_eq!(inner.winding_number(), 1);
        // G ≡ ln l along each curve, and F pushes Q_l into Q_{l^d}.
        for z in inner.points.iter().step_by(8) {
            let g = green_potential(&f, *z).unwrap();
            assert!((g - inner.level.ln()).abs() < 1e-8);
            let gf = green_potential(&f, f.eval(*z).unwrap()).unwrap();
            assert!((gf - 2.0 * inner.level.ln()).abs() < 1e-7);
        }
        // Nested and disjoint: no segment crossings between the polylines.
        let a = &outer.points;
        let b = &inner.points;
        for i in 0..a.len() {
            let a1 = a[i];
            let a2 = a[(i + 1) % a.len()];
            for j in 0..b.len() {
                let b1 = b[j];
                let b2 = b[(j + 1) % b.len()];
                assert!(
                    !geom::segments_intersect(a1, a2, b1, b2),
                    "equipotentials intersect"
                );
            }
        }
    }

    #[test]
    fn internal_ray_is_reflection() {
        let f = solved_classical();
        let t = Angle::zero();
        let inner = internal_ray(&f, t, 40).unwrap();
        let outer = trace_external_ray(&f, t, 40, 8).unwrap();
        for (zi, zo) in inner.points.iter().zip(&outer.points) {
            assert!(zi.norm() < 1.0);
            assert!((zi - geom::reflect(*zo)).norm() < 1e-14);
        }
        let (li, _) = inner.landing.unwrap();
        let (lo, _) = outer.landing.unwrap();
        assert!((li - geom::reflect(lo)).norm() < 1e-12);
    }

    #[test]
    fn angle_folding_exact() {
        let t = Angle::new(1, 3).unwrap();
        assert_eq!(t.fold(2), Angle::new(2, 3).unwrap());
        assert_eq!(t.fold(2).fold(2), t);
        let deep = Angle::new(123_456_789, 1 << 40).unwrap();
        let mut a = deep;
        for _ in 0..40 {
            a = a.fold(2);
        }
        assert_eq!(a, Angle::zero());
    }
}

/// Points of the level-`l` equipotential at `n_samples + 1` external angles
/// running from `t0` to `t1` (turns), counterclockwise in angle when `ccw`,
/// inclusive of both endpoints.  `seed` must be a point on or near the curve
/// at angle `t0`; continuation proceeds sample to sample and bisects the
/// angle step wherever the Newton continuation loses the curve (the level
/// curve pinches near every preimage of a boundary fixed point, and a fixed
/// angular step is too coarse there).
/// The point of the level-`l` equipotential at external angle `t` (turns),
/// refined by Newton from `seed`, which must already lie near the point.
pub fn equipotential_point<M: ExteriorMap>(
    m: &M,
    l: f64,
    t: f64,
    seed: Complex64,
) -> Result<Complex64> {
    if !(l > 1.0) {
        return Err(Error::BadRequest(format!("equipotential level {} must be > 1", l)));
    }
    let d = m.degree_at_infinity();
    let g = l.ln();
    let mut folds = 0usize;
    let mut g_top = g;
    while g_top < SEED_POTENTIAL {
        g_top *= d as f64;
        folds += 1;
    }
    let mult = (d as f64).powi(folds as i32);
    let target = bottcher_invert(m, Complex64::new(g_top, TAU * geom::frac(t * mult)))?;
    newton_level(m, seed, target, folds).map_err(|reason| Error::RayTrace { level: folds, reason })
}

pub fn equipotential_arc<M: ExteriorMap>(
    m: &M,
    l: f64,
    t0: f64,
    t1: f64,
    ccw: bool,
    n_samples: usize,
    seed: Complex64,
) -> Result<Vec<Complex64>> {
    if !(l > 1.0) {
        return Err(Error::BadRequest(format!("equipotential level {} must be > 1", l)));
    }
    if n_samples < 2 {
        return Err(Error::BadRequest("need at least 2 samples".into()));
    }
    let d = m.degree_at_infinity();
    let g = l.ln();
    let mut folds = 0usize;
    let mut g_top = g;
    while g_top < SEED_POTENTIAL {
        g_top *= d as f64;
        folds += 1;
    }
    let mult = (d as f64).powi(folds as i32);
    let span = if ccw {
        let s = geom::frac(t1 - t0);
        if s == 0.0 {
            1.0
        } else {
            s
        }
    } else {
        let s = geom::frac(t0 - t1);
        -(if s == 0.0 { 1.0 } else { s })
    };

    fn step<M: ExteriorMap>(
        m: &M,
        z: Complex64,
        th_to: f64,
        th_from: f64,
        g_top: f64,
        mult: f64,
        folds: usize,
        depth: usize,
    ) -> Result<Complex64> {
        let target =
            bottcher_invert(m, Complex64::new(g_top, TAU * geom::frac(th_to * mult)))?;
        match newton_level(m, z, target, folds) {
            Ok(w) => Ok(w),
            Err(reason) => {
                if depth >= 24 {
                    return Err(Error::RayTrace { level: folds, reason });
                }
                let mid = 0.5 * (th_from + th_to);
                let zm = step(m, z, mid, th_from, g_top, mult, folds, depth + 1)?;
                step(m, zm, th_to, mid, g_top, mult, folds, depth + 1)
            }
        }
    }

    // The folded target angle advances `span·d^folds / n` turns per sample;
    // continuation needs many samples per folded turn or it aliases (the
    // solve converges, but to the same point every step).
    let n = n_samples.max((span.abs() * mult * 16.0).ceil() as usize);
    let mut out = Vec::with_capacity(n + 1);
    let mut z = step(m, seed, t0, t0, g_top, mult, folds, 23)?;
    out.push(z);
    for i in 1..=n {
        let th_from = t0 + span * (i - 1) as f64 / n as f64;
        let th_to = t0 + span * i as f64 / n as f64;
        z = step(m, z, th_to, th_from, g_top, mult, folds, 0)?;
        out.push(z);
    }
    Ok(out)
}
