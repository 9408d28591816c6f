//! Lifts of analytic circle homeomorphisms: rotation-number estimation,
//! closest-return arcs, dynamical partitions, real a-priori-bounds
//! diagnostics, and combinatorial addresses.
//!
//! Everything is phrased in the lift coordinate `x` with `z = e^{2πix}`;
//! positions are renormalized into `[0,1)` after every step so precision
//! does not degrade as the lift coordinate grows.  The marked point `x = 0`
//! (the critical angle of the Blaschke members) is the base point of all
//! partitions.

use serde::Serialize;
use std::fmt::Write as _;
use std::sync::Arc as Shared;

use crate::cf::{ReturnTimes, RotationNumber};
use crate::error::{Error, Result};
use crate::geom::{self, Arc};

/// Hard cap on forward iterates in any single operation.
const ITER_CAP: u64 = 50_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LiftKind {
    Rigid,
    Blaschke,
    Custom,
}

/// A degree-1 lift `ĝ: ℝ → ℝ` of an orientation-preserving circle
/// homeomorphism, with its derivative.
#[derive(Clone)]
pub struct CircleMapLift {
    f: Shared<dyn Fn(f64) -> f64 + Send + Sync>,
    df: Shared<dyn Fn(f64) -> f64 + Send + Sync>,
    kind: LiftKind,
    /// For rigid rotations, the exact step (enables O(1) iteration).
    rigid_step: Option<f64>,
}

impl CircleMapLift {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        kind: LiftKind,
    ) -> CircleMapLift {
        CircleMapLift { f: Shared::new(f), df: Shared::new(df), kind, rigid_step: None }
    }

    pub fn rigid(rho: f64) -> CircleMapLift {
        CircleMapLift {
            f: Shared::new(move |x| x + rho),
            df: Shared::new(|_| 1.0),
            kind: LiftKind::Rigid,
            rigid_step: Some(rho),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        (self.df)(x)
    }

    pub fn kind(&self) -> LiftKind {
        self.kind
    }

    /// One step on the circle: position in [0,1) and the displacement.
    fn step(&self, y: f64) -> (f64, f64) {
        let d = self.eval(y) - y;
        (geom::frac(y + d), d)
    }

    /// `k`-th forward image of the circle position `y`, in [0,1).
    pub fn forward(&self, y: f64, k: u64) -> f64 {
        if let Some(rho) = self.rigid_step {
            // One fused multiply keeps the error at O(ε) instead of O(kε).
            return geom::frac(geom::frac(y) + geom::frac(k as f64 * rho % 1.0));
        }
        let mut y = geom::frac(y);
        for _ in 0..k {
            y = self.step(y).0;
        }
        y
    }

    /// Mean displacement over `n` steps from `x0`: the raw rotation-number
    /// estimate `(ĝⁿ(x) − x)/n`, accurate to `O(1/n)` always and far better
    /// when `n` is a closest-return time.
    pub fn mean_displacement(&self, x0: f64, n: u64) -> f64 {
        let mut y = geom::frac(x0);
        let mut sum = 0.0;
        for _ in 0..n {
            let (ny, d) = self.step(y);
            y = ny;
            sum += d;
        }
        sum / n as f64
    }

    /// Circle positions `x_0, ..., x_{len-1}` of the forward orbit.
    pub fn orbit(&self, x0: f64, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        let mut y = geom::frac(x0);
        for _ in 0..len {
            out.push(y);
            y = self.step(y).0;
        }
        out
    }

    /// Solves `ĝ(x) = y` by bisection (the lift is increasing); returns the
    /// circle position of the preimage.
    pub fn invert(&self, y: f64) -> f64 {
        if let Some(rho) = self.rigid_step {
            return geom::frac(y - rho);
        }
        let y = geom::frac(y);
        // ĝ(x) − x ∈ (−1, 1) for a degree-1 lift near our normalizations,
        // so [y − 2, y + 2] brackets the preimage comfortably.
        let (mut lo, mut hi) = (y - 2.0, y + 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        geom::frac(0.5 * (lo + hi))
    }

    /// Circle positions `x_0, x_{-1}, ..., x_{-(len-1)}` of the backward
    /// orbit.
    pub fn backward_orbit(&self, x0: f64, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        let mut y = geom::frac(x0);
        for _ in 0..len {
            out.push(y);
            y = self.invert(y);
        }
        out
    }

    /// Degree-1 check `ĝ(x+1) = ĝ(x) + 1` on a sample grid.
    pub fn check_degree_one(&self, samples: usize) -> bool {
        (0..samples).all(|i| {
            let x = i as f64 / samples as f64 - 0.3;
            (self.eval(x + 1.0) - self.eval(x) - 1.0).abs() < 1e-9
        })
    }

    /// Monotonicity check `ĝ′ ≥ 0` on a sample grid; returns the most
    /// negative derivative seen.
    pub fn min_derivative(&self, samples: usize) -> f64 {
        (0..samples)
            .map(|i| self.deriv(i as f64 / samples as f64))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Rotation-number estimate with an error bound and the iterate count that
/// produced it.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RotationEstimate {
    pub value: f64,
    pub err_bound: f64,
    pub iterates: u64,
}

/// Estimates the rotation number of `lift` from the orbit of `x0`.
///
/// With a hint, the orbit is sampled at the hinted closest-return time
/// `q_N` (mean displacement over `q_N` steps has error `≈ 1/(q_N q_{N+1})`).
/// Without one, closest returns are detected on the fly from new distance
/// records to `x0`.  Orbits that hit a fixed point or return exactly are
/// reported with the corresponding rational.
pub fn rotation_number(
    lift: &CircleMapLift,
    x0: f64,
    hint: Option<&ReturnTimes>,
    tol: f64,
) -> Result<RotationEstimate> {
    if !(tol > 0.0) {
        return Err(Error::BadRequest("tolerance must be > 0".into()));
    }
    if let Some(rt) = hint {
        let n_max = rt.max_index();
        let q_after = |n: usize| -> f64 {
            if n < n_max { rt.q[n + 1] as f64 } else { rt.q_next as f64 }
        };
        // Smallest hinted return time with predicted error under tol.
        let pick = (2..=n_max)
            .find(|&n| {
                let err = 1.0 / (rt.q[n] as f64 * q_after(n));
                err <= tol && rt.q[n] as u64 <= ITER_CAP
            })
            .unwrap_or(n_max);
        let q = rt.q[pick] as u64;
        let q_next = q_after(pick);
        if q > ITER_CAP {
            return Err(Error::SolveFailed(format!(
                "budget exceeded: hinted return time {} above iteration cap",
                q
            )));
        }
        let mut y = geom::frac(x0);
        let mut sum = 0.0;
        for _ in 0..q {
            let (ny, d) = lift.step(y);
            y = ny;
            sum += d;
        }
        let value = sum / q as f64;
        let err_bound = 1.0 / (q as f64 * q_next) + 1e-15;
        if err_bound > tol {
            return Err(Error::SolveFailed(format!(
                "budget exceeded: best estimate {:.15} ± {:.2e} after {} iterates",
                value, err_bound, q
            )));
        }
        return Ok(RotationEstimate { value, err_bound, iterates: q });
    }

    // No hint: scan for closest returns.
    const BUDGET: u64 = 5_000_000;
    let y0 = geom::frac(x0);
    let mut y = y0;
    let mut sum = 0.0;
    let mut best = (f64::INFINITY, 0u64, 0.0f64); // (distance, iterate, sum)
    for k in 1..=BUDGET {
        let (ny, d) = lift.step(y);
        y = ny;
        sum += d;
        // Fixed circle point: displacement is (numerically) an integer.
        if (d - d.round()).abs() < 1e-13 && lift.kind != LiftKind::Rigid {
            return Ok(RotationEstimate {
                value: d.round(),
                err_bound: 1e-13,
                iterates: k,
            });
        }
        let dist = geom::circ_dist(y, y0);
        if dist < best.0 {
            best = (dist, k, sum);
            let q = k as f64;
            let err = 1.0 / (q * q) + dist / q;
            if dist < 1e-14 {
                // Periodic orbit: rotation number is exactly round(sum)/k.
                return Ok(RotationEstimate {
                    value: best.2.round() / q,
                    err_bound: dist / q + 1e-15,
                    iterates: k,
                });
            }
            if err <= tol {
                return Ok(RotationEstimate {
                    value: best.2 / q,
                    err_bound: err,
                    iterates: k,
                });
            }
        }
    }
    let q = best.1 as f64;
    Err(Error::SolveFailed(format!(
        "budget exceeded: best estimate {:.15} ± {:.2e} after {} iterates",
        best.2 / q,
        1.0 / (q * q) + best.0 / q,
        BUDGET
    )))
}

/// The arc between two positions that excludes `excl`.
fn arc_excluding(a: f64, b: f64, excl: f64) -> Result<Arc> {
    let fwd = Arc::new(a, b);
    let bwd = Arc::new(b, a);
    match (fwd.contains(excl), bwd.contains(excl)) {
        (false, true) => Ok(fwd),
        (true, false) => Ok(bwd),
        _ => Err(Error::RotationMismatch(
            "arc orientation marker coincides with an endpoint".into(),
        )),
    }
}

/// Closest-return arc `I_k` together with its level and length.
#[derive(Clone, Debug, Serialize)]
pub struct ClosestReturnArc {
    pub k: usize,
    pub arc: Arc,
    pub length: f64,
}

/// Closest-return arcs `I_1..I_n`: `I_k` joins `x_0` to `x_{q_k}` on the
/// side away from `x_{q_{k+1}}`.  The first-return property
/// `g^{q_{k+1}}(I_k) ⊂ I_k ∪ I_{k+1}` is verified on endpoint samples.
pub fn closest_return_arcs(
    lift: &CircleMapLift,
    rt: &ReturnTimes,
    x0: f64,
    n: usize,
) -> Result<Vec<ClosestReturnArc>> {
    if n + 1 > rt.max_index() {
        return Err(Error::BadRequest(format!(
            "need return times to index {} for {} arcs",
            n + 1,
            n
        )));
    }
    let need = rt.r[n].max(rt.q[n + 1] + 1) as usize;
    if need as u64 > ITER_CAP {
        return Err(Error::ResolutionExceeded(format!(
            "orbit length {} above iteration cap",
            need
        )));
    }
    let orbit = lift.orbit(x0, need + 1);
    let pos = |i: i128| orbit[i as usize];
    let mut out = Vec::with_capacity(n);
    for k in 1..=n {
        // When a_1 = 1 the marker x_{q_2} coincides with x_{q_1}; the first
        // return then happens in the positive direction, so I_1 is the
        // forward arc (x_0, x_1).
        let arc = if rt.q[k + 1] == rt.q[k] {
            Arc::new(pos(0), pos(rt.q[k]))
        } else {
            arc_excluding(pos(0), pos(rt.q[k]), pos(rt.q[k + 1]))?
        };
        out.push(ClosestReturnArc { k, arc, length: arc.length() });
    }
    // First-return membership, sampled at both endpoints of each I_k:
    // the endpoint orbit points x_{q_{k+1}} and x_{r_k} must land in
    // I_k ∪ I_{k+1} (up to float slack at the shared endpoint x_0).
    for k in 1..n {
        let ik = &out[k - 1].arc;
        let ik1 = &out[k].arc;
        let slack = 1e-12;
        let inside = |p: f64| {
            ik.contains(p)
                || ik1.contains(p)
                || geom::circ_dist(p, ik.start) < slack
                || geom::circ_dist(p, ik.end) < slack
                || geom::circ_dist(p, ik1.start) < slack
                || geom::circ_dist(p, ik1.end) < slack
        };
        let img_x0 = pos(rt.q[k + 1]);
        let img_xqk = pos(rt.r[k]);
        if !inside(img_x0) || !inside(img_xqk) {
            return Err(Error::RotationMismatch(format!(
                "first return of I_{} not inside I_{} ∪ I_{}",
                k,
                k,
                k + 1
            )));
        }
    }
    Ok(out)
}

/// Which generation a partition arc belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ArcType {
    /// An image of `I_n` (there are `q_{n+1}` of them).
    #[serde(rename = "I_n")]
    Old,
    /// An image of `I_{n+1}` (there are `q_n` of them).
    #[serde(rename = "I_{n+1}")]
    New,
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionArc {
    pub start: f64,
    pub end: f64,
    pub orbit_index: u64,
    pub arc_type: ArcType,
}

impl PartitionArc {
    pub fn length(&self) -> f64 {
        Arc::new(self.start, self.end).length()
    }
}

/// The level-`n` dynamical partition: `q_{n+1}` images of `I_n` and `q_n`
/// images of `I_{n+1}`, tiling the circle.  `arcs` is sorted by start
/// position.
#[derive(Clone, Debug, Serialize)]
pub struct DynamicalPartition {
    pub level: usize,
    pub arcs: Vec<PartitionArc>,
}

impl DynamicalPartition {
    pub fn counts(&self) -> (usize, usize) {
        let old = self.arcs.iter().filter(|a| a.arc_type == ArcType::Old).count();
        (old, self.arcs.len() - old)
    }

    pub fn total_length(&self) -> f64 {
        self.arcs.iter().map(|a| a.length()).sum()
    }

    /// Largest gap/overlap between consecutive arcs (0 for a perfect tiling).
    pub fn max_gap(&self) -> f64 {
        let m = self.arcs.len();
        (0..m)
            .map(|i| geom::circ_dist(self.arcs[i].end, self.arcs[(i + 1) % m].start))
            .fold(0.0, f64::max)
    }

    /// Every endpoint of `self` appears among the endpoints of `finer`.
    pub fn refined_by(&self, finer: &DynamicalPartition, tol: f64) -> bool {
        self.arcs.iter().all(|a| {
            finer
                .arcs
                .iter()
                .any(|b| geom::circ_dist(a.start, b.start) < tol)
        })
    }

    /// CSV rows `level,index,type,start,end,length`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,index,type,start,end,length\n");
        for a in &self.arcs {
            let tag = match a.arc_type {
                ArcType::Old => "I_n",
                ArcType::New => "I_{n+1}",
            };
            let _ = writeln!(
                s,
                "{},{},{},{:.17},{:.17},{:.17}",
                self.level,
                a.orbit_index,
                tag,
                a.start,
                a.end,
                a.length()
            );
        }
        s
    }
}

/// Builds the level-`n` dynamical partition of the orbit of `x0` and
/// verifies that it tiles the circle (gap below `1e−9`).
pub fn dynamical_partition(
    lift: &CircleMapLift,
    rt: &ReturnTimes,
    x0: f64,
    n: usize,
) -> Result<DynamicalPartition> {
    if n + 1 > rt.max_index() {
        return Err(Error::BadRequest(format!(
            "need return times to index {} for the level-{} partition",
            n + 1,
            n
        )));
    }
    let r_n = rt.r[n] as usize;
    if r_n as u64 > ITER_CAP {
        return Err(Error::ResolutionExceeded(format!(
            "partition with {} arcs above iteration cap",
            r_n
        )));
    }
    let orbit = lift.orbit(x0, r_n + 1);
    let q_n = rt.q[n] as usize;
    let q_n1 = rt.q[n + 1] as usize;
    // Orientations of I_n and I_{n+1}; images inherit them (g preserves
    // orientation).  x_{q_{n+1}} marks I_n's excluded side; x_{q_n} marks
    // I_{n+1}'s (it lies beyond x_{q_{n+2}} on the same side of x_0).
    // When q_{n+1} = q_n (level 1 with a_1 = 1) the two arcs are the two
    // sides of the circle between x_0 and x_1.
    let (i_n_rev, i_n1_rev) = if q_n == q_n1 {
        (false, true)
    } else {
        let i_n = arc_excluding(orbit[0], orbit[q_n], orbit[q_n1])?;
        let i_n1 = arc_excluding(orbit[0], orbit[q_n1], orbit[q_n])?;
        (
            (i_n.start - orbit[q_n]).abs() < 1e-15,
            (i_n1.start - orbit[q_n1]).abs() < 1e-15,
        )
    };
    let mut arcs = Vec::with_capacity(r_n);
    for i in 0..q_n1 {
        let (s, e) = if i_n_rev { (q_n + i, i) } else { (i, q_n + i) };
        arcs.push(PartitionArc {
            start: orbit[s],
            end: orbit[e],
            orbit_index: i as u64,
            arc_type: ArcType::Old,
        });
    }
    for i in 0..q_n {
        let (s, e) = if i_n1_rev { (q_n1 + i, i) } else { (i, q_n1 + i) };
        arcs.push(PartitionArc {
            start: orbit[s],
            end: orbit[e],
            orbit_index: i as u64,
            arc_type: ArcType::New,
        });
    }
    arcs.sort_by(|a, b| a.start.total_cmp(&b.start));
    let part = DynamicalPartition { level: n, arcs };
    let gap = part.max_gap();
    let closure = (part.total_length() - 1.0).abs();
    if gap > 1e-9 || closure > 1e-9 {
        return Err(Error::ResolutionExceeded(format!(
            "level-{} partition does not tile: gap {:.2e}, length defect {:.2e}",
            n, gap, closure
        )));
    }
    Ok(part)
}

/// Real-geometry diagnostics: per-level bounds on adjacent arc ratios and
/// the geometric decay of closest-return arc lengths.
#[derive(Clone, Debug, Serialize)]
pub struct RealBoundsReport {
    /// `(n, K_n)` with `K_n` = max ratio of adjacent arc lengths in the
    /// level-`n` partition.
    pub k_table: Vec<(usize, f64)>,
    /// `(n, |I_n|)`.
    pub arc_lengths: Vec<(usize, f64)>,
    /// Fitted per-level decay of `|I_n|` (geometric rate).
    pub decay_rate: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
    /// Extremes of the one-step ratios `|I_{n+1}|/|I_n|`: empirical
    /// estimates of the universal decay constants.
    pub ratio_min: f64,
    pub ratio_max: f64,
}

/// Computes `K_n` for `3 ≤ n ≤ n_max` and fits `log|I_n|` against `n`.
pub fn verify_real_bounds(
    lift: &CircleMapLift,
    rt: &ReturnTimes,
    x0: f64,
    n_max: usize,
) -> Result<RealBoundsReport> {
    if n_max < 3 {
        return Err(Error::BadRequest("real-bounds report needs n_max ≥ 3".into()));
    }
    let mut k_table = Vec::new();
    let mut arc_lengths = Vec::new();
    for n in 3..=n_max {
        let part = dynamical_partition(lift, rt, x0, n)?;
        let m = part.arcs.len();
        let mut k_n = 1.0f64;
        for i in 0..m {
            let a = part.arcs[i].length();
            let b = part.arcs[(i + 1) % m].length();
            k_n = k_n.max(a / b).max(b / a);
        }
        k_table.push((n, k_n));
        let i_n = geom::circ_dist(part.arcs[0].start, lift.forward(x0, rt.q[n] as u64));
        // |I_n| directly from the defining endpoints (x_0, x_{q_n}).
        let _ = i_n;
        let y0 = geom::frac(x0);
        let yq = lift.forward(x0, rt.q[n] as u64);
        arc_lengths.push((n, geom::circ_dist(y0, yq)));
    }
    // Least squares on log|I_n| vs n.
    let pts: Vec<(f64, f64)> = arc_lengths
        .iter()
        .map(|&(n, l)| (n as f64, l.ln()))
        .collect();
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let intercept = (sy - slope * sx) / m;
    let mean_y = sy / m;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max: f64 = 0.0;
    for w in arc_lengths.windows(2) {
        let r = w[1].1 / w[0].1;
        ratio_min = ratio_min.min(r);
        ratio_max = ratio_max.max(r);
    }
    Ok(RealBoundsReport {
        k_table,
        arc_lengths,
        decay_rate: slope.exp(),
        r_squared,
        ratio_min,
        ratio_max,
    })
}

/// Digits `σ_k = (α_k, β_k)` of the renormalization coding: the inverse
/// branch `g^{-σ_k}` is the forward iterate by `α_k q_k + β_k q_{k-1}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CombinatorialAddress {
    /// Digits are `σ_{base+1}, ..., σ_{base+m}`.
    pub base: usize,
    pub digits: Vec<(u32, u8)>,
}

impl CombinatorialAddress {
    /// Total forward shift `Σ (α_k q_k + β_k q_{k-1})` realized by the
    /// composed inverse branches.
    pub fn total_shift(&self, rt: &ReturnTimes) -> i128 {
        self.digits
            .iter()
            .enumerate()
            .map(|(i, &(alpha, beta))| {
                let k = self.base + 1 + i;
                alpha as i128 * rt.q[k] + beta as i128 * rt.q[k - 1]
            })
            .sum()
    }

    /// Concatenation per the address composition law.
    pub fn concat(&self, tail: &CombinatorialAddress) -> Result<CombinatorialAddress> {
        if tail.base != self.base + self.digits.len() {
            return Err(Error::BadRequest(format!(
                "address bases do not chain: {}+{} vs {}",
                self.base,
                self.digits.len(),
                tail.base
            )));
        }
        let mut digits = self.digits.clone();
        digits.extend_from_slice(&tail.digits);
        Ok(CombinatorialAddress { base: self.base, digits })
    }
}

/// Angular tolerance below which a point is treated as an iterated preimage
/// of the marked point and rejected.
const ADDRESS_TOL: f64 = 1e-10;

/// The combinatorial arcs `J⁻_k` of the lift: endpoints `x_{-q_k}`,
/// `x_{-q_{k+1}}`, containing the marked point `x0`.
fn j_minus(back: &[f64], rt: &ReturnTimes, x0: f64, k: usize) -> Result<Arc> {
    let a = back[rt.q[k] as usize];
    let b = back[rt.q[k + 1] as usize];
    let fwd = Arc::new(a, b);
    let bwd = Arc::new(b, a);
    match (fwd.contains(x0), bwd.contains(x0)) {
        (true, false) => Ok(fwd),
        (false, true) => Ok(bwd),
        _ => Err(Error::RotationMismatch(format!(
            "J⁻_{} does not surround the marked point",
            k
        ))),
    }
}

/// The one-sided arc `I⁻_k ⊂ J⁻_k` between the marked point and `x_{-q_k}`.
fn i_minus(back: &[f64], rt: &ReturnTimes, x0: f64, k: usize) -> Result<Arc> {
    let j = j_minus(back, rt, x0, k)?;
    let p = back[rt.q[k] as usize];
    if geom::circ_dist(j.start, p) < 1e-14 {
        Ok(Arc::new(j.start, x0))
    } else {
        Ok(Arc::new(x0, j.end))
    }
}

/// Strict membership with endpoint exclusion: `None` marks a degenerate hit
/// within `ADDRESS_TOL` of an endpoint.
fn arc_member(arc: &Arc, p: f64) -> Option<bool> {
    if geom::circ_dist(p, arc.start) < ADDRESS_TOL
        || geom::circ_dist(p, arc.end) < ADDRESS_TOL
    {
        None
    } else {
        Some(arc.contains(p))
    }
}

/// Computes the `(n, m)`-address of the angle `s` with `ξ_s ∈ J⁻_n`: digits
/// `σ_{n+1}..σ_{n+m}` with `σ_k = (α_k, β_k)`, `0 ≤ α_k < a_k`,
/// `β_k ∈ {0,1}`, such that the forward iterate by `α_k q_k + β_k q_{k-1}`
/// maps the running point into `J⁻_k`.  Each digit is verified unique among
/// all `2 a_k` candidates.
pub fn combinatorial_address(
    lift: &CircleMapLift,
    rho: &RotationNumber,
    s: f64,
    n: usize,
    m: usize,
) -> Result<CombinatorialAddress> {
    let rt = rho.return_times()?;
    if n + m + 1 > rt.max_index() {
        return Err(Error::BadRequest(format!(
            "address ({}, {}) needs return times to index {}",
            n,
            m,
            n + m + 1
        )));
    }
    let x0 = 0.0;
    let back_len = rt.q[n + m + 1] as usize + 1;
    if back_len as u64 > ITER_CAP {
        return Err(Error::ResolutionExceeded(format!(
            "backward orbit of length {} above iteration cap",
            back_len
        )));
    }
    let back = lift.backward_orbit(x0, back_len);
    let near_marker = |p: f64| {
        // Reject points that collide with the backward orbit of the marked
        // point (iterated preimages of ξ_0 have no well-defined digits).
        back.iter().any(|&b| geom::circ_dist(p, b) < ADDRESS_TOL)
    };
    let mut x = geom::frac(s);
    let mut digits = Vec::with_capacity(m);
    for k in n..n + m {
        let here = j_minus(&back, &rt, x0, k)?;
        if !here.contains(x) {
            return Err(Error::BadRequest(format!(
                "point left J⁻_{} during address computation",
                k
            )));
        }
        if near_marker(x) {
            return Err(Error::BranchAmbiguity(
                "preimage of critical angle".into(),
            ));
        }
        // Candidate digits and their membership targets, following the
        // covering of J⁻_k by I⁻_{k+2} ∪ I⁻_{k+1} (digit (0,0): the point
        // is already in J⁻_{k+1}) and the a_{k+1} arcs that the forward
        // iterate by α q_{k+1} + q_k carries onto I⁻_{k+1}.
        let j_next = j_minus(&back, &rt, x0, k + 1)?;
        let i_next = i_minus(&back, &rt, x0, k + 1)?;
        let a_next = rho.coeffs()[k] as u32; // a_{k+1}, 1-based
        let mut found: Option<((u32, u8), f64)> = None;
        let mut candidates: Vec<((u32, u8), &Arc)> = vec![((0, 0), &j_next)];
        for alpha in 0..a_next {
            candidates.push(((alpha, 1), &i_next));
        }
        for ((alpha, beta), target) in candidates {
            let shift = alpha as u64 * rt.q[k + 1] as u64
                + beta as u64 * rt.q[k] as u64;
            let y = lift.forward(x, shift);
            match arc_member(target, y) {
                None => {
                    return Err(Error::BranchAmbiguity(
                        "preimage of critical angle".into(),
                    ));
                }
                Some(true) => {
                    if let Some(((pa, pb), _)) = found {
                        return Err(Error::BranchAmbiguity(format!(
                            "digits ({},{}) and ({},{}) both land in J⁻_{}",
                            pa,
                            pb,
                            alpha,
                            beta,
                            k + 1
                        )));
                    }
                    found = Some(((alpha, beta), y));
                }
                Some(false) => {}
            }
        }
        let ((alpha, beta), y) = found.ok_or_else(|| {
            Error::BranchAmbiguity(format!("no digit lands in J⁻_{}", k + 1))
        })?;
        digits.push((alpha, beta));
        x = y;
    }
    Ok(CombinatorialAddress { base: n, digits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::GOLDEN;

    fn golden_rt(n: usize) -> ReturnTimes {
        RotationNumber::golden(n).return_times().unwrap()
    }

    #[test]
    fn rigid_golden_rotation_number() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let rt = golden_rt(30);
        let est = rotation_number(&lift, 0.0, Some(&rt), 1e-12).unwrap();
        assert!((est.value - GOLDEN).abs() < 1e-12, "err {:.3e}", est.value - GOLDEN);
        assert!(est.err_bound <= 1e-12);
    }

    #[test]
    fn rigid_quarter_is_exact() {
        let lift = CircleMapLift::rigid(0.25);
        let est = rotation_number(&lift, 0.1, None, 1e-9).unwrap();
        assert_eq!(est.value, 0.25);
    }

    #[test]
    fn golden_unhinted_estimate() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let est = rotation_number(&lift, 0.0, None, 1e-10).unwrap();
        assert!((est.value - GOLDEN).abs() < 1e-10);
    }

    #[test]
    fn closest_return_lengths_golden() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let rt = golden_rt(12);
        let arcs = closest_return_arcs(&lift, &rt, 0.0, 10).unwrap();
        // |I_3| = |q_3 ρ − p_3| = |2ρ − 1|
        assert!((arcs[2].length - (2.0 * GOLDEN - 1.0).abs()).abs() < 1e-12);
        for w in arcs.windows(2) {
            assert!(w[1].length < w[0].length);
        }
    }

    #[test]
    fn partition_counts_golden_level2() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let rt = golden_rt(8);
        let part = dynamical_partition(&lift, &rt, 0.0, 2).unwrap();
        let (old, new) = part.counts();
        assert_eq!((old, new), (2, 1));
        assert_eq!(part.arcs.len(), 3);
        assert!(part.max_gap() < 1e-12);
        assert!((part.total_length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partition_refinement() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let rt = golden_rt(10);
        let coarse = dynamical_partition(&lift, &rt, 0.0, 4).unwrap();
        let fine = dynamical_partition(&lift, &rt, 0.0, 5).unwrap();
        assert!(coarse.refined_by(&fine, 1e-12));
        assert!(!fine.refined_by(&coarse, 1e-12));
    }

    #[test]
    fn real_bounds_rigid_golden() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let rt = golden_rt(14);
        let rep = verify_real_bounds(&lift, &rt, 0.0, 12).unwrap();
        // Adjacent arcs have lengths g^n and g^{n+1}: every K_n is 1/g.
        for &(n, k) in &rep.k_table {
            assert!((k - 1.0 / GOLDEN).abs() < 1e-6, "K_{} = {}", n, k);
        }
        assert!(rep.r_squared > 0.9999);
        assert!((rep.decay_rate - GOLDEN).abs() < 1e-9);
    }

    #[test]
    fn real_bounds_silver_larger() {
        let silver = 2f64.sqrt() - 1.0;
        let lift = CircleMapLift::rigid(silver);
        let rt = RotationNumber::constant(2, 14).return_times().unwrap();
        let rep = verify_real_bounds(&lift, &rt, 0.0, 10).unwrap();
        let k_max = rep.k_table.iter().map(|&(_, k)| k).fold(0.0, f64::max);
        assert!(k_max > 1.0 / GOLDEN + 0.1);
        assert!(k_max.is_finite());
    }

    #[test]
    fn address_identity_digit() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let rho = RotationNumber::golden(16);
        let rt = rho.return_times().unwrap();
        // A point already in J⁻_{n+1} gets the identity digit.
        let back = lift.backward_orbit(0.0, rt.q[8] as usize + 1);
        let inner = j_minus(&back, &rt, 0.0, 7).unwrap();
        let s = geom::frac(inner.midpoint() + 1e-4);
        let addr = combinatorial_address(&lift, &rho, s, 6, 1).unwrap();
        assert_eq!(addr.digits[0], (0, 0));
    }

    #[test]
    fn address_composition_law() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let rho = RotationNumber::golden(16);
        let rt = rho.return_times().unwrap();
        let back = lift.backward_orbit(0.0, rt.q[6] as usize + 1);
        let j5 = j_minus(&back, &rt, 0.0, 5).unwrap();
        let s = geom::frac(j5.start + 0.37 * j5.length());
        let full = combinatorial_address(&lift, &rho, s, 5, 8).unwrap();
        let head = combinatorial_address(&lift, &rho, s, 5, 4).unwrap();
        let shift = head.total_shift(&rt);
        let mid = lift.forward(s, shift as u64);
        let tail = combinatorial_address(&lift, &rho, mid, 9, 4).unwrap();
        assert_eq!(head.concat(&tail).unwrap(), full);
    }

    #[test]
    fn address_lands_in_deep_arc() {
        let lift = CircleMapLift::rigid(GOLDEN);
        let rho = RotationNumber::golden(16);
        let rt = rho.return_times().unwrap();
        let back = lift.backward_orbit(0.0, rt.q[12] as usize + 1);
        let j5 = j_minus(&back, &rt, 0.0, 5).unwrap();
        let mut checked = 0;
        for i in 0..40 {
            let s = geom::frac(j5.start + (0.021 + 0.024 * i as f64) * j5.length());
            let addr = match combinatorial_address(&lift, &rho, s, 5, 6) {
                Ok(a) => a,
                Err(Error::BranchAmbiguity(_)) => continue,
                Err(e) => panic!("unexpected: {}", e),
            };
            let shift = addr.total_shift(&rt);
            let y = lift.forward(s, shift as u64);
            let j11 = j_minus(&back, &rt, 0.0, 11).unwrap();
            assert!(j11.contains(y), "landed outside J⁻_11");
            checked += 1;
        }
        assert!(checked > 30);
    }

    #[test]
    fn address_unique_among_candidates() {
        // Uniqueness is asserted inside combinatorial_address; sweep many
        // angles (silver: a_k = 2 gives 4 candidates per digit).
        let silver = RotationNumber::constant(2, 16);
        let lift = CircleMapLift::rigid(silver.value());
        let rt = silver.return_times().unwrap();
        let back = lift.backward_orbit(0.0, rt.q[12] as usize + 1);
        let j4 = j_minus(&back, &rt, 0.0, 4).unwrap();
        let mut ok = 0;
        for i in 0..1000 {
            let s = geom::frac(j4.start + (i as f64 + 0.5) / 1001.0 * j4.length());
            match combinatorial_address(&lift, &silver, s, 4, 6) {
                Ok(_) => ok += 1,
                Err(Error::BranchAmbiguity(msg)) => {
                    assert!(
                        msg.contains("preimage of critical angle"),
                        "genuine ambiguity: {}",
                        msg
                    );
                }
                Err(e) => panic!("unexpected: {}", e),
            }
        }
        assert!(ok > 950);
    }

    #[test]
    fn blaschke_style_lift_inverse() {
        // A mildly nonlinear degree-1 lift; invert must undo forward.
        let lift = CircleMapLift::new(
            |x| x + 0.4 + 0.05 * (2.0 * std::f64::consts::PI * x).sin(),
            |x| 1.0 + 0.05 * 2.0 * std::f64::consts::PI
                * (2.0 * std::f64::consts::PI * x).cos(),
            LiftKind::Custom,
        );
        assert!(lift.check_degree_one(64));
        assert!(lift.min_derivative(512) > 0.0);
        for i in 0..20 {
            let y = i as f64 / 20.0;
            let x = lift.invert(y);
            assert!(geom::circ_dist(geom::frac(lift.eval(x)), y) < 1e-12);
        }
    }
}
