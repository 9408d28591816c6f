//! Discrete extremal length: conformal moduli of polyline-bounded annuli
//! and quadrilaterals via an edge-conductance network (5-point stencil),
//! plus Poincaré neighborhoods and Grötzsch-type checks.
//!
//! The modulus is 1/C where C is the effective conductance between the two
//! electrodes at unit voltage.  Annuli that surround the origin with
//! star-shaped boundaries are solved on a log-polar cylinder (the round
//! oracles are then grid-exact); everything else runs on a Cartesian grid
//! whose staircase error is removed by Richardson extrapolation across
//! three dyadic resolutions.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bubbles::PlanarRegion;
use crate::error::{Error, Result};
use crate::geom::{self, TAU};

pub const DEFAULT_RESOLUTION: usize = 1024;
const CG_TOL: f64 = 1e-10;
const CG_MAX_ITER: usize = 60_000;

#[derive(Clone, Debug)]
pub struct AnnulusSpec {
    pub outer: PlanarRegion,
    pub inner: PlanarRegion,
    /// Finest grid resolution; the ladder is `[n/4, n/2, n]`.
    pub resolution: usize,
}

impl AnnulusSpec {
    pub fn new(outer: PlanarRegion, inner: PlanarRegion, resolution: usize) -> AnnulusSpec {
        AnnulusSpec { outer, inner, resolution }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModulusEstimate {
    /// Estimate at the finest resolution.
    pub value: f64,
    /// Finest resolution used.
    pub resolution: usize,
    /// `(resolution, estimate)` pairs, coarse to fine.
    #[serde(rename = "resolution_ladder")]
    pub ladder: Vec<(usize, f64)>,
    /// First-order Richardson extrapolation from the two finest levels.
    pub extrapolated: f64,
    /// `|value − extrapolated|`.
    pub error: f64,
}

impl ModulusEstimate {
    fn from_ladder(ladder: Vec<(usize, f64)>) -> ModulusEstimate {
        let n = ladder.len();
        let (res, value) = ladder[n - 1];
        let prev = ladder[n - 2].1;
        let extrapolated = 2.0 * value - prev;
        ModulusEstimate { value, resolution: res, ladder, extrapolated, error: (value - prev).abs() }
    }

    /// Ratio of successive refinement changes (≈ 0.5 for first-order
    /// convergence); `None` when fewer than 3 ladder entries.
    pub fn convergence_ratio(&self) -> Option<f64> {
        let n = self.ladder.len();
        if n < 3 {
            return None;
        }
        let d1 = self.ladder[n - 2].1 - self.ladder[n - 3].1;
        let d2 = self.ladder[n - 1].1 - self.ladder[n - 2].1;
        (d1.abs() > 1e-300).then(|| d2.abs() / d1.abs())
    }
}

// ---------------------------------------------------------------------------
// conductance grid

const BLOCKED: u8 = 0;
const DOMAIN: u8 = 1;
const ELEC0: u8 = 2;
const ELEC1: u8 = 3;

struct Grid {
    nx: usize,
    ny: usize,
    periodic_x: bool,
    class: Vec<u8>,
}

impl Grid {
    fn at(&self, ix: i64, iy: i64) -> u8 {
        if iy < 0 || iy >= self.ny as i64 {
            return BLOCKED;
        }
        let ix = if self.periodic_x {
            ix.rem_euclid(self.nx as i64)
        } else {
            if ix < 0 || ix >= self.nx as i64 {
                return BLOCKED;
            }
            ix
        };
        self.class[iy as usize * self.nx + ix as usize]
    }
}

/// Solves the discrete Dirichlet problem (unit voltage across the
/// electrodes, unit edge conductances) and returns the dissipated power,
/// i.e. the effective conductance.
fn solve_conductance(grid: &Grid) -> Result<f64> {
    let nx = grid.nx;
    let ny = grid.ny;
    // unknown index per cell
    let mut idx = vec![u32::MAX; nx * ny];
    let mut cells = Vec::new();
    for c in 0..nx * ny {
        if grid.class[c] == DOMAIN {
            idx[c] = cells.len() as u32;
            cells.push(c as u32);
        }
    }
    let m = cells.len();
    if m == 0 {
        return Err(Error::GridSolve("no interior cells between the electrodes".into()));
    }
    // Per-unknown neighbor encoding: >= 0 unknown id; -1 blocked; -2/-3 electrodes.
    let mut nbs = vec![[-1i32; 4]; m];
    let mut diag = vec![0.0f64; m];
    let mut b = vec![0.0f64; m];
    for (u, &c) in cells.iter().enumerate() {
        let ix = (c as usize % nx) as i64;
        let iy = (c as usize / nx) as i64;
        let dirs = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)];
        for (k, (dx, dy)) in dirs.iter().enumerate() {
            let cls = grid.at(ix + dx, iy + dy);
            nbs[u][k] = match cls {
                DOMAIN => {
                    let jx = if grid.periodic_x {
                        (ix + dx).rem_euclid(nx as i64)
                    } else {
                        ix + dx
                    };
                    idx[(iy + dy) as usize * nx + jx as usize] as i32
                }
                ELEC0 => -2,
                ELEC1 => -3,
                _ => -1,
            };
            if cls != BLOCKED {
                diag[u] += 1.0;
                if cls == ELEC1 {
                    b[u] += 1.0;
                }
            }
        }
    }

    // Jacobi-preconditioned conjugate gradients, matrix-free.
    let apply = |u: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let mut acc = diag[i] * u[i];
            for &nb in &nbs[i] {
                if nb >= 0 {
                    acc -= u[nb as usize];
                }
            }
            *o = acc;
        });
    };
    let dot = |a: &[f64], c: &[f64]| -> f64 {
        a.par_iter().zip(c.par_iter()).map(|(x, y)| x * y).sum()
    };

    let mut u = vec![0.5f64; m];
    let mut r = vec![0.0f64; m];
    apply(&u, &mut r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
    let bnorm = dot(&b, &b).sqrt().max(1e-300);
    let mut z: Vec<f64> = r.par_iter().zip(diag.par_iter()).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0f64; m];
    let mut converged = false;
    for _ in 0..CG_MAX_ITER {
        if dot(&r, &r).sqrt() <= CG_TOL * bnorm {
            converged = true;
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        u.par_iter_mut().zip(p.par_iter()).for_each(|(ui, pi)| *ui += alpha * pi);
        r.par_iter_mut().zip(ap.par_iter()).for_each(|(ri, ai)| *ri -= alpha * ai);
        z.par_iter_mut()
            .zip(r.par_iter().zip(diag.par_iter()))
            .for_each(|(zi, (ri, d))| *zi = ri / d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    if !converged {
        let res = dot(&r, &r).sqrt() / bnorm;
        return Err(Error::GridSolve(format!(
            "conjugate gradients stalled at relative residual {:.3e}",
            res
        )));
    }

    // Dissipated power: domain-domain edges once (right/up), electrode
    // edges from the domain side.
    let power: f64 = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for (k, &nb) in nbs[i].iter().enumerate() {
                match nb {
                    -2 => acc += u[i] * u[i],
                    -3 => acc += (u[i] - 1.0) * (u[i] - 1.0),
                    // interior edges once each: +x (k = 0) and +y (k = 2)
                    j if j >= 0 && (k == 0 || k == 2) => {
                        let d = u[i] - u[j as usize];
                        acc += d * d;
                    }
                    _ => {}
                }
            }
            acc
        })
        .sum();
    if !(power > 0.0) {
        return Err(Error::GridSolve("zero conductance: electrodes not connected".into()));
    }
    Ok(power)
}

// ---------------------------------------------------------------------------
// rasterization

/// Inside-mask for a polygon over cell centers, by scanline parity.
fn fill_mask(
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    h: f64,
    poly: &[Complex64],
) -> Vec<bool> {
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); ny];
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if a.im == b.im {
            continue;
        }
        let (ylo, yhi) = if a.im < b.im { (a.im, b.im) } else { (b.im, a.im) };
        let r0 = (((ylo - y0) / h - 0.5).ceil().max(0.0)) as usize;
        for row in r0..ny {
            let yc = y0 + (row as f64 + 0.5) * h;
            if yc >= yhi {
                break;
            }
            if yc < ylo {
                continue;
            }
            // half-open rule: count iff ylo <= yc < yhi
            let t = (yc - a.im) / (b.im - a.im);
            rows[row].push(a.re + t * (b.re - a.re));
        }
    }
    let mut mask = vec![false; nx * ny];
    for (row, xs) in rows.iter_mut().enumerate() {
        xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for pair in xs.chunks_exact(2) {
            let i0 = (((pair[0] - x0) / h - 0.5).ceil().max(0.0)) as usize;
            for ix in i0..nx {
                let xc = x0 + (ix as f64 + 0.5) * h;
                if xc >= pair[1] {
                    break;
                }
                if xc >= pair[0] {
                    mask[row * nx + ix] = true;
                }
            }
        }
    }
    mask
}

/// Marks cells within half a cell of the unit-circle arc `(a, b)` (turns,
/// ccw) as blocked.
fn block_slit(grid: &mut Grid, x0: f64, y0: f64, h: f64, arc: (f64, f64)) {
    let len = geom::ccw_dist(arc.0, arc.1);
    let steps = ((len * TAU) / (h * 0.33)).ceil().max(2.0) as usize;
    for i in 0..=steps {
        let t = arc.0 + len * i as f64 / steps as f64;
        let z = geom::unit(t);
        let ix = ((z.re - x0) / h).floor() as i64;
        let iy = ((z.im - y0) / h).floor() as i64;
        if ix >= 0 && iy >= 0 && (ix as usize) < grid.nx && (iy as usize) < grid.ny {
            grid.class[iy as usize * grid.nx + ix as usize] = BLOCKED;
        }
    }
}

fn cartesian_annulus_grid(spec: &AnnulusSpec, n: usize) -> Grid {
    let (lo, hi) = spec.outer.bbox();
    let span = (hi.re - lo.re).max(hi.im - lo.im);
    let h = span / (n as f64 - 6.0);
    let x0 = lo.re - 3.0 * h;
    let y0 = lo.im - 3.0 * h;
    let nx = n;
    let ny = (((hi.im - lo.im) + 6.0 * h) / h).ceil() as usize;
    let inside_outer = fill_mask(nx, ny, x0, y0, h, &spec.outer.boundary);
    let inside_inner = fill_mask(nx, ny, x0, y0, h, &spec.inner.boundary);
    let mut class = vec![ELEC1; nx * ny];
    for c in 0..nx * ny {
        if inside_inner[c] {
            class[c] = ELEC0;
        } else if inside_outer[c] {
            class[c] = DOMAIN;
        }
    }
    let mut grid = Grid { nx, ny, periodic_x: false, class };
    for &s in spec.outer.slits.iter().chain(&spec.inner.slits) {
        block_slit(&mut grid, x0, y0, h, s);
    }
    grid
}

/// Radial crossing table: for each of `n` angular columns, the value of
/// `ln r` at which the polygon boundary crosses the column's central ray.
/// `None` unless every column is crossed exactly once (star-shaped about
/// the origin at grid resolution).
fn radial_crossings(poly: &[Complex64], n: usize) -> Option<Vec<f64>> {
    let m = poly.len();
    if poly.iter().any(|z| z.norm() < 1e-12) {
        return None;
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); n];
    for i in 0..m {
        let a = poly[i];
        let b = poly[(i + 1) % m];
        let ta = a.arg();
        let mut dt = b.arg() - ta;
        if dt > std::f64::consts::PI {
            dt -= TAU;
        } else if dt < -std::f64::consts::PI {
            dt += TAU;
        }
        if dt == 0.0 {
            continue;
        }
        let (sa, sb) = (a.norm().ln(), b.norm().ln());
        // Columns whose center angle the segment sweeps.
        let step = TAU / n as f64;
        let t_lo = ta.min(ta + dt);
        let t_hi = ta.max(ta + dt);
        let k0 = ((t_lo - 0.5 * step) / step).ceil() as i64;
        let k1 = ((t_hi - 0.5 * step) / step).floor() as i64;
        for k in k0..=k1 {
            let theta = (k as f64 + 0.5) * step;
            let t = (theta - ta) / dt;
            if !(0.0..=1.0).contains(&t) {
                continue;
            }
            let col = (k.rem_euclid(n as i64)) as usize;
            cols[col].push(sa + t * (sb - sa));
        }
    }
    let mut out = Vec::with_capacity(n);
    for c in &mut cols {
        c.sort_by(|p, q| p.partial_cmp(q).unwrap());
        c.dedup_by(|p, q| (*p - *q).abs() < 1e-9);
        if c.len() != 1 {
            return None;
        }
        out.push(c[0]);
    }
    Some(out)
}

fn logpolar_annulus_grid(spec: &AnnulusSpec, n: usize) -> Option<Grid> {
    if !spec.inner.contains(Complex64::new(0.0, 0.0)) {
        return None;
    }
    let s_in = radial_crossings(&spec.inner.boundary, n)?;
    let s_out = radial_crossings(&spec.outer.boundary, n)?;
    let h = TAU / n as f64;
    let smin = s_in.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let smax = s_out.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let ny = ((smax - smin) / h).ceil() as usize;
    let mut class = vec![BLOCKED; n * ny];
    for iy in 0..ny {
        let s = smin + (iy as f64 + 0.5) * h;
        for ix in 0..n {
            class[iy * n + ix] = if s <= s_in[ix] {
                ELEC0
            } else if s >= s_out[ix] {
                ELEC1
            } else {
                DOMAIN
            };
        }
    }
    let mut grid = Grid { nx: n, ny, periodic_x: true, class };
    // Slits sit on ∂𝔻, i.e. the s = 0 row of the cylinder.
    if smin < 0.0 && smax > 0.0 {
        let iy = ((0.0 - smin) / h).floor() as usize;
        for &(a, b) in spec.outer.slits.iter().chain(&spec.inner.slits) {
            let len = geom::ccw_dist(a, b);
            let steps = ((len * TAU) / (h * 0.33)).ceil().max(2.0) as usize;
            for i in 0..=steps {
                let t = geom::frac(a + len * i as f64 / steps as f64);
                let ix = ((t * TAU) / h).floor() as usize % n;
                if iy < ny {
                    grid.class[iy * n + ix] = BLOCKED;
                }
            }
        }
    }
    Some(grid)
}

// ---------------------------------------------------------------------------
// public operations

/// Discrete conformal modulus of the annulus between `spec.inner` and
/// `spec.outer`, with Richardson extrapolation over `[n/4, n/2, n]`.
pub fn modulus_annulus(spec: &AnnulusSpec) -> Result<ModulusEstimate> {
    let n = spec.resolution.max(64);
    // Separation precheck at the finest grid.
    let (lo, hi) = spec.outer.bbox();
    let h_fine = ((hi.re - lo.re).max(hi.im - lo.im)) / (n as f64 - 6.0);
    for z in &spec.inner.boundary {
        if !spec.outer.contains(*z) {
            return Err(Error::BadRequest(
                "degenerate annulus: inner boundary leaves the outer region".into(),
            ));
        }
        if geom::dist_to_polyline(*z, &spec.outer.boundary) <= 2.0 * h_fine {
            return Err(Error::ResolutionExceeded(format!(
                "degenerate annulus: boundary separation below 2 grid cells at resolution {}",
                n
            )));
        }
    }
    let ladder_res = [n / 4, n / 2, n];
    let mut ladder = Vec::new();
    for &res in &ladder_res {
        let grid = match logpolar_annulus_grid(spec, res) {
            Some(g) => g,
            None => cartesian_annulus_grid(spec, res),
        };
        let power = solve_conductance(&grid)?;
        ladder.push((res, 1.0 / power));
    }
    Ok(ModulusEstimate::from_ladder(ladder))
}

/// Discrete extremal length of the path family connecting two marked
/// boundary arcs of a simply connected region.  Arcs are vertex index
/// ranges `(start, end)` along the boundary, inclusive, wrapping.
pub fn extremal_length_quadrilateral(
    region: &PlanarRegion,
    arc_a: (usize, usize),
    arc_b: (usize, usize),
    resolution: usize,
) -> Result<ModulusEstimate> {
    let nb = region.boundary.len();
    let span_of = |arc: (usize, usize)| -> Vec<usize> {
        let mut v = vec![arc.0 % nb];
        let mut i = arc.0 % nb;
        while i != arc.1 % nb {
            i = (i + 1) % nb;
            v.push(i);
        }
        v
    };
    let ia = span_of(arc_a);
    let ib = span_of(arc_b);
    if ia.iter().any(|i| ib.contains(i)) {
        return Err(Error::BadRequest("marked arcs overlap".into()));
    }
    let pts_a: Vec<Complex64> = ia.iter().map(|&i| region.boundary[i]).collect();
    let pts_b: Vec<Complex64> = ib.iter().map(|&i| region.boundary[i]).collect();

    let n = resolution.max(64);
    let mut ladder = Vec::new();
    for &res in &[n / 4, n / 2, n] {
        let (lo, hi) = region.bbox();
        let span = (hi.re - lo.re).max(hi.im - lo.im);
        let h = span / (res as f64 - 6.0);
        let x0 = lo.re - 3.0 * h;
        let y0 = lo.im - 3.0 * h;
        let nx = res;
        let ny = (((hi.im - lo.im) + 6.0 * h) / h).ceil() as usize;
        let inside = fill_mask(nx, ny, x0, y0, h, &region.boundary);
        let mut class = vec![BLOCKED; nx * ny];
        for c in 0..nx * ny {
            if inside[c] {
                class[c] = DOMAIN;
            }
        }
        // Electrodes: exterior cells hugging each marked arc.
        let reach = 1.6 * h;
        for iy in 0..ny {
            for ix in 0..nx {
                let c = iy * nx + ix;
                if class[c] != BLOCKED {
                    continue;
                }
                let z = Complex64::new(x0 + (ix as f64 + 0.5) * h, y0 + (iy as f64 + 0.5) * h);
                if geom::dist_to_polyline(z, &pts_a) <= reach {
                    class[c] = ELEC0;
                } else if geom::dist_to_polyline(z, &pts_b) <= reach {
                    class[c] = ELEC1;
                }
            }
        }
        let mut grid = Grid { nx, ny, periodic_x: false, class };
        for &s in &region.slits {
            block_slit(&mut grid, x0, y0, h, s);
        }
        let power = solve_conductance(&grid)?;
        ladder.push((res, 1.0 / power));
    }
    Ok(ModulusEstimate::from_ladder(ladder))
}

// ---------------------------------------------------------------------------
// Poincaré neighborhoods

/// The two-disk neighborhood of a real interval: points from which the
/// interval subtends an angle greater than `theta`.
#[derive(Clone, Debug, Serialize)]
pub struct PoincareNeighborhood {
    pub interval: (f64, f64),
    pub theta: f64,
    pub centers: [Complex64; 2],
    pub radius: f64,
}

impl PoincareNeighborhood {
    /// Membership by the subtended angle itself (the disk union/intersection
    /// dichotomy at θ = π/2 falls out for free).
    pub fn contains(&self, z: Complex64) -> bool {
        let a = Complex64::new(self.interval.0, 0.0);
        let b = Complex64::new(self.interval.1, 0.0);
        if (z - a).norm() < 1e-300 || (z - b).norm() < 1e-300 {
            return false;
        }
        ((a - z) / (b - z)).arg().abs() > self.theta
    }

    /// Closed boundary polyline: the upper arc from `a` to `b` over the
    /// apex, then the mirror arc back.
    pub fn boundary_polyline(&self, n_per_arc: usize) -> Vec<Complex64> {
        let (a, b) = self.interval;
        let upper = arc_through_top(self.centers[0], self.radius, a, b, n_per_arc);
        let mut out = upper.clone();
        for z in upper.iter().rev() {
            out.push(z.conj());
        }
        out.dedup_by(|p, q| (*p - *q).norm() < 1e-15);
        out
    }
}

fn arc_through_top(
    center: Complex64,
    r: f64,
    a: f64,
    b: f64,
    n: usize,
) -> Vec<Complex64> {
    let pa = (Complex64::new(a, 0.0) - center).arg();
    let pb = (Complex64::new(b, 0.0) - center).arg();
    // ccw sweep from b's angle to a's angle passes through the top.
    let sweep = geom::frac((pa - pb) / TAU) * TAU;
    (0..=n)
        .map(|i| center + Complex64::from_polar(r, pb + sweep * i as f64 / n as f64))
        .collect()
}

/// `D_θ(I)`: union of two disks symmetric in ℝ, each meeting ℝ exactly in
/// `I`, with boundary crossing ℝ at external angle `theta`.
pub fn poincare_neighborhood(interval: (f64, f64), theta: f64) -> Result<PoincareNeighborhood> {
    let (a, b) = interval;
    if !(b > a) || !a.is_finite() || !b.is_finite() {
        return Err(Error::BadRequest(format!("degenerate interval ({}, {})", a, b)));
    }
    if !(theta > 0.0 && theta < std::f64::consts::PI) {
        return Err(Error::BadRequest(format!("external angle {} outside (0, π)", theta)));
    }
    let half = (b - a) / 2.0;
    let mid = (a + b) / 2.0;
    // Apex height from the inscribed-angle relation.
    let t = half / (theta / 2.0).tan();
    let k = (t * t - half * half) / (2.0 * t);
    let r = (k * k + half * half).sqrt();
    Ok(PoincareNeighborhood {
        interval,
        theta,
        centers: [Complex64::new(mid, k), Complex64::new(mid, -k)],
        radius: r,
    })
}

// ---------------------------------------------------------------------------
// Grötzsch superadditivity

#[derive(Clone, Debug, Serialize)]
pub struct SuperadditivityReport {
    pub enclosing: ModulusEstimate,
    pub members: Vec<ModulusEstimate>,
    pub member_sum: f64,
    /// `enclosing − sum(members)`, extrapolated values.
    pub slack: f64,
    pub combined_error: f64,
    pub pass: bool,
}

fn contained_in(inner: &PlanarRegion, outer: &PlanarRegion, tol: f64) -> bool {
    inner.boundary.iter().all(|z| {
        outer.contains(*z) || geom::dist_to_polyline(*z, &outer.boundary) <= tol
    })
}

/// Grötzsch inequality check: disjoint annuli nested around a common core
/// have moduli summing to at most the enclosing annulus's modulus.
/// `members` are ordered innermost to outermost.
pub fn check_superadditivity(
    enclosing: &AnnulusSpec,
    members: &[AnnulusSpec],
) -> Result<SuperadditivityReport> {
    if members.is_empty() {
        return Err(Error::BadRequest("no member annuli".into()));
    }
    let scale = {
        let (lo, hi) = enclosing.outer.bbox();
        (hi - lo).norm()
    };
    let tol = 1e-9 * scale;
    // Nesting: core ⊆ first inner; each outer ⊆ next inner; last outer ⊆ enclosing outer.
    if !contained_in(&enclosing.inner, &members[0].inner, tol) {
        return Err(Error::BadRequest("first member does not surround the core".into()));
    }
    for w in members.windows(2) {
        if !contained_in(&w[0].outer, &w[1].inner, tol) {
            return Err(Error::BadRequest("member annuli are not nested/disjoint".into()));
        }
    }
    if !contained_in(&members[members.len() - 1].outer, &enclosing.outer, tol) {
        return Err(Error::BadRequest("members leave the enclosing annulus".into()));
    }
    let enclosing_est = modulus_annulus(enclosing)?;
    let members_est = members
        .par_iter()
        .map(modulus_annulus)
        .collect::<Result<Vec<_>>>()?;
    let member_sum: f64 = members_est.iter().map(|e| e.extrapolated).sum();
    let combined_error: f64 =
        enclosing_est.error + members_est.iter().map(|e| e.error).sum::<f64>();
    let slack = enclosing_est.extrapolated - member_sum;
    Ok(SuperadditivityReport {
        pass: slack >= -combined_error,
        enclosing: enclosing_est,
        members: members_est,
        member_sum,
        slack,
        combined_error,
    })
}

// ---------------------------------------------------------------------------
// bounded turning

/// Bounded-turning (three-point) constant of a closed curve: the largest
/// ratio `diam(smaller arc between a and b) / |a − b|` over sampled pairs.
/// Inputs larger than `max_samples` are subsampled by stride.
pub fn three_point_turning(points: &[Complex64], max_samples: usize) -> Result<f64> {
    if points.len() < 100 {
        return Err(Error::BadRequest(format!(
            "need at least 100 samples, got {}",
            points.len()
        )));
    }
    let stride = points.len().div_ceil(max_samples.max(8));
    let pts: Vec<Complex64> = points.iter().step_by(stride).cloned().collect();
    let n = pts.len();
    // fwd[a][b]: squared diameter of the forward arc a -> b, incrementally:
    // extending the arc by one point only adds distances to that point.
    let mut fwd = vec![0.0f64; n * n];
    for a in 0..n {
        let mut d = 0.0f64;
        for off in 1..n {
            let b = (a + off) % n;
            for off2 in 0..off {
                let p = pts[(a + off2) % n];
                d = d.max((p - pts[b]).norm_sqr());
            }
            fwd[a * n + b] = d;
        }
    }
    let mut best = 0.0f64;
    for a in 0..n {
        for off in 2..=(n - 2) {
            let b = (a + off) % n;
            let chord = (pts[a] - pts[b]).norm_sqr();
            if chord < 1e-300 {
                continue;
            }
            let small = fwd[a * n + b].min(fwd[b * n + a]);
            best = best.max(small / chord);
        }
    }
    Ok(best.sqrt())
}
