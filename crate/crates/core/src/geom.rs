//! Small shared geometry: circle angles (in turns), oriented arcs, polylines.
//!
//! Angles on the unit circle are measured in turns, normalized to `[0, 1)`.
//! Arcs are *oriented*: an `Arc { start, end }` runs counterclockwise from
//! `start` to `end`, so the pair determines the arc without any shortest-arc
//! convention (lengths up to a full turn are representable).

use num_complex::Complex64;
use serde::Serialize;

pub const TAU: f64 = std::f64::consts::TAU;

/// Fractional part normalized to `[0, 1)`. `frac(-0.25) == 0.75`.
pub fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Point on the unit circle at `theta` turns.
pub fn unit(theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, TAU * theta)
}

/// Angle of `z` in turns, in `[0, 1)`.
pub fn angle_of(z: Complex64) -> f64 {
    frac(z.im.atan2(z.re) / TAU)
}

/// Counterclockwise distance from `a` to `b` in turns, in `[0, 1)`.
pub fn ccw_dist(a: f64, b: f64) -> f64 {
    frac(b - a)
}

/// Distance between two angles along the circle (shorter way), in turns.
pub fn circ_dist(a: f64, b: f64) -> f64 {
    let d = ccw_dist(a, b);
    d.min(1.0 - d)
}

/// Oriented circular arc from `start` counterclockwise to `end` (turns).
/// The arc is open unless stated otherwise by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Arc {
    pub start: f64,
    pub end: f64,
}

impl Arc {
    pub fn new(start: f64, end: f64) -> Self {
        Arc { start: frac(start), end: frac(end) }
    }

    /// Arc length in turns, in `(0, 1]`; a degenerate arc reports 0.
    pub fn length(&self) -> f64 {
        if self.start == self.end {
            0.0
        } else {
            ccw_dist(self.start, self.end)
        }
    }

    /// Whether `theta` lies strictly inside the arc.
    pub fn contains(&self, theta: f64) -> bool {
        let t = ccw_dist(self.start, theta);
        t > 0.0 && t < self.length()
    }

    /// Whether `other` lies inside this arc (closure allowed to touch
    /// endpoints when `strict` is false).
    pub fn contains_arc(&self, other: &Arc, strict: bool) -> bool {
        let s = ccw_dist(self.start, other.start);
        let e = ccw_dist(self.start, other.end);
        let len = self.length();
        if s > e || e > len {
            return false;
        }
        if strict {
            s > 0.0 && e < len
        } else {
            true
        }
    }

    pub fn midpoint(&self) -> f64 {
        frac(self.start + 0.5 * self.length())
    }
}

/// Squared distance from `p` to the segment `[a, b]`.
pub fn dist_sq_to_segment(p: Complex64, a: Complex64, b: Complex64) -> f64 {
    let ab = b - a;
    let ap = p - a;
    let len_sq = ab.norm_sqr();
    if len_sq == 0.0 {
        return ap.norm_sqr();
    }
    let t = ((ap.re * ab.re + ap.im * ab.im) / len_sq).clamp(0.0, 1.0);
    (a + ab * t - p).norm_sqr()
}

/// Distance from a point to a polyline (finite if the polyline has >= 1
/// point; a single point acts as a degenerate polyline).
pub fn dist_to_polyline(p: Complex64, poly: &[Complex64]) -> f64 {
    if poly.is_empty() {
        return f64::INFINITY;
    }
    if poly.len() == 1 {
        return (p - poly[0]).norm();
    }
    let mut best = f64::INFINITY;
    for w in poly.windows(2) {
        best = best.min(dist_sq_to_segment(p, w[0], w[1]));
    }
    best.sqrt()
}

/// Total length of a polyline.
pub fn polyline_length(poly: &[Complex64]) -> f64 {
    poly.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Diameter of a point set (max pairwise distance); O(n^2), callers keep
/// sample counts modest.
pub fn diameter(points: &[Complex64]) -> f64 {
    let mut d = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max((a - b).norm_sqr());
        }
    }
    d.sqrt()
}

/// One-sided Hausdorff distance from `a`-points to the polyline `b`.
pub fn hausdorff_to_polyline(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .map(|&p| dist_to_polyline(p, b))
        .fold(0.0f64, f64::max)
}

/// Even-odd point-in-polygon test against a closed polygon (last vertex is
/// implicitly joined to the first).
pub fn point_in_polygon(p: Complex64, poly: &[Complex64]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.im > p.im) != (pj.im > p.im) {
            let x = pi.re + (p.im - pi.im) / (pj.im - pi.im) * (pj.re - pi.re);
            if p.re < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Whether segments `a0 a1` and `b0 b1` properly intersect (shared
/// endpoints count as intersection).
pub fn segments_intersect(a0: Complex64, a1: Complex64, b0: Complex64, b1: Complex64) -> bool {
    fn orient(a: Complex64, b: Complex64, c: Complex64) -> f64 {
        (b.re - a.re) * (c.im - a.im) - (b.im - a.im) * (c.re - a.re)
    }
    fn on_seg(a: Complex64, b: Complex64, c: Complex64) -> bool {
        c.re >= a.re.min(b.re)
            && c.re <= a.re.max(b.re)
            && c.im >= a.im.min(b.im)
            && c.im <= a.im.max(b.im)
    }
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_seg(b0, b1, a0))
        || (d2 == 0.0 && on_seg(b0, b1, a1))
        || (d3 == 0.0 && on_seg(a0, a1, b0))
        || (d4 == 0.0 && on_seg(a0, a1, b1))
}

/// Resample a polyline to roughly uniform spacing `h` (keeps endpoints and
/// never drops below 2 points).
pub fn resample_polyline(poly: &[Complex64], h: f64) -> Vec<Complex64> {
    if poly.len() < 2 || h <= 0.0 {
        return poly.to_vec();
    }
    let mut out = vec![poly[0]];
    let mut carry = 0.0;
    for w in poly.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if len == 0.0 {
            continue;
        }
        let dir = seg / len;
        let mut s = h - carry;
        while s < len {
            out.push(w[0] + dir * s);
            s += h;
        }
        carry = len - (s - h);
    }
    if out.last() != poly.last() {
        out.push(*poly.last().unwrap());
    }
    out
}

/// Signed polygon area (shoelace); positive for counterclockwise
/// orientation.  The polygon closes implicitly.
pub fn polygon_area(poly: &[Complex64]) -> f64 {
    let n = poly.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        twice += a.re * b.im - b.re * a.im;
    }
    twice / 2.0
}

/// Reflection through the unit circle, `z -> 1 / conj(z)`.
pub fn reflect(z: Complex64) -> Complex64 {
    let n = z.norm_sqr();
    if n == 0.0 {
        Complex64::new(f64::INFINITY, 0.0)
    } else {
        Complex64::new(z.re / n, z.im / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frac_normalizes() {
        assert_eq!(frac(-0.25), 0.75);
        assert_eq!(frac(1.5), 0.5);
        assert_eq!(frac(0.0), 0.0);
    }

    #[test]
    fn arc_orientation_no_shortest_convention() {
        // Arc from 0.9 ccw to 0.1 passes through 0, not through 0.5.
        let a = Arc::new(0.9, 0.1);
        assert!((a.length() - 0.2).abs() < 1e-15);
        assert!(a.contains(0.0));
        assert!(!a.contains(0.5));
        // The complementary orientation is the other arc.
        let b = Arc::new(0.1, 0.9);
        assert!(b.contains(0.5));
        assert!(!b.contains(0.0));
    }

    #[test]
    fn arc_containment_strict_vs_loose() {
        let outer = Arc::new(0.8, 0.3);
        let inner = Arc::new(0.9, 0.2);
        assert!(outer.contains_arc(&inner, true));
        let touching = Arc::new(0.8, 0.2);
        assert!(outer.contains_arc(&touching, false));
        assert!(!outer.contains_arc(&touching, true));
    }

    #[test]
    fn polygon_and_segments() {
        let square = [
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 1.0),
            Complex64::new(0.0, 1.0),
        ];
        assert!(point_in_polygon(Complex64::new(0.5, 0.5), &square));
        assert!(!point_in_polygon(Complex64::new(1.5, 0.5), &square));
        assert!(segments_intersect(
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 1.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(1.0, 0.0)
        ));
    }

    #[test]
    fn resample_roughly_uniform() {
        let line = [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
        let r = resample_polyline(&line, 0.1);
        assert!(r.len() >= 10);
        for w in r.windows(2) {
            assert!((w[1] - w[0]).norm() <= 0.1 + 1e-12);
        }
    }
}
