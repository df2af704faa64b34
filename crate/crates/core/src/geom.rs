//! Exact 2D predicates shared by the triangulation and rasterizers.

use robust::Coord;

#[inline]
fn c(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

/// Exact sign of the orientation of `(a, b, p)`: positive when `p` lies to
/// the left of `a -> b` in x-right/y-up terms.
#[inline]
pub fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    robust::orient2d(c(a), c(b), c(p))
}

/// Twice the signed area (plain floating point).
#[inline]
pub fn signed_area2(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Closed containment test for a positively oriented triangle.
#[inline]
pub fn in_triangle_closed(t: &[[f64; 2]; 3], p: [f64; 2]) -> bool {
    orient(t[0], t[1], p) >= 0.0 && orient(t[1], t[2], p) >= 0.0 && orient(t[2], t[0], p) >= 0.0
}

/// True when segments `a-b` and `c-d` cross at a single point interior to both.
pub fn segments_cross_properly(a: [f64; 2], b: [f64; 2], p: [f64; 2], q: [f64; 2]) -> bool {
    let o1 = orient(a, b, p);
    let o2 = orient(a, b, q);
    let o3 = orient(p, q, a);
    let o4 = orient(p, q, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// True when `p` lies on the open segment `a-b`.
pub fn on_segment_interior(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    if p == a || p == b || orient(a, b, p) != 0.0 {
        return false;
    }
    let t = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
    t > 0.0 && t < len2
}

pub fn line_intersection(a: [f64; 2], b: [f64; 2], p: [f64; 2], q: [f64; 2]) -> [f64; 2] {
    let r = [b[0] - a[0], b[1] - a[1]];
    let s = [q[0] - p[0], q[1] - p[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    let t = ((p[0] - a[0]) * s[1] - (p[1] - a[1]) * s[0]) / denom;
    [a[0] + t * r[0], a[1] + t * r[1]]
}
