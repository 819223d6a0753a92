//! Planar predicates and polygon primitives.
//!
//! Orientation tests run in floating point first and fall back to exact
//! expansion arithmetic when the determinant is within the rounding bound.

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let x = a + b;
    let bv = x - a;
    let av = x - bv;
    (x, (a - av) + (b - bv))
}

#[inline]
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let x = a * b;
    (x, a.mul_add(b, -x))
}

/// Adds `b` into the nonoverlapping expansion `e` (increasing magnitude), dropping zeros.
fn grow_expansion(e: &mut Vec<f64>, b: f64) {
    let mut q = b;
    let mut out = Vec::with_capacity(e.len() + 1);
    for &x in e.iter() {
        let (s, err) = two_sum(q, x);
        if err != 0.0 {
            out.push(err);
        }
        q = s;
    }
    if q != 0.0 {
        out.push(q);
    }
    *e = out;
}

fn orient_exact(a: Point, b: Point, c: Point) -> f64 {
    // (ax-cx)(by-cy) - (ay-cy)(bx-cx), expanded so every product is of inputs.
    let terms = [
        two_product(a[0], b[1]),
        two_product(-a[0], c[1]),
        two_product(-c[0], b[1]),
        two_product(-a[1], b[0]),
        two_product(a[1], c[0]),
        two_product(c[1], b[0]),
    ];
    let mut e = Vec::with_capacity(12);
    for (hi, lo) in terms {
        grow_expansion(&mut e, lo);
        grow_expansion(&mut e, hi);
    }
    e.last().copied().unwrap_or(0.0)
}

/// Sign of the orientation of `c` relative to the directed line `a -> b`:
/// positive for a left turn, negative for right, zero when collinear (exactly).
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    let l = (a[0] - c[0]) * (b[1] - c[1]);
    let r = (a[1] - c[1]) * (b[0] - c[0]);
    let det = l - r;
    let bound = 3.3306690738754716e-16 * (l.abs() + r.abs());
    if det.abs() > bound {
        det.signum()
    } else {
        let e = orient_exact(a, b, c);
        if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// Signed Euclidean area (positive for counterclockwise).
pub fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let mut s = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        s += p[0] * q[1] - p[1] * q[0];
    }
    0.5 * s
}

/// Edges `i` and `i+1` fold back onto each other (zero-angle spike).
fn adjacent_overlap(vertices: &[Point]) -> Option<(usize, usize)> {
    let n = vertices.len();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let c = vertices[(i + 2) % n];
        if orient(a, b, c) == 0.0 && dot(sub(a, b), sub(c, b)) > 0.0 {
            return Some((i, (i + 1) % n));
        }
    }
    None
}

#[inline]
fn adjacent(i: usize, j: usize, n: usize) -> bool {
    i == j || (i + 1) % n == j || (j + 1) % n == i
}

fn edge(vertices: &[Point], i: usize) -> (Point, Point) {
    (vertices[i], vertices[(i + 1) % vertices.len()])
}

/// O(n²) reference check: first pair of non-adjacent edges that intersect.
pub fn find_crossing_brute(vertices: &[Point]) -> Option<(usize, usize)> {
    if let Some(p) = adjacent_overlap(vertices) {
        return Some(p);
    }
    let n = vertices.len();
    for i in 0..n {
        let (a, b) = edge(vertices, i);
        for j in i + 1..n {
            if adjacent(i, j, n) {
                continue;
            }
            let (c, d) = edge(vertices, j);
            if segments_intersect(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

fn lex(a: Point, b: Point) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

/// Sweep-line (Shamos–Hoey) search for a pair of intersecting non-adjacent
/// edges of a closed polygon. Degenerate configurations met during the sweep
/// (a vertex exactly on another edge's supporting line) defer to the exact
/// brute-force check.
pub fn find_crossing(vertices: &[Point]) -> Option<(usize, usize)> {
    let n = vertices.len();
    if n < 4 {
        return adjacent_overlap(vertices);
    }
    if let Some(p) = adjacent_overlap(vertices) {
        return Some(p);
    }
    // (left, right) endpoints per edge.
    let segs: Vec<(Point, Point)> = (0..n)
        .map(|i| {
            let (a, b) = edge(vertices, i);
            if lex(a, b) == Ordering::Greater { (b, a) } else { (a, b) }
        })
        .collect();
    // Events: inserts sort before removals at the same point.
    let mut events: Vec<(Point, u8, usize)> = Vec::with_capacity(2 * n);
    for (i, &(l, r)) in segs.iter().enumerate() {
        events.push((l, 0, i));
        events.push((r, 1, i));
    }
    events.sort_by(|x, y| lex(x.0, y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let check = |i: usize, j: usize| -> bool {
        if adjacent(i, j, n) {
            return false;
        }
        let (a, b) = segs[i];
        let (c, d) = segs[j];
        segments_intersect(a, b, c, d)
    };

    let mut status: Vec<usize> = Vec::with_capacity(64);
    for &(p, kind, id) in &events {
        if kind == 0 {
            let (_, pr) = segs[id];
            // Number of active segments strictly below the new segment.
            let mut degenerate = false;
            let pos = status.partition_point(|&s| {
                let (sl, sr) = segs[s];
                let o = orient(sl, sr, p);
                if o != 0.0 {
                    return o > 0.0;
                }
                if adjacent(s, id, n) {
                    // Shared endpoint: order by the far endpoint.
                    let o2 = orient(sl, sr, pr);
                    if o2 == 0.0 {
                        degenerate = true;
                    }
                    return o2 > 0.0;
                }
                degenerate = true;
                false
            });
            if degenerate {
                return find_crossing_brute(vertices);
            }
            status.insert(pos, id);
            if pos > 0 && check(status[pos - 1], id) {
                return Some(ordered(status[pos - 1], id));
            }
            if pos + 1 < status.len() && check(status[pos + 1], id) {
                return Some(ordered(status[pos + 1], id));
            }
        } else {
            let Some(pos) = status.iter().position(|&s| s == id) else {
                return find_crossing_brute(vertices);
            };
            status.remove(pos);
            if pos > 0 && pos < status.len() && check(status[pos - 1], status[pos]) {
                return Some(ordered(status[pos - 1], status[pos]));
            }
        }
    }
    None
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j { (i, j) } else { (j, i) }
}

/// A triangle as vertex triple, counterclockwise.
pub type Triangle = [Point; 3];

/// Fan from `apex` if every fan triangle is positively oriented.
pub fn star_fan(vertices: &[Point], apex: Point) -> Option<Vec<Triangle>> {
    let n = vertices.len();
    let mut tris = Vec::with_capacity(n);
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        if orient(apex, p, q) <= 0.0 {
            return None;
        }
        tris.push([apex, p, q]);
    }
    Some(tris)
}

fn point_in_triangle(p: Point, a: Point, b: Point, c: Point) -> bool {
    orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
}

/// Ear-clipping triangulation of a simple counterclockwise polygon.
pub fn ear_clip(vertices: &[Point]) -> Result<Vec<Triangle>> {
    let mut idx: Vec<usize> = (0..vertices.len()).collect();
    let mut tris = Vec::with_capacity(vertices.len().saturating_sub(2));
    let mut guard = 0usize;
    let mut i = 0usize;
    while idx.len() > 3 {
        let m = idx.len();
        let (ia, ib, ic) = (idx[(i + m - 1) % m], idx[i % m], idx[(i + 1) % m]);
        let (a, b, c) = (vertices[ia], vertices[ib], vertices[ic]);
        let mut is_ear = orient(a, b, c) > 0.0;
        if is_ear {
            for &k in &idx {
                if k == ia || k == ib || k == ic {
                    continue;
                }
                let p = vertices[k];
                if point_in_triangle(p, a, b, c) && p != a && p != b && p != c {
                    is_ear = false;
                    break;
                }
            }
        }
        if is_ear {
            tris.push([a, b, c]);
            idx.remove(i % m);
            guard = 0;
            if i >= idx.len() {
                i = 0;
            }
        } else {
            i = (i + 1) % m;
            guard += 1;
            if guard > m {
                return Err(Error::TriangulationFailure(format!(
                    "no ear found with {m} vertices remaining"
                )));
            }
        }
    }
    let (a, b, c) = (vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]);
    if orient(a, b, c) > 0.0 {
        tris.push([a, b, c]);
    } else if orient(a, b, c) < 0.0 {
        return Err(Error::TriangulationFailure("final triangle is inverted".into()));
    }
    Ok(tris)
}
