//! Closed simple polygons and their length, enclosed areas and isoperimetric
//! ratio in a conformal metric.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow;
use crate::geometry::{self, dist, Point, Triangle};
use crate::metric::ConformalMetric;
use crate::quadrature::gauss_legendre;

pub const MIN_VERTICES: usize = 8;

/// A counterclockwise simple polygon with at least [`MIN_VERTICES`] vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedCurve {
    vertices: Vec<Point>,
}

impl ClosedCurve {
    /// Validates the vertex list and normalizes it to counterclockwise order.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        let n = vertices.len();
        if n < MIN_VERTICES {
            return Err(Error::InvalidCurve(format!("{n} vertices, need at least {MIN_VERTICES}")));
        }
        if let Some(p) = vertices.iter().find(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidCurve(format!("non-finite vertex {p:?}")));
        }
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::InvalidCurve(format!("repeated vertex at index {i}")));
            }
        }
        let area = geometry::signed_area(&vertices);
        if area == 0.0 || !area.is_finite() {
            return Err(Error::InvalidCurve("zero enclosed area".into()));
        }
        if let Some((i, j)) = geometry::find_crossing(&vertices) {
            return Err(Error::SelfIntersection(i, j));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(ClosedCurve { vertices })
    }

    /// Regular `n`-gon inscribed in the circle of the given center and radius.
    pub fn circle(center: Point, radius: f64, n: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidCurve(format!("circle radius {radius}")));
        }
        Self::new(
            (0..n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
                })
                .collect(),
        )
    }

    /// Circle with radius `radius (1 + δ(θ))`, where `δ` mixes a constant
    /// offset and Fourier modes 2 to 12 with seeded random coefficients,
    /// rescaled so that `max |δ| = amplitude` over the vertices.
    pub fn perturbed_circle(center: Point, radius: f64, n: usize, amplitude: f64, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        if !(radius > 0.0) || !(0.0..1.0).contains(&amplitude) {
            return Err(Error::InvalidCurve(format!("radius {radius}, amplitude {amplitude}")));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let offset: f64 = rng.random_range(-1.0..1.0);
        let modes: Vec<(f64, f64, f64)> = (2..=12)
            .map(|m| (m as f64, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let theta: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
        let delta: Vec<f64> = theta
            .iter()
            .map(|t| offset + modes.iter().map(|(m, a, b)| a * (m * t).cos() + b * (m * t).sin()).sum::<f64>())
            .collect();
        let peak = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
        Self::new(
            theta
                .iter()
                .zip(&delta)
                .map(|(t, d)| {
                    let r = radius * (1.0 + scale * d);
                    [center[0] + r * t.cos(), center[1] + r * t.sin()]
                })
                .collect(),
        )
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point> {
        self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, i: usize) -> Point {
        self.vertices[i % self.vertices.len()]
    }

    pub fn euclidean_area(&self) -> f64 {
        geometry::signed_area(&self.vertices)
    }

    pub fn euclidean_edge_lengths(&self) -> Vec<f64> {
        let n = self.len();
        (0..n).map(|i| dist(self.vertices[i], self.vertices[(i + 1) % n])).collect()
    }

    pub fn euclidean_length(&self) -> f64 {
        self.euclidean_edge_lengths().iter().sum()
    }

    /// Area centroid of the enclosed region.
    pub fn centroid(&self) -> Point {
        let n = self.len();
        let (mut cx, mut cy, mut a) = (0.0, 0.0, 0.0);
        // shift for conditioning
        let o = self.vertices[0];
        for i in 0..n {
            let p = geometry::sub(self.vertices[i], o);
            let q = geometry::sub(self.vertices[(i + 1) % n], o);
            let w = p[0] * q[1] - q[0] * p[1];
            a += w;
            cx += (p[0] + q[0]) * w;
            cy += (p[1] + q[1]) * w;
        }
        [o[0] + cx / (3.0 * a), o[1] + cy / (3.0 * a)]
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, &p) in self.vertices.iter().enumerate() {
            for &q in &self.vertices[i + 1..] {
                d = d.max(dist(p, q));
            }
        }
        d
    }

    /// Same polygon with the vertex list starting at index `k`.
    pub fn rotate_start(&self, k: usize) -> Self {
        let mut v = self.vertices.clone();
        let n = v.len();
        v.rotate_left(k % n);
        ClosedCurve { vertices: v }
    }

    /// Image of the curve under a point map, revalidated.
    pub fn map<F: Fn(Point) -> Point>(&self, f: F) -> Result<Self> {
        Self::new(self.vertices.iter().map(|&p| f(p)).collect())
    }

    /// Symmetric Hausdorff distance between the two polygons (vertex-to-edge).
    pub fn hausdorff_distance(&self, other: &ClosedCurve) -> f64 {
        fn one_sided(a: &ClosedCurve, b: &ClosedCurve) -> f64 {
            let n = b.len();
            a.vertices
                .iter()
                .map(|&p| {
                    (0..n)
                        .map(|j| point_segment_distance(p, b.vertices[j], b.vertices[(j + 1) % n]))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        }
        one_sided(self, other).max(one_sided(other, self))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || headers[0].trim() != "x" || headers[1].trim() != "y" {
            return Err(Error::Config("curve file must have header \"x,y\"".into()));
        }
        let mut vertices = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad coordinate {s:?}: {e}")))
            };
            vertices.push([parse(&rec[0])?, parse(&rec[1])?]);
        }
        Self::new(vertices)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read_csv(f)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y")?;
        for p in &self.vertices {
            writeln!(w, "{:.16e},{:.16e}", p[0], p[1])?;
        }
        Ok(())
    }

    pub fn to_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = geometry::sub(b, a);
    let ap = geometry::sub(p, a);
    let len2 = geometry::dot(ab, ab);
    let t = if len2 > 0.0 { (geometry::dot(ap, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Metric length of every edge `i → i+1` by two-point Gauss sampling of `√u`.
pub fn edge_lengths_g(curve: &ClosedCurve, metric: &ConformalMetric) -> Vec<f64> {
    const OFF: f64 = 0.211_324_865_405_187_1; // (1 - 1/√3)/2
    let v = curve.vertices();
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let s = 0.5 * (metric.u(at(OFF)).sqrt() + metric.u(at(1.0 - OFF)).sqrt());
            s * dist(a, b)
        })
        .collect()
}

pub fn length_g(curve: &ClosedCurve, metric: &ConformalMetric) -> Result<f64> {
    let l: f64 = edge_lengths_g(curve, metric).iter().sum();
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::NonPositiveFactor(format!("metric length evaluated to {l}")));
    }
    Ok(l)
}

/// Triangles covering the enclosed region, and whether they form a star fan.
fn triangulate(curve: &ClosedCurve) -> Result<(Vec<Triangle>, bool)> {
    if let Some(t) = geometry::star_fan(curve.vertices(), curve.centroid()) {
        return Ok((t, true));
    }
    Ok((geometry::ear_clip(curve.vertices())?, false))
}

/// Collapsed-square Gauss rule on a triangle: points and weights with the
/// apex `t[0]` as the collapsed corner.
fn triangle_rule<F: FnMut(Point, f64)>(t: &Triangle, radial_panels: usize, cross: usize, mut f: F) {
    let rad = gauss_legendre(16);
    let cr = gauss_legendre(cross);
    let [a, b, c] = *t;
    let jac = ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
    let h = 1.0 / radial_panels as f64;
    for p in 0..radial_panels {
        for (sx, sw) in rad.unit() {
            let s = (p as f64 + sx) * h;
            let sw = sw * h;
            for (tx, tw) in cr.unit() {
                let x = [
                    a[0] + s * (b[0] - a[0]) + s * tx * (c[0] - b[0]),
                    a[1] + s * (b[1] - a[1]) + s * tx * (c[1] - b[1]),
                ];
                f(x, sw * tw * s * jac);
            }
        }
    }
}

fn interior_quadrature<F: FnMut(Point, f64)>(curve: &ClosedCurve, mut f: F) -> Result<()> {
    let (tris, fan) = triangulate(curve)?;
    let (panels, cross) = if fan { (4, 2) } else { (4, 4) };
    for t in &tris {
        triangle_rule(t, panels, cross, &mut f);
    }
    Ok(())
}

/// `∫_Ω u dx` over the bounded component.
pub fn area_in(curve: &ClosedCurve, metric: &ConformalMetric) -> Result<f64> {
    let mut a = 0.0;
    interior_quadrature(curve, |x, w| a += w * metric.u(x))?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::NonPositiveFactor(format!("enclosed area evaluated to {a}")));
    }
    Ok(a)
}

/// `(∫_Ω u dx, ∫_Ω K dV)` in one pass.
pub fn interior_integrals(curve: &ClosedCurve, metric: &ConformalMetric) -> Result<(f64, f64)> {
    let (mut a, mut k) = (0.0, 0.0);
    interior_quadrature(curve, |x, w| {
        let j = metric.jet(x);
        a += w * j.u;
        k += w * j.curvature_density();
    })?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::NonPositiveFactor(format!("enclosed area evaluated to {a}")));
    }
    Ok((a, k))
}

/// `A − A_in`; infinite for metrics of infinite total area.
pub fn area_out(curve: &ClosedCurve, metric: &ConformalMetric) -> Result<f64> {
    Ok(metric.total_area()? - area_in(curve, metric)?)
}

/// `L (1/A_in + 1/A_out)`.
pub fn ratio_from(length: f64, a_in: f64, a_out: f64) -> f64 {
    length * (1.0 / a_in + 1.0 / a_out)
}

/// Length, areas and ratio without the curvature diagnostics.
pub fn ratio_only(curve: &ClosedCurve, metric: &ConformalMetric) -> Result<(f64, f64, f64, f64)> {
    let total = metric.total_area()?;
    let l = length_g(curve, metric)?;
    let a_in = area_in(curve, metric)?;
    let a_out = total - a_in;
    if !(a_out > 0.0) {
        return Err(Error::DomainError(format!("enclosed area {a_in} exceeds total area {total}")));
    }
    Ok((l, a_in, a_out, ratio_from(l, a_in, a_out)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveMetrics {
    pub length_g: f64,
    pub area_in: f64,
    pub area_out: f64,
    pub ratio: f64,
    pub total_curvature: f64,
    pub curvature_energy: f64,
    pub gb_residual: f64,
}

/// Every functional of the curve, including `∫k ds`, `∫k² ds` and the
/// Gauss–Bonnet residual `|∫k ds + ∫_Ω K dV − 2π|`.
pub fn isoperimetric_ratio(curve: &ClosedCurve, metric: &ConformalMetric) -> Result<CurveMetrics> {
    let total = metric.total_area()?;
    let edges = edge_lengths_g(curve, metric);
    let length: f64 = edges.iter().sum();
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::NonPositiveFactor(format!("metric length evaluated to {length}")));
    }
    let (a_in, k_area) = interior_integrals(curve, metric)?;
    let a_out = total - a_in;
    if !(a_out > 0.0) {
        return Err(Error::DomainError(format!("enclosed area {a_in} exceeds total area {total}")));
    }
    let k = flow::geodesic_curvature(curve, metric);
    let n = curve.len();
    let (mut k_int, mut k2_int) = (0.0, 0.0);
    for i in 0..n {
        let ds = 0.5 * (edges[(i + n - 1) % n] + edges[i]);
        k_int += k[i] * ds;
        k2_int += k[i] * k[i] * ds;
    }
    Ok(CurveMetrics {
        length_g: length,
        area_in: a_in,
        area_out: a_out,
        ratio: ratio_from(length, a_in, a_out),
        total_curvature: k_int,
        curvature_energy: k2_int,
        gb_residual: (k_int + k_area - 2.0 * PI).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuclideanCheck {
    pub length: f64,
    pub area: f64,
    /// `L² − 4π|Ω|`
    pub slack: f64,
}

pub fn euclidean_isoperimetric_check(curve: &ClosedCurve) -> EuclideanCheck {
    let length = curve.euclidean_length();
    let area = curve.euclidean_area();
    EuclideanCheck { length, area, slack: length * length - 4.0 * PI * area }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    /// `1/(A_in − Δ) + 1/(A_out + Δ)`
    pub shifted: f64,
    /// `1/A_in + 1/A_out`
    pub original: f64,
    pub holds: bool,
}

/// Moving area `Δ ∈ [0, A_in − A_out]` from the larger side to the smaller
/// never increases the sum of reciprocals.
pub fn circle_comparison_inequality(
    a_total: f64,
    a_in: f64,
    a_out: f64,
    shift: f64,
) -> Result<ComparisonVerdict> {
    if !(a_total > 0.0 && a_in > 0.0 && a_out > 0.0) || !(shift >= 0.0) {
        return Err(Error::DomainError("areas must be positive and the shift non-negative".into()));
    }
    if (a_in + a_out - a_total).abs() > 1e-12 * a_total {
        return Err(Error::DomainError(format!("{a_in} + {a_out} != {a_total}")));
    }
    let gap = a_in - a_out;
    if shift > gap.max(0.0) * (1.0 + 1e-15) {
        return Err(Error::DomainError(format!("shift {shift} exceeds A_in - A_out = {gap}")));
    }
    let shifted = 1.0 / (a_in - shift) + 1.0 / (a_out + shift);
    let original = 1.0 / a_in + 1.0 / a_out;
    Ok(ComparisonVerdict { shifted, original, holds: shifted <= original * (1.0 + 1e-14) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{RadialTable, TailModel};
    use proptest::prelude::*;

    fn unit_table() -> ConformalMetric {
        ConformalMetric::table(
            RadialTable::new(&[[0.5, 1.0], [1.0, 1.0], [2.0, 1.0]], TailModel::PowerLaw).unwrap(),
        )
        .unwrap()
    }

    pub(crate) fn square8(side: f64) -> ClosedCurve {
        let h = side / 2.0;
        ClosedCurve::new(vec![
            [0.0, 0.0],
            [h, 0.0],
            [side, 0.0],
            [side, h],
            [side, side],
            [h, side],
            [0.0, side],
            [0.0, h],
        ])
        .unwrap()
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(ClosedCurve::new(vec![[0.0, 0.0]; 3]), Err(Error::InvalidCurve(_))));
        let mut bow: Vec<Point> = vec![
            [0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [2.0, 2.0], [1.0, 2.0], [0.0, 2.0], [0.0, 1.0],
        ];
        bow.swap(2, 4);
        assert!(matches!(ClosedCurve::new(bow), Err(Error::SelfIntersection(..))));
        let mut rep = square8(1.0).into_vertices();
        rep[1] = rep[0];
        assert!(matches!(ClosedCurve::new(rep), Err(Error::InvalidCurve(_))));
        let mut cw = square8(1.0).into_vertices();
        cw.reverse();
        assert!(ClosedCurve::new(cw).unwrap().euclidean_area() > 0.0);
    }

    #[test]
    fn lengths() {
        let c = ClosedCurve::circle([0.0, 0.0], 1.0, 4096).unwrap();
        assert!((length_g(&c, &unit_table()).unwrap() - 2.0 * PI).abs() < 1e-4);
        let s = ConformalMetric::round_sphere(1.0);
        assert!((length_g(&c, &s).unwrap() - 2.0 * PI).abs() < 1e-4);
        let four = ConformalMetric::flat(4.0).unwrap();
        assert!((length_g(&square8(1.0), &four).unwrap() - 8.0).abs() < 1e-9);
    }

    #[test]
    fn areas() {
        let c = ClosedCurve::circle([0.0, 0.0], 1.0, 4096).unwrap();
        let s = ConformalMetric::round_sphere(1.0);
        assert!((area_in(&c, &s).unwrap() - 2.0 * PI).abs() < 1e-3);
        assert!((area_in(&square8(1.0), &unit_table()).unwrap() - 1.0).abs() < 1e-9);
        let a = area_in(&c, &s).unwrap();
        let b = area_out(&c, &s).unwrap();
        assert_eq!(a + b, s.total_area().unwrap());
    }

    #[test]
    fn nonconvex_area_uses_ear_clipping() {
        // half annulus: its centroid lies in the hole
        let mut v = Vec::new();
        for i in 0..=32 {
            let t = PI * i as f64 / 32.0;
            v.push([2.0 * t.cos(), 2.0 * t.sin()]);
        }
        for i in (0..=32).rev() {
            let t = PI * i as f64 / 32.0;
            v.push([1.5 * t.cos(), 1.5 * t.sin()]);
        }
        let c = ClosedCurve::new(v).unwrap();
        let flat = ConformalMetric::flat(1.0).unwrap();
        assert!(geometry::star_fan(c.vertices(), c.centroid()).is_none());
        assert!((area_in(&c, &flat).unwrap() - c.euclidean_area()).abs() < 1e-10 * c.euclidean_area());
    }

    #[test]
    fn sphere_ratios() {
        let s = ConformalMetric::round_sphere(1.0);
        let eq = ClosedCurve::circle([0.0, 0.0], 1.0, 4096).unwrap();
        let m = isoperimetric_ratio(&eq, &s).unwrap();
        assert!((m.ratio - 2.0).abs() < 1e-3);
        let half = ClosedCurve::circle([0.0, 0.0], 0.5, 4096).unwrap();
        // oracle: L = 2π·0.5·u^{1/2}, A_in = 4π r²/(1+r²)
        let (r, u) = (0.5f64, 4.0 / (1.25f64 * 1.25));
        let l = 2.0 * PI * r * u.sqrt();
        let a_in = 4.0 * PI * r * r / (1.0 + r * r);
        let oracle = l * (1.0 / a_in + 1.0 / (4.0 * PI - a_in));
        let got = isoperimetric_ratio(&half, &s).unwrap().ratio;
        assert!((got - oracle).abs() < 1e-5 * oracle);
        assert!(got > 2.0);
    }

    #[test]
    fn scaling_law() {
        let s = ConformalMetric::round_sphere(1.0);
        let c = ClosedCurve::circle([0.2, -0.1], 0.7, 256).unwrap();
        let base = isoperimetric_ratio(&c, &s).unwrap().ratio;
        for k in [0.25, 9.0, 1e3] {
            let scaled = isoperimetric_ratio(&c, &s.scaled(k).unwrap()).unwrap().ratio;
            assert!((scaled - base / k.sqrt()).abs() < 1e-9 * base / k.sqrt());
        }
    }

    #[test]
    fn euclidean_checks() {
        let c = ClosedCurve::circle([0.0, 0.0], 1.0, 4096).unwrap();
        assert!(euclidean_isoperimetric_check(&c).slack.abs() < 1e-5);
        let sq = euclidean_isoperimetric_check(&square8(1.0));
        assert!((sq.slack - (16.0 - 4.0 * PI)).abs() < 1e-12);
        assert!((sq.slack - 3.4336).abs() < 1e-4);
    }

    #[test]
    fn comparison_examples() {
        let v = circle_comparison_inequality(4.0, 3.0, 1.0, 1.0).unwrap();
        assert_eq!(v.shifted, 1.0);
        assert!((v.original - 4.0 / 3.0).abs() < 1e-15);
        assert!(v.holds);
        let v0 = circle_comparison_inequality(4.0, 3.0, 1.0, 0.0).unwrap();
        assert_eq!(v0.shifted, v0.original);
        let v2 = circle_comparison_inequality(4.0, 3.0, 1.0, 2.0).unwrap();
        assert!((v2.shifted - v2.original).abs() < 1e-15);
        assert!(matches!(circle_comparison_inequality(4.0, 3.0, 1.0, 2.5), Err(Error::DomainError(_))));
    }

    #[test]
    fn perturbed_circles_are_seeded_and_bounded() {
        let a = ClosedCurve::perturbed_circle([0.0, 0.0], 1.0, 256, 0.05, 7).unwrap();
        let b = ClosedCurve::perturbed_circle([0.0, 0.0], 1.0, 256, 0.05, 7).unwrap();
        let c = ClosedCurve::perturbed_circle([0.0, 0.0], 1.0, 256, 0.05, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let dev = a.vertices().iter().map(|p| (p[0].hypot(p[1]) - 1.0).abs()).fold(0.0, f64::max);
        assert!((dev - 0.05).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let c = ClosedCurve::circle([0.1, 0.2], 0.3, 17).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = ClosedCurve::read_csv(buf.as_slice()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn refinement_is_second_order() {
        let s = ConformalMetric::round_sphere(1.0);
        let err = |n: usize| {
            let c = ClosedCurve::circle([0.0, 0.0], 1.0, n).unwrap();
            ((length_g(&c, &s).unwrap() - 2.0 * PI).abs(), (area_in(&c, &s).unwrap() - 2.0 * PI).abs())
        };
        let (l1, a1) = err(64);
        let (l2, a2) = err(128);
        assert!(l1 / l2 > 3.5 && l1 / l2 < 4.5, "{}", l1 / l2);
        assert!(a1 / a2 > 3.5 && a1 / a2 < 4.5, "{}", a1 / a2);
    }

    fn random_star(radii: &[f64], center: Point) -> ClosedCurve {
        let n = radii.len();
        ClosedCurve::new(
            radii
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    [center[0] + r * t.cos(), center[1] + r * t.sin()]
                })
                .collect(),
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ratio_bounded_below_by_harmonic_mean(
            radii in prop::collection::vec(0.2f64..3.0, 8..24),
            cx in -1.0f64..1.0, cy in -1.0f64..1.0,
            scale in 0.3f64..3.0, weight in 0.1f64..10.0,
        ) {
            let c = random_star(&radii, [cx, cy]);
            let m = ConformalMetric::round_sphere(scale).scaled(weight).unwrap();
            let r = isoperimetric_ratio(&c, &m).unwrap();
            let total = m.total_area().unwrap();
            prop_assert!((r.area_in + r.area_out - total).abs() <= 1e-12 * total);
            prop_assert!(r.ratio >= 4.0 * r.length_g / total * (1.0 - 1e-12));
            prop_assert!((r.ratio - r.length_g * (1.0 / r.area_in + 1.0 / r.area_out)).abs() <= 1e-14 * r.ratio);
        }

        #[test]
        fn convex_polygons_have_positive_slack(angles in prop::collection::btree_set(0u32..100_000, 20)) {
            let pts: Vec<Point> = angles
                .iter()
                .map(|&a| {
                    let t = 2.0 * PI * a as f64 / 100_000.0;
                    [t.cos(), 0.6 * t.sin()]
                })
                .collect();
            let c = ClosedCurve::new(pts).unwrap();
            prop_assert!(euclidean_isoperimetric_check(&c).slack > 0.0);
        }

        #[test]
        fn comparison_holds_on_admissible_triples(
            a_out in 1e-3f64..1e3, extra in 0.0f64..1e3, frac in 0.0f64..=1.0,
        ) {
            let a_in = a_out + extra;
            let total = a_in + a_out;
            let v = circle_comparison_inequality(total, a_in, total - a_in, frac * (a_in - (total - a_in))).unwrap();
            prop_assert!(v.holds);
        }
    }

    #[test]
    fn comparison_on_ten_thousand_triples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a_out: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
            let a_in = a_out + 10f64.powf(rng.random_range(-3.0..3.0));
            let total = a_in + a_out;
            let a_out = total - a_in;
            let shift = rng.random_range(0.0..=1.0) * (a_in - a_out).max(0.0);
            assert!(circle_comparison_inequality(total, a_in, a_out, shift).unwrap().holds);
        }
    }
}
