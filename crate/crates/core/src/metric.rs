//! Conformal metrics `g = u·δ` on the plane.
//!
//! Every metric is a nonnegative combination of radial profiles centered at
//! arbitrary points, so the conformal factor, its gradient and its Laplacian
//! are all available in closed form and the total area reduces to
//! one-dimensional radial quadratures.

use std::f64::consts::{E, PI};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, Point};
use crate::quadrature;

/// `u`, `∇u` and `Δu` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub u: f64,
    pub grad: Point,
    pub lap: f64,
}

impl Jet {
    /// Gauss curvature `K = -Δ log u / (2u)`.
    pub fn gauss_curvature(&self) -> f64 {
        self.curvature_density() / self.u
    }

    /// `K·u = -Δ log u / 2`, the curvature measured against `dx`.
    pub fn curvature_density(&self) -> f64 {
        let lap_log = self.lap / self.u - dot(self.grad, self.grad) / (self.u * self.u);
        -0.5 * lap_log
    }
}

/// Radial profile value `f`, `f'/r` and `f''`.
#[derive(Debug, Clone, Copy)]
struct RadialJet {
    f: f64,
    d1_over_r: f64,
    d2: f64,
}

/// How a radial table continues past its last sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailModel {
    /// `u ∝ r^p` with `p` the end slope of the interpolant.
    #[default]
    PowerLaw,
    /// `u = c / (r² (log r)²)` matched to the last sample.
    Cusp,
}

/// Samples `(r, u)` interpolated by a natural cubic spline of `log u` in `log r`.
#[derive(Debug, Clone)]
pub struct RadialTable {
    radii: Vec<f64>,
    values: Vec<f64>,
    rho: Vec<f64>,
    h: Vec<f64>,
    m: Vec<f64>,
    tail: TailModel,
    tail_coeff: f64,
    tail_slope: f64,
    inner_k: f64,
}

impl RadialTable {
    pub fn new(samples: &[[f64; 2]], tail: TailModel) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Config("radial table needs at least two samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return Err(Error::Config("radial table radii must be strictly increasing".into()));
            }
        }
        if let Some(s) = samples.iter().find(|s| !(s[1] > 0.0) || !s[1].is_finite()) {
            return Err(Error::NonPositiveFactor(format!("u({}) = {}", s[0], s[1])));
        }
        if !(samples[0][0] > 0.0) {
            return Err(Error::Config("radial table radii must be positive".into()));
        }
        let radii: Vec<f64> = samples.iter().map(|s| s[0]).collect();
        let values: Vec<f64> = samples.iter().map(|s| s[1]).collect();
        let rho: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let h: Vec<f64> = values.iter().map(|u| u.ln()).collect();
        let m = natural_spline(&rho, &h);
        let mut t = RadialTable {
            radii,
            values,
            rho,
            h,
            m,
            tail,
            tail_coeff: 0.0,
            tail_slope: 0.0,
            inner_k: 0.0,
        };
        let n = t.radii.len();
        let (r_last, u_last) = (t.radii[n - 1], t.values[n - 1]);
        let (_, slope_end, _) = t.spline(t.rho[n - 1]);
        t.tail_slope = slope_end;
        if tail == TailModel::Cusp {
            if !(r_last > 1.0) {
                return Err(Error::Config("cusp tail needs the last radius beyond 1".into()));
            }
            t.tail_coeff = u_last * (r_last * r_last.ln()).powi(2);
        }
        let (_, slope0, _) = t.spline(t.rho[0]);
        t.inner_k = slope0 / (2.0 * t.radii[0] * t.radii[0]);
        Ok(t)
    }

    pub fn from_csv(path: &Path, tail: TailModel) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "r" || &headers[1] != "u" {
            return Err(Error::Config(format!("{}: expected header \"r,u\"", path.display())));
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            };
            samples.push([parse(&rec[0])?, parse(&rec[1])?]);
        }
        Self::new(&samples, tail)
    }

    pub fn samples(&self) -> Vec<[f64; 2]> {
        self.radii.iter().zip(&self.values).map(|(&r, &u)| [r, u]).collect()
    }

    pub fn tail(&self) -> TailModel {
        self.tail
    }

    pub fn range(&self) -> (f64, f64) {
        (self.radii[0], self.radii[self.radii.len() - 1])
    }

    /// `(h, h_ρ, h_ρρ)` of the spline at `ρ` (clamped to the knot range).
    fn spline(&self, rho: f64) -> (f64, f64, f64) {
        let n = self.rho.len();
        let i = match self.rho.partition_point(|&x| x <= rho) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let (x0, x1) = (self.rho[i], self.rho[i + 1]);
        let dx = x1 - x0;
        let a = (x1 - rho) / dx;
        let b = (rho - x0) / dx;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.h[i], self.h[i + 1]);
        let h = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * dx * dx / 6.0;
        let dh = (y1 - y0) / dx - (3.0 * a * a - 1.0) / 6.0 * dx * m0 + (3.0 * b * b - 1.0) / 6.0 * dx * m1;
        let d2h = a * m0 + b * m1;
        (h, dh, d2h)
    }

    fn jet(&self, r: f64) -> RadialJet {
        let n = self.radii.len();
        let (r_min, r_max) = (self.radii[0], self.radii[n - 1]);
        if r < r_min {
            let k = self.inner_k;
            let f = (self.h[0] + k * (r * r - r_min * r_min)).exp();
            return RadialJet { f, d1_over_r: 2.0 * k * f, d2: (2.0 * k + 4.0 * k * k * r * r) * f };
        }
        if r > r_max {
            return match self.tail {
                TailModel::Cusp => cusp_jet(self.tail_coeff, r),
                TailModel::PowerLaw => {
                    let p = self.tail_slope;
                    let f = self.values[n - 1] * (r / r_max).powf(p);
                    RadialJet { f, d1_over_r: p * f / (r * r), d2: p * (p - 1.0) * f / (r * r) }
                }
            };
        }
        let (h, h_rho, h_rhorho) = self.spline(r.ln());
        let f = h.exp();
        let h_r = h_rho / r;
        let h_rr = (h_rhorho - h_rho) / (r * r);
        RadialJet { f, d1_over_r: f * h_rho / (r * r), d2: f * (h_rr + h_r * h_r) }
    }

    fn value(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if r < self.radii[0] || r > self.radii[n - 1] {
            return self.jet(r).f;
        }
        self.spline(r.ln()).0.exp()
    }

    fn mass(&self) -> Result<f64> {
        let n = self.radii.len();
        let r_min = self.radii[0];
        let inner = quadrature::integrate(|r| 2.0 * PI * r * self.jet(r).f, 0.0, r_min, 4);
        let mut body = 0.0;
        for i in 0..n - 1 {
            body += quadrature::integrate(
                |rho| {
                    let r = rho.exp();
                    2.0 * PI * r * r * self.spline(rho).0.exp()
                },
                self.rho[i],
                self.rho[i + 1],
                1,
            );
        }
        let r_max = self.radii[n - 1];
        let tail = match self.tail {
            TailModel::Cusp => 2.0 * PI * self.tail_coeff / r_max.ln(),
            TailModel::PowerLaw => {
                let p = self.tail_slope;
                if p >= -2.0 {
                    return Err(Error::DivergentArea(format!(
                        "table tail decays like r^{p:.3}, not integrable"
                    )));
                }
                2.0 * PI * self.values[n - 1] * r_max * r_max / (-(p + 2.0))
            }
        };
        Ok(inner + body + tail)
    }
}

/// Second derivatives of the natural cubic spline through `(x, y)`.
fn natural_spline(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        let a = h0 / 6.0;
        let b = (h0 + h1) / 3.0;
        let c = h1 / 6.0;
        let d = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
        let denom = b - a * c_prime[i - 1];
        c_prime[i] = c / denom;
        d_prime[i] = (d - a * d_prime[i - 1]) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d_prime[i] - c_prime[i] * m[i + 1];
    }
    m
}

fn cusp_jet(c: f64, r: f64) -> RadialJet {
    let l = r.ln();
    let f = c / (r * r * l * l);
    let h_r = -2.0 / r - 2.0 / (r * l);
    let h_rr = 2.0 / (r * r) + 2.0 * (l + 1.0) / (r * r * l * l);
    RadialJet { f, d1_over_r: f * h_r / r, d2: f * (h_rr + h_r * h_r) }
}

/// Capped cusp `C / (r² (log r)²)` for `r ≥ r_cap`; inside, `log u` is a
/// polynomial in `r²` matching value and three derivatives at `r_cap`.
#[derive(Debug, Clone)]
struct CuspCap {
    c: f64,
    r_cap: f64,
    // log u = a0 + a1 r² + a2 r⁴ + a3 r⁶ inside the cap
    coeffs: [f64; 4],
}

impl CuspCap {
    fn new(c: f64, r_cap: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::NonPositiveFactor(format!("cusp constant {c}")));
        }
        if !(r_cap > 1.0) {
            return Err(Error::Config(format!("cusp cap radius must exceed 1, got {r_cap}")));
        }
        let r = r_cap;
        let l = r.ln();
        let h0 = c.ln() - 2.0 * r.ln() - 2.0 * l.ln();
        let h1 = -2.0 / r - 2.0 / (r * l);
        let h2 = 2.0 / (r * r) + 2.0 * (l + 1.0) / (r * r * l * l);
        let h3 = -4.0 / r.powi(3) + 2.0 * (l - 2.0 * (l + 1.0).powi(2)) / (r.powi(3) * l.powi(3));
        // Rows: p, p', p'', p''' at r for p = a0 + a1 r² + a2 r⁴ + a3 r⁶.
        let a = [
            [1.0, r * r, r.powi(4), r.powi(6)],
            [0.0, 2.0 * r, 4.0 * r.powi(3), 6.0 * r.powi(5)],
            [0.0, 2.0, 12.0 * r * r, 30.0 * r.powi(4)],
            [0.0, 0.0, 24.0 * r, 120.0 * r.powi(3)],
        ];
        let coeffs = solve4(a, [h0, h1, h2, h3]);
        Ok(CuspCap { c, r_cap, coeffs })
    }

    fn jet(&self, r: f64) -> RadialJet {
        if r >= self.r_cap {
            return cusp_jet(self.c, r);
        }
        let [a0, a1, a2, a3] = self.coeffs;
        let r2 = r * r;
        let f = (a0 + r2 * (a1 + r2 * (a2 + r2 * a3))).exp();
        let p1_over_r = 2.0 * a1 + 4.0 * a2 * r2 + 6.0 * a3 * r2 * r2;
        let p2 = 2.0 * a1 + 12.0 * a2 * r2 + 30.0 * a3 * r2 * r2;
        RadialJet { f, d1_over_r: p1_over_r * f, d2: (p2 + p1_over_r * p1_over_r * r2) * f }
    }

    fn value(&self, r: f64) -> f64 {
        if r >= self.r_cap {
            let l = r.ln();
            return self.c / (r * r * l * l);
        }
        self.jet(r).f
    }

    fn mass(&self) -> f64 {
        let inner = quadrature::integrate(|r| 2.0 * PI * r * self.jet(r).f, 0.0, self.r_cap, 8);
        inner + 2.0 * PI * self.c / self.r_cap.ln()
    }
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut s = b[row];
        for k in row + 1..4 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

#[derive(Debug, Clone)]
enum Profile {
    /// `4a² / (a² + r²)²`, the unit round sphere seen through stereographic coordinates.
    Sphere { a: f64 },
    Cusp(CuspCap),
    Flat,
    Table(Arc<RadialTable>),
}

impl Profile {
    fn jet(&self, r: f64) -> RadialJet {
        match self {
            Profile::Sphere { a } => {
                let a2 = a * a;
                let q = a2 + r * r;
                let q3 = q * q * q;
                RadialJet {
                    f: 4.0 * a2 / (q * q),
                    d1_over_r: -16.0 * a2 / q3,
                    d2: -16.0 * a2 / q3 + 96.0 * a2 * r * r / (q3 * q),
                }
            }
            Profile::Cusp(cap) => cap.jet(r),
            Profile::Flat => RadialJet { f: 1.0, d1_over_r: 0.0, d2: 0.0 },
            Profile::Table(t) => t.jet(r),
        }
    }

    fn value(&self, r: f64) -> f64 {
        match self {
            Profile::Sphere { a } => {
                let q = a * a + r * r;
                4.0 * a * a / (q * q)
            }
            Profile::Cusp(cap) => cap.value(r),
            Profile::Flat => 1.0,
            Profile::Table(t) => t.value(r),
        }
    }

    fn mass(&self) -> Result<f64> {
        match self {
            Profile::Sphere { a } => {
                // Numerical body plus closed-form tail 4πa²/(a²+R²).
                let s_max = (1.0 + 1e3 * a).ln();
                let body = quadrature::integrate(
                    |s| {
                        let r = s.exp() - 1.0;
                        2.0 * PI * r * self.value(r) * s.exp()
                    },
                    0.0,
                    s_max,
                    64,
                );
                let big_r = s_max.exp() - 1.0;
                Ok(body + 4.0 * PI * a * a / (a * a + big_r * big_r))
            }
            Profile::Cusp(cap) => Ok(cap.mass()),
            Profile::Flat => Ok(f64::INFINITY),
            Profile::Table(t) => t.mass(),
        }
    }

    /// Cumulative mass inside radius `r`.
    fn mass_within(&self, r: f64) -> f64 {
        let s_max = (1.0 + r).ln();
        let panels = ((s_max / 0.25).ceil() as usize).max(1);
        quadrature::integrate(
            |s| {
                let rr = s.exp() - 1.0;
                2.0 * PI * rr * self.value(rr) * s.exp()
            },
            0.0,
            s_max,
            panels,
        )
    }
}

/// One weighted radial term `w · f(|x - c|)`.
#[derive(Debug, Clone)]
struct Term {
    weight: f64,
    center: Point,
    profile: Profile,
}

/// Declarative description of a metric, also its JSON form
/// `{"family": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    RoundSphere {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        center: Point,
    },
    CuspProfile {
        #[serde(default = "one")]
        c: f64,
        #[serde(default = "default_r_cap")]
        r_cap: f64,
    },
    Flat {
        #[serde(default = "one")]
        c: f64,
    },
    RadialTable {
        #[serde(default)]
        samples: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
        #[serde(default)]
        tail: TailModel,
        #[serde(default)]
        center: Point,
    },
    Scale {
        factor: f64,
        metric: Box<Family>,
    },
    Sum {
        terms: Vec<Family>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_r_cap() -> f64 {
    E
}

/// Positive radial function on `[r0, ∞)` used as a bound on the conformal factor.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvelopeProfile {
    /// `c / (ρ² (log ρ)²)`
    Cusp { c: f64 },
    /// `c ρ^p`
    PowerLaw { c: f64, p: f64 },
    /// Arbitrary decreasing function; integrals are evaluated numerically.
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for EnvelopeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvelopeProfile::Cusp { c } => write!(f, "Cusp {{ c: {c} }}"),
            EnvelopeProfile::PowerLaw { c, p } => write!(f, "PowerLaw {{ c: {c}, p: {p} }}"),
            EnvelopeProfile::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl EnvelopeProfile {
    pub fn eval(&self, rho: f64) -> f64 {
        match self {
            EnvelopeProfile::Cusp { c } => {
                let l = rho.ln();
                c / (rho * rho * l * l)
            }
            EnvelopeProfile::PowerLaw { c, p } => c * rho.powf(*p),
            EnvelopeProfile::Custom(f) => f(rho),
        }
    }

    pub fn has_closed_form(&self) -> bool {
        !matches!(self, EnvelopeProfile::Custom(_))
    }

    /// `∫_a^b √λ(ρ) dρ` for `1 < a ≤ b`.
    pub fn sqrt_integral(&self, a: f64, b: f64) -> f64 {
        match self {
            EnvelopeProfile::Cusp { c } => c.sqrt() * (b.ln() / a.ln()).ln(),
            EnvelopeProfile::PowerLaw { c, p } => {
                let q = 0.5 * p + 1.0;
                if q.abs() < 1e-14 {
                    c.sqrt() * (b / a).ln()
                } else {
                    c.sqrt() * (b.powf(q) - a.powf(q)) / q
                }
            }
            EnvelopeProfile::Custom(f) => quadrature::integrate_log(|r| f(r).sqrt(), a, b, 0.25),
        }
    }

    /// `∫_r^∞ ρ λ(ρ) dρ`.
    pub fn tail_moment(&self, r: f64) -> Result<f64> {
        match self {
            EnvelopeProfile::Cusp { c } => Ok(c / r.ln()),
            EnvelopeProfile::PowerLaw { c, p } => {
                if *p >= -2.0 {
                    Err(Error::DivergentTail(format!("ρ·λ(ρ) decays like ρ^{}", p + 1.0)))
                } else {
                    Ok(c * r.powf(p + 2.0) / (-(p + 2.0)))
                }
            }
            EnvelopeProfile::Custom(f) => quadrature::tail_moment(f.as_ref(), r, 1e-10),
        }
    }

    fn scaled(&self, k: f64) -> EnvelopeProfile {
        match self {
            EnvelopeProfile::Cusp { c } => EnvelopeProfile::Cusp { c: c * k },
            EnvelopeProfile::PowerLaw { c, p } => EnvelopeProfile::PowerLaw { c: c * k, p: *p },
            EnvelopeProfile::Custom(f) => {
                let f = f.clone();
                EnvelopeProfile::Custom(Arc::new(move |r| k * f(r)))
            }
        }
    }
}

/// Lower and upper radial bounds `λ₁(|x|) ≤ u(x) ≤ λ₂(|x|)` valid for `|x| ≥ r0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialEnvelope {
    pub lower: EnvelopeProfile,
    pub upper: EnvelopeProfile,
    pub r0: f64,
}

impl RadialEnvelope {
    pub fn new(lower: EnvelopeProfile, upper: EnvelopeProfile, r0: f64) -> Result<Self> {
        if !(r0 > 1.0) {
            return Err(Error::DomainError(format!("envelope radius r0 = {r0} must exceed 1")));
        }
        Ok(RadialEnvelope { lower, upper, r0 })
    }

    /// Both bounds equal to the cusp profile `c/(ρ² log² ρ)`.
    pub fn cusp(c1: f64, c2: f64, r0: f64) -> Result<Self> {
        Self::new(EnvelopeProfile::Cusp { c: c1 }, EnvelopeProfile::Cusp { c: c2 }, r0)
    }

    /// Checks ordering and monotonicity on the given radii (all `≥ r0`).
    pub fn validate_on(&self, radii: &[f64]) -> Result<()> {
        let mut sorted: Vec<f64> = radii.iter().copied().filter(|&r| r >= self.r0).collect();
        sorted.sort_by(f64::total_cmp);
        let mut prev: Option<(f64, f64)> = None;
        for &r in &sorted {
            let (l, u) = (self.lower.eval(r), self.upper.eval(r));
            if !(l > 0.0) || !(u > 0.0) {
                return Err(Error::DomainError(format!("envelope not positive at r = {r}")));
            }
            if l > u * (1.0 + 1e-12) {
                return Err(Error::DomainError(format!("lower envelope exceeds upper at r = {r}")));
            }
            if let Some((pl, pu)) = prev {
                if l > pl * (1.0 + 1e-12) || u > pu * (1.0 + 1e-12) {
                    return Err(Error::DomainError(format!("envelope increases at r = {r}")));
                }
            }
            prev = Some((l, u));
        }
        Ok(())
    }
}

/// `∫_r^∞ ρ λ₂(ρ) dρ` for the upper envelope.
pub fn envelope_tail_integral(env: &RadialEnvelope, r: f64) -> Result<f64> {
    if r < env.r0 {
        return Err(Error::DomainError(format!("radius {r} below envelope r0 = {}", env.r0)));
    }
    env.upper.tail_moment(r)
}

/// A conformal metric `u·δ_ij` with finite (or explicitly infinite, for flat
/// test metrics) total area.
#[derive(Debug, Clone)]
pub struct ConformalMetric {
    family: Family,
    terms: Vec<Term>,
    envelope: Option<RadialEnvelope>,
    area: Arc<OnceLock<Result<f64>>>,
}

impl ConformalMetric {
    pub fn from_family(family: Family) -> Result<Self> {
        let mut terms = Vec::new();
        flatten(&family, 1.0, &mut terms)?;
        if terms.is_empty() {
            return Err(Error::Config("metric has no terms".into()));
        }
        let envelope = default_envelope(&family);
        Ok(ConformalMetric { family, terms, envelope, area: Arc::new(OnceLock::new()) })
    }

    pub fn round_sphere(scale: f64) -> Self {
        Self::from_family(Family::RoundSphere { scale, center: [0.0, 0.0] }).expect("valid sphere")
    }

    pub fn sphere_at(scale: f64, center: Point) -> Self {
        Self::from_family(Family::RoundSphere { scale, center }).expect("valid sphere")
    }

    /// Cusp profile `c/(r² log² r)` with the default cap at `r = e`.
    pub fn cusp(c: f64) -> Result<Self> {
        Self::from_family(Family::CuspProfile { c, r_cap: E })
    }

    pub fn flat(c: f64) -> Result<Self> {
        Self::from_family(Family::Flat { c })
    }

    pub fn table(table: RadialTable) -> Result<Self> {
        let tail = table.tail();
        Self::from_family(Family::RadialTable {
            samples: table.samples(),
            path: None,
            tail,
            center: [0.0, 0.0],
        })
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut m = Self::from_family(Family::Scale { factor, metric: Box::new(self.family.clone()) })?;
        m.envelope = self.envelope.as_ref().map(|e| RadialEnvelope {
            lower: e.lower.scaled(factor),
            upper: e.upper.scaled(factor),
            r0: e.r0,
        });
        Ok(m)
    }

    pub fn sum(parts: &[ConformalMetric]) -> Result<Self> {
        Self::from_family(Family::Sum { terms: parts.iter().map(|p| p.family.clone()).collect() })
    }

    pub fn with_envelope(mut self, envelope: RadialEnvelope) -> Self {
        self.envelope = Some(envelope);
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn envelope(&self) -> Option<&RadialEnvelope> {
        self.envelope.as_ref()
    }

    /// Unchecked conformal factor.
    #[inline]
    pub fn u(&self, p: Point) -> f64 {
        let mut u = 0.0;
        for t in &self.terms {
            let r = (p[0] - t.center[0]).hypot(p[1] - t.center[1]);
            u += t.weight * t.profile.value(r);
        }
        u
    }

    /// Conformal factor at a finite point.
    pub fn eval_u(&self, p: Point) -> Result<f64> {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::DomainError(format!("non-finite point {p:?}")));
        }
        let u = self.u(p);
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::NonPositiveFactor(format!("u{p:?} = {u}")));
        }
        Ok(u)
    }

    /// `u`, `∇u`, `Δu` in closed form.
    pub fn jet(&self, p: Point) -> Jet {
        let mut j = Jet { u: 0.0, grad: [0.0, 0.0], lap: 0.0 };
        for t in &self.terms {
            let d = [p[0] - t.center[0], p[1] - t.center[1]];
            let r = d[0].hypot(d[1]);
            let rj = t.profile.jet(r);
            j.u += t.weight * rj.f;
            j.grad[0] += t.weight * rj.d1_over_r * d[0];
            j.grad[1] += t.weight * rj.d1_over_r * d[1];
            j.lap += t.weight * (rj.d2 + rj.d1_over_r);
        }
        j
    }

    pub fn gauss_curvature(&self, p: Point) -> f64 {
        self.jet(p).gauss_curvature()
    }

    /// Gauss curvature from a fourth-order finite-difference Laplacian of `log u`.
    pub fn gauss_curvature_fd(&self, p: Point) -> Result<f64> {
        let h = 1e-2 * p[0].hypot(p[1]).max(0.1);
        for t in &self.terms {
            if let Profile::Table(tab) = &t.profile {
                let r = (p[0] - t.center[0]).hypot(p[1] - t.center[1]);
                let (lo, hi) = tab.range();
                let reach = 2.0 * h * std::f64::consts::SQRT_2;
                if (r - lo).abs() <= reach || (r - hi).abs() <= reach {
                    return Err(Error::NumericalDifferentiationFailure(format!(
                        "stencil at r = {r} crosses the table boundary"
                    )));
                }
            }
        }
        let lu = |dx: f64, dy: f64| self.u([p[0] + dx, p[1] + dy]).ln();
        let c = lu(0.0, 0.0);
        let second = |f: &dyn Fn(f64) -> f64| {
            (-f(2.0 * h) + 16.0 * f(h) - 30.0 * c + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
        };
        let lap = second(&|s| lu(s, 0.0)) + second(&|s| lu(0.0, s));
        let k = -lap / (2.0 * self.u(p));
        if !k.is_finite() {
            return Err(Error::NumericalDifferentiationFailure(format!("non-finite stencil at {p:?}")));
        }
        Ok(k)
    }

    /// `∫ u dx` over the plane, computed once and cached. Flat metrics report `+∞`.
    pub fn total_area(&self) -> Result<f64> {
        self.area
            .get_or_init(|| {
                let mut total = 0.0;
                for t in &self.terms {
                    total += t.weight * t.profile.mass()?;
                }
                if total.is_nan() || !(total > 0.0) {
                    return Err(Error::DivergentArea(format!("area evaluated to {total}")));
                }
                Ok(total)
            })
            .clone()
    }

    pub fn has_finite_area(&self) -> bool {
        matches!(self.total_area(), Ok(a) if a.is_finite())
    }

    /// Centers of the radial terms, in order, deduplicated.
    pub fn term_centers(&self) -> Vec<Point> {
        let mut out: Vec<Point> = Vec::new();
        for t in &self.terms {
            if !out.iter().any(|c| c == &t.center) {
                out.push(t.center);
            }
        }
        out
    }

    /// Largest half-mass radius among the radial terms (each about its own center).
    pub fn characteristic_radius(&self) -> f64 {
        let mut best: f64 = 0.0;
        for t in &self.terms {
            let Ok(m) = t.profile.mass() else { continue };
            if !m.is_finite() {
                continue;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            while t.profile.mass_within(hi) < 0.5 * m && hi < 1e12 {
                lo = hi;
                hi *= 2.0;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if t.profile.mass_within(mid) < 0.5 * m {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best = best.max(0.5 * (lo + hi));
        }
        if best > 0.0 { best } else { 1.0 }
    }

    /// Whether every term is centered at the origin.
    pub fn is_radial(&self) -> bool {
        self.terms.iter().all(|t| t.center == [0.0, 0.0])
    }

    /// Local maxima of `u` found by gradient ascent from each term center.
    pub fn density_maxima(&self) -> Vec<Point> {
        let mut out: Vec<Point> = Vec::new();
        let scale = self.characteristic_radius();
        for start in self.term_centers() {
            let mut x = start;
            let mut step = 0.1 * scale;
            let mut val = self.u(x);
            for _ in 0..500 {
                let j = self.jet(x);
                let g = (j.grad[0].powi(2) + j.grad[1].powi(2)).sqrt();
                if g < 1e-14 * j.u.max(1e-300) / scale {
                    break;
                }
                let cand = [x[0] + step * j.grad[0] / g, x[1] + step * j.grad[1] / g];
                let cv = self.u(cand);
                if cv > val {
                    x = cand;
                    val = cv;
                    step *= 1.2;
                } else {
                    step *= 0.5;
                    if step < 1e-12 * scale {
                        break;
                    }
                }
            }
            let rounded = [round_to(x[0], 1e-9 * scale), round_to(x[1], 1e-9 * scale)];
            if !out.iter().any(|c| (c[0] - rounded[0]).hypot(c[1] - rounded[1]) < 1e-6 * scale) {
                out.push(rounded);
            }
        }
        out
    }

    /// Checks `λ₁(|x|) ≤ u(x) ≤ λ₂(|x|)` at the given points (those with `|x| ≥ r0`).
    pub fn check_envelope(&self, points: &[Point]) -> Result<()> {
        let Some(env) = &self.envelope else { return Ok(()) };
        for &p in points {
            let r = p[0].hypot(p[1]);
            if r < env.r0 {
                continue;
            }
            let u = self.u(p);
            let (l, h) = (env.lower.eval(r), env.upper.eval(r));
            if u < l * (1.0 - 1e-12) || u > h * (1.0 + 1e-12) {
                return Err(Error::DomainError(format!(
                    "u = {u} outside envelope [{l}, {h}] at r = {r}"
                )));
            }
        }
        Ok(())
    }
}

fn round_to(x: f64, q: f64) -> f64 {
    if q > 0.0 { (x / q).round() * q } else { x }
}

fn flatten(family: &Family, weight: f64, out: &mut Vec<Term>) -> Result<()> {
    match family {
        Family::RoundSphere { scale, center } => {
            if !(*scale > 0.0) {
                return Err(Error::NonPositiveFactor(format!("sphere scale {scale}")));
            }
            out.push(Term { weight, center: *center, profile: Profile::Sphere { a: *scale } });
        }
        Family::CuspProfile { c, r_cap } => {
            out.push(Term { weight, center: [0.0, 0.0], profile: Profile::Cusp(CuspCap::new(*c, *r_cap)?) });
        }
        Family::Flat { c } => {
            if !(*c > 0.0) {
                return Err(Error::NonPositiveFactor(format!("flat factor {c}")));
            }
            out.push(Term { weight: weight * c, center: [0.0, 0.0], profile: Profile::Flat });
        }
        Family::RadialTable { samples, path, tail, center } => {
            let table = match path {
                Some(p) if samples.is_empty() => RadialTable::from_csv(Path::new(p), *tail)?,
                _ => RadialTable::new(samples, *tail)?,
            };
            out.push(Term { weight, center: *center, profile: Profile::Table(Arc::new(table)) });
        }
        Family::Scale { factor, metric } => {
            if !(*factor > 0.0) {
                return Err(Error::NonPositiveFactor(format!("scale factor {factor}")));
            }
            flatten(metric, weight * factor, out)?;
        }
        Family::Sum { terms } => {
            for t in terms {
                flatten(t, weight, out)?;
            }
        }
    }
    Ok(())
}

fn default_envelope(family: &Family) -> Option<RadialEnvelope> {
    match family {
        Family::CuspProfile { c, r_cap } => RadialEnvelope::cusp(*c, *c, *r_cap).ok(),
        Family::Scale { factor, metric } => default_envelope(metric).map(|e| RadialEnvelope {
            lower: e.lower.scaled(*factor),
            upper: e.upper.scaled(*factor),
            r0: e.r0,
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_values() {
        let m = ConformalMetric::round_sphere(1.0);
        assert_eq!(m.eval_u([0.0, 0.0]).unwrap(), 4.0);
        let m9 = m.scaled(9.0).unwrap();
        assert_eq!(m9.eval_u([0.0, 0.0]).unwrap(), 36.0);
        assert!((m.total_area().unwrap() - 4.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn quarter_density_sphere_has_area_pi() {
        // u = 1/(1+r²)² is a quarter of the unit-scale sphere density
        let m = ConformalMetric::round_sphere(1.0).scaled(0.25).unwrap();
        assert!((m.eval_u([1.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((m.total_area().unwrap() - PI).abs() < 1e-6);
    }

    #[test]
    fn cusp_value_at_e() {
        let m = ConformalMetric::cusp(1.0).unwrap();
        let v = m.eval_u([E, 0.0]).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.135335).abs() < 1e-6);
    }

    #[test]
    fn cusp_cap_matches_three_derivatives() {
        let cap = CuspCap::new(1.7, 3.0).unwrap();
        let inside = cap.jet(3.0 - 1e-12);
        let outside = cusp_jet(1.7, 3.0);
        assert!((inside.f - outside.f).abs() < 1e-10 * outside.f);
        assert!((inside.d1_over_r - outside.d1_over_r).abs() < 1e-9 * outside.d1_over_r.abs());
        assert!((inside.d2 - outside.d2).abs() < 1e-9 * outside.d2.abs());
        // third derivative of log u: compare finite differences of h'' from both sides
        let h2 = |j: RadialJet, r: f64| {
            let h1 = j.d1_over_r * r / j.f;
            j.d2 / j.f - h1 * h1
        };
        let eps = 1e-5;
        let left = (h2(cap.jet(3.0 - eps), 3.0 - eps) - h2(cap.jet(3.0 - 2.0 * eps), 3.0 - 2.0 * eps)) / eps;
        let right = (h2(cusp_jet(1.7, 3.0 + 2.0 * eps), 3.0 + 2.0 * eps) - h2(cusp_jet(1.7, 3.0 + eps), 3.0 + eps)) / eps;
        assert!((left - right).abs() < 1e-3 * right.abs(), "{left} vs {right}");
    }

    #[test]
    fn curvature_closed_forms() {
        let s = ConformalMetric::round_sphere(1.0);
        for p in [[0.0, 0.0], [0.3, -0.2], [2.0, 5.0]] {
            assert!((s.gauss_curvature(p) - 1.0).abs() < 1e-10);
        }
        let flat = ConformalMetric::flat(3.0).unwrap();
        assert_eq!(flat.gauss_curvature([1.0, 2.0]), 0.0);
        let cusp = ConformalMetric::cusp(1.0).unwrap();
        let k = cusp.gauss_curvature([E * E, 0.0]);
        assert!((k + 1.0).abs() < 1e-4, "{k}");
        let k2 = ConformalMetric::cusp(2.5).unwrap().gauss_curvature([0.0, 50.0]);
        assert!((k2 + 0.4).abs() < 1e-10, "{k2}");
    }

    #[test]
    fn table_is_positive_and_reads_back_samples() {
        let samples: Vec<[f64; 2]> = (1..40).map(|i| {
            let r = 0.1 * i as f64;
            [r, 4.0 / (1.0 + r * r).powi(2)]
        }).collect();
        let t = RadialTable::new(&samples, TailModel::PowerLaw).unwrap();
        for s in &samples {
            assert!((t.value(s[0]) - s[1]).abs() < 1e-12 * s[1]);
        }
        assert!(t.value(100.0) > 0.0);
        let bad = RadialTable::new(&[[1.0, 1.0], [2.0, 0.0]], TailModel::PowerLaw);
        assert!(matches!(bad, Err(Error::NonPositiveFactor(_))));
    }

    #[test]
    fn constant_table_has_divergent_area() {
        let t = RadialTable::new(&[[0.5, 1.0], [1.0, 1.0], [2.0, 1.0]], TailModel::PowerLaw).unwrap();
        let m = ConformalMetric::table(t).unwrap();
        assert_eq!(m.eval_u([5.0, 5.0]).unwrap(), 1.0);
        assert!(matches!(m.total_area(), Err(Error::DivergentArea(_))));
    }

    #[test]
    fn envelope_tail_integrals() {
        let env = RadialEnvelope::cusp(1.0, 1.0, 1.5).unwrap();
        assert!((envelope_tail_integral(&env, E).unwrap() - 1.0).abs() < 1e-15);
        assert!((envelope_tail_integral(&env, E * E).unwrap() - 0.5).abs() < 1e-15);
        let numeric = RadialEnvelope::new(
            EnvelopeProfile::Custom(Arc::new(|r: f64| 1.0 / (r * r.ln()).powi(2))),
            EnvelopeProfile::Custom(Arc::new(|r: f64| 1.0 / (r * r.ln()).powi(2))),
            1.5,
        )
        .unwrap();
        assert!((envelope_tail_integral(&numeric, E).unwrap() - 1.0).abs() < 1e-8);
        let harmonic = RadialEnvelope::new(
            EnvelopeProfile::PowerLaw { c: 1.0, p: -1.0 },
            EnvelopeProfile::PowerLaw { c: 1.0, p: -1.0 },
            2.0,
        )
        .unwrap();
        assert!(matches!(envelope_tail_integral(&harmonic, 3.0), Err(Error::DivergentTail(_))));
        let harmonic_numeric = RadialEnvelope::new(
            EnvelopeProfile::Custom(Arc::new(|r: f64| 1.0 / r)),
            EnvelopeProfile::Custom(Arc::new(|r: f64| 1.0 / r)),
            2.0,
        )
        .unwrap();
        assert!(matches!(envelope_tail_integral(&harmonic_numeric, 3.0), Err(Error::DivergentTail(_))));
        assert!(matches!(envelope_tail_integral(&env, 1.2), Err(Error::DomainError(_))));
    }

    #[test]
    fn sqrt_integral_closed_form_matches_numeric() {
        let c = EnvelopeProfile::Cusp { c: 2.0 };
        let n = EnvelopeProfile::Custom(Arc::new(|r: f64| 2.0 / (r * r.ln()).powi(2)));
        let (a, b) = (5.0, 5.0e4);
        assert!((c.sqrt_integral(a, b) - n.sqrt_integral(a, b)).abs() < 1e-10);
        let p = EnvelopeProfile::PowerLaw { c: 3.0, p: -3.0 };
        let pn = EnvelopeProfile::Custom(Arc::new(|r: f64| 3.0 * r.powf(-3.0)));
        assert!((p.sqrt_integral(a, b) - pn.sqrt_integral(a, b)).abs() < 1e-10);
    }

    #[test]
    fn family_json_round_trip() {
        let fam = Family::Scale {
            factor: 2.0,
            metric: Box::new(Family::Sum {
                terms: vec![
                    Family::RoundSphere { scale: 1.0, center: [-3.0, 0.0] },
                    Family::CuspProfile { c: 1.0, r_cap: E },
                ],
            }),
        };
        let s = serde_json::to_string(&fam).unwrap();
        let back: Family = serde_json::from_str(&s).unwrap();
        assert_eq!(fam, back);
        let parsed: Family = serde_json::from_str(r#"{"family":"round_sphere","params":{"scale":1.0}}"#).unwrap();
        assert_eq!(parsed, Family::RoundSphere { scale: 1.0, center: [0.0, 0.0] });
    }
}
