//! Polygonal curve shortening flow in a conformal metric, and the
//! ratio-descent variant used to polish minimizer candidates.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::curves::{self, ClosedCurve, CurveMetrics};
use crate::error::{Error, Result};
use crate::geometry::{cross, dist, signed_area, sub, Point};
use crate::metric::ConformalMetric;

/// Three consecutive vertices closer to collinear than this are flagged.
pub const COLLINEAR_TOL: f64 = 1e-14;

/// Discrete geodesic curvature per vertex: the circumscribed-circle curvature
/// of the vertex and its neighbours, corrected by the normal derivative of
/// `½ log u` and scaled by `u^{-1/2}`. Positive where the curve bends toward
/// the enclosed region.
pub fn geodesic_curvature(curve: &ClosedCurve, metric: &ConformalMetric) -> Vec<f64> {
    let v = curve.vertices();
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b, c) = (v[(i + n - 1) % n], v[i], v[(i + 1) % n]);
            let chord = sub(c, a);
            let lc = dist(a, c);
            let ke = 2.0 * cross(sub(b, a), sub(c, b)) / (dist(a, b) * dist(b, c) * lc);
            let outward = [chord[1] / lc, -chord[0] / lc];
            let j = metric.jet(b);
            let dn = (j.grad[0] * outward[0] + j.grad[1] * outward[1]) / (2.0 * j.u);
            (ke + dn) / j.u.sqrt()
        })
        .collect()
}

/// Indices whose neighbour triple is collinear to within [`COLLINEAR_TOL`]
/// (their Euclidean curvature is reported as zero).
pub fn degenerate_triples(curve: &ClosedCurve) -> Vec<usize> {
    let v = curve.vertices();
    let n = v.len();
    (0..n)
        .filter(|&i| {
            let (a, b, c) = (v[(i + n - 1) % n], v[i], v[(i + 1) % n]);
            let scale = dist(a, b) * dist(b, c);
            cross(sub(b, a), sub(c, b)).abs() <= COLLINEAR_TOL * scale
        })
        .collect()
}

/// `|∫k ds + ∫_Ω K dV − 2π|`.
pub fn gauss_bonnet_residual(curve: &ClosedCurve, metric: &ConformalMetric) -> Result<f64> {
    let edges = curves::edge_lengths_g(curve, metric);
    let k = geodesic_curvature(curve, metric);
    let n = k.len();
    let k_int: f64 = (0..n).map(|i| k[i] * 0.5 * (edges[(i + n - 1) % n] + edges[i])).sum();
    let (_, k_area) = curves::interior_integrals(curve, metric)?;
    Ok((k_int + k_area - 2.0 * PI).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowStatus {
    Running,
    CriterionMet,
    Collapsed,
    Stalled,
}

/// Normal velocity law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    /// Normal speed `k`.
    Shortening,
    /// Normal speed `k − L(1/A_in − 1/A_out)`, the steepest descent of the ratio.
    RatioDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Stop once `∫k² ds` is at most this.
    pub curvature_energy_cap: f64,
    pub dt_safety: f64,
    pub max_steps: usize,
    /// Euclidean vertex spacing to resample to after every step; `None`
    /// keeps the vertex count and resamples only when spacing degrades.
    pub resample_target: Option<f64>,
    pub el_tolerance: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            curvature_energy_cap: 10.0,
            dt_safety: 0.2,
            max_steps: 20_000,
            resample_target: None,
            el_tolerance: 1e-2,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.curvature_energy_cap > 0.0
            && self.dt_safety > 0.0
            && self.dt_safety <= 1.0
            && self.max_steps > 0
            && self.el_tolerance > 0.0
            && self.resample_target.is_none_or(|h| h > 0.0);
        if ok { Ok(()) } else { Err(Error::Config(format!("invalid flow options {self:?}"))) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub curve: ClosedCurve,
    pub tau: f64,
    pub metrics: CurveMetrics,
    pub status: FlowStatus,
    pub step_count: usize,
    /// Collapse is declared when the enclosed area drops below `1e-3` of this.
    pub reference_area: f64,
}

impl FlowState {
    pub fn new(curve: ClosedCurve, metric: &ConformalMetric) -> Result<Self> {
        let metrics = curves::isoperimetric_ratio(&curve, metric)?;
        let total = metric.total_area()?;
        let reference_area = if total.is_finite() { total } else { metrics.area_in };
        Ok(FlowState { curve, tau: 0.0, metrics, status: FlowStatus::Running, step_count: 0, reference_area })
    }
}

/// Explicit Euler step size: `safety · min_i h_i² · min(1, u_i)` with `h_i`
/// the shorter edge at vertex `i`.
pub fn stable_dt(curve: &ClosedCurve, metric: &ConformalMetric, safety: f64) -> f64 {
    let e = curve.euclidean_edge_lengths();
    let n = e.len();
    (0..n)
        .map(|i| {
            let h = e[i].min(e[(i + n - 1) % n]);
            h * h * metric.u(curve.vertex(i)).min(1.0)
        })
        .fold(f64::INFINITY, f64::min)
        * safety
}

/// `L (1/A_in − 1/A_out)`, the constant curvature of a critical point of the ratio.
pub fn target_curvature(length: f64, a_in: f64, a_out: f64) -> f64 {
    length * (1.0 / a_in - 1.0 / a_out)
}

/// Euclidean vertex velocities of the chosen flow.
pub fn velocity(curve: &ClosedCurve, metric: &ConformalMetric, kind: FlowKind) -> Result<Vec<Point>> {
    let k = geodesic_curvature(curve, metric);
    let shift = match kind {
        FlowKind::Shortening => 0.0,
        FlowKind::RatioDescent => {
            let (l, a_in, a_out, _) = curves::ratio_only(curve, metric)?;
            target_curvature(l, a_in, a_out)
        }
    };
    let v = curve.vertices();
    let n = v.len();
    Ok((0..n)
        .map(|i| {
            let chord = sub(v[(i + 1) % n], v[(i + n - 1) % n]);
            let lc = chord[0].hypot(chord[1]);
            let inward = [-chord[1] / lc, chord[0] / lc];
            let speed = (k[i] - shift) / metric.u(v[i]).sqrt();
            [speed * inward[0], speed * inward[1]]
        })
        .collect())
}

/// One raw explicit Euler move by `dt`, without resampling or acceptance tests.
pub fn displace(curve: &ClosedCurve, metric: &ConformalMetric, dt: f64, kind: FlowKind) -> Result<ClosedCurve> {
    let vel = velocity(curve, metric, kind)?;
    let moved: Vec<Point> =
        curve.vertices().iter().zip(&vel).map(|(p, w)| [p[0] + dt * w[0], p[1] + dt * w[1]]).collect();
    if !(signed_area(&moved) > 0.0) {
        return Err(Error::InvalidCurve("step inverted the curve".into()));
    }
    ClosedCurve::new(moved)
}

/// Max over min Euclidean edge length.
pub fn spacing_ratio(curve: &ClosedCurve) -> f64 {
    let e = curve.euclidean_edge_lengths();
    let (lo, hi) = e.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi / lo
}

fn catmull_rom(p0: Point, p1: Point, p2: Point, p3: Point, t: f64) -> Point {
    let t2 = t * t;
    let t3 = t2 * t;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (c - a) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (3.0 * b - a - 3.0 * c + d) * t3)
    };
    [f(p0[0], p1[0], p2[0], p3[0]), f(p0[1], p1[1], p2[1], p3[1])]
}

/// `n` points equally spaced in arc length along the periodic Catmull–Rom
/// spline through the vertices.
pub fn resample_uniform(curve: &ClosedCurve, n: usize) -> Result<ClosedCurve> {
    const SUB: usize = 16;
    let v = curve.vertices();
    let m = v.len();
    let mut params = Vec::with_capacity(m * SUB + 1);
    let mut cum = Vec::with_capacity(m * SUB + 1);
    let mut prev = v[0];
    let mut s = 0.0;
    params.push(0.0);
    cum.push(0.0);
    for i in 0..m {
        let (p0, p1, p2, p3) = (v[(i + m - 1) % m], v[i], v[(i + 1) % m], v[(i + 2) % m]);
        for j in 1..=SUB {
            let t = j as f64 / SUB as f64;
            let q = if j == SUB { p2 } else { catmull_rom(p0, p1, p2, p3, t) };
            s += dist(prev, q);
            prev = q;
            params.push(i as f64 + t);
            cum.push(s);
        }
    }
    let total = s;
    let mut out = Vec::with_capacity(n);
    let mut k = 0usize;
    for j in 0..n {
        let target = total * j as f64 / n as f64;
        while k + 1 < cum.len() && cum[k + 1] < target {
            k += 1;
        }
        let span = cum[k + 1] - cum[k];
        let frac = if span > 0.0 { (target - cum[k]) / span } else { 0.0 };
        let param = params[k] + frac * (params[k + 1] - params[k]);
        let i = (param.floor() as usize).min(m - 1);
        let t = param - i as f64;
        out.push(catmull_rom(v[(i + m - 1) % m], v[i], v[(i + 1) % m], v[(i + 2) % m], t));
    }
    ClosedCurve::new(out)
}

const MAX_REJECTIONS: usize = 40;

/// Acceptance rules for [`advance`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepRule {
    pub kind: FlowKind,
    /// Reject steps that raise the ratio by more than `1e-9` relative.
    pub monotone: bool,
}

fn regrid(curve: ClosedCurve, opts: &FlowOptions) -> Result<ClosedCurve> {
    match opts.resample_target {
        Some(h) => {
            let n = ((curve.euclidean_length() / h).round() as usize).max(curves::MIN_VERTICES);
            resample_uniform(&curve, n)
        }
        None if spacing_ratio(&curve) > 1.5 => resample_uniform(&curve, curve.len()),
        None => Ok(curve),
    }
}

/// One accepted step under `rule`, halving `dt` on every rejection.
pub(crate) fn advance(
    state: &FlowState,
    metric: &ConformalMetric,
    opts: &FlowOptions,
    rule: StepRule,
) -> Result<FlowState> {
    // Shortening cannot lower the ratio to first order here; shrinking dt only
    // shrinks the increase until it hides below the tolerance.
    if rule.monotone && rule.kind == FlowKind::Shortening && log_ratio_derivative(state) > 0.0 {
        return Err(Error::Stalled { steps: state.step_count, energy: state.metrics.curvature_energy });
    }
    let mut dt = stable_dt(&state.curve, metric, opts.dt_safety);
    for _ in 0..MAX_REJECTIONS {
        let candidate = displace(&state.curve, metric, dt, rule.kind).and_then(|c| regrid(c, opts));
        let curve = match candidate {
            Ok(c) => c,
            Err(Error::SelfIntersection(..) | Error::InvalidCurve(_)) => {
                dt *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        let metrics = match curves::isoperimetric_ratio(&curve, metric) {
            Ok(m) => m,
            // the enclosed area outgrew the total area
            Err(Error::DomainError(_)) => {
                dt *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        if rule.monotone && metrics.ratio > state.metrics.ratio * (1.0 + 1e-9) {
            dt *= 0.5;
            continue;
        }
        let status = if metrics.area_in < 1e-3 * state.reference_area {
            FlowStatus::Collapsed
        } else {
            FlowStatus::Running
        };
        return Ok(FlowState {
            curve,
            tau: state.tau + dt,
            metrics,
            status,
            step_count: state.step_count + 1,
            reference_area: state.reference_area,
        });
    }
    Err(Error::Stalled { steps: state.step_count, energy: state.metrics.curvature_energy })
}

/// One curve shortening step: Euler move along `k` times the inner normal,
/// resampling, simplicity check and collapse detection.
pub fn flow_step(state: &FlowState, metric: &ConformalMetric, opts: &FlowOptions) -> Result<FlowState> {
    if state.status != FlowStatus::Running {
        return Err(Error::DomainError(format!("flow state is {:?}, not running", state.status)));
    }
    advance(state, metric, opts, StepRule { kind: FlowKind::Shortening, monotone: false })
}

/// Runs curve shortening, never accepting a step that raises the ratio, until
/// `∫k² ds ≤ curvature_energy_cap`.
pub fn lemma9_reduce(curve: &ClosedCurve, metric: &ConformalMetric, opts: &FlowOptions) -> Result<FlowState> {
    reduce_with(curve, metric, opts, &mut |_| {})
}

/// [`lemma9_reduce`] reporting every accepted state (the initial one included).
pub fn reduce_with(
    curve: &ClosedCurve,
    metric: &ConformalMetric,
    opts: &FlowOptions,
    observer: &mut dyn FnMut(&FlowState),
) -> Result<FlowState> {
    opts.validate()?;
    let mut state = FlowState::new(curve.clone(), metric)?;
    if !state.metrics.ratio.is_finite() {
        return Err(Error::DomainError("ratio of the input curve is not finite".into()));
    }
    observer(&state);
    let rule = StepRule { kind: FlowKind::Shortening, monotone: true };
    loop {
        if state.metrics.curvature_energy <= opts.curvature_energy_cap {
            state.status = FlowStatus::CriterionMet;
            return Ok(state);
        }
        if state.step_count >= opts.max_steps {
            return Err(Error::Stalled { steps: state.step_count, energy: state.metrics.curvature_energy });
        }
        state = advance(&state, metric, opts, rule)?;
        observer(&state);
        if state.status == FlowStatus::Collapsed {
            return Err(Error::Collapsed { steps: state.step_count });
        }
    }
}

/// `d log I / dτ` under curve shortening, from `dL/dτ = −∫k²`, `dA_in/dτ = −∫k`
/// and `dA_out/dτ = +∫k` with the total area held fixed.
pub fn log_ratio_derivative(state: &FlowState) -> f64 {
    let m = &state.metrics;
    -m.curvature_energy / m.length_g + m.total_curvature / m.area_in - m.total_curvature / m.area_out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub tau: f64,
    pub metrics: CurveMetrics,
}

impl From<&FlowState> for TrajectoryRow {
    fn from(s: &FlowState) -> Self {
        TrajectoryRow { step: s.step_count, tau: s.tau, metrics: s.metrics }
    }
}

pub const TRAJECTORY_HEADER: &str = "step,tau,L,A_in,A_out,I,k_int,k2_int,gb_residual";

pub fn write_trajectory<W: Write>(mut w: W, rows: &[TrajectoryRow]) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.step, r.tau, m.length_g, m.area_in, m.area_out, m.ratio, m.total_curvature, m.curvature_energy,
            m.gb_residual
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_curvatures() {
        let flat = ConformalMetric::flat(1.0).unwrap();
        for r in [0.5, 1.0, 3.0] {
            let c = ClosedCurve::circle([0.3, -0.2], r, 4096).unwrap();
            for k in geodesic_curvature(&c, &flat) {
                assert!((k - 1.0 / r).abs() < 1e-9 / r);
            }
            let scaled = ConformalMetric::flat(4.0).unwrap();
            for k in geodesic_curvature(&c, &scaled) {
                assert!((k - 1.0 / (2.0 * r)).abs() < 1e-9);
            }
        }
        let s = ConformalMetric::round_sphere(1.0);
        let eq = ClosedCurve::circle([0.0, 0.0], 1.0, 4096).unwrap();
        assert!(geodesic_curvature(&eq, &s).iter().all(|k| k.abs() < 1e-9));
        let half = ClosedCurve::circle([0.0, 0.0], 0.5, 4096).unwrap();
        for k in geodesic_curvature(&half, &s) {
            assert!((k - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn collinear_vertices_are_flagged() {
        let sq = ClosedCurve::new(vec![
            [0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 0.5], [1.0, 1.0], [0.5, 1.0], [0.0, 1.0], [0.0, 0.5],
        ])
        .unwrap();
        assert_eq!(degenerate_triples(&sq), vec![1, 3, 5, 7]);
        let flat = ConformalMetric::flat(1.0).unwrap();
        assert_eq!(geodesic_curvature(&sq, &flat)[1], 0.0);
    }

    #[test]
    fn gauss_bonnet_examples() {
        let flat = ConformalMetric::flat(1.0).unwrap();
        let c = ClosedCurve::circle([0.0, 0.0], 1.0, 4096).unwrap();
        assert!(gauss_bonnet_residual(&c, &flat).unwrap() < 1e-4);
        let s = ConformalMetric::round_sphere(1.0);
        assert!(gauss_bonnet_residual(&c, &s).unwrap() < 1e-3);
        let small = ClosedCurve::circle([0.0, 0.0], 0.3, 4096).unwrap();
        assert!(gauss_bonnet_residual(&small, &s).unwrap() < 1e-3);
    }

    #[test]
    fn equator_is_stationary() {
        let s = ConformalMetric::round_sphere(1.0);
        let eq = ClosedCurve::circle([0.0, 0.0], 1.0, 256).unwrap();
        let opts = FlowOptions::default();
        let mut st = FlowState::new(eq.clone(), &s).unwrap();
        for _ in 0..1000 {
            st = flow_step(&st, &s, &opts).unwrap();
        }
        assert!(st.curve.hausdorff_distance(&eq) < 1e-3);
    }

    #[test]
    fn already_below_cap_returns_unchanged() {
        let s = ConformalMetric::round_sphere(1.0);
        let eq = ClosedCurve::circle([0.0, 0.0], 1.0, 64).unwrap();
        let out = lemma9_reduce(&eq, &s, &FlowOptions::default()).unwrap();
        assert_eq!(out.tau, 0.0);
        assert_eq!(out.curve, eq);
        assert_eq!(out.status, FlowStatus::CriterionMet);
    }

    #[test]
    fn unattainable_cap_stalls() {
        let s = ConformalMetric::round_sphere(1.0);
        let c = ClosedCurve::circle([0.0, 0.0], 0.6, 64).unwrap();
        let opts = FlowOptions { curvature_energy_cap: 1e-6, max_steps: 500, ..FlowOptions::default() };
        assert!(matches!(lemma9_reduce(&c, &s, &opts), Err(Error::Stalled { .. })));
    }

    #[test]
    fn resampling_equalizes_spacing_and_keeps_area() {
        let mut pts = Vec::new();
        for i in 0..64 {
            let t = 2.0 * PI * (i as f64 / 64.0 + 0.3 * (i as f64 / 64.0 * 2.0 * PI).sin() / (2.0 * PI));
            pts.push([t.cos(), t.sin()]);
        }
        let c = ClosedCurve::new(pts).unwrap();
        assert!(spacing_ratio(&c) > 1.5);
        let r = resample_uniform(&c, 64).unwrap();
        assert!(spacing_ratio(&r) < 1.01, "{}", spacing_ratio(&r));
        assert!((r.euclidean_area() - c.euclidean_area()).abs() < 2e-3);
    }

    #[test]
    fn flat_circle_shrinks_at_the_known_rate() {
        let flat = ConformalMetric::flat(1.0).unwrap();
        let opts = FlowOptions::default();
        let mut st = FlowState::new(ClosedCurve::circle([0.2, -0.1], 1.0, 256).unwrap(), &flat).unwrap();
        while st.tau < 0.3 {
            st = flow_step(&st, &flat, &opts).unwrap();
        }
        // R(τ)² = R0² − 2τ
        let expected = (1.0 - 2.0 * st.tau).sqrt();
        let c = st.curve.centroid();
        for p in st.curve.vertices() {
            let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
            assert!((r - expected).abs() < 2e-3, "{r} vs {expected}");
        }
    }

    #[test]
    fn log_ratio_derivative_matches_differences() {
        let s = ConformalMetric::round_sphere(1.0);
        for seed in [1, 2] {
            let c = ClosedCurve::perturbed_circle([0.1, 0.0], 1.0, 1024, 0.05, seed).unwrap();
            let st = FlowState::new(c.clone(), &s).unwrap();
            let predicted = log_ratio_derivative(&st);
            let dt = stable_dt(&c, &s, 0.05);
            let moved = FlowState::new(displace(&c, &s, dt, FlowKind::Shortening).unwrap(), &s).unwrap();
            let fd = (moved.metrics.ratio.ln() - st.metrics.ratio.ln()) / dt;
            assert!(predicted < 0.0 && fd < 0.0);
            assert!((fd - predicted).abs() < 0.05 * predicted.abs(), "{fd} vs {predicted}");
        }
    }

    #[test]
    fn equator_ratio_is_critical() {
        let s = ConformalMetric::round_sphere(1.0);
        let st = FlowState::new(ClosedCurve::circle([0.0, 0.0], 1.0, 1024).unwrap(), &s).unwrap();
        assert!(log_ratio_derivative(&st).abs() < 1e-6);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn length_decays_at_the_curvature_energy(
            seed in 0u64..1000, amp in 0.0f64..0.1, r in 0.4f64..2.5, cx in -0.5f64..0.5,
        ) {
            let s = ConformalMetric::round_sphere(1.0);
            let c = ClosedCurve::perturbed_circle([cx, 0.0], r, 512, amp, seed).unwrap();
            let before = curves::isoperimetric_ratio(&c, &s).unwrap();
            let dt = stable_dt(&c, &s, 0.2);
            let after = curves::isoperimetric_ratio(&displace(&c, &s, dt, FlowKind::Shortening).unwrap(), &s).unwrap();
            let fd = (after.length_g - before.length_g) / dt;
            proptest::prop_assert!(after.length_g <= before.length_g);
            proptest::prop_assert!((fd + before.curvature_energy).abs() < 0.05 * before.curvature_energy);
        }
    }

    #[test]
    fn trajectory_csv_header() {
        let s = ConformalMetric::round_sphere(1.0);
        let st = FlowState::new(ClosedCurve::circle([0.0, 0.0], 1.0, 16).unwrap(), &s).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &[TrajectoryRow::from(&st)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,tau,L,A_in,A_out,I,k_int,k2_int,gb_residual\n0,"));
    }
}
