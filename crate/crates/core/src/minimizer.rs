//! Multi-start search for curves of least isoperimetric ratio.
//!
//! The start family is a heuristic: circles around the origin and around
//! local maxima of the conformal factor, over a geometric range of radii.
//! Each start is first reduced by curve shortening, then driven by the
//! ratio-descent flow through a ladder of resolutions.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{self, ClosedCurve, CurveMetrics};
use crate::error::{Error, Result};
use crate::flow::{self, FlowKind, FlowOptions, FlowState, FlowStatus, StepRule};
use crate::geometry::{dist, Point};
use crate::hypotheses::{threshold_b0, HypothesisReport};
use crate::metric::ConformalMetric;

/// `max_i |k_i − L(1/A_in − 1/A_out)|`.
pub fn el_residual(curve: &ClosedCurve, metric: &ConformalMetric) -> Result<f64> {
    let (l, a_in, a_out, _) = curves::ratio_only(curve, metric)?;
    let target = flow::target_curvature(l, a_in, a_out);
    Ok(flow::geodesic_curvature(curve, metric).iter().map(|k| (k - target).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma10Choice {
    /// 1 or 2.
    pub chosen: usize,
    /// `(α₁+α₂)(1/A₂ + 1/(A₁+A₃))`
    pub lhs: f64,
    /// `α₁(1/A₁ + 1/(A₂+A₃))`
    pub v1: f64,
    /// `α₂(1/A₃ + 1/(A₁+A₂))`
    pub v2: f64,
    pub rhs_min: f64,
}

/// Picks the loop whose ratio is the smaller of the two candidates; the
/// combined curve's value is never below it.
pub fn lemma10_select(alpha1: f64, alpha2: f64, a1: f64, a2: f64, a3: f64) -> Result<Lemma10Choice> {
    if [alpha1, alpha2, a1, a2, a3].iter().any(|&x| !(x > 0.0)) {
        return Err(Error::DomainError("all five inputs must be positive".into()));
    }
    let lhs = (alpha1 + alpha2) * (1.0 / a2 + 1.0 / (a1 + a3));
    let v1 = alpha1 * (1.0 / a1 + 1.0 / (a2 + a3));
    let v2 = alpha2 * (1.0 / a3 + 1.0 / (a1 + a2));
    let (chosen, rhs_min) = if v1 <= v2 { (1, v1) } else { (2, v2) };
    debug_assert!(lhs >= rhs_min * (1.0 - 1e-12), "lhs {lhs} < {rhs_min}");
    Ok(Lemma10Choice { chosen, lhs, v1, v2, rhs_min })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub loop1: ClosedCurve,
    pub loop2: ClosedCurve,
    pub metrics1: CurveMetrics,
    pub metrics2: CurveMetrics,
    pub choice: Lemma10Choice,
}

impl SplitResult {
    pub fn chosen_loop(&self) -> &ClosedCurve {
        if self.choice.chosen == 1 { &self.loop1 } else { &self.loop2 }
    }
}

/// Vertex pairs closer than `tol` that are far apart along the curve,
/// grouped into clusters of neighbouring index pairs.
fn pinch_clusters(curve: &ClosedCurve, tol: f64) -> Vec<Vec<(usize, usize, f64)>> {
    let v = curve.vertices();
    let n = v.len();
    let edges = curve.euclidean_edge_lengths();
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + edges[i];
    }
    let total = cum[n];
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 3..n {
            if n - (j - i) <= 2 {
                continue;
            }
            let d = dist(v[i], v[j]);
            if d >= tol {
                continue;
            }
            let along = cum[j] - cum[i];
            if along.min(total - along) <= 10.0 * tol {
                continue;
            }
            pairs.push((i, j, d));
        }
    }
    let cyc = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(n - d)
    };
    const WINDOW: usize = 8;
    let mut clusters: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    for p in pairs {
        let hit = clusters.iter_mut().find(|c| {
            c.iter().any(|q| {
                (cyc(p.0, q.0) <= WINDOW && cyc(p.1, q.1) <= WINDOW)
                    || (cyc(p.0, q.1) <= WINDOW && cyc(p.1, q.0) <= WINDOW)
            })
        });
        match hit {
            Some(c) => c.push(p),
            None => clusters.push(vec![p]),
        }
    }
    clusters
}

/// Splits a curve that nearly touches itself at one point into two loops and
/// selects the better one.
pub fn split_self_tangent(curve: &ClosedCurve, metric: &ConformalMetric, tol: f64) -> Result<Option<SplitResult>> {
    let clusters = pinch_clusters(curve, tol);
    match clusters.len() {
        0 => return Ok(None),
        1 => {}
        k => return Err(Error::AmbiguousPinch(k)),
    }
    let &(i, j, _) = clusters[0].iter().min_by(|a, b| a.2.total_cmp(&b.2)).expect("non-empty cluster");
    let v = curve.vertices();
    let loop1 = ClosedCurve::new(v[i..j].to_vec())?;
    let loop2 = ClosedCurve::new(v[j..].iter().chain(&v[..i]).copied().collect())?;
    let total = metric.total_area()?;
    let a_out = total - curves::area_in(curve, metric)?;
    let (l1, l2) = (curves::length_g(&loop1, metric)?, curves::length_g(&loop2, metric)?);
    let (a1, a3) = (curves::area_in(&loop1, metric)?, curves::area_in(&loop2, metric)?);
    let choice = lemma10_select(l1, l2, a1, a_out, a3)?;
    let loop_metrics = |c: &ClosedCurve, len: f64, inside: f64, outside: f64| -> Result<CurveMetrics> {
        let mut m = curves::isoperimetric_ratio(c, metric)?;
        m.length_g = len;
        m.area_in = inside;
        m.area_out = outside;
        m.ratio = curves::ratio_from(len, inside, outside);
        Ok(m)
    };
    let metrics1 = loop_metrics(&loop1, l1, a1, a_out + a3)?;
    let metrics2 = loop_metrics(&loop2, l2, a3, a_out + a1)?;
    Ok(Some(SplitResult { loop1, loop2, metrics1, metrics2, choice }))
}

/// Circles used to seed the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartFamily {
    /// Empty means the origin plus the local maxima of `u`.
    pub centers: Vec<Point>,
    /// Empty means `n_radii` radii geometric from `0.1 r_s` to `10 r_s`,
    /// `r_s` the metric's characteristic radius.
    pub radii: Vec<f64>,
    pub n_radii: usize,
    pub vertices: usize,
    /// Angular offset of the first vertex.
    pub phase: f64,
    /// Relative random perturbation of radius and center.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for StartFamily {
    fn default() -> Self {
        StartFamily { centers: Vec::new(), radii: Vec::new(), n_radii: 7, vertices: 512, phase: 0.0, jitter: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartCurve {
    pub center: Point,
    pub radius: f64,
    pub curve: ClosedCurve,
}

pub fn start_curves(metric: &ConformalMetric, family: &StartFamily) -> Result<Vec<StartCurve>> {
    let mut centers = family.centers.clone();
    if centers.is_empty() {
        centers.push([0.0, 0.0]);
        for c in metric.density_maxima() {
            if !centers.iter().any(|q| dist(*q, c) < 1e-9) {
                centers.push(c);
            }
        }
    }
    let radii = if family.radii.is_empty() {
        let rs = metric.characteristic_radius();
        let k = family.n_radii.max(1);
        (0..k)
            .map(|i| {
                let t = if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
                rs * 10f64.powf(-1.0 + 2.0 * t)
            })
            .collect()
    } else {
        family.radii.clone()
    };
    let n = family.vertices.max(curves::MIN_VERTICES);
    let mut out = Vec::new();
    for c in &centers {
        for &r in &radii {
            let idx = out.len() as u64;
            let (mut center, mut radius) = (*c, r);
            if family.jitter > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(family.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(idx));
                radius *= 1.0 + family.jitter * rng.random_range(-1.0..1.0);
                center[0] += family.jitter * r * rng.random_range(-1.0..1.0);
                center[1] += family.jitter * r * rng.random_range(-1.0..1.0);
            }
            let pts = (0..n)
                .map(|i| {
                    let t = family.phase + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    [center[0] + radius * t.cos(), center[1] + radius * t.sin()]
                })
                .collect();
            out.push(StartCurve { center, radius, curve: ClosedCurve::new(pts)? });
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty start family".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub flow: FlowOptions,
    /// Vertex counts of the descent ladder, coarse to fine; the last is the
    /// resolution of the returned curve.
    pub levels: Vec<usize>,
    /// Pinch tolerance as a fraction of the curve diameter.
    pub pinch_tolerance: f64,
    /// Step budget of the initial curve shortening reduction.
    pub reduce_steps: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { flow: FlowOptions::default(), levels: vec![64, 128, 256, 512], pinch_tolerance: 1e-3, reduce_steps: 2000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartStatus {
    /// Residual below the tolerance.
    Converged,
    /// Step budget used up while still descending.
    StepLimit,
    Stalled,
    Collapsed,
}

impl StartStatus {
    pub fn failed(self) -> bool {
        matches!(self, StartStatus::Stalled | StartStatus::Collapsed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartLog {
    pub index: usize,
    pub center: Point,
    pub radius: f64,
    pub initial_ratio: f64,
    pub final_ratio: f64,
    pub status: StartStatus,
    /// Outcome of the curve shortening reduction.
    pub reduction: String,
    pub steps: usize,
    pub el_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub b0: f64,
    pub below: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub best_curve: ClosedCurve,
    pub best_ratio: f64,
    pub best_metrics: CurveMetrics,
    pub el_residual: f64,
    pub threshold_check: Option<ThresholdCheck>,
    pub starts_log: Vec<StartLog>,
    pub split_applied: bool,
    pub best_start: usize,
}

struct Outcome {
    curve: ClosedCurve,
    ratio: f64,
    log: StartLog,
}

fn descend_start(metric: &ConformalMetric, index: usize, start: &StartCurve, opts: &MinimizeOptions) -> Result<Outcome> {
    let finest = *opts.levels.last().expect("levels non-empty");
    let initial = if start.curve.len() == finest { start.curve.clone() } else { flow::resample_uniform(&start.curve, finest)? };
    let initial_ratio = curves::ratio_only(&initial, metric)?.3;
    let mut best = (initial.clone(), initial_ratio);
    let mut steps = 0usize;

    // Curve shortening reduction; on failure continue from its last accepted state.
    let reduce_opts = FlowOptions { max_steps: opts.reduce_steps, ..opts.flow.clone() };
    let mut last: Option<FlowState> = None;
    let reduction = match flow::reduce_with(&initial, metric, &reduce_opts, &mut |s| last = Some(s.clone())) {
        Ok(s) => {
            steps += s.step_count;
            last = Some(s);
            "criterion_met".to_string()
        }
        Err(e) => {
            steps += last.as_ref().map_or(0, |s| s.step_count);
            e.name().to_string()
        }
    };
    debug!("start {index}: reduction {reduction} after {steps} steps");
    let mut curve = match last {
        Some(s) if s.status != FlowStatus::Collapsed => s.curve,
        _ => initial.clone(),
    };
    if let Ok((_, _, _, r)) = curves::ratio_only(&curve, metric) {
        if r < best.1 {
            best = (curve.clone(), r);
        }
    }

    let rule = StepRule { kind: FlowKind::RatioDescent, monotone: true };
    let nlev = opts.levels.len();
    let mut status = StartStatus::StepLimit;
    for (level, &n) in opts.levels.iter().enumerate() {
        let is_final = level + 1 == nlev;
        curve = flow::resample_uniform(&curve, n)?;
        // each finer level gets a quarter of the previous budget
        let cap = (opts.flow.max_steps >> (2 * level).min(60)).max(1);
        let mut state = FlowState::new(curve.clone(), metric)?;
        let mut level_status = StartStatus::StepLimit;
        let mut window_ratio = state.metrics.ratio;
        for s in 0..cap {
            if is_final && el_residual(&state.curve, metric)? < opts.flow.el_tolerance {
                level_status = StartStatus::Converged;
                break;
            }
            match flow::advance(&state, metric, &opts.flow, rule) {
                Ok(next) => {
                    state = next;
                    steps += 1;
                    if state.status == FlowStatus::Collapsed {
                        level_status = StartStatus::Collapsed;
                        break;
                    }
                }
                Err(Error::Stalled { .. }) => {
                    level_status = StartStatus::Stalled;
                    break;
                }
                Err(e) => return Err(e),
            }
            // coarse levels stop once the ratio has settled
            if !is_final && (s + 1) % 100 == 0 {
                if window_ratio - state.metrics.ratio <= 1e-7 * window_ratio {
                    break;
                }
                window_ratio = state.metrics.ratio;
            }
        }
        debug!(
            "start {index}: level {n} ended after {} steps, I = {:.8}, {level_status:?}",
            state.step_count, state.metrics.ratio
        );
        curve = state.curve;
        let fine = if curve.len() == finest { curve.clone() } else { flow::resample_uniform(&curve, finest)? };
        if let Ok((_, _, _, r)) = curves::ratio_only(&fine, metric) {
            if r < best.1 {
                best = (fine, r);
            }
        }
        if level_status == StartStatus::Collapsed {
            status = StartStatus::Collapsed;
            break;
        }
        if is_final {
            status = level_status;
        }
    }
    let residual = el_residual(&best.0, metric)?;
    if status == StartStatus::Stalled && residual < opts.flow.el_tolerance {
        status = StartStatus::Converged;
    }
    debug!("start {index}: I {initial_ratio:.6} -> {:.6} ({status:?}, {steps} steps)", best.1);
    Ok(Outcome {
        ratio: best.1,
        log: StartLog {
            index,
            center: start.center,
            radius: start.radius,
            initial_ratio,
            final_ratio: best.1,
            status,
            reduction,
            steps,
            el_residual: residual,
        },
        curve: best.0,
    })
}

/// Best curve over the start family, polished by ratio descent.
pub fn minimize(
    metric: &ConformalMetric,
    family: &StartFamily,
    opts: &MinimizeOptions,
    report: Option<&HypothesisReport>,
) -> Result<MinimizeResult> {
    opts.flow.validate()?;
    if opts.levels.is_empty() || opts.levels.iter().any(|&n| n < curves::MIN_VERTICES) {
        return Err(Error::Config("descent levels must be non-empty with at least 8 vertices each".into()));
    }
    let total = metric.total_area()?;
    if !total.is_finite() {
        return Err(Error::DivergentArea("minimization needs a finite total area".into()));
    }
    let starts = start_curves(metric, family)?;
    info!("minimizing over {} starts", starts.len());
    let outcomes: Vec<Result<Outcome>> =
        starts.par_iter().enumerate().map(|(i, s)| descend_start(metric, i, s, opts)).collect();
    let mut logs = Vec::new();
    let mut best: Option<(usize, ClosedCurve, f64)> = None;
    let mut failed = 0;
    for (i, o) in outcomes.into_iter().enumerate() {
        let o = match o {
            Ok(o) => o,
            Err(e) => {
                debug!("start {i} failed: {e}");
                failed += 1;
                continue;
            }
        };
        if o.log.status.failed() {
            failed += 1;
        }
        if best.as_ref().is_none_or(|b| o.ratio < b.2) {
            best = Some((i, o.curve.clone(), o.ratio));
        }
        logs.push(o.log);
    }
    if failed == starts.len() {
        return Err(Error::AllStartsFailed(starts.len()));
    }
    let (best_start, mut best_curve, _) = best.expect("at least one start succeeded");
    let mut split_applied = false;
    let tol = opts.pinch_tolerance * best_curve.diameter();
    if let Some(split) = split_self_tangent(&best_curve, metric, tol)? {
        best_curve = split.chosen_loop().clone();
        split_applied = true;
    }
    let best_metrics = curves::isoperimetric_ratio(&best_curve, metric)?;
    let threshold_check = report.map(|r| {
        let b0 = threshold_b0(r.b1, r.b2, total);
        ThresholdCheck { b0, below: best_metrics.ratio < b0 }
    });
    Ok(MinimizeResult {
        el_residual: el_residual(&best_curve, metric)?,
        best_ratio: best_metrics.ratio,
        best_metrics,
        best_curve,
        threshold_check,
        starts_log: logs,
        split_applied,
        best_start,
    })
}
