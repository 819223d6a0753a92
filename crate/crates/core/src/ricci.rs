//! Radial logarithmic diffusion `u_t = Δ log u` and the time slices it induces.
//!
//! The solver is a conservative finite-volume scheme on cells uniform in
//! `s = log(1 + r)`. Each step is backward Euler in `w = log u`, solved by a
//! line-searched Newton iteration on a convex potential, so positivity holds
//! by construction. The outer face drains mass at the cusp rate
//! `4π(1 + 1/log R)`, which selects the maximal solution: mass past the grid
//! is carried by a cusp tail `c/(r² log² r)` whose coefficient is read off the
//! outermost cell.

use std::f64::consts::PI;
use std::io::Write;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypotheses::{self, HypothesisReport, Prop2Constants};
use crate::metric::{ConformalMetric, Family, RadialEnvelope, RadialTable, TailModel};
use crate::minimizer::{self, MinimizeOptions, StartFamily};

/// Halvings of a failed time step before giving up.
const MAX_HALVINGS: usize = 40;
const NEWTON_ITERS: usize = 80;
const NEWTON_TOL: f64 = 1e-11;
/// Lower end of the window used to fit the tail envelopes.
const TAIL_WINDOW_START: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicciOptions {
    pub cells: usize,
    /// Outer face of the grid.
    pub r_max: f64,
    /// Largest time step; `None` means `t_end / 1000`.
    pub dt_max: Option<f64>,
    /// Stored time levels, both ends included.
    pub snapshots: usize,
}

impl Default for RicciOptions {
    fn default() -> Self {
        RicciOptions { cells: 400, r_max: 1e12, dt_max: None, snapshots: 201 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicciSolution {
    /// Cell centers.
    pub grid: Vec<f64>,
    /// Cell faces, `cells + 1` of them starting at 0.
    pub faces: Vec<f64>,
    pub times: Vec<f64>,
    /// `u_values[k][i]` is the cell average of `u` at `times[k]`.
    pub u_values: Vec<Vec<f64>>,
    /// Total mass per stored time, grid cells plus the cusp tail past `r_max`.
    pub mass: Vec<f64>,
    /// Zero of the straight line fitted to the mass over the middle half of the run.
    pub extinction_estimate: f64,
    pub mass_slope: f64,
    pub fit_window: (f64, f64),
    /// Radii over which slice envelopes are fitted.
    pub tail_window: (f64, f64),
    /// Set when the boundary drain outran the mass present in the outer cell,
    /// i.e. the initial tail was too thin for the cusp regime to be in place.
    pub not_maximal: bool,
    /// `max u₀ r² log² r` over the grid beyond `r = e`.
    pub initial_decay_constant: f64,
    pub steps: usize,
}

struct Grid {
    faces: Vec<f64>,
    centers: Vec<f64>,
    volumes: Vec<f64>,
    /// Transmissibility of interior face `i + 1/2`, between cells `i` and `i + 1`.
    trans: Vec<f64>,
    outer_flux: f64,
}

impl Grid {
    fn new(cells: usize, r_max: f64) -> Grid {
        let s_max = r_max.ln_1p();
        let s: Vec<f64> = (0..=cells).map(|i| s_max * i as f64 / cells as f64).collect();
        let faces: Vec<f64> = s.iter().map(|x| x.exp_m1()).collect();
        let centers: Vec<f64> = s.windows(2).map(|w| (0.5 * (w[0] + w[1])).exp_m1()).collect();
        let volumes = faces.windows(2).map(|w| PI * (w[1] * w[1] - w[0] * w[0])).collect();
        let trans = (0..cells - 1).map(|i| 2.0 * PI * faces[i + 1] / (centers[i + 1] - centers[i])).collect();
        let r = faces[cells];
        Grid { faces, centers, volumes, trans, outer_flux: 4.0 * PI * (1.0 + 1.0 / r.ln()) }
    }

    fn cell_mass(&self, u: &[f64]) -> f64 {
        self.volumes.iter().zip(u).map(|(v, u)| v * u).sum()
    }

    /// Mass past the outer face under a cusp tail matched to the last cell.
    fn tail_mass(&self, u: &[f64]) -> f64 {
        let n = u.len() - 1;
        let rc = self.centers[n];
        let c = u[n] * (rc * rc.ln()).powi(2);
        2.0 * PI * c / self.faces[n + 1].ln()
    }

    /// Convex potential whose gradient is the backward Euler residual.
    fn potential(&self, w: &[f64], u_old: &[f64], dt: f64) -> f64 {
        let mut phi = 0.0;
        for i in 0..w.len() {
            phi += self.volumes[i] * (w[i].exp() - u_old[i] * w[i]) / dt;
        }
        for (i, t) in self.trans.iter().enumerate() {
            phi += 0.5 * t * (w[i + 1] - w[i]).powi(2);
        }
        phi + self.outer_flux * w[w.len() - 1]
    }

    fn residual(&self, w: &[f64], u_old: &[f64], dt: f64) -> Vec<f64> {
        let n = w.len();
        let mut r: Vec<f64> = (0..n).map(|i| self.volumes[i] * (w[i].exp() - u_old[i]) / dt).collect();
        for (i, t) in self.trans.iter().enumerate() {
            let f = t * (w[i + 1] - w[i]);
            r[i] -= f;
            r[i + 1] += f;
        }
        r[n - 1] += self.outer_flux;
        r
    }

    /// One backward Euler step; `None` if Newton fails to converge.
    fn implicit_step(&self, u_old: &[f64], dt: f64) -> Option<Vec<f64>> {
        // no solution exists once the drain exceeds the mass on the grid
        if self.outer_flux * dt >= self.cell_mass(u_old) {
            return None;
        }
        let n = u_old.len();
        let mut w: Vec<f64> = u_old.iter().map(|u| u.ln()).collect();
        let mut phi = self.potential(&w, u_old, dt);
        for _ in 0..NEWTON_ITERS {
            let g = self.residual(&w, u_old, dt);
            let mut diag: Vec<f64> = (0..n).map(|i| self.volumes[i] * w[i].exp() / dt).collect();
            for (i, t) in self.trans.iter().enumerate() {
                diag[i] += t;
                diag[i + 1] += t;
            }
            let off: Vec<f64> = self.trans.iter().map(|t| -t).collect();
            let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
            let mut d = solve_tridiagonal(&off, &diag, &rhs)?;
            let dmax = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if !dmax.is_finite() {
                return None;
            }
            if dmax < NEWTON_TOL {
                return Some(w.iter().zip(&d).map(|(w, d)| (w + d).exp()).collect());
            }
            if dmax > 4.0 {
                d.iter_mut().for_each(|x| *x *= 4.0 / dmax);
            }
            let slope: f64 = g.iter().zip(&d).map(|(g, d)| g * d).sum();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = w.iter().zip(&d).map(|(w, d)| w + alpha * d).collect();
                let p = self.potential(&trial, u_old, dt);
                if p.is_finite() && p <= phi + 1e-4 * alpha * slope + 1e-14 * phi.abs() {
                    w = trial;
                    phi = p;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return None;
            }
        }
        None
    }
}

/// Thomas algorithm for a symmetric tridiagonal system with off-diagonal `off`.
fn solve_tridiagonal(off: &[f64], diag: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut b = diag[0];
    if b == 0.0 {
        return None;
    }
    c[0] = if n > 1 { off[0] / b } else { 0.0 };
    d[0] = rhs[0] / b;
    for i in 1..n {
        b = diag[i] - off[i - 1] * c[i - 1];
        if b == 0.0 || !b.is_finite() {
            return None;
        }
        c[i] = if i + 1 < n { off[i] / b } else { 0.0 };
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Least-squares line `M ≈ a t + b`.
fn fit_line(t: &[f64], m: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let (st, sm) = (t.iter().sum::<f64>(), m.iter().sum::<f64>());
    let (tm, mm) = (st / n, sm / n);
    let sxy: f64 = t.iter().zip(m).map(|(t, m)| (t - tm) * (m - mm)).sum();
    let sxx: f64 = t.iter().map(|t| (t - tm).powi(2)).sum();
    let a = sxy / sxx;
    (a, mm - a * tm)
}

/// Evolves a radial initial density up to `t_end`.
pub fn solve_radial(u0: &ConformalMetric, t_end: f64, opts: &RicciOptions) -> Result<RicciSolution> {
    if !u0.is_radial() {
        return Err(Error::Config("initial data must be radial about the origin".into()));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::DomainError(format!("t_end = {t_end} must be positive")));
    }
    if opts.cells < 4 || opts.snapshots < 2 || !(opts.r_max > 10.0) {
        return Err(Error::Config("need at least 4 cells, 2 snapshots and r_max > 10".into()));
    }
    let m0 = u0.total_area()?;
    if !m0.is_finite() {
        return Err(Error::DivergentArea("initial data must be integrable".into()));
    }
    let dt_max = opts.dt_max.unwrap_or(t_end / 1000.0);
    if !(dt_max > 0.0) {
        return Err(Error::Config("dt_max must be positive".into()));
    }

    let grid = Grid::new(opts.cells, opts.r_max);
    let s_max = opts.r_max.ln_1p();
    let ds = s_max / opts.cells as f64;
    let mut u = Vec::with_capacity(opts.cells);
    for i in 0..opts.cells {
        let mass = crate::quadrature::integrate(
            |s| {
                let r = s.exp_m1();
                u0.u([r, 0.0]) * 2.0 * PI * r * s.exp()
            },
            i as f64 * ds,
            (i + 1) as f64 * ds,
            1,
        );
        let avg = mass / grid.volumes[i];
        if !(avg > 0.0) || !avg.is_finite() {
            return Err(Error::NonPositiveFactor(format!("initial cell average {avg} near r = {}", grid.centers[i])));
        }
        u.push(avg);
    }
    let initial_decay_constant = grid
        .centers
        .iter()
        .zip(&u)
        .filter(|(r, _)| **r >= std::f64::consts::E)
        .map(|(r, u)| u * (r * r.ln()).powi(2))
        .fold(0.0, f64::max);

    let targets: Vec<f64> =
        (0..opts.snapshots).map(|k| t_end * k as f64 / (opts.snapshots - 1) as f64).collect();
    let mut times = vec![0.0];
    let mut u_values = vec![u.clone()];
    let mut mass = vec![grid.cell_mass(&u) + grid.tail_mass(&u)];
    let mut t = 0.0;
    let mut dt = dt_max;
    let mut steps = 0;
    let mut not_maximal = false;
    for &target in &targets[1..] {
        while t < target {
            let mut step = dt.min(target - t);
            let mut halvings = 0;
            let next = loop {
                if let Some(next) = grid.implicit_step(&u, step) {
                    break next;
                }
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(Error::StepUnstable(t));
                }
                step *= 0.5;
                dt = step;
            };
            let n = u.len() - 1;
            if grid.outer_flux * step > 0.5 * grid.volumes[n] * u[n] {
                not_maximal = true;
            }
            u = next;
            // land exactly on the snapshot
            t = if target - (t + step) <= 1e-12 * t_end { target } else { t + step };
            steps += 1;
            dt = (2.0 * dt).min(dt_max);
        }
        times.push(t);
        mass.push(grid.cell_mass(&u) + grid.tail_mass(&u));
        u_values.push(u.clone());
    }
    if not_maximal {
        info!("boundary drain exceeded the outer cell mass: initial tail too thin for the cusp regime");
    }

    let fit_window = (0.25 * t_end, 0.75 * t_end);
    let (ft, fm): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&mass)
        .filter(|(t, _)| **t >= fit_window.0 - 1e-12 && **t <= fit_window.1 + 1e-12)
        .map(|(t, m)| (*t, *m))
        .unzip();
    let (slope, intercept) = if ft.len() >= 2 { fit_line(&ft, &fm) } else { fit_line(&times, &mass) };
    let extinction_estimate = if slope < 0.0 { -intercept / slope } else { f64::INFINITY };
    let r_cap = match u0.family() {
        Family::CuspProfile { r_cap, .. } => *r_cap,
        _ => 0.0,
    };
    let tail_window = (TAIL_WINDOW_START.max(r_cap), grid.centers[opts.cells - 1]);
    debug!("ricci: {steps} steps, slope {slope}, extinction estimate {extinction_estimate}");
    Ok(RicciSolution {
        grid: grid.centers,
        faces: grid.faces,
        times,
        u_values,
        mass,
        extinction_estimate,
        mass_slope: slope,
        fit_window,
        tail_window,
        not_maximal,
        initial_decay_constant,
        steps,
    })
}

impl RicciSolution {
    /// Cell averages at `t`, interpolated linearly in `log u` between stored times.
    pub fn profile_at(&self, t: f64) -> Result<Vec<f64>> {
        let (t0, t1) = (self.times[0], self.times[self.times.len() - 1]);
        if !(t >= t0 && t <= t1) {
            return Err(Error::DomainError(format!("t = {t} outside the solved range [{t0}, {t1}]")));
        }
        let k = self.times.partition_point(|&x| x <= t).clamp(1, self.times.len() - 1);
        let (ta, tb) = (self.times[k - 1], self.times[k]);
        let th = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
        Ok(self.u_values[k - 1]
            .iter()
            .zip(&self.u_values[k])
            .map(|(a, b)| (a.ln() * (1.0 - th) + b.ln() * th).exp())
            .collect())
    }

    /// Mass ledger at `t`, linear between stored times.
    pub fn mass_at(&self, t: f64) -> Result<f64> {
        let (t0, t1) = (self.times[0], self.times[self.times.len() - 1]);
        if !(t >= t0 && t <= t1) {
            return Err(Error::DomainError(format!("t = {t} outside the solved range [{t0}, {t1}]")));
        }
        let k = self.times.partition_point(|&x| x <= t).clamp(1, self.times.len() - 1);
        let (ta, tb) = (self.times[k - 1], self.times[k]);
        let th = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
        Ok(self.mass[k - 1] * (1.0 - th) + self.mass[k] * th)
    }

    /// `(r, u r² log² r)` at `t` for cell centers in `[lo, hi]`.
    pub fn decay_profile(&self, t: f64, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
        let u = self.profile_at(t)?;
        Ok(self
            .grid
            .iter()
            .zip(&u)
            .filter(|(r, _)| **r >= lo && **r <= hi && **r > 1.0)
            .map(|(r, u)| (*r, u * (r * r.ln()).powi(2)))
            .collect())
    }

    /// Long-format dump with header `t,r,u`.
    pub fn write_solution_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "r", "u"])?;
        for (t, row) in self.times.iter().zip(&self.u_values) {
            for (r, u) in self.grid.iter().zip(row) {
                wr.write_record([format!("{t:.16e}"), format!("{r:.16e}"), format!("{u:.16e}")])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Mass ledger with header `t,M`.
    pub fn write_mass_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "M"])?;
        for (t, m) in self.times.iter().zip(&self.mass) {
            wr.write_record([format!("{t:.16e}"), format!("{m:.16e}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// The metric `u(·, t) δ` as a radial table with a cusp tail and cusp
/// envelopes fitted to the extremes of `u r² log² r` over the tail window.
pub fn slice_metric(sol: &RicciSolution, t: f64) -> Result<ConformalMetric> {
    if t >= sol.extinction_estimate {
        return Err(Error::ExtinctPastT { t, extinction: sol.extinction_estimate });
    }
    let u = sol.profile_at(t)?;
    let samples: Vec<[f64; 2]> = sol.grid.iter().zip(&u).map(|(r, u)| [*r, *u]).collect();
    let table = RadialTable::new(&samples, TailModel::Cusp)?;
    let (lo, hi) = sol.tail_window;
    let q: Vec<f64> = sol.decay_profile(t, lo, hi)?.into_iter().map(|(_, q)| q).collect();
    if q.is_empty() {
        return Err(Error::DomainError(format!("no grid radii in the tail window [{lo}, {hi}]")));
    }
    let c1 = q.iter().copied().fold(f64::INFINITY, f64::min);
    let c2 = q.iter().copied().fold(0.0, f64::max);
    Ok(ConformalMetric::table(table)?.with_envelope(RadialEnvelope::cusp(c1, c2, lo)?))
}

/// Closed-form constants for a slice's fitted envelopes, with `r₀` kept
/// inside the window where the envelopes hold.
pub fn slice_constants(slice: &ConformalMetric) -> Result<Prop2Constants> {
    let env = fitted_envelope(slice)?;
    let (c1, c2) = hypotheses::cusp_coefficients(env)?;
    hypotheses::prop2_constants_above(c1, c2, env.r0)
}

/// Conditions checked on a slice's fitted envelopes over `[r₀, 10⁶ r₀]`.
pub fn slice_report(slice: &ConformalMetric) -> Result<HypothesisReport> {
    Ok(hypotheses::envelope_report(fitted_envelope(slice)?)?.with_area(slice.total_area()?))
}

fn fitted_envelope(slice: &ConformalMetric) -> Result<&RadialEnvelope> {
    slice.envelope().ok_or_else(|| Error::DomainError("slice has no fitted envelope".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub t: f64,
    pub best_ratio: f64,
    pub b0: f64,
    pub below: bool,
    pub el_residual: f64,
    pub total_area: f64,
}

/// Minimizes the ratio on each requested slice; slices fail independently.
pub fn track_ratio(
    sol: &RicciSolution,
    times: &[f64],
    family: &StartFamily,
    opts: &MinimizeOptions,
) -> Vec<Result<TrackRow>> {
    times
        .par_iter()
        .map(|&t| {
            let slice = slice_metric(sol, t)?;
            let k = slice_constants(&slice)?;
            let area = slice.total_area()?;
            let b0 = hypotheses::threshold_b0(k.b1, k.b2, area);
            let res = minimizer::minimize(&slice, family, opts, None)?;
            Ok(TrackRow {
                t,
                best_ratio: res.best_ratio,
                b0,
                below: res.best_ratio < b0,
                el_residual: res.el_residual,
                total_area: area,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]

        #[test]
        fn extinction_tracks_initial_mass(scale in 0.5f64..2.0) {
            let u0 = ConformalMetric::round_sphere(1.0).scaled(scale).unwrap();
            let opts = RicciOptions { cells: 200, ..RicciOptions::default() };
            let sol = solve_radial(&u0, 0.8 * scale, &opts).unwrap();
            proptest::prop_assert!(sol.mass.windows(2).all(|w| w[1] <= w[0]));
            proptest::prop_assert!((sol.extinction_estimate / scale - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn tridiagonal_solve() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] has x = [1 1 1]
        let x = solve_tridiagonal(&[-1.0, -1.0], &[2.0, 2.0, 2.0], &[1.0, 0.0, 1.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn line_fit_is_exact_on_lines() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let m: Vec<f64> = t.iter().map(|t| 5.0 - 2.0 * t).collect();
        let (a, b) = fit_line(&t, &m);
        assert!((a + 2.0).abs() < 1e-14 && (b - 5.0).abs() < 1e-14);
    }

    #[test]
    fn steady_cusp_cell_budget() {
        // each implicit step removes exactly the boundary drain from the grid
        let g = Grid::new(50, 1e6);
        let u: Vec<f64> = g.centers.iter().map(|r| 1.0 / (1.0 + r * r).powi(2)).collect();
        let dt = 1e-3;
        let next = g.implicit_step(&u, dt).unwrap();
        let lost = g.cell_mass(&u) - g.cell_mass(&next);
        assert!((lost - g.outer_flux * dt).abs() < 1e-9 * g.cell_mass(&u));
        assert!(next.iter().all(|v| *v > 0.0));
    }

    fn sphere_run(cells: usize) -> RicciSolution {
        let opts = RicciOptions { cells, ..Default::default() };
        solve_radial(&ConformalMetric::round_sphere(1.0), 0.8, &opts).unwrap()
    }

    #[test]
    fn mass_drains_at_four_pi() {
        let sol = sphere_run(400);
        let rate = -sol.mass_slope / (4.0 * PI);
        assert!((rate - 1.0).abs() < 0.02, "rate {rate}");
        // M₀ = 4π, so extinction at 1
        assert!((sol.extinction_estimate - 1.0).abs() < 0.02, "T {}", sol.extinction_estimate);
        assert!((sol.mass[0] - 4.0 * PI).abs() < 1e-9);
        for w in sol.mass.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(sol.u_values.iter().flatten().all(|u| *u > 0.0));
        assert_eq!(sol.times.len(), 201);
        assert_eq!(*sol.times.last().unwrap(), 0.8);
    }

    #[test]
    fn doubling_the_data_doubles_extinction() {
        let one = sphere_run(400);
        let u0 = ConformalMetric::round_sphere(1.0).scaled(2.0).unwrap();
        let two = solve_radial(&u0, 1.6, &RicciOptions::default()).unwrap();
        let ratio = two.extinction_estimate / one.extinction_estimate;
        assert!((ratio - 2.0).abs() < 0.04, "ratio {ratio}");
    }

    #[test]
    fn thin_initial_tail_is_flagged() {
        assert!(sphere_run(100).not_maximal);
    }

    #[test]
    fn tail_stays_below_a_cusp_bound() {
        let sol = sphere_run(400);
        let t = 0.5 * sol.extinction_estimate;
        let q = sol.decay_profile(t, 10.0, 1e3).unwrap();
        assert!(q.len() > 10);
        let c = q.iter().map(|p| p.1).fold(0.0, f64::max);
        // the cusp coefficient of the maximal solution grows like 2t
        assert!(c.is_finite() && c > 0.0 && c < 2.0 * (2.0 * t), "sup {c}");
    }

    #[test]
    fn tail_dominates_the_linear_template() {
        let sol = sphere_run(400);
        for t in [0.1, 0.2, 0.4] {
            let q = sol.decay_profile(t, 1e3, 1e12).unwrap();
            let measured = q.iter().map(|p| p.1 / t).fold(f64::INFINITY, f64::min);
            assert!(measured >= 1.0, "t = {t}: min u r² log² r / t = {measured}");
        }
    }

    #[test]
    fn refinement_converges() {
        let runs: Vec<RicciSolution> = [100, 200, 400].into_iter().map(sphere_run).collect();
        let gap = |a: &RicciSolution, b: &RicciSolution| {
            a.mass.iter().zip(&b.mass).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let (coarse, fine) = (gap(&runs[0], &runs[1]), gap(&runs[1], &runs[2]));
        assert!(fine <= 0.6 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn slices_match_the_ledger() {
        let sol = sphere_run(400);
        for t in [0.2, 0.4, 0.6] {
            let slice = slice_metric(&sol, t).unwrap();
            let area = slice.total_area().unwrap();
            let m = sol.mass_at(t).unwrap();
            assert!((area / m - 1.0).abs() < 0.01, "t = {t}: {area} vs {m}");

            let env = slice.envelope().unwrap();
            let (lo, hi) = sol.tail_window;
            for r in sol.grid.iter().filter(|r| **r >= lo && **r <= hi) {
                let u = slice.u([*r, 0.0]);
                assert!(env.lower.eval(*r) <= u * (1.0 + 1e-9) && u <= env.upper.eval(*r) * (1.0 + 1e-9));
            }
            let report = slice_report(&slice).unwrap();
            assert!(report.all_pass(), "t = {t}: {:?}", report.per_condition);
        }
    }

    #[test]
    fn slices_past_extinction_are_refused() {
        let mut sol = sphere_run(100);
        sol.extinction_estimate = 0.3;
        assert!(matches!(slice_metric(&sol, 0.5), Err(Error::ExtinctPastT { .. })));
        assert!(slice_metric(&sol, 0.2).is_ok());
        assert!(matches!(sol.profile_at(0.9), Err(Error::DomainError(_))));
    }

    #[test]
    fn running_past_extinction_is_unstable() {
        let opts = RicciOptions { cells: 50, ..Default::default() };
        let r = solve_radial(&ConformalMetric::round_sphere(1.0), 1.2, &opts);
        assert!(matches!(r, Err(Error::StepUnstable(t)) if t > 0.9 && t < 1.0), "{r:?}");
    }

    #[test]
    fn area_branch_of_threshold_grows_as_mass_drains() {
        let sol = sphere_run(100);
        let b2 = 0.5;
        let branch: Vec<f64> = sol.mass.iter().map(|a| hypotheses::threshold_b0(f64::INFINITY, b2, *a)).collect();
        for w in branch.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn symmetric_slice_has_a_centered_winner() {
        use crate::curves::ClosedCurve;
        use crate::flow::FlowOptions;
        let sol = sphere_run(200);
        let slice = slice_metric(&sol, 0.4).unwrap();
        let family = StartFamily { centers: vec![[0.0, 0.0]], radii: vec![3.0], vertices: 128, ..Default::default() };
        let opts = MinimizeOptions {
            flow: FlowOptions { max_steps: 400, ..Default::default() },
            levels: vec![64, 128],
            reduce_steps: 200,
            ..Default::default()
        };
        let res = minimizer::minimize(&slice, &family, &opts, None).unwrap();
        let radii: Vec<f64> = res.best_curve.vertices().iter().map(|p| p[0].hypot(p[1])).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let circle = ClosedCurve::circle([0.0, 0.0], mean, 1024).unwrap();
        let d = res.best_curve.hausdorff_distance(&circle) / mean;
        assert!(d < 1e-2, "relative Hausdorff distance {d}");

        let rows = track_ratio(&sol, &[0.2, 0.4], &family, &opts);
        for row in rows {
            let row = row.unwrap();
            assert!(row.best_ratio.is_finite() && row.best_ratio > 0.0);
            assert!(row.b0 > 0.0 && row.below == (row.best_ratio < row.b0));
        }
    }

    #[test]
    fn csv_headers() {
        let sol = sphere_run(20);
        let mut a = Vec::new();
        sol.write_solution_csv(&mut a).unwrap();
        let a = String::from_utf8(a).unwrap();
        assert!(a.starts_with("t,r,u\n"));
        assert_eq!(a.lines().count(), 1 + 20 * sol.times.len());
        let mut b = Vec::new();
        sol.write_mass_csv(&mut b).unwrap();
        assert!(String::from_utf8(b).unwrap().starts_with("t,M\n"));
    }

    #[test]
    fn rejects_non_radial_data() {
        let m = ConformalMetric::sphere_at(1.0, [1.0, 0.0]);
        assert!(matches!(solve_radial(&m, 0.1, &RicciOptions::default()), Err(Error::Config(_))));
    }
}
