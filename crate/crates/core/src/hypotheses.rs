//! Decay conditions on the radial envelopes, their explicit constants for
//! cusp-type envelopes, and the admissibility threshold `b₀`.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI, SQRT_2};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{envelope_tail_integral, EnvelopeProfile, RadialEnvelope};

pub const SCAN_BASE: f64 = 2.0;
pub const SCAN_RATIO: f64 = 1.05;
const SCAN_LIMIT: f64 = 1e300;
/// Margins within this fraction of the compared magnitudes count as zero.
const MARGIN_ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop2Constants {
    pub c0: f64,
    pub delta: f64,
    pub b1: f64,
    pub b2: f64,
    pub r0: f64,
}

/// `log r / log(c₀ r) ≥ 1/√2`
pub fn log_ratio_condition(c0: f64, r: f64) -> bool {
    r.ln() / (c0 * r).ln() >= 1.0 / SQRT_2
}

/// `(log r) · log(log(c₀ r) / log r)`, which tends to `log c₀` as `r → ∞`.
pub fn spread_quantity(c0: f64, r: f64) -> f64 {
    let l = r.ln();
    l * ((c0 * r).ln() / l).ln()
}

/// `spread_quantity > π √(C₂/C₁)`
pub fn spread_condition(c0: f64, root_ratio: f64, r: f64) -> bool {
    spread_quantity(c0, r) > PI * root_ratio
}

/// `k`-th radius of the geometric scan.
pub fn scan_radius(k: i32) -> f64 {
    SCAN_BASE * SCAN_RATIO.powi(k)
}

/// Closed-form constants for cusp envelopes `C_i/(ρ² log² ρ)` and the first
/// scan radius at which both radius conditions hold.
pub fn prop2_constants(c1: f64, c2: f64) -> Result<Prop2Constants> {
    prop2_constants_above(c1, c2, SCAN_BASE)
}

/// As [`prop2_constants`], with `r₀` additionally raised to at least `r_min`.
pub fn prop2_constants_above(c1: f64, c2: f64, r_min: f64) -> Result<Prop2Constants> {
    if !(c1 > 0.0) || !(c2 >= c1) || !c2.is_finite() {
        return Err(Error::DomainError(format!("need C2 >= C1 > 0, got C1 = {c1}, C2 = {c2}")));
    }
    let root_ratio = (c2 / c1).sqrt();
    let c0 = 2.0 * (PI * root_ratio).exp();
    let delta = c1 / (2.0 * c0 * c0 * c2);
    let b1 = c1.sqrt() / (SQRT_2 * c0 * c2);
    let b2 = c1.sqrt() * LN_2;
    let mut k = 0;
    let r0 = loop {
        let r = scan_radius(k);
        if r > SCAN_LIMIT || !r.is_finite() {
            return Err(Error::ScanExhausted(SCAN_LIMIT));
        }
        if log_ratio_condition(c0, r) && spread_condition(c0, root_ratio, r) {
            break r;
        }
        k += 1;
    };
    Ok(Prop2Constants { c0, delta, b1, b2, r0: r0.max(r_min) })
}

/// `min(b₁, 4 b₂ / A)`.
pub fn threshold_b0(b1: f64, b2: f64, total_area: f64) -> f64 {
    b1.min(4.0 * b2 / total_area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub pass: bool,
    pub worst_radius: f64,
    /// `None` when the margin could not be evaluated.
    pub worst_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub r: f64,
    pub cond2: f64,
    pub cond3: Option<f64>,
    pub cond4: f64,
    pub cond5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub c0: f64,
    pub delta: f64,
    pub b1: f64,
    pub b2: f64,
    pub r0: f64,
    /// Present once a total area is attached.
    pub b0: Option<f64>,
    pub total_area: Option<f64>,
    pub per_condition: BTreeMap<String, ConditionSummary>,
    pub grid: Vec<f64>,
    pub scan_base: f64,
    pub scan_ratio: f64,
    #[serde(skip)]
    pub margins: Vec<MarginRow>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.per_condition.values().all(|c| c.pass)
    }

    pub fn with_area(mut self, total_area: f64) -> Self {
        self.total_area = Some(total_area);
        self.b0 = Some(threshold_b0(self.b1, self.b2, total_area));
        self
    }

    pub fn write_margins_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "r,cond2,cond3,cond4,cond5")?;
        for m in &self.margins {
            let c3 = m.cond3.map_or_else(|| "nan".to_string(), |v| format!("{v:.16e}"));
            writeln!(w, "{:.16e},{:.16e},{},{:.16e},{:.16e}", m.r, m.cond2, c3, m.cond4, m.cond5)?;
        }
        Ok(())
    }
}

fn rounded(lhs: f64, rhs: f64) -> f64 {
    let m = lhs - rhs;
    if m.abs() <= MARGIN_ROUNDING * lhs.abs().max(rhs.abs()) { 0.0 } else { m }
}

/// Geometric grid `r₀ · 2^{k/4}` up to `span · r₀`, both ends included.
pub fn default_grid(r0: f64, span: f64) -> Vec<f64> {
    let mut g = Vec::new();
    let mut k = 0;
    loop {
        let r = r0 * 2f64.powf(k as f64 / 4.0);
        if r >= span * r0 {
            break;
        }
        g.push(r);
        k += 1;
    }
    g.push(span * r0);
    g
}

/// Evaluates the four condition margins at every grid radius.
pub fn check_conditions(
    env: &RadialEnvelope,
    c0: f64,
    b1: f64,
    b2: f64,
    delta: f64,
    grid: &[f64],
) -> Result<HypothesisReport> {
    if !(c0 > 1.0 && b1 > 0.0 && b2 > 0.0 && delta > 0.0) {
        return Err(Error::DomainError("need c0 > 1 and b1, b2, delta > 0".into()));
    }
    if grid.is_empty() {
        return Err(Error::DomainError("empty radius grid".into()));
    }
    if let Some(r) = grid.iter().find(|&&r| !(r >= env.r0) || !r.is_finite()) {
        return Err(Error::DomainError(format!("grid radius {r} below r0 = {}", env.r0)));
    }
    let lower = &env.lower;
    let upper = &env.upper;
    let rows: Vec<(MarginRow, Option<String>)> = grid
        .par_iter()
        .map(|&r| {
            let cond2 = rounded(lower.sqrt_integral(r, c0 * r), PI * r * upper.eval(r).sqrt());
            let (cond3, reason) = match envelope_tail_integral(env, r) {
                Ok(tail) => (Some(rounded(r * lower.eval(c0 * r).sqrt(), b1 * tail)), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let cond4 = rounded(lower.sqrt_integral(r, r * r), b2);
            let cond5 = rounded(lower.eval(c0 * r), delta * upper.eval(r));
            (MarginRow { r, cond2, cond3, cond4, cond5 }, reason)
        })
        .collect();

    let mut per_condition = BTreeMap::new();
    let pick = |f: &dyn Fn(&MarginRow) -> Option<f64>| -> ConditionSummary {
        let mut worst: Option<(f64, f64)> = None;
        let mut missing: Option<f64> = None;
        for (row, _) in &rows {
            match f(row) {
                Some(m) if m.is_nan() => missing = missing.or(Some(row.r)),
                Some(m) => {
                    if worst.is_none_or(|(_, w)| m < w) {
                        worst = Some((row.r, m));
                    }
                }
                None => missing = missing.or(Some(row.r)),
            }
        }
        match (missing, worst) {
            (Some(r), _) => ConditionSummary { pass: false, worst_radius: r, worst_margin: None, reason: None },
            (None, Some((r, m))) => {
                ConditionSummary { pass: m >= 0.0, worst_radius: r, worst_margin: Some(m), reason: None }
            }
            (None, None) => unreachable!("grid is non-empty"),
        }
    };
    per_condition.insert("cond2".to_string(), pick(&|m| Some(m.cond2)));
    let mut c3 = pick(&|m| m.cond3);
    c3.reason = rows.iter().find_map(|(_, reason)| reason.clone());
    per_condition.insert("cond3".to_string(), c3);
    per_condition.insert("cond4".to_string(), pick(&|m| Some(m.cond4)));
    per_condition.insert("cond5".to_string(), pick(&|m| Some(m.cond5)));

    Ok(HypothesisReport {
        c0,
        delta,
        b1,
        b2,
        r0: env.r0,
        b0: None,
        total_area: None,
        per_condition,
        grid: grid.to_vec(),
        scan_base: SCAN_BASE,
        scan_ratio: SCAN_RATIO,
        margins: rows.into_iter().map(|(m, _)| m).collect(),
    })
}

/// Constants for cusp envelopes `C₁`, `C₂` checked on `[r₀, 10⁶ r₀]`.
pub fn cusp_report(c1: f64, c2: f64) -> Result<HypothesisReport> {
    let k = prop2_constants(c1, c2)?;
    let env = RadialEnvelope::cusp(c1, c2, k.r0)?;
    check_conditions(&env, k.c0, k.b1, k.b2, k.delta, &default_grid(k.r0, 1e6))
}

/// `(C₁, C₂)` of an envelope made of two cusp profiles.
pub fn cusp_coefficients(env: &RadialEnvelope) -> Result<(f64, f64)> {
    match (&env.lower, &env.upper) {
        (EnvelopeProfile::Cusp { c: c1 }, EnvelopeProfile::Cusp { c: c2 }) => Ok((*c1, *c2)),
        _ => Err(Error::DomainError("closed-form constants need cusp envelopes".into())),
    }
}

/// As [`cusp_report`] for the coefficients of `env`, with `r₀` kept at or
/// above the radius from which the envelope holds.
pub fn envelope_report(env: &RadialEnvelope) -> Result<HypothesisReport> {
    let (c1, c2) = cusp_coefficients(env)?;
    let k = prop2_constants_above(c1, c2, env.r0)?;
    let env = RadialEnvelope::cusp(c1, c2, k.r0)?;
    check_conditions(&env, k.c0, k.b1, k.b2, k.delta, &default_grid(k.r0, 1e6))
}
