//! Gauss–Legendre rules and the improper-integral helpers built on them.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 64;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    fn compute(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussRule { nodes, weights }
    }

    /// Nodes and weights mapped onto [0, 1].
    pub fn unit(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (0.5 * (x + 1.0), 0.5 * w))
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached `n`-point rule, `1 <= n <= 64`.
pub fn gauss_legendre(n: usize) -> &'static GaussRule {
    static RULES: [OnceLock<GaussRule>; MAX_ORDER + 1] = [const { OnceLock::new() }; MAX_ORDER + 1];
    assert!((1..=MAX_ORDER).contains(&n), "unsupported Gauss rule order {n}");
    RULES[n].get_or_init(|| {
        if n == 1 {
            GaussRule { nodes: vec![0.0], weights: vec![2.0] }
        } else {
            GaussRule::compute(n)
        }
    })
}

/// Composite 16-point Gauss–Legendre over `[a, b]` split into `panels` equal panels.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let rule = gauss_legendre(16);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mut panel = 0.0;
        for (x, w) in rule.unit() {
            panel += w * f(lo + x * h);
        }
        total += panel * h;
    }
    total
}

/// `∫_a^b f(ρ) dρ` for `1 < a < b`, integrated in `s = log ρ` with panels of width at most `max_ds`.
pub fn integrate_log<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, max_ds: f64) -> f64 {
    let (sa, sb) = (a.ln(), b.ln());
    let panels = (((sb - sa) / max_ds).ceil() as usize).clamp(1, 20_000);
    integrate(|s| {
        let rho = s.exp();
        rho * f(rho)
    }, sa, sb, panels)
}

/// Largest `log ρ` at which `ρ²` is still finite.
const MAX_LOG_RADIUS: f64 = 350.0;

/// `∫_r^∞ ρ λ(ρ) dρ` by the substitution `s = log ρ`, integrating over doubling
/// windows in `s` and Aitken-extrapolating the partial sums.
///
/// Fails with [`Error::DivergentTail`] when successive window contributions
/// stop shrinking geometrically.
pub fn tail_moment<F: Fn(f64) -> f64>(lambda: F, r: f64, rel_tol: f64) -> Result<f64> {
    if !(r > 1.0) {
        return Err(Error::DomainError(format!("tail integral needs r > 1, got {r}")));
    }
    let g = |s: f64| {
        let rho = s.exp();
        rho * rho * lambda(rho)
    };
    let s0 = r.ln();
    let mut lo = s0;
    let mut hi = s0.max(1.0) * 2.0;
    let mut partial = 0.0;
    let mut contributions: Vec<f64> = Vec::new();
    let mut estimates: Vec<f64> = Vec::new();
    while hi <= MAX_LOG_RADIUS {
        let piece = integrate(&g, lo, hi, 16);
        if !piece.is_finite() {
            return Err(Error::DivergentTail(format!("non-finite integrand beyond log r = {lo}")));
        }
        partial += piece;
        contributions.push(piece);
        let n = contributions.len();
        if partial != 0.0 && piece.abs() <= 1e-16 * partial.abs() {
            return Ok(partial);
        }
        if n >= 3 {
            let (d0, d1) = (contributions[n - 2], contributions[n - 1]);
            let ratio = d1 / d0;
            if ratio >= 0.95 || ratio.is_nan() {
                return Err(Error::DivergentTail(format!(
                    "window contributions ratio {ratio:.3} at log r = {hi}"
                )));
            }
            let est = partial + d1 * ratio / (1.0 - ratio);
            if let Some(&prev) = estimates.last() {
                if (est - prev).abs() <= rel_tol * est.abs() {
                    return Ok(est);
                }
            }
            estimates.push(est);
        }
        lo = hi;
        hi *= 2.0;
    }
    match estimates.last() {
        Some(&est) => {
            let prev = estimates[estimates.len().saturating_sub(2)];
            if (est - prev).abs() <= 1e3 * rel_tol * est.abs() {
                Ok(est)
            } else {
                Err(Error::DivergentTail("extrapolation did not settle".into()))
            }
        }
        None => Err(Error::DivergentTail("integration range exhausted".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for n in [2, 4, 8, 16, 32] {
            let rule = gauss_legendre(n);
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 2.0).abs() < 1e-13, "n = {n}");
            // degree 2n - 1 monomial has zero integral on [-1, 1]; degree 2n - 2 integrates to 2/(2n-1)
            let deg = 2 * n - 2;
            let q: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((q - 2.0 / (deg as f64 + 1.0)).abs() < 1e-12, "n = {n}: {q}");
        }
    }

    #[test]
    fn cusp_tail_moment_matches_antiderivative() {
        let lam = |r: f64| 1.0 / (r * r.ln()).powi(2);
        let v = tail_moment(lam, std::f64::consts::E, 1e-10).unwrap();
        assert!((v - 1.0).abs() < 1e-8, "{v}");
        let v = tail_moment(lam, std::f64::consts::E.powi(2), 1e-10).unwrap();
        assert!((v - 0.5).abs() < 1e-8, "{v}");
    }

    #[test]
    fn fast_tails_converge_and_slow_ones_diverge() {
        let v = tail_moment(|r| r.powi(-4), 2.0, 1e-10).unwrap();
        assert!((v - 0.125).abs() < 1e-10, "{v}");
        assert!(matches!(tail_moment(|r| 1.0 / r, 2.0, 1e-10), Err(Error::DivergentTail(_))));
        assert!(matches!(
            tail_moment(|r| 1.0 / (r * r * r.ln()), 3.0, 1e-10),
            Err(Error::DivergentTail(_))
        ));
    }
}
