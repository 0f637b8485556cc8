//! Adaptive Gauss–Kronrod integration on finite intervals and on `(0, ∞)`,
//! plus a central-difference differentiator with one Richardson level.
//!
//! The finite-interval integrator is a global adaptive scheme: every panel is
//! evaluated with the 7-point Gauss / 15-point Kronrod pair, and the panel with
//! the largest error estimate is bisected until the summed estimate meets
//! `max(abs_tol, rel_tol·|value|)` or the subdivision budget runs out.
//!
//! Half-line integrals are mapped to the real line through `t = e^u`, which
//! suits integrands that spread over several orders of magnitude.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{domain, Error, Result};

/// Gauss–Kronrod 15-point abscissae (non-negative half, descending).
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss 7-point weights, attached to `XGK[1]`, `XGK[3]`, `XGK[5]`, `XGK[7]`.
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Largest |u| used by the log substitution; `e^u` stays finite below 709.
const LOG_LIMIT: f64 = 700.0;

/// Tolerances and budget for the adaptive integrators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_subdivisions: 10_000,
        }
    }
}

impl QuadratureSpec {
    pub fn new(rel_tol: f64, abs_tol: f64, max_subdivisions: usize) -> Result<Self> {
        let spec = Self {
            rel_tol,
            abs_tol,
            max_subdivisions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !self.rel_tol.is_finite() {
            return Err(domain(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol > 0.0) || !self.abs_tol.is_finite() {
            return Err(domain(format!(
                "abs_tol must be positive, got {}",
                self.abs_tol
            )));
        }
        if self.max_subdivisions < 1 {
            return Err(domain("max_subdivisions must be at least 1"));
        }
        Ok(())
    }

    /// Error target for an integral of magnitude `value`.
    pub fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl QuadratureResult {
    fn zero() -> Self {
        Self {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 0,
            converged: true,
        }
    }

    /// The value if the integration converged, `NonConvergence` otherwise.
    pub fn into_value(self) -> Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::NonConvergence {
                value: self.value,
                error_estimate: self.error_estimate,
            })
        }
    }

    fn combine(parts: &[QuadratureResult], spec: &QuadratureSpec) -> Self {
        let value: f64 = parts.iter().map(|p| p.value).sum();
        let error_estimate: f64 = parts.iter().map(|p| p.error_estimate).sum();
        let evaluations = parts.iter().map(|p| p.evaluations).sum();
        let converged = parts.iter().all(|p| p.converged) || error_estimate <= spec.target(value);
        Self {
            value,
            error_estimate,
            evaluations,
            converged,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn checked<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteEvaluation { x, value: v })
    }
}

/// One 15-point Kronrod panel with the QUADPACK error heuristic.
fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Result<Panel> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = checked(f, center)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_sum = kronrod.abs();
    let mut f1 = [0.0; 7];
    let mut f2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let a = checked(f, center - dx)?;
        let b = checked(f, center + dx)?;
        f1[j] = a;
        f2[j] = b;
        kronrod += WGK[j] * (a + b);
        abs_sum += WGK[j] * (a.abs() + b.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (a + b);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((f1[j] - mean).abs() + (f2[j] - mean).abs());
    }
    let value = kronrod * half;
    let res_abs = abs_sum * half.abs();
    let res_asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Panel {
        lo,
        hi,
        value,
        error,
    })
}

/// Adaptive integration of `f` over `[lo, hi]`.
///
/// Returns a result with `converged = false` when the subdivision budget is
/// exhausted; the value is then the best available estimate.
pub fn integrate_finite<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<QuadratureResult> {
    integrate_finite_with_breakpoints(f, lo, hi, &[], spec)
}

/// As [`integrate_finite`], with the initial panels split at `breakpoints`.
///
/// Breakpoints outside `(lo, hi)` are ignored. Oscillatory integrands should
/// be seeded here with roughly one breakpoint per half period.
pub fn integrate_finite_with_breakpoints<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    spec: &QuadratureSpec,
) -> Result<QuadratureResult> {
    spec.validate()?;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(domain(format!(
            "integration bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let mut edges: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| b.is_finite() && *b > lo && *b < hi)
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    edges.insert(0, lo);
    edges.push(hi);

    let mut heap = BinaryHeap::with_capacity(edges.len() * 2);
    let mut value = 0.0;
    let mut error = 0.0;
    let mut evaluations = 0;
    for w in edges.windows(2) {
        let p = gk15(&f, w[0], w[1])?;
        evaluations += 15;
        value += p.value;
        error += p.error;
        heap.push(p);
    }

    // Panels that can no longer be split still count toward the totals.
    let mut frozen_value = 0.0;
    let mut frozen_error = 0.0;
    let mut subdivisions = 0;
    while error > spec.target(value) && subdivisions < spec.max_subdivisions {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(mid > worst.lo && mid < worst.hi)
            || (worst.hi - worst.lo) <= 64.0 * f64::EPSILON * mid.abs().max(f64::MIN_POSITIVE)
        {
            frozen_value += worst.value;
            frozen_error += worst.error;
            continue;
        }
        let left = gk15(&f, worst.lo, mid)?;
        let right = gk15(&f, mid, worst.hi)?;
        evaluations += 30;
        subdivisions += 1;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if subdivisions % 64 == 0 {
            // re-sum to keep the running totals free of drift
            value = heap.iter().map(|p| p.value).sum::<f64>() + frozen_value;
            error = heap.iter().map(|p| p.error).sum::<f64>() + frozen_error;
        }
    }
    value = heap.iter().map(|p| p.value).sum::<f64>() + frozen_value;
    error = heap.iter().map(|p| p.error).sum::<f64>() + frozen_error;
    Ok(QuadratureResult {
        value,
        error_estimate: error,
        evaluations,
        converged: error <= spec.target(value),
    })
}

/// Evenly spaced interior breakpoints covering `[lo, hi]` at roughly `spacing`.
pub fn seed_breakpoints(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
    if !(hi > lo) || !(spacing > 0.0) {
        return Vec::new();
    }
    let n = ((hi - lo) / spacing).ceil().min(1e6) as usize;
    (1..n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect()
}

/// Integrates `h(u)` outward from `start` (towards `+∞` when `rightward`)
/// in panels of doubling width until a panel contributes less than a tenth
/// of the error target relative to `scale`.
fn integrate_log_tail<H: Fn(f64) -> f64>(
    h: &H,
    start: f64,
    rightward: bool,
    scale: f64,
    spec: &QuadratureSpec,
) -> Result<QuadratureResult> {
    let mut parts = Vec::new();
    let mut total = scale;
    let mut width = 1.0;
    let mut edge = start;
    loop {
        let next = if rightward {
            (edge + width).min(LOG_LIMIT)
        } else {
            (edge - width).max(-LOG_LIMIT)
        };
        if next == edge {
            break;
        }
        let (lo, hi) = if rightward {
            (edge, next)
        } else {
            (next, edge)
        };
        let r = integrate_finite(h, lo, hi, spec)?;
        total += r.value;
        let small = r.value.abs() + r.error_estimate <= 0.1 * spec.target(total);
        parts.push(r);
        edge = next;
        width *= 2.0;
        if small {
            break;
        }
    }
    Ok(QuadratureResult::combine(&parts, spec))
}

/// Integral of `f` over `(0, ∞)` by the substitution `t = e^u`.
///
/// The bulk of the mass is located with a coarse scan of `u ∈ [-50, 50]`;
/// tails are then extended until they fall below the error target.
pub fn integrate_halfline<F: Fn(f64) -> f64>(
    f: F,
    spec: &QuadratureSpec,
) -> Result<QuadratureResult> {
    spec.validate()?;
    let h = |u: f64| {
        let t = u.exp();
        f(t) * t
    };
    const SCAN: f64 = 50.0;
    const STEP: f64 = 0.25;
    let n = (2.0 * SCAN / STEP) as usize;
    let mut peak = 0.0_f64;
    let mut values = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let u = -SCAN + STEP * i as f64;
        let v = h(u);
        if !v.is_finite() {
            return Err(Error::NonFiniteEvaluation {
                x: u.exp(),
                value: v,
            });
        }
        peak = peak.max(v.abs());
        values.push((u, v));
    }
    if peak == 0.0 {
        return Ok(QuadratureResult {
            evaluations: n + 1,
            ..QuadratureResult::zero()
        });
    }
    let floor = peak * 1e-30;
    let first = values
        .iter()
        .find(|(_, v)| v.abs() > floor)
        .map(|p| p.0)
        .unwrap();
    let last = values
        .iter()
        .rev()
        .find(|(_, v)| v.abs() > floor)
        .map(|p| p.0)
        .unwrap();
    let lo = first - STEP;
    let hi = last + STEP;
    let seeds = seed_breakpoints(lo, hi, 1.0);
    let core = integrate_finite_with_breakpoints(h, lo, hi, &seeds, spec)?;
    let left = integrate_log_tail(&h, lo, false, core.value, spec)?;
    let right = integrate_log_tail(&h, hi, true, core.value, spec)?;
    let mut out = QuadratureResult::combine(&[core, left, right], spec);
    out.evaluations += n + 1;
    Ok(out)
}

/// Integral of `f` over `(0, ∞)` with the finite stretch between the smallest
/// and largest breakpoint integrated directly in `t` and seeded at every
/// breakpoint. The two tails use the log substitution.
pub fn integrate_halfline_with_breakpoints<F: Fn(f64) -> f64>(
    f: F,
    breakpoints: &[f64],
    spec: &QuadratureSpec,
) -> Result<QuadratureResult> {
    let mut bps: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| b.is_finite() && *b > 0.0)
        .collect();
    if bps.len() < 2 {
        return integrate_halfline(f, spec);
    }
    spec.validate()?;
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let (lo, hi) = (bps[0], bps[bps.len() - 1]);
    let middle = integrate_finite_with_breakpoints(&f, lo, hi, &bps, spec)?;
    let h = |u: f64| {
        let t = u.exp();
        f(t) * t
    };
    let left = integrate_log_tail(&h, lo.ln(), false, middle.value, spec)?;
    let right = integrate_log_tail(&h, hi.ln(), true, middle.value + left.value, spec)?;
    Ok(QuadratureResult::combine(&[middle, left, right], spec))
}

/// Central-difference derivative with one level of Richardson extrapolation.
///
/// The step is `min(scale_hint, max(|x|, 1)·ε^{1/3})`; pass a `scale_hint`
/// below the smallest feature (e.g. an oscillation period) that must be
/// resolved.
pub fn differentiate<F: Fn(f64) -> f64>(f: F, x: f64, scale_hint: f64) -> Result<f64> {
    try_differentiate(|t| Ok(f(t)), x, scale_hint)
}

/// Fallible form of [`differentiate`] for functions that are themselves
/// computed numerically.
pub fn try_differentiate<F: Fn(f64) -> Result<f64>>(f: F, x: f64, scale_hint: f64) -> Result<f64> {
    if !(scale_hint > 0.0) {
        return Err(domain(format!(
            "scale_hint must be positive, got {scale_hint}"
        )));
    }
    if !x.is_finite() {
        return Err(domain(format!("cannot differentiate at x = {x}")));
    }
    let h = scale_hint.min(x.abs().max(1.0) * f64::EPSILON.cbrt());
    let central = |step: f64| -> Result<f64> {
        let xp = x + step;
        let xm = x - step;
        let fp = f(xp)?;
        let fm = f(xm)?;
        for (at, v) in [(xp, fp), (xm, fm)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteEvaluation { x: at, value: v });
            }
        }
        Ok((fp - fm) / (xp - xm))
    };
    let coarse = central(h)?;
    let fine = central(0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn kronrod_weights_sum_to_two() {
        let k: f64 = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
        let g: f64 = 2.0 * WG[..3].iter().sum::<f64>() + WG[3];
        assert!((k - 2.0).abs() < 1e-15);
        assert!((g - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_and_linear() {
        let r = integrate_finite(|_| 1.0, 0.0, 1.0, &spec()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12 && r.converged);
        let r = integrate_finite(|x| x, 0.0, 2.0, &spec()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn damped_oscillation_matches_antiderivative() {
        // ∫_0^10 e^{-x} sin(50x) dx = (50 - e^{-10}(50 cos 500 + sin 500)) / 2501
        let exact =
            (50.0 - (-10.0_f64).exp() * (50.0 * 500.0_f64.cos() + 500.0_f64.sin())) / 2501.0;
        let r = integrate_finite(|x| (-x).exp() * (50.0 * x).sin(), 0.0, 10.0, &spec()).unwrap();
        assert!(r.converged);
        assert!(
            ((r.value - exact) / exact).abs() < 1e-8,
            "{} vs {exact}",
            r.value
        );
    }

    #[test]
    fn reversed_bounds_rejected() {
        assert!(matches!(
            integrate_finite(|x| x, 1.0, 0.0, &spec()),
            Err(Error::Domain(_))
        ));
        assert!(integrate_finite(|x| x, 1.0, 1.0, &spec()).is_err());
    }

    #[test]
    fn non_finite_integrand_reported() {
        let r = integrate_finite(|x| 1.0 / (x - 0.5), 0.0, 1.0, &spec());
        assert!(matches!(r, Err(Error::NonFiniteEvaluation { .. })));
    }

    #[test]
    fn budget_exhaustion_reports_non_convergence() {
        let tight = QuadratureSpec::new(1e-14, 1e-300, 1).unwrap();
        let r = integrate_finite(|x| (1.0 / (x + 1e-3)).sin(), 0.0, 1.0, &tight).unwrap();
        assert!(!r.converged);
        assert!(r.into_value().is_err());
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(QuadratureSpec::new(0.0, 1e-12, 10).is_err());
        assert!(QuadratureSpec::new(1e-9, -1.0, 10).is_err());
        assert!(QuadratureSpec::new(1e-9, 1e-12, 0).is_err());
    }

    #[test]
    fn halfline_masses() {
        let r = integrate_halfline(|t| (-t).exp(), &spec()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9, "{}", r.value);
        let r = integrate_halfline(|t| t * (-t).exp(), &spec()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9, "{}", r.value);
        let lognormal = |t: f64| (-(t.ln().powi(2)) / 2.0).exp() / (t * (2.0 * PI).sqrt());
        let r = integrate_halfline(lognormal, &spec()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn halfline_with_breakpoints_matches_plain() {
        let f = |t: f64| t * t * (-t).exp() / 2.0;
        let r = integrate_halfline_with_breakpoints(f, &[0.5, 1.0, 3.0, 7.0], &spec()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn derivative_examples() {
        assert!((differentiate(|x| x * x, 3.0, 1.0).unwrap() - 6.0).abs() < 1e-7);
        let d = differentiate(|x| (-x).exp(), 1.0, 1.0).unwrap();
        assert!((d + (-1.0_f64).exp()).abs() < 1e-7);
        let d = differentiate(|x| (100.0 * x).sin(), 0.0, PI / 2000.0).unwrap();
        assert!(((d - 100.0) / 100.0).abs() < 1e-3);
    }

    #[test]
    fn derivative_needs_positive_hint() {
        assert!(differentiate(|x| x, 1.0, 0.0).is_err());
    }
}
