//! Density of the product of two independent positive variables (Mellin
//! convolution) and Lin's function of the product.
//!
//! With `t = e^u` the product density is
//!
//! ```text
//! g(x) = ∫ f1(x/t) f2(t) dt/t = ∫ exp(h(u)) du,   h(u) = ln f1(x e^{-u}) + ln f2(e^u)
//! ```
//!
//! and `h′(u) = L_{f1}(x e^{-u}) − L_{f2}(e^u)`. When both factors satisfy Lin's
//! condition `h′` is strictly decreasing, so `h` is concave with a single mode
//! that bisection finds exactly. All integrals are taken relative to
//! `exp(h(mode))`, which keeps `g` and `L_g` usable far into the tails where
//! `g` itself underflows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::density::{Density, DensityModel};
use crate::error::{domain, Result};
use crate::format_value;
use crate::lin::{check_lin_values, lin_function, LinConditionReport};
use crate::quadrature::{integrate_finite_with_breakpoints, QuadratureSpec};

/// Drop in `h` (natural log units) beyond which the integrand is neglected.
const LOG_DROP: f64 = 60.0;
const LOG_LIMIT: f64 = 700.0;

/// Slack allowed in the lower-bound verdict.
pub const BOUND_SLACK: f64 = 1e-6;

/// Tolerances used for product integrals unless overridden.
pub fn default_product_spec() -> QuadratureSpec {
    QuadratureSpec {
        rel_tol: 1e-12,
        abs_tol: 1e-15,
        max_subdivisions: 10_000,
    }
}

/// The product `ξ1·ξ2` of independent variables with densities `f1`, `f2`.
#[derive(Debug, Clone)]
pub struct ProductDensity {
    pub f1: DensityModel,
    pub f2: DensityModel,
    pub spec: QuadratureSpec,
}

/// The three Mellin integrals at one `x`, all scaled by `exp(-log_scale)`.
#[derive(Debug, Clone, Copy)]
struct MellinIntegrals {
    log_scale: f64,
    mass: f64,
    weighted_by_l2: f64,
    weighted_by_l1: f64,
}

fn require_positive_x(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("product density needs x > 0, got {x}")))
    }
}

impl ProductDensity {
    pub fn new(f1: DensityModel, f2: DensityModel) -> Self {
        Self {
            f1,
            f2,
            spec: default_product_spec(),
        }
    }

    pub fn with_spec(mut self, spec: QuadratureSpec) -> Self {
        self.spec = spec;
        self
    }

    /// The same product with the factors exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            f1: self.f2.clone(),
            f2: self.f1.clone(),
            spec: self.spec,
        }
    }

    fn log_integrand(&self, x: f64, u: f64) -> f64 {
        self.f1.ln_pdf_unchecked(x * (-u).exp()) + self.f2.ln_pdf_unchecked(u.exp())
    }

    fn log_slope(&self, x: f64, u: f64) -> f64 {
        self.f1.lin_unchecked(x * (-u).exp()) - self.f2.lin_unchecked(u.exp())
    }

    /// Mode of the log-integrand by bisection on its decreasing slope.
    fn mode(&self, x: f64) -> f64 {
        let (mut lo, mut hi) = (-LOG_LIMIT, LOG_LIMIT);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let s = self.log_slope(x, mid);
            if s > 0.0 {
                lo = mid;
            } else if s < 0.0 || s.is_nan() {
                hi = mid;
            } else {
                return mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn integrals(&self, x: f64) -> Result<MellinIntegrals> {
        self.mellin(x, true)
    }

    fn mellin(&self, x: f64, with_lin: bool) -> Result<MellinIntegrals> {
        require_positive_x(x)?;
        self.spec.validate()?;
        let mode = self.mode(x);
        let peak = self.log_integrand(x, mode);
        if !peak.is_finite() {
            return Err(domain(format!(
                "product integrand has no finite mode at x = {x}"
            )));
        }
        // curvature width from the slope of h around the mode
        let delta = 1e-4;
        let curvature =
            (self.log_slope(x, mode - delta) - self.log_slope(x, mode + delta)) / (2.0 * delta);
        let width = if curvature > 0.0 && curvature.is_finite() {
            (1.0 / curvature.sqrt()).clamp(1e-6, 1.0)
        } else {
            1.0
        };
        let dropped = |u: f64| {
            let v = self.log_integrand(x, u) - peak;
            !(v > -LOG_DROP)
        };
        let mut breakpoints = vec![mode];
        let mut extent = |dir: f64| -> f64 {
            let mut step = width;
            loop {
                let u = (mode + dir * step).clamp(-LOG_LIMIT, LOG_LIMIT);
                breakpoints.push(u);
                if dropped(u) || u.abs() >= LOG_LIMIT {
                    return u;
                }
                step *= 2.0;
            }
        };
        let lo = extent(-1.0);
        let hi = extent(1.0);

        let weight = |u: f64| {
            let w = (self.log_integrand(x, u) - peak).exp();
            if w.is_nan() {
                0.0
            } else {
                w
            }
        };
        let weighted = |u: f64, lin: f64| {
            let w = weight(u);
            if w == 0.0 {
                0.0
            } else {
                w * lin
            }
        };
        let mass = integrate_finite_with_breakpoints(weight, lo, hi, &breakpoints, &self.spec)?
            .into_value()?;
        if !with_lin {
            return Ok(MellinIntegrals {
                log_scale: peak,
                mass,
                weighted_by_l2: f64::NAN,
                weighted_by_l1: f64::NAN,
            });
        }
        // The weighted integrands change sign where the Lin function does, so
        // their error is judged against mass · |L| (equal for both factors at
        // the mode), not against the possibly cancelled result.
        let lin_scale = self.f2.lin_unchecked(mode.exp()).abs().max(1.0);
        let spec = QuadratureSpec {
            abs_tol: self.spec.abs_tol.max(self.spec.rel_tol * mass * lin_scale),
            ..self.spec
        };
        let weighted_by_l2 = integrate_finite_with_breakpoints(
            |u| weighted(u, self.f2.lin_unchecked(u.exp())),
            lo,
            hi,
            &breakpoints,
            &spec,
        )?
        .into_value()?;
        let weighted_by_l1 = integrate_finite_with_breakpoints(
            |u| weighted(u, self.f1.lin_unchecked(x * (-u).exp())),
            lo,
            hi,
            &breakpoints,
            &spec,
        )?
        .into_value()?;
        Ok(MellinIntegrals {
            log_scale: peak,
            mass,
            weighted_by_l2,
            weighted_by_l1,
        })
    }

    /// `ln g(x)`.
    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        let m = self.mellin(x, false)?;
        Ok(m.log_scale + m.mass.ln())
    }

    /// `g(x) = ∫ f1(t) f2(x/t) dt/t`.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        Ok(self.ln_pdf(x)?.exp())
    }

    /// `(1/g) ∫ f1(x/t) f2(t) L_{f2}(t) dt/t`.
    pub fn lin_form_a(&self, x: f64) -> Result<f64> {
        let m = self.integrals(x)?;
        Ok(m.weighted_by_l2 / m.mass)
    }

    /// `(1/g) ∫ f1(x/t) f2(t) L_{f1}(x/t) dt/t`.
    pub fn lin_form_b(&self, x: f64) -> Result<f64> {
        let m = self.integrals(x)?;
        Ok(m.weighted_by_l1 / m.mass)
    }

    /// One CSV row: density, both Lin forms and the lower bound.
    pub fn row(&self, x: f64) -> Result<ProductRow> {
        let m = self.integrals(x)?;
        let lin_a = m.weighted_by_l2 / m.mass;
        let bound = bound_from(self, x, lin_a)?;
        Ok(ProductRow {
            x,
            g: (m.log_scale + m.mass.ln()).exp(),
            lin_a,
            lin_b: m.weighted_by_l1 / m.mass,
            bound_rhs: bound.rhs,
            holds: bound.holds,
        })
    }
}

impl Density for ProductDensity {
    fn ln_pdf(&self, x: f64) -> Result<f64> {
        ProductDensity::ln_pdf(self, x)
    }
}

pub fn product_pdf(pd: &ProductDensity, x: f64) -> Result<f64> {
    pd.pdf(x)
}

pub fn lin_of_product_form_a(pd: &ProductDensity, x: f64) -> Result<f64> {
    pd.lin_form_a(x)
}

pub fn lin_of_product_form_b(pd: &ProductDensity, x: f64) -> Result<f64> {
    pd.lin_form_b(x)
}

/// Lin's function of the product by finite differences of `ln g`.
pub fn lin_of_product_direct(pd: &ProductDensity, x: f64) -> Result<f64> {
    lin_function(pd, x, f64::INFINITY)
}

/// Grid check of Lin's condition for the product, with `L_g` from the
/// first integral form.
pub fn product_monotonicity_scan(
    pd: &ProductDensity,
    x0: f64,
    x_max: f64,
    points: usize,
) -> Result<LinConditionReport> {
    check_lin_values(|x| pd.lin_form_a(x), x0, x_max, points)
}

/// `L_g(x)` against `½·min{L_{f1}(√x), L_{f2}(√x)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn bound_from(pd: &ProductDensity, x: f64, lhs: f64) -> Result<BoundCheck> {
    let root = x.sqrt();
    let rhs = 0.5
        * pd.f1
            .lin_function_closed(root)?
            .min(pd.f2.lin_function_closed(root)?);
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - BOUND_SLACK,
    })
}

pub fn product_lower_bound_check(pd: &ProductDensity, x: f64) -> Result<BoundCheck> {
    let lhs = pd.lin_form_a(x)?;
    bound_from(pd, x, lhs)
}

/// Default seed for the sampled positivity check.
pub const DEFAULT_SEED: u64 = 0x5eed_1e55;

/// Samples `(u, v)` with `u > v` log-uniformly in `[1e-2, 1e2]²` and checks that
///
/// ```text
/// [L_{f2}(v) − L_{f2}(u)] · [f1(y/v) f1(x/u) − f1(y/u) f1(x/v)] ≥ 0
/// ```
///
/// at every sample. The second factor's sign is read from log densities, so
/// underflow in the far tails does not mask it.
pub fn positivity_integrand_check(
    pd: &ProductDensity,
    x: f64,
    y: f64,
    samples: usize,
    seed: u64,
) -> Result<bool> {
    if !(x > 0.0 && x < y && y.is_finite()) {
        return Err(domain(format!("need 0 < x < y, got x={x}, y={y}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ln_lo, ln_hi) = (1e-2_f64.ln(), 1e2_f64.ln());
    let f1 = &pd.f1;
    let l2 = |t: f64| pd.f2.lin_unchecked(t);
    let mut drawn = 0;
    while drawn < samples {
        let a = rng.gen_range(ln_lo..ln_hi).exp();
        let b = rng.gen_range(ln_lo..ln_hi).exp();
        if a == b {
            continue;
        }
        let (u, v) = if a > b { (a, b) } else { (b, a) };
        drawn += 1;
        let lin_gap = l2(v) - l2(u);
        let lin_tol = 1e-12 * l2(u).abs().max(l2(v).abs()).max(1.0);
        let keep = f1.ln_pdf_unchecked(y / v) + f1.ln_pdf_unchecked(x / u);
        let swap = f1.ln_pdf_unchecked(y / u) + f1.ln_pdf_unchecked(x / v);
        let log_gap = keep - swap;
        let log_tol = 1e-12 * keep.abs().max(swap.abs()).max(1.0);
        let ok = lin_gap * log_gap >= 0.0 || lin_gap.abs() <= lin_tol || log_gap.abs() <= log_tol;
        if !ok {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `x,g,lin_A,lin_B,bound_rhs,holds` row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductRow {
    pub x: f64,
    pub g: f64,
    pub lin_a: f64,
    pub lin_b: f64,
    pub bound_rhs: f64,
    pub holds: bool,
}

pub fn product_table(pd: &ProductDensity, grid: &[f64]) -> Result<Vec<ProductRow>> {
    grid.par_iter().map(|&x| pd.row(x)).collect()
}

pub fn product_csv(rows: &[ProductRow]) -> String {
    let mut out = String::from("x,g,lin_A,lin_B,bound_rhs,holds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            format_value(r.x),
            format_value(r.g),
            format_value(r.lin_a),
            format_value(r.lin_b),
            format_value(r.bound_rhs),
            r.holds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate_finite, integrate_halfline, QuadratureSpec};

    fn exp1() -> DensityModel {
        DensityModel::exponential(1.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn exp_exp_at_one_matches_brute_force() {
        // g(1) = ∫ e^{-t - 1/t} dt/t, brute force on a fine uniform grid in ln t
        let n = 400_000;
        let (a, b) = (-40.0_f64, 40.0_f64);
        let h = (b - a) / n as f64;
        let mut sum = 0.0;
        for i in 0..=n {
            let u = a + h * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            sum += w * (-(u.exp()) - (-u).exp()).exp();
        }
        let brute = sum * h;
        let pd = ProductDensity::new(exp1(), exp1());
        let g = pd.pdf(1.0).unwrap();
        assert!(((g - brute) / brute).abs() < 1e-8, "{g} vs {brute}");
    }

    #[test]
    fn commutative() {
        let pd = ProductDensity::new(
            DensityModel::gamma(2.0, 1.0).unwrap(),
            DensityModel::weibull(1.5, 2.0).unwrap(),
        );
        for x in [0.5, 1.0, 5.0] {
            let a = pd.pdf(x).unwrap();
            let b = pd.swapped().pdf(x).unwrap();
            assert!(((a - b) / a).abs() < 1e-9);
        }
    }

    #[test]
    fn two_forms_agree() {
        let pd = ProductDensity::new(exp1(), exp1());
        let a = pd.lin_form_a(1.0).unwrap();
        let b = pd.lin_form_b(1.0).unwrap();
        assert!(rel(a, b) < 1e-6);
        let pd = ProductDensity::new(
            DensityModel::gamma(3.0, 1.0).unwrap(),
            DensityModel::lognormal(0.2, 0.7).unwrap(),
        );
        for x in [1e-3, 1e3] {
            let a = pd.lin_form_a(x).unwrap();
            let b = pd.lin_form_b(x).unwrap();
            assert!(a.is_finite() && b.is_finite());
            assert!(rel(a, b) < 1e-5, "x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn form_a_matches_finite_difference() {
        let pd = ProductDensity::new(
            DensityModel::gamma(2.0, 1.0).unwrap(),
            DensityModel::weibull(2.0, 1.0).unwrap(),
        );
        let a = pd.lin_form_a(1.0).unwrap();
        let d = lin_of_product_direct(&pd, 1.0).unwrap();
        assert!(rel(a, d) < 1e-5, "{a} vs {d}");
    }

    #[test]
    fn square_root_bound_examples() {
        let pd = ProductDensity::new(exp1(), exp1());
        assert!(pd.lin_form_a(4.0).unwrap() >= 1.0);
        let check = product_lower_bound_check(&pd, 16.0).unwrap();
        assert_eq!(check.rhs, 2.0);
        assert!(check.holds);
        let g3 = DensityModel::gamma(3.0, 1.0).unwrap();
        let pd = ProductDensity::new(g3.clone(), g3);
        assert!(pd.lin_form_b(9.0).unwrap() >= 0.5);
    }

    #[test]
    fn bound_with_zero_rhs() {
        let pd = ProductDensity::new(DensityModel::gamma(2.0, 1.0).unwrap(), exp1());
        let check = product_lower_bound_check(&pd, 1.0).unwrap();
        assert_eq!(check.rhs, 0.0);
        assert!(check.holds);
        let check = product_lower_bound_check(&pd, 0.01).unwrap();
        assert!(check.rhs < 0.0 && check.holds);
    }

    /// `K_ν(z) = ∫₀^∞ exp(−z cosh t) cosh(νt) dt`.
    fn bessel_k(nu: f64, z: f64) -> f64 {
        let spec = QuadratureSpec::default();
        integrate_finite(
            |t| (-z * t.cosh()).exp() * (nu * t).cosh(),
            0.0,
            12.0,
            &spec,
        )
        .unwrap()
        .value
    }

    #[test]
    fn bound_fails_where_factor_lin_is_negative() {
        // Gamma(k)⊗Gamma(k): g ∝ x^{k−1} K0(2√x), so L_g = 1 − k + √x K1/K0
        let g3 = DensityModel::gamma(3.0, 1.0).unwrap();
        let pd = ProductDensity::new(g3.clone(), g3);
        let oracle = -2.0 + bessel_k(1.0, 2.0) / bessel_k(0.0, 2.0);
        let check = product_lower_bound_check(&pd, 1.0).unwrap();
        assert!(
            (check.lhs - oracle).abs() < 1e-8,
            "{} vs {oracle}",
            check.lhs
        );
        assert_eq!(check.rhs, -0.5);
        assert!(!check.holds);
    }

    #[test]
    fn product_normalizes() {
        let pd = ProductDensity::new(
            DensityModel::weibull(2.0, 1.0).unwrap(),
            DensityModel::lognormal(0.0, 0.5).unwrap(),
        );
        let mass = integrate_halfline(|x| pd.pdf(x).unwrap(), &QuadratureSpec::default())
            .unwrap()
            .value;
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn pdf_is_positive_and_finite_far_out() {
        let pd = ProductDensity::new(
            DensityModel::weibull(2.0, 1.0).unwrap(),
            DensityModel::weibull(3.0, 1.0).unwrap(),
        );
        // g underflows here, but ln g and L_g stay finite
        let ln_g = pd.ln_pdf(1e3).unwrap();
        assert!(ln_g.is_finite() && ln_g < -700.0);
        assert!(pd.lin_form_a(1e3).unwrap() > 100.0);
    }

    #[test]
    fn scans_pass() {
        let cases = [
            (exp1(), exp1()),
            (
                DensityModel::gamma(2.0, 1.0).unwrap(),
                DensityModel::lognormal(0.0, 1.0).unwrap(),
            ),
            (
                DensityModel::weibull(2.0, 1.0).unwrap(),
                DensityModel::weibull(3.0, 1.0).unwrap(),
            ),
        ];
        for (f1, f2) in cases {
            let pd = ProductDensity::new(f1, f2);
            let r = product_monotonicity_scan(&pd, 0.05, 1e3, 48).unwrap();
            assert!(r.monotone, "{:?} {:?}", pd.f1, r.monotone_violations);
        }
        let pd = ProductDensity::new(
            DensityModel::weibull(2.0, 1.0).unwrap(),
            DensityModel::weibull(3.0, 1.0).unwrap(),
        );
        let r = product_monotonicity_scan(&pd, 0.05, 1e3, 48).unwrap();
        assert!(r.divergence_heuristic);
    }

    #[test]
    fn positivity_examples() {
        let pd = ProductDensity::new(exp1(), exp1());
        assert!(positivity_integrand_check(&pd, 1.0, 2.0, 1000, DEFAULT_SEED).unwrap());
        let pd = ProductDensity::new(
            DensityModel::gamma(3.0, 1.0).unwrap(),
            DensityModel::gamma(2.0, 1.0).unwrap(),
        );
        assert!(positivity_integrand_check(&pd, 0.5, 5.0, 1000, DEFAULT_SEED).unwrap());
        assert!(positivity_integrand_check(&pd, 2.0, 1.0, 10, DEFAULT_SEED).is_err());
    }

    #[test]
    fn positivity_detects_non_lin_factor() {
        // a density-like shape with non-monotone Lin function must fail somewhere
        #[derive(Debug)]
        struct Wobbly;
        impl crate::density::DensityFamily for Wobbly {
            fn name(&self) -> &'static str {
                "wobbly"
            }
            fn params(&self) -> Vec<f64> {
                vec![]
            }
            fn ln_pdf(&self, x: f64) -> f64 {
                -x + 2.0 * x.ln().sin()
            }
            fn pdf_derivative(&self, x: f64) -> f64 {
                self.ln_pdf(x).exp() * (-1.0 + 2.0 * x.ln().cos() / x)
            }
            fn lin(&self, x: f64) -> f64 {
                x - 2.0 * x.ln().cos()
            }
        }
        let w = DensityModel::from_family(std::sync::Arc::new(Wobbly));
        let pd = ProductDensity::new(w, exp1());
        assert!(!positivity_integrand_check(&pd, 1.0, 3.0, 2000, DEFAULT_SEED).unwrap());
    }

    #[test]
    fn mode_integrals_cover_the_mass() {
        // compare the scaled-mode integral with a plain finite integral in t
        let pd = ProductDensity::new(
            DensityModel::gamma(1.5, 2.0).unwrap(),
            DensityModel::lognormal(-0.3, 0.4).unwrap(),
        );
        let x = 0.7;
        let direct = integrate_finite(
            |t| pd.f1.pdf(x / t).unwrap() * pd.f2.pdf(t).unwrap() / t,
            1e-4,
            60.0,
            &QuadratureSpec::new(1e-12, 1e-300, 100_000).unwrap(),
        )
        .unwrap()
        .value;
        let g = pd.pdf(x).unwrap();
        assert!(((g - direct) / direct).abs() < 1e-9, "{g} vs {direct}");
    }
}
