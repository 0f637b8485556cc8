//! A dependent pair `(ξ1, ξ2)` with marginals `f1`, `f2` whose product density
//! has a Lin function taking arbitrarily large values of both signs.
//!
//! The joint density is the independent one plus, for every block, four
//! copies of a smooth oscillating bump
//!
//! ```text
//! φ(x, y) = β · sin(ν x y) · ρ(x − v − a/2, y − v − a/2),    ρ(x, y) = q(x² + y²)
//! f(x, y) = f1(x) f2(y) − φ(x, y) + φ(x, y + a) − φ(x + a, y + a) + φ(x + a, y)
//! ```
//!
//! The shifts make every horizontal and vertical slice of the perturbation
//! integrate to zero, so both marginals are unchanged. Along the hyperbola
//! `xy = z` through the unshifted bump the factor `sin(ν x y)` is the constant
//! `sin(ν z)`, which makes the product density `g` oscillate in `z` with
//! amplitude independent of `ν`; its slope therefore grows linearly with `ν`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::density::{Density, DensityModel};
use crate::error::{domain, Error, Result};
use crate::format_value;
use crate::product::ProductDensity;
use crate::quadrature::{
    integrate_finite_with_breakpoints, integrate_halfline_with_breakpoints, seed_breakpoints,
    try_differentiate, QuadratureResult, QuadratureSpec,
};

/// Samples used to bracket hyperbola/circle crossings.
pub const INTERSECTION_SAMPLES: usize = 2048;

/// Bisection target for crossing abscissas.
pub const INTERSECTION_TOL: f64 = 1e-12;

/// Values of the joint density below `-NEGATIVITY_TOL` are rejected.
pub const NEGATIVITY_TOL: f64 = 1e-12;

/// Fraction of `min_K f1 f2` used for `β` by [`PerturbationBlock::admissible`].
pub const DEFAULT_BETA_FRACTION: f64 = 0.9;

/// Smooth radial cutoff `q` with `q = 1` on `[0, r²/4]` and `q = 0` on `[r², ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSpec {
    pub r: f64,
}

impl CutoffSpec {
    pub fn new(r: f64) -> Result<Self> {
        if r > 0.0 && r.is_finite() {
            Ok(Self { r })
        } else {
            Err(domain(format!("cutoff radius must be positive, got {r}")))
        }
    }

    /// `h(r² − t) / (h(r² − t) + h(t − r²/4))` with `h(s) = exp(−1/s)` for `s > 0`.
    ///
    /// Evaluated as `1 / (1 + exp(1/(r² − t) − 1/(t − r²/4)))`, which is free
    /// of the `0/0` that the direct ratio hits for small `r`.
    fn q(&self, t: f64) -> f64 {
        let outer = self.r * self.r;
        let inner = 0.25 * outer;
        if t <= inner {
            1.0
        } else if t >= outer {
            0.0
        } else {
            1.0 / (1.0 + (1.0 / (outer - t) - 1.0 / (t - inner)).exp())
        }
    }

    pub fn rho(&self, x: f64, y: f64) -> f64 {
        self.q(x * x + y * y)
    }
}

pub fn cutoff_q(spec: &CutoffSpec, t: f64) -> Result<f64> {
    if t >= 0.0 {
        Ok(spec.q(t))
    } else {
        Err(domain(format!(
            "cutoff argument must be non-negative, got {t}"
        )))
    }
}

pub fn rho(spec: &CutoffSpec, x: f64, y: f64) -> f64 {
    spec.rho(x, y)
}

/// One perturbation: square `K = [v − a, v + a]²`, bump radius `r`,
/// amplitude `β` and angular frequency `ν`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBlock {
    pub v: f64,
    pub a: f64,
    pub r: f64,
    pub beta: f64,
    pub nu: f64,
}

/// One of the four shifted copies of `φ` in a block: the term is
/// `sign · φ(x + shift_x, y + shift_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscTerm {
    pub shift_x: f64,
    pub shift_y: f64,
    pub sign: f64,
    /// Center of the disc on which the term is supported.
    pub cx: f64,
    pub cy: f64,
}

impl PerturbationBlock {
    /// Checks the geometric constraints; `β` against the densities is checked
    /// by [`JointDensityModel::new`].
    pub fn new(v: f64, a: f64, r: f64, beta: f64, nu: f64) -> Result<Self> {
        let all_finite = [v, a, r, beta, nu].iter().all(|p| p.is_finite());
        if !all_finite {
            return Err(domain("block parameters must be finite"));
        }
        if !(a > 0.0 && v - a > 0.0) {
            return Err(domain(format!("need 0 < a < v, got v={v}, a={a}")));
        }
        if !(r > 0.0 && r < a / 4.0) {
            return Err(domain(format!("need 0 < r < a/4, got r={r}, a={a}")));
        }
        if !(beta > 0.0) {
            return Err(domain(format!("beta must be positive, got {beta}")));
        }
        if !(nu > 0.0) {
            return Err(domain(format!("nu must be positive, got {nu}")));
        }
        Ok(Self { v, a, r, beta, nu })
    }

    /// Block with `β = fraction · min_K f1 f2` and `ν = ν₀`.
    pub fn admissible(
        f1: &DensityModel,
        f2: &DensityModel,
        v: f64,
        a: f64,
        r: f64,
        fraction: f64,
    ) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(domain(format!(
                "beta fraction must lie in (0, 1), got {fraction}"
            )));
        }
        // validate geometry before touching the densities
        let probe = Self::new(v, a, r, 1.0, 1.0)?;
        let min = min_product_over_square(f1, f2, v - a, v + a)?;
        Self::new(v, a, r, fraction * min.value, probe.initial_nu())
    }

    /// Center coordinate `v + a/2` of the unshifted bump.
    pub fn center(&self) -> f64 {
        self.v + 0.5 * self.a
    }

    pub fn cutoff(&self) -> CutoffSpec {
        CutoffSpec { r: self.r }
    }

    /// `((v + a/2)² − r²/10, (v + a/2)² + r²/10)`.
    pub fn window(&self) -> (f64, f64) {
        let c = self.center();
        let d = 0.1 * self.r * self.r;
        (c * c - d, c * c + d)
    }

    /// Starting frequency `15π/r²`: at least three extrema of `sin(νz)` fit
    /// in the window.
    pub fn initial_nu(&self) -> f64 {
        15.0 * PI / (self.r * self.r)
    }

    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        Self::new(self.v, self.a, self.r, self.beta, nu)
    }

    pub fn phi(&self, x: f64, y: f64) -> f64 {
        let c = self.center();
        let bump = self.cutoff().rho(x - c, y - c);
        if bump == 0.0 {
            0.0
        } else {
            self.beta * (self.nu * x * y).sin() * bump
        }
    }

    pub fn disc_terms(&self) -> [DiscTerm; 4] {
        let c = self.center();
        let a = self.a;
        let term = |sx: f64, sy: f64, sign: f64| DiscTerm {
            shift_x: sx,
            shift_y: sy,
            sign,
            cx: c - sx,
            cy: c - sy,
        };
        [
            term(0.0, 0.0, -1.0),
            term(0.0, a, 1.0),
            term(a, a, -1.0),
            term(a, 0.0, 1.0),
        ]
    }

    /// Sum of the four signed terms at `(x, y)`.
    pub fn perturbation(&self, x: f64, y: f64) -> f64 {
        let r2 = self.r * self.r;
        self.disc_terms()
            .iter()
            .filter(|d| (x - d.cx).powi(2) + (y - d.cy).powi(2) < r2)
            .map(|d| d.sign * self.phi(x + d.shift_x, y + d.shift_y))
            .sum()
    }

    /// Bounds on `xy` over a term's disc.
    fn z_range(&self, d: &DiscTerm) -> (f64, f64) {
        (
            (d.cx - self.r) * (d.cy - self.r),
            (d.cx + self.r) * (d.cy + self.r),
        )
    }
}

pub fn phi(block: &PerturbationBlock, x: f64, y: f64) -> f64 {
    block.phi(x, y)
}

/// Minimum of `f1(x) f2(y)` over a square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareMinimum {
    pub value: f64,
    pub x: f64,
    pub y: f64,
    /// The minimum coincides with the smallest corner value.
    pub at_corner: bool,
}

/// Minimum over `[lo, hi]²` from a 256² grid followed by a compass search
/// around the best node.
pub fn min_product_over_square(
    f1: &DensityModel,
    f2: &DensityModel,
    lo: f64,
    hi: f64,
) -> Result<SquareMinimum> {
    if !(lo > 0.0 && hi > lo) {
        return Err(domain(format!("need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    const N: usize = 256;
    let node = |i: usize| lo + (hi - lo) * i as f64 / (N - 1) as f64;
    let value = |x: f64, y: f64| f1.pdf_unchecked(x) * f2.pdf_unchecked(y);
    let (mut bx, mut by, mut best) = (lo, lo, f64::INFINITY);
    for i in 0..N {
        for j in 0..N {
            let (x, y) = (node(i), node(j));
            let v = value(x, y);
            if v < best {
                (bx, by, best) = (x, y, v);
            }
        }
    }
    let mut step = (hi - lo) / (N - 1) as f64;
    while step > 1e-12 * (hi - lo) {
        let mut improved = false;
        for (dx, dy) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let (x, y) = ((bx + dx).clamp(lo, hi), (by + dy).clamp(lo, hi));
            let v = value(x, y);
            if v < best {
                (bx, by, best) = (x, y, v);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let corner = [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]
        .iter()
        .map(|&(x, y)| value(x, y))
        .fold(f64::INFINITY, f64::min);
    Ok(SquareMinimum {
        value: best,
        x: bx,
        y: by,
        at_corner: corner <= best * (1.0 + 1e-12),
    })
}

/// Abscissas `x > 0` where `xy = z` meets the circle of `radius` about
/// `(cx, cy)`, ascending.
///
/// Sign changes of `(x − cx)² + (z/x − cy)² − radius²` are bracketed on
/// [`INTERSECTION_SAMPLES`] points across `[cx − radius, cx + radius]` and
/// refined by bisection.
pub fn hyperbola_circle_intersections(cx: f64, cy: f64, radius: f64, z: f64) -> Vec<f64> {
    if !(radius > 0.0 && z > 0.0) {
        return Vec::new();
    }
    let lo = (cx - radius).max(f64::MIN_POSITIVE);
    let hi = cx + radius;
    if !(hi > lo) {
        return Vec::new();
    }
    let f = |x: f64| (x - cx).powi(2) + (z / x - cy).powi(2) - radius * radius;
    let n = INTERSECTION_SAMPLES;
    let at = |i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut roots = Vec::new();
    let mut prev_x = at(0);
    let mut prev = f(prev_x);
    for i in 1..n {
        let x = at(i);
        let cur = f(x);
        if prev == 0.0 {
            roots.push(prev_x);
        } else if prev.signum() != cur.signum() && cur != 0.0 {
            let (mut a, mut b, mut fa) = (prev_x, x, prev);
            while b - a > INTERSECTION_TOL {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let fm = f(m);
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_x = x;
        prev = cur;
    }
    if prev == 0.0 {
        roots.push(prev_x);
    }
    roots
}

/// `I₂(z) = β sin(νz) log(x₃/x₂)`, the contribution of the inner disc of the
/// unshifted bump along `xy = z`.
pub fn middle_integral_closed_form(block: &PerturbationBlock, z: f64) -> Result<f64> {
    let (x2, x3) = inner_crossings(block, z)?;
    Ok(block.beta * (block.nu * z).sin() * (x3 / x2).ln())
}

/// `(x₂, x₃)`: crossings of `xy = z` with the inner circle of radius `r/2`.
pub fn inner_crossings(block: &PerturbationBlock, z: f64) -> Result<(f64, f64)> {
    let c = block.center();
    let roots = hyperbola_circle_intersections(c, c, 0.5 * block.r, z);
    match roots.as_slice() {
        [x2, x3] => Ok((*x2, *x3)),
        _ => Err(Error::NoIntersection { z }),
    }
}

/// `(x₁, x₄)`: crossings of `xy = z` with the outer circle of radius `r`.
pub fn outer_crossings(block: &PerturbationBlock, z: f64) -> Result<(f64, f64)> {
    let c = block.center();
    let roots = hyperbola_circle_intersections(c, c, block.r, z);
    match roots.as_slice() {
        [x1, x4] => Ok((*x1, *x4)),
        _ => Err(Error::NoIntersection { z }),
    }
}

/// Joint density `f1 ⊗ f2` plus a list of perturbation blocks with disjoint supports.
#[derive(Debug, Clone)]
pub struct JointDensityModel {
    pub f1: DensityModel,
    pub f2: DensityModel,
    blocks: Vec<PerturbationBlock>,
    independent: ProductDensity,
    pub spec: QuadratureSpec,
}

/// Tolerances for slice and hyperbola integrals of the perturbation.
pub fn default_perturbation_spec() -> QuadratureSpec {
    QuadratureSpec {
        rel_tol: 1e-10,
        abs_tol: 1e-16,
        max_subdivisions: 50_000,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl JointDensityModel {
    pub fn new(f1: DensityModel, f2: DensityModel, blocks: Vec<PerturbationBlock>) -> Result<Self> {
        let model = Self {
            independent: ProductDensity::new(f1.clone(), f2.clone()),
            f1,
            f2,
            blocks,
            spec: default_perturbation_spec(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn blocks(&self) -> &[PerturbationBlock] {
        &self.blocks
    }

    /// The independent product `p = f1 ⊗ f2`.
    pub fn independent(&self) -> &ProductDensity {
        &self.independent
    }

    /// Checks `β < min_K f1 f2` for every block and that no two bump discs
    /// (of any blocks) overlap.
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            PerturbationBlock::new(b.v, b.a, b.r, b.beta, b.nu)?;
            let min = min_product_over_square(&self.f1, &self.f2, b.v - b.a, b.v + b.a)?;
            if !(b.beta < min.value) {
                return Err(domain(format!(
                    "block {i}: beta {:e} must be below min over K of f1 f2 = {:e}",
                    b.beta, min.value
                )));
            }
        }
        let discs: Vec<(f64, f64, f64)> = self
            .blocks
            .iter()
            .flat_map(|b| b.disc_terms().map(|d| (d.cx, d.cy, b.r)))
            .collect();
        for (i, p) in discs.iter().enumerate() {
            for q in &discs[i + 1..] {
                let dist = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                if dist < p.2 + q.2 {
                    return Err(domain(format!(
                        "bump discs at ({}, {}) and ({}, {}) overlap",
                        p.0, p.1, q.0, q.1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Replaces the frequency of one block.
    pub fn with_block_nu(&self, index: usize, nu: f64) -> Result<Self> {
        let block = self
            .blocks
            .get(index)
            .ok_or_else(|| domain(format!("no block with index {index}")))?;
        let mut next = self.clone();
        next.blocks[index] = block.with_nu(nu)?;
        next.validate()?;
        Ok(next)
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        if !(x > 0.0 && y > 0.0) {
            return 0.0;
        }
        let base = self.f1.pdf_unchecked(x) * self.f2.pdf_unchecked(y);
        base + self
            .blocks
            .iter()
            .map(|b| b.perturbation(x, y))
            .sum::<f64>()
    }

    /// Joint density at `(x, y)`; zero outside the open first quadrant.
    pub fn joint_pdf(&self, x: f64, y: f64) -> Result<f64> {
        let v = self.value(x, y);
        if v < -NEGATIVITY_TOL {
            return Err(Error::NegativeDensity { x, y, value: v });
        }
        Ok(v.max(0.0))
    }

    /// Slice breakpoints along one axis at fixed `at`: chord ends of every
    /// disc the slice crosses, inner-chord ends, and half-period seeds.
    fn slice_breakpoints(&self, axis: Axis, at: f64) -> Vec<f64> {
        let mut bps = Vec::new();
        for b in &self.blocks {
            for d in b.disc_terms() {
                let (fixed_c, free_c, fixed_shift) = match axis {
                    Axis::X => (d.cx, d.cy, d.shift_x),
                    Axis::Y => (d.cy, d.cx, d.shift_y),
                };
                let off = (at - fixed_c).powi(2);
                if off >= b.r * b.r {
                    continue;
                }
                let half = (b.r * b.r - off).sqrt();
                let (lo, hi) = (free_c - half, free_c + half);
                bps.push(lo);
                bps.push(hi);
                let inner = 0.25 * b.r * b.r;
                if off < inner {
                    let h = (inner - off).sqrt();
                    bps.push(free_c - h);
                    bps.push(free_c + h);
                }
                // phase ν (at + shift) · (free + shift') is linear in the free variable
                let rate = b.nu * (at + fixed_shift);
                bps.extend(seed_breakpoints(lo, hi, PI / rate));
            }
        }
        bps
    }

    /// `|∫ f(x, y) dy − f1(x)|` for `Axis::X`, `|∫ f(t, y) dt − f2(y)|` for `Axis::Y`.
    pub fn marginal_check(&self, axis: Axis, at: f64) -> Result<f64> {
        if !(at > 0.0 && at.is_finite()) {
            return Err(domain(format!("slice position must be positive, got {at}")));
        }
        let bps = self.slice_breakpoints(axis, at);
        let (integral, expected) = match axis {
            Axis::X => (
                integrate_halfline_with_breakpoints(|y| self.value(at, y), &bps, &self.spec)?,
                self.f1.pdf(at)?,
            ),
            Axis::Y => (
                integrate_halfline_with_breakpoints(|x| self.value(x, at), &bps, &self.spec)?,
                self.f2.pdf(at)?,
            ),
        };
        Ok((integral.into_value()? - expected).abs())
    }

    /// `∫ sign · φ(x + sx, z/x + sy) dx/x` for one disc term.
    fn disc_contribution(&self, b: &PerturbationBlock, d: &DiscTerm, z: f64) -> Result<f64> {
        let (zlo, zhi) = b.z_range(d);
        if z <= zlo || z >= zhi {
            return Ok(0.0);
        }
        let roots = hyperbola_circle_intersections(d.cx, d.cy, b.r, z);
        if roots.len() < 2 {
            return Ok(0.0);
        }
        let mut breakpoints = hyperbola_circle_intersections(d.cx, d.cy, 0.5 * b.r, z);
        let cutoff = b.cutoff();
        let (sx, sy) = (d.shift_x, d.shift_y);
        let integrand = |x: f64| {
            let y = z / x;
            let bump = cutoff.rho(x - d.cx, y - d.cy);
            if bump == 0.0 {
                return 0.0;
            }
            // (x + sx)(z/x + sy) expanded; the unshifted term has phase exactly ν z
            let phase = b.nu * (z + sy * x + sx * y + sx * sy);
            b.beta * phase.sin() * bump / x
        };
        let mut total = 0.0;
        for w in roots.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mid = 0.5 * (lo + hi);
            if (mid - d.cx).powi(2) + (z / mid - d.cy).powi(2) >= b.r * b.r {
                continue;
            }
            let rate = b.nu * (sy + sx * z / (lo * lo));
            if rate > 0.0 {
                breakpoints.extend(seed_breakpoints(lo, hi, PI / rate));
            }
            let spec = QuadratureSpec {
                abs_tol: self.spec.abs_tol.max(1e-12 * b.beta * (hi / lo).ln()),
                ..self.spec
            };
            total += integrate_finite_with_breakpoints(integrand, lo, hi, &breakpoints, &spec)?
                .into_value()?;
        }
        Ok(d.sign * total)
    }

    /// `g(z) − p(z)`: the perturbation's contribution to the product density.
    pub fn perturbation_integral(&self, z: f64) -> Result<f64> {
        let mut total = 0.0;
        for b in &self.blocks {
            for d in b.disc_terms() {
                total += self.disc_contribution(b, &d, z)?;
            }
        }
        Ok(total)
    }

    /// Density of `ξ1·ξ2` under the joint density.
    pub fn dependent_product_pdf(&self, z: f64) -> Result<f64> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(domain(format!("product density needs z > 0, got {z}")));
        }
        let p = self.independent.pdf(z)?;
        Ok(p + self.perturbation_integral(z)?)
    }

    /// `z`-intervals outside of which the perturbation contributes nothing.
    pub fn affected_ranges(&self) -> Vec<(f64, f64)> {
        self.blocks
            .iter()
            .flat_map(|b| b.disc_terms().map(move |d| b.z_range(&d)))
            .collect()
    }

    /// `∫₀^∞ g(z) dz`, seeded at half periods of `sin(ν z)` across every
    /// affected range.
    pub fn dependent_product_mass(&self, spec: &QuadratureSpec) -> Result<QuadratureResult> {
        let mut bps = Vec::new();
        for b in &self.blocks {
            for d in b.disc_terms() {
                let (lo, hi) = b.z_range(&d);
                bps.push(lo);
                bps.push(hi);
                bps.extend(seed_breakpoints(lo, hi, PI / b.nu));
            }
        }
        let g = |z: f64| self.dependent_product_pdf(z).unwrap_or(f64::NAN);
        integrate_halfline_with_breakpoints(g, &bps, spec)
    }

    /// Evaluates the joint density at `points` Halton points in
    /// `[0, side]²` and returns the smallest value seen.
    pub fn nonnegativity_scan(&self, side: f64, points: usize) -> Result<f64> {
        (1..=points)
            .into_par_iter()
            .map(|i| self.joint_pdf(side * halton(i, 2), side * halton(i, 3)))
            .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))
    }

    /// The product density `g` as a [`Density`].
    pub fn product_density(&self) -> DependentProduct<'_> {
        DependentProduct { model: self }
    }
}

/// Radical inverse of `index` in `base`.
pub fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

pub fn joint_pdf(j: &JointDensityModel, x: f64, y: f64) -> Result<f64> {
    j.joint_pdf(x, y)
}

pub fn marginal_check(j: &JointDensityModel, axis: Axis, x: f64) -> Result<f64> {
    j.marginal_check(axis, x)
}

pub fn dependent_product_pdf(j: &JointDensityModel, z: f64) -> Result<f64> {
    j.dependent_product_pdf(z)
}

/// `g` viewed as a density; finite differences are kept below a twentieth of
/// the shortest oscillation period.
#[derive(Debug, Clone, Copy)]
pub struct DependentProduct<'a> {
    model: &'a JointDensityModel,
}

impl DependentProduct<'_> {
    fn step_ceiling(&self) -> f64 {
        let nu = self.model.blocks.iter().map(|b| b.nu).fold(0.0, f64::max);
        if nu > 0.0 {
            PI / (20.0 * nu)
        } else {
            f64::INFINITY
        }
    }
}

impl Density for DependentProduct<'_> {
    fn ln_pdf(&self, x: f64) -> Result<f64> {
        let g = self.model.dependent_product_pdf(x)?;
        if g > 0.0 {
            Ok(g.ln())
        } else {
            Err(Error::ZeroDensity(x))
        }
    }

    fn pdf(&self, x: f64) -> Result<f64> {
        self.model.dependent_product_pdf(x)
    }

    fn scale_hint(&self, _x: f64) -> f64 {
        self.step_ceiling()
    }
}

/// One scanned point of a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSample {
    pub z: f64,
    pub g: f64,
    pub g_prime: f64,
    pub lin_g: f64,
}

/// Result of scanning `g`, `g′` and `L_g` across one block's window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAnalysis {
    pub block_index: usize,
    pub nu: f64,
    pub window: (f64, f64),
    pub z_star: f64,
    pub z_star_star: f64,
    pub slope_at_star: f64,
    pub slope_at_star_star: f64,
    pub lin_max: f64,
    pub lin_min: f64,
    /// Lower bound of `log(x₃/x₂)` over the window.
    pub c_lower: f64,
    pub g_max: f64,
    pub samples: Vec<WindowSample>,
}

impl WindowAnalysis {
    /// CSV with header `z,g,g_prime,lin_g`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("z,g,g_prime,lin_g\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{}\n",
                format_value(s.z),
                format_value(s.g),
                format_value(s.g_prime),
                format_value(s.lin_g)
            ));
        }
        out
    }

    pub const SUMMARY_HEADER: &'static str =
        "window_n,nu,z_star,z_star_star,slope_max,slope_min,lin_max,lin_min";

    /// Summary row matching [`Self::SUMMARY_HEADER`].
    pub fn summary_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.block_index,
            format_value(self.nu),
            format_value(self.z_star),
            format_value(self.z_star_star),
            format_value(self.slope_at_star),
            format_value(self.slope_at_star_star),
            format_value(self.lin_max),
            format_value(self.lin_min)
        )
    }
}

/// Knobs for [`slope_search`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeSearchConfig {
    /// `ν` may grow to `2^max_doublings · ν₀`.
    pub max_doublings: u32,
    /// Scan spacing is `π / (samples_per_half_period · ν)`.
    pub samples_per_half_period: f64,
    /// Cap on scan points; beyond it a centered part of the window is scanned.
    pub max_scan_samples: usize,
}

impl Default for SlopeSearchConfig {
    fn default() -> Self {
        Self {
            max_doublings: 20,
            samples_per_half_period: 8.0,
            max_scan_samples: 4096,
        }
    }
}

/// Lower bound of `log(x₃/x₂)` over the window, from 33 evenly spaced points.
pub fn window_log_ratio_bound(block: &PerturbationBlock) -> Result<f64> {
    let (lo, hi) = block.window();
    let mut c = f64::INFINITY;
    for i in 0..=32 {
        let z = lo + (hi - lo) * i as f64 / 32.0;
        let (x2, x3) = inner_crossings(block, z)?;
        c = c.min((x3 / x2).ln());
    }
    Ok(c)
}

fn scan_window(
    model: &JointDensityModel,
    index: usize,
    config: &SlopeSearchConfig,
) -> Result<Vec<WindowSample>> {
    let block = model.blocks[index];
    let (lo, hi) = block.window();
    let spacing = PI / (config.samples_per_half_period * block.nu);
    let full = ((hi - lo) / spacing).floor() as usize;
    let count = full.clamp(1, config.max_scan_samples.max(1));
    let start = 0.5 * (lo + hi) - 0.5 * spacing * (count as f64 - 1.0);
    let density = model.product_density();
    let step = density.step_ceiling();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let z = start + spacing * i as f64;
            let g = model.dependent_product_pdf(z)?;
            if !(g > 0.0) {
                return Err(Error::ZeroDensity(z));
            }
            let g_prime = try_differentiate(|t| model.dependent_product_pdf(t), z, step)?;
            Ok(WindowSample {
                z,
                g,
                g_prime,
                lin_g: -z * g_prime / g,
            })
        })
        .collect()
}

/// Doubles `ν` of block `block_index` from `ν₀` until the window contains
/// points with `g′ ≥ slope_up` and `g′ ≤ −slope_down`. Returns the model with
/// the final `ν` and the window analysis at that `ν`.
pub fn slope_search(
    model: &JointDensityModel,
    block_index: usize,
    slope_up: f64,
    slope_down: f64,
    config: &SlopeSearchConfig,
) -> Result<(JointDensityModel, WindowAnalysis)> {
    let block = *model
        .blocks
        .get(block_index)
        .ok_or_else(|| domain(format!("no block with index {block_index}")))?;
    if !(slope_up > 0.0 && slope_down > 0.0) {
        return Err(domain("slope targets must be positive"));
    }
    let c_lower = window_log_ratio_bound(&block)?;
    let nu0 = block.initial_nu();
    let side = block.v + block.a;
    let mut nu = nu0;
    for _ in 0..=config.max_doublings {
        let current = model.with_block_nu(block_index, nu)?;
        // β does not depend on ν; re-check f ≥ 0 on the block's square
        current.nonnegativity_on_square(block_index, side)?;
        let samples = scan_window(&current, block_index, config)?;
        let (star, star_star) = extreme_slopes(&samples);
        let (up, down) = (samples[star], samples[star_star]);
        if up.g_prime >= slope_up && down.g_prime <= -slope_down {
            let lin_max = samples
                .iter()
                .map(|s| s.lin_g)
                .fold(f64::NEG_INFINITY, f64::max);
            let lin_min = samples
                .iter()
                .map(|s| s.lin_g)
                .fold(f64::INFINITY, f64::min);
            let g_max = samples.iter().map(|s| s.g).fold(0.0, f64::max);
            let analysis = WindowAnalysis {
                block_index,
                nu,
                window: block.window(),
                z_star: up.z,
                z_star_star: down.z,
                slope_at_star: up.g_prime,
                slope_at_star_star: down.g_prime,
                lin_max,
                lin_min,
                c_lower,
                g_max,
                samples,
            };
            return Ok((current, analysis));
        }
        nu *= 2.0;
    }
    Err(Error::SearchBudgetExceeded { nu: nu / 2.0 })
}

fn extreme_slopes(samples: &[WindowSample]) -> (usize, usize) {
    let mut up = 0;
    let mut down = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.g_prime > samples[up].g_prime {
            up = i;
        }
        if s.g_prime < samples[down].g_prime {
            down = i;
        }
    }
    (up, down)
}

impl JointDensityModel {
    /// Grid check of `f ≥ 0` over the four bump discs of one block.
    fn nonnegativity_on_square(&self, index: usize, _side: f64) -> Result<()> {
        let b = self.blocks[index];
        const N: usize = 48;
        for d in b.disc_terms() {
            for i in 0..N {
                for j in 0..N {
                    let x = d.cx - b.r + 2.0 * b.r * (i as f64 + 0.5) / N as f64;
                    let y = d.cy - b.r + 2.0 * b.r * (j as f64 + 0.5) / N as f64;
                    self.joint_pdf(x, y)?;
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the multi-block demonstration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoConfig {
    /// Center of the first square.
    pub v1: f64,
    pub a: f64,
    pub r: f64,
    /// Slope target of the first window; window `n` (from 1) uses `n` times this.
    pub base_slope: f64,
    pub beta_fraction: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            v1: 2.0,
            a: 1.0,
            r: 0.2,
            base_slope: 1e-3,
            beta_fraction: DEFAULT_BETA_FRACTION,
        }
    }
}

/// Outcome of [`limsup_liminf_demo`].
#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub model: JointDensityModel,
    pub windows: Vec<WindowAnalysis>,
    /// `L₀ = A₁ · min_n (z_lo,n / max g on window n)`; window `n` then has
    /// `lin_max ≥ n·L₀` and `lin_min ≤ −n·L₀`.
    pub base_lin: f64,
}

impl DemoOutcome {
    /// `lin_max` strictly increasing and `lin_min` strictly decreasing across windows.
    pub fn escalates(&self) -> bool {
        self.windows
            .windows(2)
            .all(|w| w[1].lin_max > w[0].lin_max && w[1].lin_min < w[0].lin_min)
    }

    /// Every window `n` (from 1) satisfies `lin_max > n·L₀` and `lin_min < −n·L₀`.
    pub fn exceeds_base(&self) -> bool {
        self.windows.iter().enumerate().all(|(i, w)| {
            let level = (i + 1) as f64 * self.base_lin;
            w.lin_max > level && w.lin_min < -level
        })
    }
}

/// Blocks on squares centered at `v1 + 3na` (`n = 0, 1, ...`), each tuned by
/// [`slope_search`] with slope targets `n·A₁`.
pub fn limsup_liminf_demo(
    f1: &DensityModel,
    f2: &DensityModel,
    n_blocks: usize,
    demo: &DemoConfig,
    config: &SlopeSearchConfig,
) -> Result<DemoOutcome> {
    if n_blocks < 2 {
        return Err(domain(format!("need at least 2 blocks, got {n_blocks}")));
    }
    if !(demo.base_slope > 0.0) {
        return Err(domain("base slope must be positive"));
    }
    let blocks = (0..n_blocks)
        .map(|n| {
            let v = demo.v1 + 3.0 * n as f64 * demo.a;
            PerturbationBlock::admissible(f1, f2, v, demo.a, demo.r, demo.beta_fraction)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = JointDensityModel::new(f1.clone(), f2.clone(), blocks)?;
    let mut windows = Vec::with_capacity(n_blocks);
    for n in 0..n_blocks {
        let target = (n + 1) as f64 * demo.base_slope;
        let (next, analysis) = slope_search(&model, n, target, target, config)?;
        model = next;
        windows.push(analysis);
    }
    let base_lin = windows
        .iter()
        .map(|w| demo.base_slope * w.window.0 / w.g_max)
        .fold(f64::INFINITY, f64::min);
    Ok(DemoOutcome {
        model,
        windows,
        base_lin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp1() -> DensityModel {
        DensityModel::exponential(1.0).unwrap()
    }

    fn standard_block() -> PerturbationBlock {
        PerturbationBlock::admissible(&exp1(), &exp1(), 2.0, 1.0, 0.2, DEFAULT_BETA_FRACTION)
            .unwrap()
    }

    fn standard_model() -> JointDensityModel {
        JointDensityModel::new(exp1(), exp1(), vec![standard_block()]).unwrap()
    }

    #[test]
    fn cutoff_examples() {
        let s = CutoffSpec::new(1.0).unwrap();
        assert_eq!(cutoff_q(&s, 0.1).unwrap(), 1.0);
        assert_eq!(cutoff_q(&s, 2.0).unwrap(), 0.0);
        let mid = cutoff_q(&s, 0.625).unwrap();
        assert!(mid > 0.0 && mid < 1.0);
        let (a, b, c) = (s.q(0.3), s.q(0.6), s.q(0.9));
        assert!(a > b && b > c);
        assert!(cutoff_q(&s, -0.1).is_err());
        assert!(CutoffSpec::new(0.0).is_err());
    }

    #[test]
    fn cutoff_is_stable_for_tiny_radius() {
        let s = CutoffSpec::new(1e-3).unwrap();
        for i in 0..=100 {
            let t = 1e-6 * i as f64 / 100.0;
            let v = s.q(t);
            assert!((0.0..=1.0).contains(&v), "t={t}: {v}");
        }
    }

    #[test]
    fn rho_examples() {
        let s = CutoffSpec::new(1.0).unwrap();
        assert_eq!(rho(&s, 0.0, 0.0), 1.0);
        assert_eq!(rho(&s, 0.9, 0.9), 0.0);
        let v = rho(&s, 0.6, 0.0);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn phi_examples() {
        let b = standard_block();
        let c = b.center();
        assert_eq!(phi(&b, c + 0.2, c + 0.01), 0.0);
        let tuned = b.with_nu(PI / 2.0 / (c * c)).unwrap();
        assert!((phi(&tuned, c, c) - tuned.beta).abs() < 1e-15 * tuned.beta.max(1.0));
        let zero = b.with_nu(PI / (c * c)).unwrap();
        assert!(phi(&zero, c, c).abs() < 1e-15);
    }

    #[test]
    fn block_constraints() {
        assert!(PerturbationBlock::new(1.0, 1.0, 0.1, 0.1, 1.0).is_err());
        assert!(PerturbationBlock::new(2.0, 1.0, 0.25, 0.1, 1.0).is_err());
        assert!(PerturbationBlock::new(2.0, 1.0, 0.2, 0.0, 1.0).is_err());
        assert!(PerturbationBlock::new(2.0, 1.0, 0.2, 0.1, 0.0).is_err());
        // beta above the minimum is rejected by the joint model
        let b = PerturbationBlock::new(2.0, 1.0, 0.2, 0.01, 1.0).unwrap();
        assert!(JointDensityModel::new(exp1(), exp1(), vec![b]).is_err());
    }

    #[test]
    fn beta_uses_corner_minimum() {
        let m = min_product_over_square(&exp1(), &exp1(), 1.0, 3.0).unwrap();
        assert!(m.at_corner);
        assert!((m.value - (-6.0_f64).exp()).abs() < 1e-15);
        let b = standard_block();
        assert!((b.beta - 0.9 * (-6.0_f64).exp()).abs() < 1e-16);
        let g = DensityModel::gamma(2.0, 1.0).unwrap();
        let w = DensityModel::weibull(2.0, 1.5).unwrap();
        assert!(min_product_over_square(&g, &w, 1.0, 3.0).unwrap().at_corner);
    }

    #[test]
    fn overlapping_blocks_rejected() {
        let b1 = standard_block();
        let b2 = PerturbationBlock { v: 2.1, ..b1 };
        assert!(JointDensityModel::new(exp1(), exp1(), vec![b1, b2]).is_err());
    }

    #[test]
    fn joint_examples() {
        let j = standard_model();
        let b = j.blocks()[0];
        // far from every disc
        let v = joint_pdf(&j, 0.5, 4.0).unwrap();
        assert!((v - (-4.5_f64).exp()).abs() < 1e-16);
        let c = b.center();
        let s = (b.nu * c * c).sin();
        let v = joint_pdf(&j, c, c).unwrap();
        let expected = (-2.0 * c).exp() - b.beta * s;
        assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        assert_eq!(joint_pdf(&j, -1.0, 1.0).unwrap(), 0.0);
        assert_eq!(joint_pdf(&j, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn intersections() {
        let c = 2.5;
        let roots = hyperbola_circle_intersections(c, c, 0.2, c * c);
        assert_eq!(roots.len(), 2);
        assert!(roots[0] < c && c < roots[1]);
        assert!((roots[0] * roots[1] - c * c).abs() < 1e-10);
        for x in &roots {
            let d = (x - c).powi(2) + (c * c / x - c).powi(2);
            assert!((d.sqrt() - 0.2).abs() < 1e-10);
        }
        // vertex (√z, √z) far away from the disc
        assert!(hyperbola_circle_intersections(c, c, 0.2, 9.0).is_empty());
        assert!(hyperbola_circle_intersections(c, c, 0.2, 4.0).is_empty());
    }

    #[test]
    fn window_crossings_interleave() {
        let b = standard_block();
        let (lo, hi) = b.window();
        for i in 0..=10 {
            let z = lo + (hi - lo) * (i as f64 + 0.5) / 11.0;
            let (x1, x4) = outer_crossings(&b, z).unwrap();
            let (x2, x3) = inner_crossings(&b, z).unwrap();
            assert!(x1 < x2 && x2 < x3 && x3 < x4);
        }
        assert!(window_log_ratio_bound(&b).unwrap() > 0.05);
    }

    #[test]
    fn middle_integral_examples() {
        let b = standard_block();
        let c = b.center();
        let z = c * c;
        let zero = b.with_nu(PI * 400.0 / z).unwrap();
        assert!(middle_integral_closed_form(&zero, z).unwrap().abs() < 1e-12 * b.beta);
        let one = b.with_nu(PI * 400.5 / z).unwrap();
        let v = middle_integral_closed_form(&one, z).unwrap();
        let c_lower = window_log_ratio_bound(&one).unwrap();
        assert!(v >= b.beta * c_lower * (1.0 - 1e-9));
        assert!(matches!(
            middle_integral_closed_form(&b, 9.0),
            Err(Error::NoIntersection { .. })
        ));
    }

    #[test]
    fn off_range_equals_independent_product() {
        let j = standard_model();
        for z in [0.5, 1.0, 10.0, 20.0] {
            let g = j.dependent_product_pdf(z).unwrap();
            let p = j.independent().pdf(z).unwrap();
            assert!(((g - p) / p).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_follows_minus_sine_in_window() {
        let j = standard_model();
        let b = j.blocks()[0];
        let (lo, hi) = b.window();
        for i in 0..20 {
            let z = lo + (hi - lo) * (i as f64 + 0.5) / 20.0;
            let s = (b.nu * z).sin();
            if s.abs() < 0.1 {
                continue;
            }
            let diff = j.dependent_product_pdf(z).unwrap() - j.independent().pdf(z).unwrap();
            assert!(diff * s < 0.0, "z={z}: diff {diff}, sin {s}");
        }
    }

    #[test]
    fn marginal_slices() {
        let j = standard_model();
        let b = j.blocks()[0];
        for x in [0.7, b.center(), b.v - 0.5 * b.a, b.center() + 0.15] {
            for axis in [Axis::X, Axis::Y] {
                let r = j.marginal_check(axis, x).unwrap();
                assert!(r <= 1e-8, "{axis:?} at {x}: {r}");
            }
        }
    }

    #[test]
    fn halton_points() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn demo_needs_two_blocks() {
        let r = limsup_liminf_demo(
            &exp1(),
            &exp1(),
            1,
            &DemoConfig::default(),
            &SlopeSearchConfig::default(),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn weak_targets_met_at_initial_frequency() {
        let j = standard_model();
        let (found, w) = slope_search(&j, 0, 1e-6, 1e-6, &SlopeSearchConfig::default()).unwrap();
        assert_eq!(w.nu, found.blocks()[0].initial_nu());
        assert!(w.slope_at_star > 0.0 && w.slope_at_star_star < 0.0);
        assert!(w.lin_max > 0.0 && w.lin_min < 0.0);
        let (lo, hi) = w.window;
        assert!(lo < w.z_star && w.z_star < hi && lo < w.z_star_star && w.z_star_star < hi);
    }

    #[test]
    fn budget_exceeded_is_reported() {
        let j = standard_model();
        let tight = SlopeSearchConfig {
            max_doublings: 1,
            ..SlopeSearchConfig::default()
        };
        let r = slope_search(&j, 0, 1e6, 1e6, &tight);
        assert!(matches!(r, Err(Error::SearchBudgetExceeded { .. })));
    }
}
