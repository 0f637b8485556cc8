//! Lin's function `L_f(x) = −x f′(x)/f(x)` for arbitrary densities, grid
//! checks of Lin's condition, and the ratio `τ(x) = f(ax)/f(bx)`.

use rayon::prelude::*;

use crate::density::{Density, DensityModel};
use crate::error::{domain, Error, Result};
use crate::format_value;
use crate::quadrature::try_differentiate;

/// Consecutive Lin values may dip by at most this much (relative to `max(1, |L|)`)
/// and still count as increasing.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// Growth across the grid required by the divergence heuristic.
pub const DIVERGENCE_GROWTH: f64 = 10.0;

/// Numerical Lin function, `−x · d/dx ln f(x)`.
///
/// The derivative is taken with [`try_differentiate`] on `ln f`, using the
/// smaller of `scale_hint`, the density's own [`Density::scale_hint`] and
/// `x/2` as step ceiling.
pub fn lin_function<D: Density + ?Sized>(d: &D, x: f64, scale_hint: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("Lin's function needs x > 0, got {x}")));
    }
    let ln_fx = d.ln_pdf(x)?;
    if ln_fx == f64::NEG_INFINITY {
        return Err(Error::ZeroDensity(x));
    }
    let hint = scale_hint.min(d.scale_hint(x)).min(0.5 * x);
    let slope = try_differentiate(
        |t| {
            let v = d.ln_pdf(t)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::ZeroDensity(t))
            }
        },
        x,
        hint,
    )?;
    Ok(-x * slope)
}

/// Geometric grid of `points` nodes from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo * (ratio * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

/// Lin values on a grid, with monotonicity and divergence verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct LinConditionReport {
    pub x0: f64,
    pub grid: Vec<f64>,
    pub lin_values: Vec<f64>,
    pub monotone: bool,
    /// `(index, deficit)` for every node whose value drops below its predecessor.
    pub monotone_violations: Vec<(usize, f64)>,
    pub divergence_heuristic: bool,
}

impl LinConditionReport {
    /// Builds the verdicts from already computed values.
    pub fn from_values(grid: Vec<f64>, lin_values: Vec<f64>) -> Result<Self> {
        if grid.len() != lin_values.len() || grid.len() < 2 {
            return Err(domain(
                "grid and values must have equal length of at least 2",
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("grid must be strictly ascending"));
        }
        let monotone_violations: Vec<(usize, f64)> = lin_values
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let deficit = w[0] - w[1];
                let slack = MONOTONE_SLACK * w[0].abs().max(w[1].abs()).max(1.0);
                (deficit > slack).then_some((i + 1, deficit))
            })
            .collect();
        let monotone = monotone_violations.is_empty();
        let first = lin_values[0];
        let last = lin_values[lin_values.len() - 1];
        Ok(Self {
            x0: grid[0],
            grid,
            lin_values,
            monotone,
            monotone_violations,
            divergence_heuristic: monotone && last > first + DIVERGENCE_GROWTH,
        })
    }

    /// CSV with header `x,lin_value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,lin_value\n");
        for (x, l) in self.grid.iter().zip(&self.lin_values) {
            out.push_str(&format!("{},{}\n", format_value(*x), format_value(*l)));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "monotone={} divergence_heuristic={}",
            self.monotone, self.divergence_heuristic
        )
    }
}

fn check_grid_args(x0: f64, x_max: f64, points: usize) -> Result<()> {
    if !(x0 > 0.0 && x0 < x_max && x_max.is_finite()) {
        return Err(domain(format!(
            "need 0 < x0 < x_max, got x0={x0}, x_max={x_max}"
        )));
    }
    if points < 16 {
        return Err(domain(format!(
            "need at least 16 grid points, got {points}"
        )));
    }
    Ok(())
}

/// Evaluates `lin` on a geometric grid over `[x0, x_max]` and reports the verdicts.
pub fn check_lin_values<F>(lin: F, x0: f64, x_max: f64, points: usize) -> Result<LinConditionReport>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    check_grid_args(x0, x_max, points)?;
    let grid = geometric_grid(x0, x_max, points);
    let values = grid
        .par_iter()
        .map(|&x| lin(x))
        .collect::<Result<Vec<_>>>()?;
    LinConditionReport::from_values(grid, values)
}

/// Grid check of Lin's condition for a density on `[x0, x_max]`.
pub fn check_lin_condition<D: Density + ?Sized>(
    d: &D,
    x0: f64,
    x_max: f64,
    points: usize,
) -> Result<LinConditionReport> {
    check_lin_values(|x| lin_function(d, x, f64::INFINITY), x0, x_max, points)
}

fn check_ratio_args(a: f64, b: f64, x: f64) -> Result<()> {
    if !(a > 0.0 && a < b && b.is_finite()) {
        return Err(domain(format!("need 0 < a < b, got a={a}, b={b}")));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(domain(format!("need x > 0, got {x}")));
    }
    Ok(())
}

/// `τ(x) = f(ax)/f(bx)` for `0 < a < b`.
pub fn tau_ratio(d: &DensityModel, a: f64, b: f64, x: f64) -> Result<f64> {
    check_ratio_args(a, b, x)?;
    Ok((d.ln_pdf(a * x)? - d.ln_pdf(b * x)?).exp())
}

/// Relative residual between a finite-difference `τ′(x)` and
/// `f(ax)/(x f(bx)) · [L_f(bx) − L_f(ax)]`.
pub fn tau_derivative_identity_check(d: &DensityModel, a: f64, b: f64, x: f64) -> Result<f64> {
    check_ratio_args(a, b, x)?;
    let numeric = try_differentiate(|t| tau_ratio(d, a, b, t), x, 0.25 * x)?;
    let tau = tau_ratio(d, a, b, x)?;
    let identity = tau / x * (d.lin_function_closed(b * x)? - d.lin_function_closed(a * x)?);
    Ok((numeric - identity).abs() / identity.abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn lin_of_plain_pdfs() {
        let l = lin_function(&|x: f64| (-x).exp(), 3.0, f64::INFINITY).unwrap();
        assert!((l - 3.0).abs() < 1e-6);
        // smooth plateau: f' = 0 at x = 1
        let plateau = |x: f64| 1.0 / (1.0 + (x - 1.0).powi(4));
        assert!(lin_function(&plateau, 1.0, f64::INFINITY).unwrap().abs() < 1e-9);
        let g = DensityModel::gamma(2.0, 1.0).unwrap();
        assert!(lin_function(&g, 1.0, f64::INFINITY).unwrap().abs() < 1e-6);
    }

    #[test]
    fn vanishing_density_is_reported() {
        let r = lin_function(&|_x: f64| 0.0, 1.0, 1.0);
        assert_eq!(r, Err(Error::ZeroDensity(1.0)));
        let r = lin_function(&|x: f64| (-x * x).exp(), 40.0, 1.0);
        assert!(matches!(r, Err(Error::ZeroDensity(_))));
    }

    #[test]
    fn exponential_and_lognormal_satisfy_the_condition() {
        let e = DensityModel::exponential(1.0).unwrap();
        let r = check_lin_condition(&e, 0.1, 1e4, 64).unwrap();
        assert!(
            r.monotone && r.divergence_heuristic,
            "{:?}",
            r.monotone_violations
        );
        let ln = DensityModel::lognormal(0.0, 1.0).unwrap();
        let r = check_lin_condition(&ln, 0.1, 1e6, 64).unwrap();
        assert!(r.monotone && r.divergence_heuristic);
        assert_eq!(r.summary(), "monotone=true divergence_heuristic=true");
    }

    #[test]
    fn bumpy_density_fails_monotonicity() {
        let bumpy = |x: f64| (-x).exp() * (1.5 + (3.0 * x).sin());
        let r = check_lin_condition(&bumpy, 0.1, 10.0, 64).unwrap();
        assert!(!r.monotone);
        assert!(!r.divergence_heuristic);
        assert!(r.monotone_violations.iter().all(|&(i, d)| i > 0 && d > 0.0));
    }

    #[test]
    fn grid_preconditions() {
        let e = DensityModel::exponential(1.0).unwrap();
        assert!(check_lin_condition(&e, 1.0, 0.5, 64).is_err());
        assert!(check_lin_condition(&e, 0.0, 1.0, 64).is_err());
        assert!(check_lin_condition(&e, 0.1, 1.0, 15).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = LinConditionReport::from_values(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x,lin_value"));
        assert_eq!(
            lines.next(),
            Some("1.0000000000000000e0,1.0000000000000000e0")
        );
    }

    #[test]
    fn tau_examples() {
        let e = DensityModel::exponential(1.0).unwrap();
        assert!((tau_ratio(&e, 1.0, 2.0, 1.0).unwrap() - E).abs() < 1e-14);
        assert!(tau_ratio(&e, 1.0, 1.0, 1.0).is_err());
        assert!(tau_ratio(&e, 2.0, 1.0, 1.0).is_err());
        assert!(tau_ratio(&e, 1.0, 2.0, 0.0).is_err());
        let g = DensityModel::gamma(2.0, 1.0).unwrap();
        assert!((tau_ratio(&g, 1.0, 2.0, 1.0).unwrap() - E / 2.0).abs() < 1e-14);
    }

    #[test]
    fn tau_identity_examples() {
        let cases = [
            (DensityModel::exponential(1.0).unwrap(), 1.0, 2.0, 1.0),
            (DensityModel::weibull(2.0, 1.0).unwrap(), 0.5, 1.5, 2.0),
            (DensityModel::gamma(3.0, 2.0).unwrap(), 1.0, 3.0, 0.7),
        ];
        for (d, a, b, x) in cases {
            let r = tau_derivative_identity_check(&d, a, b, x).unwrap();
            assert!(r <= 1e-5, "{d}: residual {r}");
        }
    }
}
