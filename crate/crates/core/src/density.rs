//! Positive densities on `(0, ∞)` with closed-form Lin functions.
//!
//! Each family implements [`DensityFamily`] and is registered by name in
//! [`FamilyRegistry`]; a [`DensityModel`] is a validated handle to one family
//! instance. Densities are written on the command line as `family:p1,p2`,
//! e.g. `gamma:2,1`.
//!
//! | name        | parameters    | Lin function                 |
//! |-------------|---------------|------------------------------|
//! | `exp`       | rate λ        | λx                           |
//! | `gamma`     | shape k, rate λ | λx − (k − 1)               |
//! | `weibull`   | shape k, scale s | k(x/s)^k − (k − 1)        |
//! | `lognormal` | μ, σ          | 1 + (ln x − μ)/σ²            |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Error, Result};

/// Anything with a log-density on `(0, ∞)`.
///
/// Lin's function only needs `ln f`, which stays finite far into the tails
/// where `f` itself underflows.
pub trait Density: Sync {
    fn ln_pdf(&self, x: f64) -> Result<f64>;

    fn pdf(&self, x: f64) -> Result<f64> {
        Ok(self.ln_pdf(x)?.exp())
    }

    /// Smallest feature length near `x` that a finite difference must resolve.
    fn scale_hint(&self, _x: f64) -> f64 {
        f64::INFINITY
    }
}

/// Plain pdf callables. Values at or below `1e-300` are reported as zero density.
impl<F: Fn(f64) -> f64 + Sync> Density for F {
    fn ln_pdf(&self, x: f64) -> Result<f64> {
        let v = self(x);
        if !v.is_finite() {
            return Err(Error::NonFiniteEvaluation { x, value: v });
        }
        if v <= 1e-300 {
            return Err(Error::ZeroDensity(x));
        }
        Ok(v.ln())
    }

    fn pdf(&self, x: f64) -> Result<f64> {
        Ok(self(x))
    }
}

/// One parametric family. Implementations may assume `x > 0`.
pub trait DensityFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn params(&self) -> Vec<f64>;
    fn ln_pdf(&self, x: f64) -> f64;
    fn pdf_derivative(&self, x: f64) -> f64;
    fn lin(&self, x: f64) -> f64;
}

fn require_positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(domain(format!(
            "{name} must be a positive finite number, got {v}"
        )))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Exponential {
    rate: f64,
}

impl Exponential {
    pub fn new(rate: f64) -> Result<Self> {
        Ok(Self {
            rate: require_positive("rate", rate)?,
        })
    }
}

impl DensityFamily for Exponential {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn params(&self) -> Vec<f64> {
        vec![self.rate]
    }
    fn ln_pdf(&self, x: f64) -> f64 {
        self.rate.ln() - self.rate * x
    }
    fn pdf_derivative(&self, x: f64) -> f64 {
        -self.rate * self.rate * (-self.rate * x).exp()
    }
    fn lin(&self, x: f64) -> f64 {
        self.rate * x
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Gamma {
    shape: f64,
    rate: f64,
    ln_norm: f64,
}

impl Gamma {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let shape = require_positive("shape", shape)?;
        let rate = require_positive("rate", rate)?;
        Ok(Self {
            shape,
            rate,
            ln_norm: shape * rate.ln() - ln_gamma(shape),
        })
    }
}

impl DensityFamily for Gamma {
    fn name(&self) -> &'static str {
        "gamma"
    }
    fn params(&self) -> Vec<f64> {
        vec![self.shape, self.rate]
    }
    fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_norm + (self.shape - 1.0) * x.ln() - self.rate * x
    }
    fn pdf_derivative(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp() * ((self.shape - 1.0) / x - self.rate)
    }
    fn lin(&self, x: f64) -> f64 {
        self.rate * x - (self.shape - 1.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Weibull {
    shape: f64,
    scale: f64,
}

impl Weibull {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        Ok(Self {
            shape: require_positive("shape", shape)?,
            scale: require_positive("scale", scale)?,
        })
    }
}

impl DensityFamily for Weibull {
    fn name(&self) -> &'static str {
        "weibull"
    }
    fn params(&self) -> Vec<f64> {
        vec![self.shape, self.scale]
    }
    fn ln_pdf(&self, x: f64) -> f64 {
        let k = self.shape;
        let s = x / self.scale;
        k.ln() - self.scale.ln() + (k - 1.0) * s.ln() - s.powf(k)
    }
    fn pdf_derivative(&self, x: f64) -> f64 {
        let k = self.shape;
        let s = x / self.scale;
        self.ln_pdf(x).exp() * ((k - 1.0) / x - k * s.powf(k - 1.0) / self.scale)
    }
    fn lin(&self, x: f64) -> f64 {
        let k = self.shape;
        k * (x / self.scale).powf(k) - (k - 1.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogNormal {
    mu: f64,
    sigma: f64,
}

impl LogNormal {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(domain(format!("mu must be finite, got {mu}")));
        }
        Ok(Self {
            mu,
            sigma: require_positive("sigma", sigma)?,
        })
    }
}

impl DensityFamily for LogNormal {
    fn name(&self) -> &'static str {
        "lognormal"
    }
    fn params(&self) -> Vec<f64> {
        vec![self.mu, self.sigma]
    }
    fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x.ln() - self.mu) / self.sigma;
        -x.ln() - self.sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
    }
    fn pdf_derivative(&self, x: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        -self.ln_pdf(x).exp() / x * (1.0 + (x.ln() - self.mu) / s2)
    }
    fn lin(&self, x: f64) -> f64 {
        1.0 + (x.ln() - self.mu) / (self.sigma * self.sigma)
    }
}

type Constructor = fn(&[f64]) -> Result<Arc<dyn DensityFamily>>;

/// Name → constructor table for the density families.
pub struct FamilyRegistry {
    entries: Vec<(&'static str, usize, Constructor)>,
}

impl Default for FamilyRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: Vec::new(),
        };
        r.register("exp", 1, |p| Ok(Arc::new(Exponential::new(p[0])?)));
        r.register("gamma", 2, |p| Ok(Arc::new(Gamma::new(p[0], p[1])?)));
        r.register("weibull", 2, |p| Ok(Arc::new(Weibull::new(p[0], p[1])?)));
        r.register("lognormal", 2, |p| {
            Ok(Arc::new(LogNormal::new(p[0], p[1])?))
        });
        r
    }
}

impl FamilyRegistry {
    /// Adds (or replaces) a family under `name` taking `arity` parameters.
    pub fn register(&mut self, name: &'static str, arity: usize, ctor: Constructor) {
        self.entries.retain(|e| e.0 != name);
        self.entries.push((name, arity, ctor));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn build(&self, name: &str, params: &[f64]) -> Result<DensityModel> {
        let (_, arity, ctor) = self.entries.iter().find(|e| e.0 == name).ok_or_else(|| {
            Error::Config(format!(
                "unknown density family `{name}` (known: {})",
                self.names().join(", ")
            ))
        })?;
        if params.len() != *arity {
            return Err(Error::Config(format!(
                "family `{name}` takes {arity} parameter(s), got {}",
                params.len()
            )));
        }
        let family = ctor(params).map_err(|e| Error::Config(e.to_string()))?;
        Ok(DensityModel { family })
    }

    /// Parses `family:p1,p2,...`.
    pub fn parse(&self, text: &str) -> Result<DensityModel> {
        let (name, rest) = text
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("expected `family:params`, got `{text}`")))?;
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase()) {
            return Err(Error::Config(format!(
                "family name must be lowercase, got `{name}`"
            )));
        }
        let params = rest
            .split(',')
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad parameter `{p}` in `{text}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.build(name, &params)
    }
}

/// A validated density from one of the registered families.
#[derive(Clone)]
pub struct DensityModel {
    family: Arc<dyn DensityFamily>,
}

impl fmt::Debug for DensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for DensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<String> = self.family.params().iter().map(|p| p.to_string()).collect();
        write!(f, "{}:{}", self.family.name(), params.join(","))
    }
}

impl FromStr for DensityModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FamilyRegistry::default().parse(s)
    }
}

fn require_domain(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(domain(format!(
            "density argument must be positive, got {x}"
        )))
    }
}

impl DensityModel {
    pub fn from_family(family: Arc<dyn DensityFamily>) -> Self {
        Self { family }
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Ok(Self::from_family(Arc::new(Exponential::new(rate)?)))
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Ok(Self::from_family(Arc::new(Gamma::new(shape, rate)?)))
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        Ok(Self::from_family(Arc::new(Weibull::new(shape, scale)?)))
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        Ok(Self::from_family(Arc::new(LogNormal::new(mu, sigma)?)))
    }

    pub fn family(&self) -> &dyn DensityFamily {
        self.family.as_ref()
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        require_domain(x)?;
        Ok(self.family.ln_pdf(x).exp())
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        require_domain(x)?;
        Ok(self.family.ln_pdf(x))
    }

    pub fn pdf_derivative(&self, x: f64) -> Result<f64> {
        require_domain(x)?;
        Ok(self.family.pdf_derivative(x))
    }

    /// Closed-form Lin function `−x f′(x) / f(x)`.
    pub fn lin_function_closed(&self, x: f64) -> Result<f64> {
        require_domain(x)?;
        Ok(self.family.lin(x))
    }

    // Unchecked variants for hot loops whose arguments are positive by construction.
    pub(crate) fn ln_pdf_unchecked(&self, x: f64) -> f64 {
        self.family.ln_pdf(x)
    }

    pub(crate) fn pdf_unchecked(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.family.ln_pdf(x).exp()
        } else {
            0.0
        }
    }

    pub(crate) fn lin_unchecked(&self, x: f64) -> f64 {
        self.family.lin(x)
    }
}

impl Density for DensityModel {
    fn ln_pdf(&self, x: f64) -> Result<f64> {
        DensityModel::ln_pdf(self, x)
    }
}
