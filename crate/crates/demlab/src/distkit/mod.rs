//! Distribution functions used across the crate.
//!
//! `erfc` comes from `libm`; log-gamma and the regularised incomplete beta and gamma
//! functions come from `statrs`. Quantiles, log-space discrete masses, the χ² log
//! tail and Owen's T are implemented here.

mod discrete;
mod owens_t;
mod quad;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, gamma};

use crate::error::{ensure, invalid, Error, Result};

pub use discrete::{
    beta_binomial_ln_pmf, beta_binomial_pmf, binomial_cdf, binomial_ln_pmf, binomial_pmf,
    binomial_quantile, binomial_sf,
};
pub use owens_t::owens_t;

/// Default quantile correction constant `c` in `(r - c) / (N - 2c + 1)`.
pub const DEFAULT_QUANTILE_CORRECTION: f64 = 0.4;

/// Commonly quoted alternatives for the quantile correction constant.
/// Only [`DEFAULT_QUANTILE_CORRECTION`] has been checked against simulation.
pub const QUANTILE_CORRECTION_ALTERNATIVES: [f64; 4] = [0.0, 0.375, 0.4, 0.5];

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            invalid(format!("probability must lie in [0, 1], got {value}"))
        }
    }

    /// Clamps a computed value into `[0, 1]`; NaN maps to an error.
    pub fn clamped(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::Numerical("probability evaluated to NaN".into()));
        }
        Ok(Self(value.clamp(0.0, 1.0)))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Self {
        Self(1.0 - self.0)
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Shape parameters of a beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite(),
            || {
                format!(
                    "beta parameters must be positive and finite, got ({}, {})",
                    self.alpha, self.beta
                )
            },
        )
    }

    /// Method-of-moments fit to a mean in `(0, 1)` and a variance below `mean (1 - mean)`.
    pub fn from_moments(mean: f64, variance: f64) -> Result<Self> {
        if !(mean > 0.0 && mean < 1.0) {
            return Err(Error::Degenerate(format!(
                "beta mean must lie in (0, 1), got {mean}"
            )));
        }
        let alpha = ((1.0 - mean) / variance - 1.0 / mean) * mean * mean;
        let beta = alpha * (1.0 / mean - 1.0);
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Degenerate(format!(
                "moment fit gave non-positive shape (alpha={alpha}, beta={beta}) for mean {mean}, variance {variance}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of [`normal_cdf`] for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("normal quantile needs p in (0, 1), got {p}"));
    }
    if p > 0.5 {
        // 1 - p is exact for p in [0.5, 1)
        return Ok(-lower_normal_quantile(1.0 - p));
    }
    Ok(lower_normal_quantile(p))
}

fn lower_normal_quantile(p: f64) -> f64 {
    // ln Φ is close to linear in the lower tail, so Newton converges from either side
    let x0 = acklam(p);
    solve_increasing(
        p.ln(),
        |x| normal_cdf(x).ln(),
        |x| normal_pdf(x) / normal_cdf(x),
        x0,
        -40.0,
        0.0,
    )
    .unwrap_or(x0)
}

/// Rational approximation by P. Acklam, relative error about 1.15e-9. Used as a Newton start.
#[allow(clippy::excessive_precision)]
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Bracketed Newton iteration for `f(x) = target` with `f` increasing on `[lo, hi]`.
/// Steps leaving the bracket are replaced by bisection.
pub(crate) fn solve_increasing(
    target: f64,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    x0: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    const TOL: f64 = 1e-12;
    let mut x = x0.clamp(lo, hi);
    for _ in 0..200 {
        let r = f(x) - target;
        if r == 0.0 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = df(x);
        let mut next = if d > 0.0 && d.is_finite() {
            x - r / d
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= TOL * x.abs().max(1.0) || hi - lo <= TOL * x.abs().max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::Numerical(format!(
        "quantile iteration for target {target} did not converge"
    )))
}

fn check_dof(dof: f64) -> Result<()> {
    ensure(dof > 0.0 && !dof.is_nan(), || {
        format!("degrees of freedom must be positive, got {dof}")
    })
}

/// Student's t density.
pub fn student_t_pdf(x: f64, dof: f64) -> Result<f64> {
    check_dof(dof)?;
    if dof.is_infinite() {
        return Ok(normal_pdf(x));
    }
    let ln = gamma::ln_gamma(0.5 * (dof + 1.0))
        - gamma::ln_gamma(0.5 * dof)
        - 0.5 * (dof * PI).ln()
        - 0.5 * (dof + 1.0) * (x * x / dof).ln_1p();
    Ok(ln.exp())
}

/// Upper tail `P(T > x)`, `x ≥ 0`. Near the centre the complementary form avoids
/// rounding `w` towards one.
fn student_t_upper(x: f64, dof: f64) -> f64 {
    let t2 = x * x;
    let denom = dof + t2;
    let w = dof / denom;
    if x >= 1.0 {
        0.5 * beta_reg(0.5 * dof, 0.5, w)
    } else {
        0.5 * (1.0 - beta_reg(0.5, 0.5 * dof, t2 / denom))
    }
}

/// Student's t CDF; `dof` may be fractional or infinite.
pub fn student_t_cdf(x: f64, dof: f64) -> Result<f64> {
    check_dof(dof)?;
    if dof.is_infinite() || dof > 1e12 {
        return Ok(normal_cdf(x));
    }
    if x.is_nan() {
        return Err(Error::Numerical("t cdf evaluated at NaN".into()));
    }
    if x.is_infinite() {
        return Ok(if x > 0.0 { 1.0 } else { 0.0 });
    }
    let upper = student_t_upper(x.abs(), dof);
    Ok(if x >= 0.0 { 1.0 - upper } else { upper })
}

/// Upper tail `1 - F(x)` of Student's t without cancellation.
pub fn student_t_sf(x: f64, dof: f64) -> Result<f64> {
    student_t_cdf(-x, dof)
}

pub fn student_t_quantile(p: f64, dof: f64) -> Result<f64> {
    check_dof(dof)?;
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("t quantile needs p in (0, 1), got {p}"));
    }
    if dof.is_infinite() || dof > 1e12 {
        return normal_quantile(p);
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let (q, sign) = if p > 0.5 { (1.0 - p, 1.0) } else { (p, -1.0) };
    // search the upper tail: find x ≥ 0 with P(T > x) = q
    let z = -normal_quantile(q)?;
    let mut hi = z.max(1.0);
    while student_t_upper(hi, dof) > q {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical(format!(
                "t quantile overflow for p={p}, dof={dof}"
            )));
        }
    }
    let g = |x: f64| -student_t_upper(x, dof);
    let dg = |x: f64| student_t_pdf(x, dof).unwrap_or(0.0);
    let x = solve_increasing(-q, g, dg, z.min(hi), 0.0, hi)?;
    Ok(sign * x)
}

fn check_chi2_dof(dof: f64) -> Result<()> {
    ensure(dof >= 1.0 && dof.is_finite(), || {
        format!("chi-square degrees of freedom must be >= 1, got {dof}")
    })
}

pub fn chi2_pdf(x: f64, dof: f64) -> Result<f64> {
    check_chi2_dof(dof)?;
    if x <= 0.0 {
        return Ok(if x == 0.0 && dof == 2.0 { 0.5 } else { 0.0 });
    }
    let k = 0.5 * dof;
    Ok(((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - gamma::ln_gamma(k)).exp())
}

pub fn chi2_cdf(x: f64, dof: f64) -> Result<f64> {
    check_chi2_dof(dof)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma::gamma_lr(0.5 * dof, 0.5 * x))
}

/// Right tail `P(X > x)` of the χ² distribution.
pub fn chi2_sf(x: f64, dof: f64) -> Result<f64> {
    check_chi2_dof(dof)?;
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma::gamma_ur(0.5 * dof, 0.5 * x))
}

/// Natural log of the χ² right tail; finite far beyond where [`chi2_sf`] underflows.
pub fn chi2_log_sf(x: f64, dof: f64) -> Result<f64> {
    check_chi2_dof(dof)?;
    let a = 0.5 * dof;
    let y = 0.5 * x;
    if y <= a + 1.0 {
        return Ok(chi2_sf(x, dof)?.ln());
    }
    // modified Lentz evaluation of the continued fraction for Γ(a, y) e^y y^{-a}
    const TINY: f64 = 1e-300;
    let mut b = y + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            return Ok(-y + a * y.ln() - gamma::ln_gamma(a) + h.ln());
        }
    }
    Err(Error::Numerical(format!(
        "chi-square log tail did not converge at x={x}"
    )))
}

pub fn chi2_quantile(q: f64, dof: f64) -> Result<f64> {
    check_chi2_dof(dof)?;
    if !(q > 0.0 && q < 1.0) {
        return invalid(format!("chi-square quantile needs q in (0, 1), got {q}"));
    }
    // Wilson-Hilferty start
    let z = normal_quantile(q)?;
    let v = 2.0 / (9.0 * dof);
    let x0 = (dof * (1.0 - v + z * v.sqrt()).powi(3)).max(1e-8);
    let mut hi = x0.max(1.0) * 2.0;
    while chi2_cdf(hi, dof)? < q {
        hi *= 2.0;
    }
    solve_increasing(
        q,
        |x| chi2_cdf(x, dof).unwrap_or(f64::NAN),
        |x| chi2_pdf(x, dof).unwrap_or(0.0),
        x0,
        0.0,
        hi,
    )
}
