//! Binomial and beta-binomial masses evaluated in log space.
//!
//! The binomial mass uses Loader's saddle-point form, which keeps full relative
//! accuracy for large `n` where direct products under- or overflow.

#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use super::BetaParams;
use crate::error::{ensure, Result};

/// `ln n! - ((n + 1/2) ln n - n + ln √(2π))` at integer `n = 1..=15`.
const STIRLERR_SMALL: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_219_670_2,
    0.041_340_695_955_409_294_093_822_1,
    0.027_677_925_684_998_339_148_789_29,
    0.020_790_672_103_765_093_111_522_77,
    0.016_644_691_189_821_192_163_194_87,
    0.013_876_128_823_070_747_998_745_73,
    0.011_896_709_945_891_770_095_055_72,
    0.010_411_265_261_972_096_497_478_567,
    0.009_255_462_182_712_732_917_728_637,
    0.008_330_563_433_362_871_256_469_318,
    0.007_573_675_487_951_840_794_972_024,
    0.006_942_840_107_209_529_865_664_152,
    0.006_408_994_188_004_207_068_439_631,
    0.005_951_370_112_758_847_735_624_416,
    0.005_554_733_551_962_801_371_038_690,
];

fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        return STIRLERR_SMALL[n as usize];
    }
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, accurate when `x ≈ np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

fn check_binomial(k: u64, n: u64, p: f64) -> Result<()> {
    ensure(k <= n, || {
        format!("binomial outcome {k} exceeds trials {n}")
    })?;
    ensure((0.0..=1.0).contains(&p), || {
        format!("binomial probability must lie in [0, 1], got {p}")
    })
}

/// Natural log of the binomial mass `P(X = k)`, `X ~ Bin(n, p)`.
pub fn binomial_ln_pmf(k: u64, n: u64, p: f64) -> Result<f64> {
    check_binomial(k, n, p)?;
    Ok(ln_pmf_unchecked(k, n, p))
}

fn ln_pmf_unchecked(k: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if k == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 {
            -bd0(nf, nf * q) - nf * p
        } else {
            nf * (-p).ln_1p()
        };
    }
    if k == n {
        return if q < 0.1 {
            -bd0(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let kf = k as f64;
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * q);
    let lf = (2.0 * PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

pub fn binomial_pmf(k: u64, n: u64, p: f64) -> Result<f64> {
    Ok(binomial_ln_pmf(k, n, p)?.exp())
}

fn pmf(k: u64, n: u64, p: f64) -> f64 {
    ln_pmf_unchecked(k, n, p).exp()
}

fn mode(n: u64, p: f64) -> u64 {
    (((n + 1) as f64 * p).floor() as u64).min(n)
}

/// Sum of masses over `from..=to`, walking away from the mode so the loop can stop
/// once terms no longer change the total.
fn tail_sum(n: u64, p: f64, from: u64, to: u64, descending: bool) -> f64 {
    let mut total = 0.0;
    if descending {
        let mut i = to;
        loop {
            let t = pmf(i, n, p);
            total += t;
            if i == from || (t <= total * 1e-17 && i < mode(n, p)) {
                break;
            }
            i -= 1;
        }
    } else {
        let mut i = from;
        loop {
            let t = pmf(i, n, p);
            total += t;
            if i == to || (t <= total * 1e-17 && i > mode(n, p)) {
                break;
            }
            i += 1;
        }
    }
    total
}

/// `P(X ≤ k)`.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> Result<f64> {
    check_binomial(k.min(n), n, p)?;
    if k >= n {
        return Ok(1.0);
    }
    if k < mode(n, p) {
        Ok(tail_sum(n, p, 0, k, true).min(1.0))
    } else {
        Ok((1.0 - tail_sum(n, p, k + 1, n, false)).max(0.0))
    }
}

/// `P(X > k)`, computed directly in the upper tail.
pub fn binomial_sf(k: u64, n: u64, p: f64) -> Result<f64> {
    check_binomial(k.min(n), n, p)?;
    if k >= n {
        return Ok(0.0);
    }
    if k + 1 > mode(n, p) {
        Ok(tail_sum(n, p, k + 1, n, false).min(1.0))
    } else {
        Ok((1.0 - tail_sum(n, p, 0, k, true)).max(0.0))
    }
}

/// Smallest `k` with `P(X ≤ k) ≥ q`.
pub fn binomial_quantile(q: f64, n: u64, p: f64) -> Result<u64> {
    check_binomial(0, n, p)?;
    ensure((0.0..=1.0).contains(&q), || {
        format!("quantile level must lie in [0, 1], got {q}")
    })?;
    let target = q * (1.0 - 64.0 * f64::EPSILON);
    if q == 0.0 || p == 0.0 {
        return Ok(0);
    }
    if q >= 1.0 || p == 1.0 {
        return Ok(n);
    }
    let nf = n as f64;
    let sd = (nf * p * (1.0 - p)).sqrt();
    let z = super::normal_quantile(q).unwrap_or(0.0);
    let mut k = (nf * p + sd * z).round().clamp(0.0, nf) as u64;
    let mut c = binomial_cdf(k, n, p)?;
    if c >= target {
        while k > 0 {
            let below = c - pmf(k, n, p);
            if below >= target {
                c = below;
                k -= 1;
            } else {
                break;
            }
        }
    } else {
        while c < target && k < n {
            k += 1;
            c += pmf(k, n, p);
        }
    }
    Ok(k)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Natural log of the beta-binomial mass, `∫ Bin(k | n, p) Beta(p | α, β) dp`.
pub fn beta_binomial_ln_pmf(k: u64, n: u64, params: BetaParams) -> Result<f64> {
    params.validate()?;
    ensure(k <= n, || {
        format!("beta-binomial outcome {k} exceeds trials {n}")
    })?;
    let (a, b) = (params.alpha, params.beta);
    Ok(ln_choose(n, k) + ln_beta(k as f64 + a, (n - k) as f64 + b) - ln_beta(a, b))
}

pub fn beta_binomial_pmf(k: u64, n: u64, params: BetaParams) -> Result<f64> {
    Ok(beta_binomial_ln_pmf(k, n, params)?.exp())
}
