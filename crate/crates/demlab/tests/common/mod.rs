//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

pub mod pse_oracle;

/// Adaptive Simpson quadrature with Richardson correction.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * eps {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, eps, 50)
}

pub fn std_normal_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Φ(x) from quadrature of the density.
pub fn normal_cdf_by_quadrature(x: f64) -> f64 {
    0.5 + simpson(&std_normal_density, 0.0, x, 1e-15)
}

/// Root of `g` on `[lo, hi]` by plain bisection (g increasing).
pub fn bisect(g: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * mid.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Exact binomial coefficient.
pub fn choose(n: u64, k: u64) -> u128 {
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c * (n as u128 - i) / (i + 1);
    }
    c
}

/// Student t CDF from quadrature of the unnormalised density after `t = tan(u)`.
pub fn t_cdf_by_quadrature(x: f64, nu: f64) -> f64 {
    use std::f64::consts::PI;
    let kernel = |t: f64| (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0);
    let half = simpson(
        &|u: f64| kernel(u.tan()) / u.cos().powi(2),
        0.0,
        PI / 2.0 - 1e-9,
        1e-14,
    );
    let tail = simpson(
        &|u: f64| kernel(u.tan()) / u.cos().powi(2),
        0.0,
        x.abs().atan(),
        1e-14,
    );
    let v = 0.5 * tail / half;
    if x >= 0.0 {
        0.5 + v
    } else {
        0.5 - v
    }
}

/// Standard normal draw via Box-Muller, independent of the crate's samplers.
pub fn box_muller(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
