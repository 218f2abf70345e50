//! Owen's T function, `T(h, a) = (1/2π) ∫₀ᵃ exp(-h²(1+x²)/2) / (1+x²) dx`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

use super::quad::integrate;

const TWO_PI: f64 = 2.0 * PI;

fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Owen's T. Exact symmetries `T(-h, a) = T(h, a)` and `T(h, -a) = -T(h, a)` are
/// enforced by reducing to `h ≥ 0, a ≥ 0` first.
pub fn owens_t(h: f64, a: f64) -> f64 {
    if a == 0.0 || h.is_infinite() {
        return 0.0;
    }
    if h.is_nan() || a.is_nan() {
        return f64::NAN;
    }
    let sign = a.signum();
    sign * owens_t_positive(h.abs(), a.abs())
}

fn owens_t_positive(h: f64, a: f64) -> f64 {
    if h == 0.0 {
        return a.atan() / TWO_PI;
    }
    if a == 1.0 {
        let q = upper_tail(h);
        return 0.5 * q * (1.0 - q);
    }
    if a > 1.0 {
        // T(h,a) = ½(Q(h) + Q(ah)) - Q(h)Q(ah) - T(ah, 1/a), written with upper tails
        let ah = a * h;
        let qh = upper_tail(h);
        let qah = upper_tail(ah);
        return 0.5 * (qh + qah) - qh * qah - owens_t_small_a(ah, 1.0 / a);
    }
    owens_t_small_a(h, a)
}

/// `0 < a < 1`, `h ≥ 0`.
fn owens_t_small_a(h: f64, a: f64) -> f64 {
    if h == 0.0 {
        return a.atan() / TWO_PI;
    }
    let x = 0.5 * h * h;
    if x > 700.0 {
        return 0.0;
    }
    if h <= 2.5 {
        series(h, a)
    } else {
        let f = |t: f64| (-x * (1.0 + t * t)).exp() / (1.0 + t * t);
        integrate(f, 0.0, a, 0.0, 1e-14) / TWO_PI
    }
}

/// Owen's series `(1/2π)(atan a - Σ c_j a^{2j+1})` with
/// `c_j = (-1)^j (1 - e^{-x} Σ_{i≤j} x^i/i!) / (2j+1)`, `x = h²/2`.
fn series(h: f64, a: f64) -> f64 {
    let x = 0.5 * h * h;
    let ex = (-x).exp();
    let a2 = a * a;
    let mut term_x = 1.0; // x^j / j!
    let mut partial = 1.0; // Σ_{i≤j} x^i/i!
    let mut a_pow = a; // a^{2j+1}
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 0..2000 {
        let c = (1.0 - ex * partial) / (2 * j + 1) as f64;
        let t = sign * c * a_pow;
        sum += t;
        if t.abs() <= 1e-17 * sum.abs().max(1e-300) && j > 2 {
            break;
        }
        sign = -sign;
        a_pow *= a2;
        term_x *= x / (j + 1) as f64;
        partial += term_x;
    }
    (a.atan() - sum) / TWO_PI
}
