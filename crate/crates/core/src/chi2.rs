//! Chi-square tail probabilities and quantiles via the regularized
//! incomplete gamma function.

use crate::error::{EspError, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn lower_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = a;
    for _ in 0..10_000 {
        n += 1.0;
        term *= x / n;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn upper_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else if x < a + 1.0 {
        1.0 - lower_series(a, x)
    } else {
        upper_fraction(a, x)
    }
}

fn check_dof(dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(EspError::InvalidInput("chi-square dof must be positive".into()));
    }
    Ok(dof as f64)
}

/// Survival function `P(χ²_dof > x)`.
pub fn chi2_sf(x: f64, dof: usize) -> Result<f64> {
    let k = check_dof(dof)?;
    if x.is_nan() || x < 0.0 {
        return Err(EspError::InvalidInput(format!("chi-square argument {x} must be ≥ 0")));
    }
    // split at x/2 = a + 1, i.e. x = dof + 2 in the chi-square scale
    Ok(gamma_q(0.5 * k, 0.5 * x).clamp(0.0, 1.0))
}

fn chi2_pdf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((0.5 * k - 1.0) * x.ln() - 0.5 * x - 0.5 * k * 2f64.ln() - ln_gamma(0.5 * k)).exp()
}

/// Quantile: the `x` with `P(χ²_dof ≤ x) = p`.
pub fn chi2_quantile(p: f64, dof: usize) -> Result<f64> {
    let k = check_dof(dof)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(EspError::InvalidInput(format!("probability {p} must lie in (0, 1)")));
    }
    let target = 1.0 - p;
    let sf = |x: f64| gamma_q(0.5 * k, 0.5 * x);
    let (mut lo, mut hi) = (0.0, k.max(1.0));
    while sf(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if sf(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-6 * hi {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..50 {
        let pdf = chi2_pdf(x, k);
        if !(pdf > 0.0) {
            break;
        }
        let step = (sf(x) - target) / pdf;
        let next = (x + step).clamp(lo, hi);
        let done = (next - x).abs() <= 1e-12 * x.max(1e-300);
        x = next;
        if done {
            break;
        }
    }
    Ok(x)
}
