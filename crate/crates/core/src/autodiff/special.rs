//! Log-gamma, digamma and the Beta density.
//!
//! `ln Γ` uses the Lanczos approximation with g = 7 and nine coefficients;
//! digamma is the analytic derivative of that same series, so the pair is
//! consistent for gradient checks. Arguments below 0.5 go through the
//! reflection formula.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln(sqrt(2π))
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Series sum A(z) and its derivative A'(z).
fn lanczos_series(z: f64) -> (f64, f64) {
    let mut a = LANCZOS_COEF[0];
    let mut da = 0.0;
    for (k, &p) in LANCZOS_COEF.iter().enumerate().skip(1) {
        let denom = z + k as f64;
        a += p / denom;
        da -= p / (denom * denom);
    }
    (a, da)
}

fn check_positive(op: &'static str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(op, format!("argument must be positive and finite, got {x}")))
    }
}

/// ln Γ(x) for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1-x) = π / sin(πx), and sin(πx) > 0 on (0, 0.5)
        return (PI / (PI * x).sin()).ln() - log_gamma_unchecked(1.0 - x);
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    let (a, _) = lanczos_series(z);
    LN_SQRT_2PI + (z + 0.5) * t.ln() - t + a.ln()
}

/// ψ(x) = d/dx ln Γ(x), differentiated from the same Lanczos series.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        return digamma_unchecked(1.0 - x) - PI / (PI * x).tan();
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    let (a, da) = lanczos_series(z);
    t.ln() + (z + 0.5) / t - 1.0 + da / a
}

/// ln B(a, b)^{-1} = ln Γ(a+b) − ln Γ(a) − ln Γ(b), the log normalizing constant.
pub fn log_beta_norm(a: f64, b: f64) -> Result<f64> {
    check_positive("beta", a)?;
    check_positive("beta", b)?;
    Ok(log_gamma_unchecked(a + b) - log_gamma_unchecked(a) - log_gamma_unchecked(b))
}

/// Beta(a, b) density at x ∈ (0, 1).
pub fn beta_pdf(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::domain("beta_pdf", format!("x must lie in (0,1), got {x}")));
    }
    let ln = log_beta_norm(a, b)? + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln();
    Ok(ln.exp())
}
