//! Scalar and multivariate log-gamma / digamma.
//!
//! The multivariate gamma function is
//! `Γ_p(x) = π^{p(p-1)/4} Π_{i=1..p} Γ(x + (1-i)/2)`, defined for `x > (p-1)/2`.

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

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Digamma `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number asymptotic tail
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - tail
}

fn check_domain(p: usize, x: f64, name: &str) -> Result<()> {
    if p == 0 {
        return Err(Error::Domain(format!("{name}: dimension must be positive")));
    }
    let bound = (p as f64 - 1.0) / 2.0;
    if !(x > bound) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "{name}({p}, {x}): argument must exceed {bound}"
        )));
    }
    Ok(())
}

/// `log Γ_p(x)`.
pub fn lmvgamma(p: usize, x: f64) -> Result<f64> {
    check_domain(p, x, "lmvgamma")?;
    let pf = p as f64;
    let mut s = pf * (pf - 1.0) / 4.0 * PI.ln();
    for i in 0..p {
        s += ln_gamma(x - i as f64 / 2.0);
    }
    Ok(s)
}

/// `ψ_p(x) = d/dx log Γ_p(x)`.
pub fn mvdigamma(p: usize, x: f64) -> Result<f64> {
    check_domain(p, x, "mvdigamma")?;
    Ok((0..p).map(|i| digamma(x - i as f64 / 2.0)).sum())
}
