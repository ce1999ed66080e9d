//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! All three shift the argument upward with the functional recurrence until
//! the asymptotic (Stirling-type) series converges to double precision, then
//! undo the shift.

use libm::log;

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// B_{2k} / (2k (2k-1)), k = 1..8.
const LGAMMA_SERIES: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// B_{2k} / (2k), k = 1..7.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
];

/// B_{2k}, k = 1..7.
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

const LGAMMA_SHIFT: f64 = 8.0;
const DIGAMMA_SHIFT: f64 = 10.0;
const TRIGAMMA_SHIFT: f64 = 12.0;

fn check(function: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { function, value: x })
    }
}

/// Natural log of the Gamma function.
pub fn lgamma(x: f64) -> Result<f64> {
    check("lgamma", x)?;
    Ok(lgamma_unchecked(x))
}

/// Digamma function ψ(x) = d/dx ln Γ(x).
pub fn digamma(x: f64) -> Result<f64> {
    check("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// Trigamma function ψ′(x).
pub fn trigamma(x: f64) -> Result<f64> {
    check("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

/// Log of the multivariate Beta function, Σ ln Γ(αᵢ) − ln Γ(Σ αᵢ).
pub fn log_beta(alpha: &[f64]) -> Result<f64> {
    if alpha.len() < 2 {
        return Err(Error::InvalidDirichlet(alloc::format!(
            "need at least two components, got {}",
            alpha.len()
        )));
    }
    for &a in alpha {
        check("log_beta", a)?;
    }
    Ok(log_beta_unchecked(alpha))
}

pub(crate) fn lgamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut log_shift = 0.0;
    if z < LGAMMA_SHIFT {
        // ln Γ(x) = ln Γ(x + n) − ln(x (x+1) ... (x+n−1))
        let mut prod = 1.0;
        while z < LGAMMA_SHIFT {
            prod *= z;
            z += 1.0;
        }
        log_shift = log(prod);
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut term = inv;
    for &c in &LGAMMA_SERIES {
        series += c * term;
        term *= inv2;
    }
    (z - 0.5) * log(z) - z + HALF_LN_2PI + series - log_shift
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut acc = 0.0;
    while z < DIGAMMA_SHIFT {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let mut series = 0.0;
    let mut term = inv2;
    for &c in &DIGAMMA_SERIES {
        series += c * term;
        term *= inv2;
    }
    acc + log(z) - 0.5 / z - series
}

pub(crate) fn trigamma_unchecked(x: f64) -> f64 {
    let mut z = x;
    let mut acc = 0.0;
    while z < TRIGAMMA_SHIFT {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut term = inv2 * inv;
    for &c in &TRIGAMMA_SERIES {
        series += c * term;
        term *= inv2;
    }
    acc + inv + 0.5 * inv2 + series
}

pub(crate) fn log_beta_unchecked(alpha: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut sum = 0.0;
    for &a in alpha {
        total += lgamma_unchecked(a);
        sum += a;
    }
    total - lgamma_unchecked(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{LN_2, PI};

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    fn grid() -> impl Iterator<Item = f64> {
        // log-spaced over [1e-3, 1e6]
        (0..=180).map(|i| libm::pow(10.0, -3.0 + 9.0 * i as f64 / 180.0))
    }

    #[test]
    fn known_values() {
        assert!(lgamma(1.0).unwrap().abs() < 1e-13);
        assert!((lgamma(5.0).unwrap() - libm::log(24.0)).abs() < 1e-13);
        assert!((lgamma(0.5).unwrap() - 0.5 * libm::log(PI)).abs() < 1e-13);
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-13);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER_GAMMA)).abs() < 1e-13);
        assert!((digamma(0.5).unwrap() - (-EULER_GAMMA - 2.0 * LN_2)).abs() < 1e-13);
        assert!((trigamma(1.0).unwrap() - PI * PI / 6.0).abs() < 1e-13);
        assert!((trigamma(2.0).unwrap() - (PI * PI / 6.0 - 1.0)).abs() < 1e-13);
        assert!((trigamma(0.5).unwrap() - PI * PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        for bad in [0.0, -1.0, -0.5, f64::NAN, f64::INFINITY] {
            assert!(lgamma(bad).is_err());
            assert!(digamma(bad).is_err());
            assert!(trigamma(bad).is_err());
        }
        assert!(log_beta(&[1.0, 0.0]).is_err());
        assert!(log_beta(&[1.0]).is_err());
    }

    #[test]
    fn log_beta_values() {
        assert!(log_beta(&[1.0, 1.0]).unwrap().abs() < 1e-13);
        assert!((log_beta(&[1.0, 1.0, 1.0]).unwrap() + LN_2).abs() < 1e-13);
        assert!((log_beta(&[2.0, 2.0]).unwrap() - libm::log(1.0 / 6.0)).abs() < 1e-13);
    }

    #[test]
    fn lgamma_matches_libm_reference() {
        for x in grid() {
            let ours = lgamma(x).unwrap();
            let reference = libm::lgamma(x);
            // absolute where the value is O(1), relative once it is large
            let tol = 1e-12 * reference.abs().max(1.0);
            assert!((ours - reference).abs() <= tol, "x={x}: {ours} vs {reference}");
        }
    }

    #[test]
    fn digamma_recurrence_and_monotonicity() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..=1000 {
            let x = 0.1 * i as f64;
            let d = digamma(x).unwrap();
            assert!((digamma(x + 1.0).unwrap() - d - 1.0 / x).abs() < 1e-10, "x={x}");
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn trigamma_recurrence() {
        for x in grid() {
            let lhs = trigamma(x).unwrap() - trigamma(x + 1.0).unwrap();
            let rhs = 1.0 / (x * x);
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0), "x={x}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for x in grid().filter(|&x| x > 0.01) {
            let h = 1e-5 * x;
            let fd = (libm::lgamma(x + h) - libm::lgamma(x - h)) / (2.0 * h);
            let d = digamma(x).unwrap();
            assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "digamma x={x}: {fd} vs {d}");

            let fd2 = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            let t = trigamma(x).unwrap();
            assert!((fd2 - t).abs() <= 1e-6 * t, "trigamma x={x}: {fd2} vs {t}");
        }
    }

    #[test]
    fn small_argument_reflection_free_identity() {
        // ψ(x) + 1/x = ψ(x+1); at x = 1e-3 the pole term dominates
        let x = 1e-3;
        let expected = digamma(1.0 + x).unwrap() - 1.0 / x;
        assert!((digamma(x).unwrap() - expected).abs() < 1e-10);
        let expected_t = trigamma(1.0 + x).unwrap() + 1.0 / (x * x);
        assert!((trigamma(x).unwrap() - expected_t).abs() <= 1e-10 * expected_t);
    }
}
