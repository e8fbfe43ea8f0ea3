//! Closed-form distributions of class-row elements, plus sample sigma.
//!
//! A class row built from `n` random bipolar vectors has elements distributed
//! as a shifted binomial on `{-n, -n+2, ..., n}` with standard deviation
//! `sqrt(n)`. When the summed vectors carry uniform reals in `[-1, 1]` the
//! element follows an Irwin-Hall law rescaled to `[-n, n]`.

use crate::error::{HdError, Result};
use crate::hv::IntHV;

/// `ln(k!)` by direct summation.
fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `C(n, k)` exactly for `n <= 20`.
fn binomial_exact(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Probability that a sum of `n` independent fair `±1` draws equals `value`.
///
/// Values outside `[-n, n]` or with the wrong parity have probability zero.
pub fn class_element_pmf(n: u64, value: i64) -> Result<f64> {
    if n == 0 {
        return Err(HdError::ZeroCount);
    }
    let ni = n as i64;
    if value.abs() > ni || (value + ni).rem_euclid(2) != 0 {
        return Ok(0.0);
    }
    let successes = ((value + ni) / 2) as u64;
    if n <= 20 {
        Ok(binomial_exact(n, successes) as f64 / (1u64 << n) as f64)
    } else {
        Ok((ln_binomial(n, successes) - n as f64 * std::f64::consts::LN_2).exp())
    }
}

/// Density of the sum of `n` independent uniforms on `[-1, 1]`.
///
/// Zero outside `[-n, n]`.
pub fn irwin_hall_pdf(x: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(HdError::ZeroCount);
    }
    let nf = n as f64;
    if !(-nf..=nf).contains(&x) {
        return Ok(0.0);
    }
    // the density is symmetric; the lower half has fewer alternating terms
    let t = (nf - x.abs()) / 2.0;
    let upper = (t.floor() as u64).min(n);
    let lead = if n <= 20 {
        1.0 / (2.0 * (1..n).product::<u64>() as f64)
    } else {
        (-(2f64.ln()) - ln_factorial(n - 1)).exp()
    };
    let mut sum = 0.0;
    let mut c = 1.0f64;
    for k in 0..=upper {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * c * (t - k as f64).powi(n as i32 - 1);
        c = c * (n - k) as f64 / (k + 1) as f64;
    }
    Ok((lead * sum).max(0.0))
}

/// Sample standard deviation (denominator `D - 1`) of a row's elements.
pub fn row_sigma(v: &IntHV) -> Result<f64> {
    let d = v.dim();
    if d < 2 {
        return Err(HdError::InvalidDimension(d));
    }
    let vals = v.values();
    let mean = vals.iter().map(|&x| x as f64).sum::<f64>() / d as f64;
    let ss: f64 = vals.iter().map(|&x| (x as f64 - mean).powi(2)).sum();
    Ok((ss / (d - 1) as f64).sqrt())
}
