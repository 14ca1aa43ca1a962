//! Scalar special functions: standard normal density/CDF and the logistic function.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Φ(z), evaluated through erfc so both tails keep full relative precision.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log σ(x) without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// E|Z - a| for standard normal Z: a(2Φ(a) - 1) + 2φ(a).
pub fn mean_abs_deviation(a: f64) -> f64 {
    a * (2.0 * normal_cdf(a) - 1.0) + 2.0 * normal_pdf(a)
}

/// The K = 1 gradient constant E|ε₁ - ε₂| = 2/√π for independent standard normals.
pub fn two_over_sqrt_pi() -> f64 {
    2.0 / PI.sqrt()
}
