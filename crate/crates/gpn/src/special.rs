//! Scalar special functions used by the evidence calculus and activations.
//!
//! Digamma and trigamma are computed by the shift recurrence
//! `psi(x) = psi(x+1) - 1/x` (resp. `psi'(x) = psi'(x+1) + 1/x^2`) until the
//! argument exceeds 6, then an 8-term Bernoulli asymptotic expansion. At the
//! switch point the truncation error is below 1e-12, comfortably inside the
//! 1e-10 window the evidence calculus needs on its working range.
//! Log-gamma and erf come from `statrs`.

pub use statrs::function::erf::erf;
pub use statrs::function::gamma::ln_gamma;

/// Recurrence/asymptotic switch point shared by digamma and trigamma.
const ASYMPTOTIC_CUTOFF: f64 = 6.0;

/// psi(x) for x > 0. Nonpositive arguments are a caller contract
/// violation; NaN passes through so diverged losses can be reported rather
/// than panicking mid-graph.
pub fn digamma(x: f64) -> f64 {
    assert!(!(x <= 0.0), "digamma: argument must be positive, got {x}");
    let mut shift = 0.0;
    let mut x = x;
    while x <= ASYMPTOTIC_CUTOFF {
        shift -= 1.0 / x;
        x += 1.0;
    }
    // psi(x) ~ ln x - 1/(2x) - sum_k B_{2k} / (2k x^{2k}), eight terms.
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    // Coefficients B_{2k}/(2k) for k = 8..1, evaluated by Horner in 1/x^2.
    for &c in &[
        -3617.0 / 8160.0,
        1.0 / 12.0,
        -691.0 / 32760.0,
        1.0 / 132.0,
        -1.0 / 240.0,
        1.0 / 252.0,
        -1.0 / 120.0,
        1.0 / 12.0,
    ] {
        series = (series + c) * inv2;
    }
    shift + x.ln() - 0.5 / x - series
}

/// psi'(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    assert!(!(x <= 0.0), "trigamma: argument must be positive, got {x}");
    let mut shift = 0.0;
    let mut x = x;
    while x <= ASYMPTOTIC_CUTOFF {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    // psi'(x) ~ 1/x + 1/(2x^2) + sum_k B_{2k} / x^{2k+1}, eight terms.
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    // Coefficients B_{2k} for k = 8..1.
    for &c in &[
        -3617.0 / 510.0,
        7.0 / 6.0,
        -691.0 / 2730.0,
        5.0 / 66.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        1.0 / 6.0,
    ] {
        series = (series + c) * inv2;
    }
    shift + 1.0 / x + 0.5 * inv2 + series / x
}

/// Numerically stable softplus: ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus; softplus(softplus_inv(y)) == y for y > 0.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv: argument must be positive, got {y}");
    y + (-(-y).exp_m1()).ln()
}

/// Logistic sigmoid, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
