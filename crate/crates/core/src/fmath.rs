//! Floating-point helpers usable from no_std builds.
//!
//! Every transcendental call in the crate goes through this module so the
//! core builds without std; it is a thin veneer over `libm` plus a few small
//! numeric utilities shared across modules.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

/// Natural log of the Gamma function.
#[inline]
pub fn lgamma(x: f64) -> f64 {
    // libm's lgamma_r also returns the sign of Gamma; for the positive
    // arguments used here the sign is always +1.
    libm::lgamma_r(x).0
}

/// ln(n!) computed through lgamma; exact to double precision for all n.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    lgamma(n as f64 + 1.0)
}

/// Integer power by repeated squaring; exact for moderate exponents, no
/// transcendental round-off.
pub fn powi(x: f64, n: i32) -> f64 {
    if n < 0 {
        return 1.0 / powi(x, -n);
    }
    let mut base = x;
    let mut k = n as u32;
    let mut acc = 1.0;
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        base *= base;
        k >>= 1;
    }
    acc
}

#[inline]
pub fn max(a: f64, b: f64) -> f64 {
    if a > b || b.is_nan() {
        a
    } else {
        b
    }
}

#[inline]
pub fn min(a: f64, b: f64) -> f64 {
    if a < b || b.is_nan() {
        a
    } else {
        b
    }
}

/// log(Σ e^{x_i}) without overflow; empty input returns −∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    for &x in xs {
        peak = max(peak, x);
    }
    if !peak.is_finite() {
        return peak;
    }
    let mut acc = 0.0;
    for &x in xs {
        acc += exp(x - peak);
    }
    peak + ln(acc)
}
