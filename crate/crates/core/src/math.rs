//! Scalar float functions routed through `libm`, so results do not depend on
//! whether `std` is linked.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// `x^n` by repeated multiplication.
#[inline]
pub fn powi(x: f64, n: usize) -> f64 {
    let mut r = 1.0;
    for _ in 0..n {
        r *= x;
    }
    r
}
