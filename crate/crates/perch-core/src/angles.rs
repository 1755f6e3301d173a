//! Angle arithmetic on the circle.

use core::f64::consts::PI;

/// Wraps an angle to `(−π, π]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = (a + PI) % two_pi;
    if r <= 0.0 {
        r += two_pi;
    }
    r - PI
}

/// Signed shortest rotation from `from` to `to`.
#[inline]
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_angle(to - from)
}
