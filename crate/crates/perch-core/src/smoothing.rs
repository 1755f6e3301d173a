//! C2/C1 smoothing primitives used by every penalty term.
//!
//! Each function returns the value and its first derivative as a pair, so
//! penalty code never re-derives branch logic. All three are exact zero on
//! their inactive side, which keeps inactive constraints out of the gradient.

/// Cubic hinge `max(x, 0)^3`.
///
/// Twice continuously differentiable at the origin. Returns `(value, d/dx)`.
#[inline]
pub fn cubic_hinge(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0)
    } else {
        (x * x * x, 3.0 * x * x)
    }
}

/// C2-smoothed one-sided L1 ramp with transition width `mu`.
///
/// Zero for `x <= 0`, cubic blend on `(0, mu]`, then the affine tail
/// `x - mu/2`. Returns `(value, d/dx)`.
///
/// Panics if `mu <= 0`.
#[inline]
pub fn smooth_l1(x: f64, mu: f64) -> (f64, f64) {
    assert!(mu > 0.0, "smoothing width mu must be positive");
    if x <= 0.0 {
        (0.0, 0.0)
    } else if x <= mu {
        let r = x / mu;
        let r2 = r * r;
        let r3 = r2 * r;
        let v = (mu - 0.5 * x) * r3;
        let d = -0.5 * r3 + (mu - 0.5 * x) * 3.0 * r2 / mu;
        (v, d)
    } else {
        (x - 0.5 * mu, 1.0)
    }
}

/// C1-smoothed unit step with half-width `eps`.
///
/// Zero for `x <= -eps`, one for `x > eps`, and a quartic blend in between
/// that passes through `1/2` at the origin with slope `1/eps`.
/// Returns `(value, d/dx)`.
///
/// Panics if `eps <= 0`.
#[inline]
pub fn smooth_step(x: f64, eps: f64) -> (f64, f64) {
    assert!(eps > 0.0, "smoothing width eps must be positive");
    if x <= -eps {
        (0.0, 0.0)
    } else if x <= 0.0 {
        let s = 0.5 / (eps * eps * eps * eps);
        let a = x + eps;
        let a2 = a * a;
        let v = s * a2 * a * (eps - x);
        let d = s * a2 * (3.0 * (eps - x) - a);
        (v, d)
    } else if x <= eps {
        let s = 0.5 / (eps * eps * eps * eps);
        let a = x - eps;
        let a2 = a * a;
        let v = s * a2 * a * (eps + x) + 1.0;
        let d = s * a2 * (3.0 * (eps + x) + a);
        (v, d)
    } else {
        (1.0, 0.0)
    }
}
