//! Differential-flatness recovery and contact geometry.
//!
//! A multirotor's attitude, mass-normalized thrust, and body rates are all
//! functions of the flat output (position, yaw) and its derivatives. This
//! module recovers them through the Hopf-fibration quaternion, which keeps
//! the only singularity at straight-down attitude, and provides the
//! disc-versus-half-space violation measure used for contact-safe perching.

use core::fmt;

use nalgebra::{Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
#[allow(unused_imports)] // resolves f64 math in no_std builds; shadowed by inherent methods under test
use num_traits::Float;

/// Standard gravity, m/s². Scenario configs may override it.
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Thrust below this is treated as free fall: attitude is unobservable.
pub const MIN_THRUST: f64 = 0.1;

/// Reject attitudes within this margin of straight-down (c_z + 1 small).
pub const HOPF_FLOOR: f64 = 1e-3;

/// Flat output with enough derivatives for attitude and body-rate recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSample {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub jerk: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl Default for FlatSample {
    fn default() -> Self {
        Self {
            pos: Vector3::zeros(),
            vel: Vector3::zeros(),
            acc: Vector3::zeros(),
            jerk: Vector3::zeros(),
            yaw: 0.0,
            yaw_rate: 0.0,
        }
    }
}

/// Attitude, thrust, and body rates recovered from a [`FlatSample`].
#[derive(Debug, Clone, Copy)]
pub struct AttitudeState {
    /// Rotation taking body axes to world axes; `quat * e3 = z_body`.
    pub quat: UnitQuaternion<f64>,
    pub z_body: Vector3<f64>,
    /// Mass-normalized thrust magnitude, m/s².
    pub thrust: f64,
    /// Roll/pitch rates in the body frame, rad/s.
    pub body_rate_xy: Vector2<f64>,
    /// Yaw-axis body rate, approximated by the flat yaw rate.
    pub body_rate_z: f64,
}

/// Quadrotor contact geometry: a rigid disc of radius `radius` whose plane
/// sits `underside_offset` below the center of mass along the body z axis.
#[derive(Debug, Clone, Copy)]
pub struct DiscModel {
    pub radius: f64,
    pub underside_offset: f64,
}

impl DiscModel {
    pub fn new(radius: f64, underside_offset: f64) -> Self {
        assert!(radius > 0.0, "disc radius must be positive");
        assert!(underside_offset >= 0.0, "underside offset must be non-negative");
        Self { radius, underside_offset }
    }
}

/// Perching surface: an oriented plane rigidly attached to the target,
/// rotating with its heading.
#[derive(Debug, Clone, Copy)]
pub struct PerchPlane {
    /// Point on the plane (the landing point), world frame.
    pub point: Vector3<f64>,
    /// Target heading applied on top of the base orientation.
    pub heading: f64,
    /// Surface normal at zero heading.
    pub base_normal: Vector3<f64>,
    pub x_axis: Vector3<f64>,
    pub y_axis: Vector3<f64>,
    pub z_axis: Vector3<f64>,
}

impl PerchPlane {
    /// Builds the plane from a base frame (axes at zero heading) rotated by
    /// `heading` about the world z axis.
    pub fn new(
        point: Vector3<f64>,
        heading: f64,
        base_x: Vector3<f64>,
        base_y: Vector3<f64>,
        base_normal: Vector3<f64>,
    ) -> Self {
        let rz = rot_z(heading);
        Self {
            point,
            heading,
            base_normal,
            x_axis: rz * base_x,
            y_axis: rz * base_y,
            z_axis: rz * base_normal,
        }
    }

    /// Surface pitched by `incline` radians about the base y axis, so the
    /// normal tips backward (toward a follower) as the incline grows:
    /// 0 is a roof, π/2 a tailgate.
    pub fn from_incline(point: Vector3<f64>, heading: f64, incline: f64) -> Self {
        let (s, c) = incline.sin_cos();
        Self::new(
            point,
            heading,
            Vector3::new(c, 0.0, s),
            Vector3::y(),
            Vector3::new(-s, 0.0, c),
        )
    }

    /// Supporting half-space `hᵀx ≤ b` containing the feasible side.
    pub fn halfspace(&self) -> (Vector3<f64>, f64) {
        let h = -self.z_axis;
        (h, h.dot(&self.point))
    }

    /// The same rigid surface carried to a new landing point and heading.
    pub fn at(&self, point: Vector3<f64>, heading: f64) -> Self {
        let rz = rot_z(heading - self.heading);
        Self {
            point,
            heading,
            base_normal: self.base_normal,
            x_axis: rz * self.x_axis,
            y_axis: rz * self.y_axis,
            z_axis: rz * self.z_axis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlatnessError {
    /// Thrust below [`MIN_THRUST`]: the vehicle is in free fall and the
    /// flatness map does not determine attitude.
    SingularAttitude,
    /// Body z within [`HOPF_FLOOR`] of straight down, where the Hopf chart
    /// degenerates.
    HopfSingularity,
}

impl fmt::Display for FlatnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SingularAttitude => write!(f, "thrust too small to define attitude"),
            Self::HopfSingularity => write!(f, "attitude too close to straight down"),
        }
    }
}

impl core::error::Error for FlatnessError {}

/// Rotation about the world z axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Jacobian of `x ↦ x/‖x‖`, i.e. `(I − x̂x̂ᵀ)/‖x‖`. Symmetric.
pub fn normalized_direction_jacobian(x: &Vector3<f64>) -> Matrix3<f64> {
    let n = x.norm();
    let u = x / n;
    (Matrix3::identity() - u * u.transpose()) / n
}

/// Mass-normalized thrust vector `acc + ḡ·e₃`.
#[inline]
pub fn thrust_vector(acc: &Vector3<f64>, gravity: f64) -> Vector3<f64> {
    Vector3::new(acc.x, acc.y, acc.z + gravity)
}

/// Tilt-only quaternion taking `e₃` to `z_body` along the Hopf fiber.
///
/// Exact unit norm by construction; errors if `z_body` is within
/// [`HOPF_FLOOR`] of straight down.
pub fn hopf_quaternion(z_body: &Vector3<f64>) -> Result<UnitQuaternion<f64>, FlatnessError> {
    let (a, b, c) = (z_body.x, z_body.y, z_body.z);
    if c + 1.0 < HOPF_FLOOR {
        return Err(FlatnessError::HopfSingularity);
    }
    let s = 1.0 / (2.0 * (1.0 + c)).sqrt();
    Ok(UnitQuaternion::new_unchecked(Quaternion::new(
        s * (1.0 + c),
        -s * b,
        s * a,
        0.0,
    )))
}

/// Recovers attitude, thrust, and body rates from flat-output derivatives.
pub fn recover_attitude(s: &FlatSample, gravity: f64) -> Result<AttitudeState, FlatnessError> {
    let tau = thrust_vector(&s.acc, gravity);
    let thrust = tau.norm();
    if thrust < MIN_THRUST {
        return Err(FlatnessError::SingularAttitude);
    }
    let z_body = tau / thrust;
    let q_abc = hopf_quaternion(&z_body)?;
    let half = 0.5 * s.yaw;
    let q_yaw = UnitQuaternion::new_unchecked(Quaternion::new(half.cos(), 0.0, 0.0, half.sin()));
    let quat = q_abc * q_yaw;

    // ż_b = f_DN(τ)·jerk; in the body frame ż_b = R(ω_y, −ω_x, 0)ᵀ.
    let z_dot = normalized_direction_jacobian(&tau) * s.jerk;
    let body = quat.inverse_transform_vector(&z_dot);
    Ok(AttitudeState {
        quat,
        z_body,
        thrust,
        body_rate_xy: Vector2::new(-body.y, body.x),
        body_rate_z: s.yaw_rate,
    })
}

/// First two rows of the tilt rotation transpose, in closed form.
///
/// Maps a world vector to the disc plane's in-plane coordinates, so
/// `‖flat_basis(z_b)·h‖` is the length of `h`'s projection onto the disc.
pub fn flat_basis(z_body: &Vector3<f64>) -> Result<Matrix2x3<f64>, FlatnessError> {
    let (a, b, c) = (z_body.x, z_body.y, z_body.z);
    if c + 1.0 < HOPF_FLOOR {
        return Err(FlatnessError::HopfSingularity);
    }
    let k = 1.0 / (1.0 + c);
    Ok(Matrix2x3::new(
        1.0 - a * a * k,
        -a * b * k,
        -a,
        -a * b * k,
        1.0 - b * b * k,
        -b,
    ))
}

/// Applies the tilt-frame transpose to `w` and returns the Jacobian of the
/// result with respect to `z_body`: `y = R_abc(z_b)ᵀ·w`, `J[i][j] = ∂y_i/∂z_b_j`.
pub fn abc_frame_with_jacobian(
    z_body: &Vector3<f64>,
    w: &Vector3<f64>,
) -> Result<(Vector3<f64>, Matrix3<f64>), FlatnessError> {
    let (a, b, c) = (z_body.x, z_body.y, z_body.z);
    if c + 1.0 < HOPF_FLOOR {
        return Err(FlatnessError::HopfSingularity);
    }
    let k = 1.0 / (1.0 + c);
    let u = a * w.x + b * w.y;
    let y = Vector3::new(
        w.x - a * k * u - a * w.z,
        w.y - b * k * u - b * w.z,
        z_body.dot(w),
    );
    let jac = Matrix3::new(
        -k * u - a * k * w.x - w.z,
        -a * k * w.y,
        a * u * k * k,
        -b * k * w.x,
        -k * u - b * k * w.y - w.z,
        b * u * k * k,
        w.x,
        w.y,
        w.z,
    );
    Ok((y, jac))
}

/// Gradients of the half-space violation, for chaining into penalty terms.
#[derive(Debug, Clone, Copy)]
pub struct HalfspaceGrad {
    pub pos: Vector3<f64>,
    pub acc: Vector3<f64>,
}

/// Worst-case penetration of the disc past the perching plane.
///
/// `value ≤ 0` iff the whole disc lies in the feasible half-space. The value
/// is `r̄·‖BᵀRᵀh‖ + hᵀo − b` with `o = pos − ℓ̄·z_body`; gradients chain
/// through the attitude's dependence on acceleration.
pub fn halfspace_violation(
    disc: &DiscModel,
    plane: &PerchPlane,
    s: &FlatSample,
    gravity: f64,
) -> Result<(f64, HalfspaceGrad), FlatnessError> {
    let (h, b) = plane.halfspace();
    let tau = thrust_vector(&s.acc, gravity);
    let thrust = tau.norm();
    if thrust < MIN_THRUST {
        return Err(FlatnessError::SingularAttitude);
    }
    let z_body = tau / thrust;
    let (y, jac) = abc_frame_with_jacobian(&z_body, &h)?;

    let w = Vector2::new(y.x, y.y);
    let wn = w.norm();
    let center = s.pos - disc.underside_offset * z_body;
    let value = disc.radius * wn + h.dot(&center) - b;

    // d‖w‖/dz_b through the first two rows of the Jacobian; the tangential
    // term has a subgradient of zero when the disc is exactly level with h.
    let mut d_zb = -disc.underside_offset * h;
    if wn > 1e-12 {
        d_zb += (disc.radius / wn) * (w.x * jac.row(0).transpose() + w.y * jac.row(1).transpose());
    }
    let grad_acc = normalized_direction_jacobian(&tau) * d_zb;
    Ok((value, HalfspaceGrad { pos: h, acc: grad_acc }))
}
