//! Perching-stage penalties and assembly.
//!
//! The touchdown state is not a fixed boundary condition: it slides
//! along the platform prediction with the total duration, carries a
//! free tangential contact velocity ν, and picks its contact thrust
//! through a sine reparameterization that can never leave the actuator
//! envelope. [`terminal_state`] produces that moving boundary with all
//! its sensitivities, the `cost_*` operations price collision with the
//! platform plane, camera lock on the landing point, actuator margins,
//! and the height band, and [`assemble_perching_problem`] wires
//! everything into a [`PenaltyProblem`] over both splines, the piece
//! durations, and the contact variables.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // resolves f64 math in no_std builds; shadowed by inherent methods under test
use num_traits::Float;

use nalgebra::{Matrix3, Vector1, Vector2, Vector3};

use crate::angles::angle_diff;
use crate::flatness::{
    abc_frame_with_jacobian, flat_basis, halfspace_violation, hopf_quaternion,
    normalized_direction_jacobian, recover_attitude, rot_z, thrust_vector, DiscModel, FlatSample,
    FlatnessError, PerchPlane, MIN_THRUST, STANDARD_GRAVITY,
};
use crate::minco::MincoTrajectory;
use crate::optim::{
    PenaltyProblem, PointCheck, StageCost, StageGrad, StagePoint, TerminalGenerator,
    TerminalUpdate, TimeMap,
};
use crate::smoothing::{smooth_l1, smooth_step};
use crate::target::{TargetPoint, TargetPrediction};

/// Optical depth below which the projection is considered degenerate and
/// the behind-camera fallback engages.
pub const MIN_DEPTH: f64 = 1e-3;

/// Plateau magnitude of the behind-camera fallback, in squared pixels.
/// Large against any in-frame error so the optimizer always prefers a
/// pose with the landing point in front of the lens.
pub const BEHIND_CAMERA_COST: f64 = 1.0e6;

/// Pinhole camera rigidly mounted on the body: intrinsics in pixels plus
/// the pose of the optical frame (x right, y down, z forward) in body
/// coordinates.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    /// Image half extents, pixels; projections are measured from the
    /// principal point at the image center.
    pub half_width: f64,
    pub half_height: f64,
    /// Columns are the camera axes expressed in the body frame.
    pub r_bc: Matrix3<f64>,
    /// Camera origin in the body frame, meters.
    pub t_bc: Vector3<f64>,
}

impl CameraModel {
    /// Forward-looking mount: optical axis along body +x.
    pub fn front(fx: f64, fy: f64, half_width: f64, half_height: f64) -> Self {
        Self {
            fx,
            fy,
            half_width,
            half_height,
            r_bc: Matrix3::from_columns(&[-Vector3::y(), -Vector3::z(), Vector3::x()]),
            t_bc: Vector3::zeros(),
        }
    }

    /// Downward-looking mount: optical axis along body −z, image rows
    /// toward the tail.
    pub fn down(fx: f64, fy: f64, half_width: f64, half_height: f64) -> Self {
        Self {
            fx,
            fy,
            half_width,
            half_height,
            r_bc: Matrix3::from_columns(&[-Vector3::y(), -Vector3::x(), -Vector3::z()]),
            t_bc: Vector3::zeros(),
        }
    }
}

impl Default for CameraModel {
    /// 80° × 65° field of view on a 640 × 480 imager, looking forward.
    fn default() -> Self {
        let fx = 320.0 / 40.0f64.to_radians().tan();
        let fy = 240.0 / 32.5f64.to_radians().tan();
        Self::front(fx, fy, 320.0, 240.0)
    }
}

/// Perching-stage tuning: actuator envelope, collision gate, perception
/// range, height band, touchdown speed, camera, and penalty weights.
#[derive(Debug, Clone)]
pub struct PerchingParams {
    /// Mass-normalized collective thrust limits, m/s².
    pub tau_min: f64,
    pub tau_max: f64,
    /// Tilt-rate limit ‖ż_b‖, rad/s.
    pub omega_xy_max: f64,
    /// Yaw-rate limit, rad/s.
    pub omega_z_max: f64,
    /// The plane-collision penalty is gated on within this distance of
    /// the landing point, meters.
    pub gate_radius: f64,
    /// Range band inside which the camera must keep the landing point
    /// centered, meters.
    pub d_min: f64,
    pub d_max: f64,
    /// Height band of the drone relative to the landing point, meters.
    pub z_min: f64,
    pub z_max: f64,
    /// Descent speed along the surface normal at touchdown, m/s.
    pub v_n: f64,
    pub gravity: f64,
    /// Gate transition half-width; gates take range-normalized inputs.
    pub eps: f64,
    /// Penalty smoothing width.
    pub mu: f64,
    /// The actuator and height penalties enforce limits this far inside
    /// the hard caps, so the smoothing tails cannot eat the real margin.
    pub limit_margin: f64,
    /// The collision penalty keeps the disc this far off the plane;
    /// only the contact point itself sits on it.
    pub clearance: f64,
    /// Smoothing half-width of the rim term in the collision penalty.
    /// The exact rim drop has a gradient kink where the disc lies
    /// parallel to the plane, which is precisely the touchdown attitude;
    /// smoothing it keeps the optimizer from oscillating at contact. It
    /// understates the drop by at most `radius * rim_eps`, which
    /// `clearance` must cover.
    pub rim_eps: f64,
    pub camera: CameraModel,
    /// Term weights: collision, perception, body rate, thrust, height
    /// band, tangential touchdown speed.
    pub weights: [f64; 6],
    /// Spline pieces per plan.
    pub pieces: usize,
    /// Closing speed assumed for the initial duration guess, m/s.
    pub init_speed: f64,
    /// Weight on total duration.
    pub rho_time: f64,
    /// Smoothness weight on the yaw spline.
    pub yaw_energy_weight: f64,
    /// Optimize the tangential touchdown velocity; disabled it stays zero.
    pub optimize_nu: bool,
}

impl Default for PerchingParams {
    fn default() -> Self {
        Self {
            tau_min: 5.0,
            tau_max: 17.0,
            omega_xy_max: 3.0,
            omega_z_max: 3.0,
            gate_radius: 1.5,
            d_min: 0.5,
            d_max: 4.0,
            z_min: -0.5,
            z_max: 3.0,
            v_n: 0.2,
            gravity: STANDARD_GRAVITY,
            eps: 0.05,
            mu: 0.1,
            limit_margin: 0.1,
            clearance: 0.03,
            rim_eps: 0.05,
            camera: CameraModel::default(),
            weights: [1.0e4, 0.05, 1.0e3, 1.0e3, 1.0e3, 10.0],
            pieces: 4,
            init_speed: 3.0,
            rho_time: 100.0,
            yaw_energy_weight: 1.0,
            optimize_nu: true,
        }
    }
}

impl PerchingParams {
    fn tau_mid(&self) -> f64 {
        0.5 * (self.tau_max + self.tau_min)
    }

    fn tau_rad(&self) -> f64 {
        0.5 * (self.tau_max - self.tau_min)
    }

    fn tau_hi_soft(&self) -> f64 {
        self.tau_max - self.limit_margin
    }

    fn tau_lo_soft(&self) -> f64 {
        self.tau_min + self.limit_margin
    }

    fn omega_xy_soft(&self) -> f64 {
        self.omega_xy_max - self.limit_margin
    }

    fn omega_z_soft(&self) -> f64 {
        self.omega_z_max - self.limit_margin
    }

    fn z_soft(&self) -> (f64, f64) {
        (self.z_min + self.limit_margin, self.z_max - self.limit_margin)
    }
}

/// Free touchdown variables: tangential contact velocity in the plane
/// and the phase that places the contact thrust inside its envelope.
#[derive(Debug, Clone, Copy)]
pub struct TerminalVariables {
    pub nu: Vector2<f64>,
    pub tau_f: f64,
}

impl TerminalVariables {
    /// Zero slip, contact thrust at the middle of the envelope.
    pub fn rest() -> Self {
        Self { nu: Vector2::zeros(), tau_f: 0.0 }
    }

    /// Contact thrust `τ_m + τ_r·sin(τ_f)`, always inside the envelope.
    pub fn tau_e(&self, params: &PerchingParams) -> f64 {
        params.tau_mid() + params.tau_rad() * self.tau_f.sin()
    }
}

/// Touchdown boundary state and its sensitivities.
#[derive(Debug, Clone)]
pub struct TerminalState {
    /// Position through jerk at contact.
    pub pos: [Vector3<f64>; 4],
    /// Yaw and yaw rate at contact.
    pub yaw: [f64; 2],
    /// Derivative of each position order with respect to the contact time.
    pub d_time_pos: [Vector3<f64>; 4],
    pub d_time_yaw: [f64; 2],
    /// Derivative of the contact velocity with respect to ν.
    pub d_nu_x: Vector3<f64>,
    pub d_nu_y: Vector3<f64>,
    /// Derivative of the contact acceleration with respect to τ_f.
    pub d_tau_f: Vector3<f64>,
    /// Contact thrust.
    pub tau_e: f64,
    /// Platform plane at the contact time.
    pub plane: PerchPlane,
    /// The contact time fell outside the prediction horizon; every time
    /// sensitivity is zero because the platform state is frozen there.
    pub clamped: bool,
}

/// Touchdown state `t_end` seconds after the prediction start.
///
/// The drone meets the platform with its body z axis on the surface
/// normal: the disc underside rests on the landing point, the velocity
/// is the platform's plus the slip ν minus `v_n` along the normal, the
/// acceleration realizes the contact thrust `τ_e(τ_f)`, jerk is zero,
/// and yaw matches the platform heading with zero yaw rate. Time
/// sensitivities follow the platform's motion, with the plane axes
/// rotating at the heading rate.
pub fn terminal_state(
    prediction: &TargetPrediction,
    t_end: f64,
    vars: &TerminalVariables,
    plane: &PerchPlane,
    disc: &DiscModel,
    params: &PerchingParams,
) -> TerminalState {
    let (tp, clamped) = prediction.state_after(t_end);
    let plane = plane.at(tp.pos, tp.heading);
    let (xs, ys, zs) = (plane.x_axis, plane.y_axis, plane.z_axis);
    let e3 = Vector3::z();
    let tau_e = vars.tau_e(params);

    let tangent = vars.nu.x * xs + vars.nu.y * ys - params.v_n * zs;
    let pos = tp.pos + disc.underside_offset * zs;
    let vel = tp.vel + tangent;
    let acc = tau_e * zs - params.gravity * e3;

    // Past the horizon the prediction holds its final state, so the
    // boundary stops moving with T.
    let live = if clamped { 0.0 } else { 1.0 };
    let rate = live * tp.heading_rate;
    let d_pos = live * tp.vel + disc.underside_offset * rate * e3.cross(&zs);
    let d_vel = live * tp.acc + rate * e3.cross(&tangent);
    let d_acc = tau_e * rate * e3.cross(&zs);

    TerminalState {
        pos: [pos, vel, acc, Vector3::zeros()],
        yaw: [tp.heading, 0.0],
        d_time_pos: [d_pos, d_vel, d_acc, Vector3::zeros()],
        d_time_yaw: [rate, 0.0],
        d_nu_x: xs,
        d_nu_y: ys,
        d_tau_f: params.tau_rad() * vars.tau_f.cos() * zs,
        tau_e,
        plane,
        clamped,
    }
}

/// Gated plane-collision penalty.
#[derive(Debug, Clone, Copy)]
pub struct CollisionValue {
    pub cost: f64,
    pub d_pos: Vector3<f64>,
    pub d_acc: Vector3<f64>,
    /// Sensitivity to the platform's own motion at a fixed flat state.
    pub d_time: f64,
    /// Proximity gate in [0, 1]; at exactly zero the attitude was never
    /// recovered and every gradient is zero.
    pub gate: f64,
}

/// Penalizes the contact disc crossing the platform plane, gated on the
/// distance to the landing point so only the final approach pays it.
///
/// Far from the platform the gate saturates at exactly zero and the
/// half-space test is skipped entirely, so poses that cannot collide
/// can never fail on attitude singularities either. The disc drop
/// toward the plane uses the `rim_eps`-smoothed rim term; the exact
/// test stays in the hard post-check.
pub fn cost_se3_collision(
    sample: &FlatSample,
    target: &TargetPoint,
    plane: &PerchPlane,
    disc: &DiscModel,
    params: &PerchingParams,
) -> Result<CollisionValue, FlatnessError> {
    let d2 = params.gate_radius * params.gate_radius;
    let rel = sample.pos - target.pos;
    let (gate, gate_d) = smooth_step((d2 - rel.norm_squared()) / d2, params.eps);
    if gate == 0.0 {
        return Ok(CollisionValue {
            cost: 0.0,
            d_pos: Vector3::zeros(),
            d_acc: Vector3::zeros(),
            d_time: 0.0,
            gate,
        });
    }

    let plane = plane.at(target.pos, target.heading);
    let (h, b) = plane.halfspace();
    let tau = thrust_vector(&sample.acc, params.gravity);
    let thrust = tau.norm();
    if thrust < MIN_THRUST {
        return Err(FlatnessError::SingularAttitude);
    }
    let z_b = tau / thrust;
    let (y, jac) = abc_frame_with_jacobian(&z_b, &h)?;
    let w = y.xy();
    let sq = (w.norm_squared() + params.rim_eps * params.rim_eps).sqrt();
    let center = sample.pos - disc.underside_offset * z_b;
    let raw = disc.radius * (sq - params.rim_eps) + h.dot(&center) - b;
    let (pen, pen_d) = smooth_l1(raw + params.clearance, params.mu);

    let d_zb = -disc.underside_offset * h
        + disc.radius / sq * (w.x * jac.row(0).transpose() + w.y * jac.row(1).transpose());
    let d_acc_raw = normalized_direction_jacobian(&tau) * d_zb;

    // The platform-motion chain needs the dependence on the rotating
    // normal; rows of the flat basis are exactly dw/dh.
    let basis = flat_basis(&z_b)?;
    let d_raw_d_h = center - target.pos
        + disc.radius / sq * (w.x * basis.row(0).transpose() + w.y * basis.row(1).transpose());
    let e3 = Vector3::z();
    let d_raw_dt = target.heading_rate * d_raw_d_h.dot(&e3.cross(&h)) - h.dot(&target.vel);
    let d_gate_arg_dt = 2.0 * rel.dot(&target.vel) / d2;

    Ok(CollisionValue {
        cost: gate * pen,
        d_pos: gate_d * (-2.0 / d2) * pen * rel + gate * pen_d * h,
        d_acc: gate * pen_d * d_acc_raw,
        d_time: gate_d * d_gate_arg_dt * pen + gate * pen_d * d_raw_dt,
        gate,
    })
}

/// Projects a world point into the camera given the flat state. Returns
/// the pixel offset from the image center and the optical depth; the
/// pixel offset is meaningful only for positive depth.
pub fn project_point(
    sample: &FlatSample,
    point: &Vector3<f64>,
    camera: &CameraModel,
    gravity: f64,
) -> Result<(Vector2<f64>, f64), FlatnessError> {
    let tau = thrust_vector(&sample.acc, gravity);
    if tau.norm() < MIN_THRUST {
        return Err(FlatnessError::SingularAttitude);
    }
    let z_b = tau.normalize();
    let q = hopf_quaternion(&z_b)?;
    let in_abc = q.inverse_transform_vector(&(point - sample.pos));
    let in_body = rot_z(-sample.yaw) * in_abc;
    let in_cam = camera.r_bc.transpose() * (in_body - camera.t_bc);
    let px = Vector2::new(camera.fx * in_cam.x / in_cam.z, camera.fy * in_cam.y / in_cam.z);
    Ok((px, in_cam.z))
}

/// Range-gated image-space lock penalty.
#[derive(Debug, Clone, Copy)]
pub struct PerceptionValue {
    pub cost: f64,
    pub d_pos: Vector3<f64>,
    pub d_acc: Vector3<f64>,
    pub d_yaw: f64,
    /// Sensitivity to the platform's own motion at a fixed flat state.
    pub d_time: f64,
    /// Combined range gate in [0, 1].
    pub gate: f64,
    /// Pixel offset of the landing point from the image center; zero
    /// when the gate is closed and the projection was skipped.
    pub pixel: Vector2<f64>,
    /// The landing point fell on or behind the camera plane and the
    /// fallback plateau was charged instead of a projection.
    pub behind_camera: bool,
}

/// Squared pixel offset of the landing point from the image center,
/// gated to the range band where the camera is expected to hold it.
pub fn cost_perception(
    sample: &FlatSample,
    target: &TargetPoint,
    params: &PerchingParams,
) -> Result<PerceptionValue, FlatnessError> {
    let cam = &params.camera;
    let rel = sample.pos - target.pos;
    let r2 = rel.norm_squared();
    let lo2 = params.d_min * params.d_min;
    let hi2 = params.d_max * params.d_max;
    let (g_lo, g_lo_d) = smooth_step((r2 - lo2) / lo2, params.eps);
    let (g_hi, g_hi_d) = smooth_step((hi2 - r2) / hi2, params.eps);
    let gate = g_lo * g_hi;
    if gate == 0.0 {
        return Ok(PerceptionValue {
            cost: 0.0,
            d_pos: Vector3::zeros(),
            d_acc: Vector3::zeros(),
            d_yaw: 0.0,
            d_time: 0.0,
            gate,
            pixel: Vector2::zeros(),
            behind_camera: false,
        });
    }
    let gate_r2 = g_lo_d / lo2 * g_hi - g_lo * g_hi_d / hi2;

    let tau = thrust_vector(&sample.acc, params.gravity);
    if tau.norm() < MIN_THRUST {
        return Err(FlatnessError::SingularAttitude);
    }
    let z_b = tau.normalize();
    let world = target.pos - sample.pos;
    let (in_abc, abc_jac) = abc_frame_with_jacobian(&z_b, &world)?;
    let in_body = rot_z(-sample.yaw) * in_abc;
    let in_cam = cam.r_bc.transpose() * (in_body - cam.t_bc);

    let (err, pixel, g_cam, behind) = if in_cam.z <= MIN_DEPTH {
        // Plateau with a slope pulling the point back in front of the lens.
        (
            BEHIND_CAMERA_COST * (1.0 + MIN_DEPTH - in_cam.z),
            Vector2::zeros(),
            Vector3::new(0.0, 0.0, -BEHIND_CAMERA_COST),
            true,
        )
    } else {
        let u = cam.fx * in_cam.x / in_cam.z;
        let v = cam.fy * in_cam.y / in_cam.z;
        let err = u * u + v * v;
        (
            err,
            Vector2::new(u, v),
            Vector3::new(
                2.0 * u * cam.fx / in_cam.z,
                2.0 * v * cam.fy / in_cam.z,
                -2.0 * err / in_cam.z,
            ),
            false,
        )
    };

    let e3 = Vector3::z();
    let g_body = cam.r_bc * g_cam;
    let g_abc = rot_z(sample.yaw) * g_body;
    let g_world = hopf_quaternion(&z_b)? * g_abc;
    let g_zb = abc_jac.transpose() * g_abc;
    let d_acc_core = normalized_direction_jacobian(&tau) * g_zb;
    let d_yaw_core = -g_body.dot(&e3.cross(&in_body));

    Ok(PerceptionValue {
        cost: gate * err,
        d_pos: gate_r2 * 2.0 * err * rel - gate * g_world,
        d_acc: gate * d_acc_core,
        d_yaw: gate * d_yaw_core,
        d_time: -gate_r2 * 2.0 * err * rel.dot(&target.vel) + gate * g_world.dot(&target.vel),
        gate,
        pixel,
        behind_camera: behind,
    })
}

/// Thrust-envelope and body-rate penalties.
#[derive(Debug, Clone, Copy)]
pub struct ActuatorValue {
    pub thrust_cost: f64,
    pub rate_cost: f64,
    pub d_acc_thrust: Vector3<f64>,
    pub d_acc_rate: Vector3<f64>,
    pub d_jerk: Vector3<f64>,
    pub d_yaw_rate: f64,
    /// Mass-normalized thrust magnitude.
    pub thrust: f64,
    /// Squared tilt rate ‖ż_b‖².
    pub tilt_rate_sq: f64,
}

/// Actuator margins from the flat state: thrust magnitude against its
/// envelope and tilt/yaw rates against their caps.
pub fn cost_actuator(
    sample: &FlatSample,
    params: &PerchingParams,
) -> Result<ActuatorValue, FlatnessError> {
    let tau = thrust_vector(&sample.acc, params.gravity);
    let n2 = tau.norm_squared();
    let n = n2.sqrt();
    if n < MIN_THRUST {
        return Err(FlatnessError::SingularAttitude);
    }
    let tau_hi = params.tau_hi_soft();
    let tau_lo = params.tau_lo_soft();
    let (hi, hi_d) = smooth_l1(n2 - tau_hi * tau_hi, params.mu);
    let (lo, lo_d) = smooth_l1(tau_lo * tau_lo - n2, params.mu);

    let dn = normalized_direction_jacobian(&tau);
    let tilt = dn * sample.jerk;
    let t2 = tilt.norm_squared();
    let omega_xy = params.omega_xy_soft();
    let omega_z = params.omega_z_soft();
    let (xy, xy_d) = smooth_l1(t2 - omega_xy * omega_xy, params.mu);
    let (zz, zz_d) =
        smooth_l1(sample.yaw_rate * sample.yaw_rate - omega_z * omega_z, params.mu);

    // d‖ż_b‖²/dτ, simplified through τᵀż_b = 0.
    let d_t2_d_tau =
        -(2.0 / (n2 * n)) * (sample.jerk.dot(&tilt) * tau + tau.dot(&sample.jerk) * tilt);

    Ok(ActuatorValue {
        thrust_cost: hi + lo,
        rate_cost: xy + zz,
        d_acc_thrust: (hi_d - lo_d) * 2.0 * tau,
        d_acc_rate: xy_d * d_t2_d_tau,
        d_jerk: xy_d * 2.0 * (dn * tilt),
        d_yaw_rate: zz_d * 2.0 * sample.yaw_rate,
        thrust: n,
        tilt_rate_sq: t2,
    })
}

/// Height-band penalty on the drone's altitude relative to the landing
/// point. Returns the value and its position gradient.
pub fn cost_relative_height(
    sample: &FlatSample,
    target_pos: &Vector3<f64>,
    params: &PerchingParams,
) -> (f64, Vector3<f64>) {
    let dz = sample.pos.z - target_pos.z;
    let (z_lo, z_hi) = params.z_soft();
    let (lo, lo_d) = smooth_l1(z_lo - dz, params.mu);
    let (hi, hi_d) = smooth_l1(dz - z_hi, params.mu);
    (lo + hi, Vector3::new(0.0, 0.0, hi_d - lo_d))
}

/// Quadratic penalty keeping the tangential touchdown velocity small.
pub fn cost_nu_regularization(nu: &Vector2<f64>) -> (f64, Vector2<f64>) {
    (nu.norm_squared(), 2.0 * nu)
}

fn flat_at(point: &StagePoint) -> FlatSample {
    FlatSample {
        pos: point.pos[0],
        vel: point.pos[1],
        acc: point.pos[2],
        jerk: point.pos[3],
        yaw: point.yaw[0],
        yaw_rate: point.yaw[1],
    }
}

/// Platform state at a stage sample. A clamped lookup freezes the
/// platform, so its motion is zeroed and the time chain vanishes there.
fn platform_at(prediction: &TargetPrediction, t_abs: f64) -> TargetPoint {
    let (mut tp, clamped) = prediction.state_after(t_abs);
    if clamped {
        tp.vel = Vector3::zeros();
        tp.acc = Vector3::zeros();
        tp.heading_rate = 0.0;
    }
    tp
}

struct CollisionTerm {
    prediction: Arc<TargetPrediction>,
    plane: PerchPlane,
    disc: DiscModel,
    params: PerchingParams,
    weight: f64,
}

impl StageCost for CollisionTerm {
    fn name(&self) -> &'static str {
        "collision"
    }

    fn scale_weight(&mut self, factor: f64) {
        self.weight *= factor;
    }

    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let tp = platform_at(&self.prediction, point.t_abs);
        match cost_se3_collision(&flat_at(point), &tp, &self.plane, &self.disc, &self.params) {
            Ok(v) => {
                grad.pos[0] += self.weight * v.d_pos;
                grad.pos[2] += self.weight * v.d_acc;
                grad.time += self.weight * v.d_time;
                self.weight * v.cost
            }
            Err(_) => f64::INFINITY,
        }
    }
}

struct PerceptionTerm {
    prediction: Arc<TargetPrediction>,
    params: PerchingParams,
    weight: f64,
}

impl StageCost for PerceptionTerm {
    fn name(&self) -> &'static str {
        "perception"
    }

    fn scale_weight(&mut self, factor: f64) {
        self.weight *= factor;
    }

    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let tp = platform_at(&self.prediction, point.t_abs);
        match cost_perception(&flat_at(point), &tp, &self.params) {
            Ok(v) => {
                grad.pos[0] += self.weight * v.d_pos;
                grad.pos[2] += self.weight * v.d_acc;
                grad.yaw[0] += self.weight * v.d_yaw;
                grad.time += self.weight * v.d_time;
                self.weight * v.cost
            }
            Err(_) => f64::INFINITY,
        }
    }
}

struct BodyRateTerm {
    params: PerchingParams,
    weight: f64,
}

impl StageCost for BodyRateTerm {
    fn name(&self) -> &'static str {
        "body_rate"
    }

    fn scale_weight(&mut self, factor: f64) {
        self.weight *= factor;
    }

    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        match cost_actuator(&flat_at(point), &self.params) {
            Ok(v) => {
                grad.pos[2] += self.weight * v.d_acc_rate;
                grad.pos[3] += self.weight * v.d_jerk;
                grad.yaw[1] += self.weight * v.d_yaw_rate;
                self.weight * v.rate_cost
            }
            Err(_) => f64::INFINITY,
        }
    }
}

struct ThrustTerm {
    params: PerchingParams,
    weight: f64,
}

impl StageCost for ThrustTerm {
    fn name(&self) -> &'static str {
        "thrust"
    }

    fn scale_weight(&mut self, factor: f64) {
        self.weight *= factor;
    }

    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        match cost_actuator(&flat_at(point), &self.params) {
            Ok(v) => {
                grad.pos[2] += self.weight * v.d_acc_thrust;
                self.weight * v.thrust_cost
            }
            Err(_) => f64::INFINITY,
        }
    }
}

struct HeightTerm {
    prediction: Arc<TargetPrediction>,
    params: PerchingParams,
    weight: f64,
}

impl StageCost for HeightTerm {
    fn name(&self) -> &'static str {
        "rel_height"
    }

    fn scale_weight(&mut self, factor: f64) {
        self.weight *= factor;
    }

    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let tp = platform_at(&self.prediction, point.t_abs);
        let (cost, d_pos) = cost_relative_height(&flat_at(point), &tp.pos, &self.params);
        grad.pos[0] += self.weight * d_pos;
        grad.time += self.weight * (-d_pos.z * tp.vel.z);
        self.weight * cost
    }
}

/// Regenerates the touchdown boundary as the horizon and the contact
/// variables move. Extras are `[ν_x, ν_y, τ_f]`, or `[τ_f]` alone when
/// the tangential relaxation is disabled.
struct PerchTerminal {
    prediction: Arc<TargetPrediction>,
    plane: PerchPlane,
    disc: DiscModel,
    params: PerchingParams,
    /// Whole turns added to the platform heading so the yaw spline ends
    /// on the branch nearest the start.
    yaw_offset: f64,
    nu_weight: f64,
}

impl PerchTerminal {
    fn unpack(&self, extra: &[f64]) -> TerminalVariables {
        if self.params.optimize_nu {
            TerminalVariables { nu: Vector2::new(extra[0], extra[1]), tau_f: extra[2] }
        } else {
            TerminalVariables { nu: Vector2::zeros(), tau_f: extra[0] }
        }
    }
}

impl TerminalGenerator for PerchTerminal {
    fn extra_count(&self) -> usize {
        if self.params.optimize_nu {
            3
        } else {
            1
        }
    }

    fn generate(&self, t_total: f64, extra: &[f64]) -> TerminalUpdate {
        let vars = self.unpack(extra);
        let ts =
            terminal_state(&self.prediction, t_total, &vars, &self.plane, &self.disc, &self.params);
        let n = self.extra_count();
        let mut d_extra_pos = vec![vec![Vector3::zeros(); 4]; n];
        let d_extra_yaw = vec![vec![0.0; 2]; n];
        if self.params.optimize_nu {
            d_extra_pos[0][1] = ts.d_nu_x;
            d_extra_pos[1][1] = ts.d_nu_y;
            d_extra_pos[2][2] = ts.d_tau_f;
        } else {
            d_extra_pos[0][2] = ts.d_tau_f;
        }
        TerminalUpdate {
            pos_end: ts.pos.to_vec(),
            yaw_end: vec![ts.yaw[0] + self.yaw_offset, ts.yaw[1]],
            d_total_pos: ts.d_time_pos.to_vec(),
            d_total_yaw: vec![ts.d_time_yaw[0], ts.d_time_yaw[1]],
            d_extra_pos,
            d_extra_yaw,
        }
    }

    fn extra_cost(&self, extra: &[f64], grad: &mut [f64]) -> f64 {
        if !self.params.optimize_nu {
            return 0.0;
        }
        let vars = self.unpack(extra);
        let (cost, g) = cost_nu_regularization(&vars.nu);
        grad[0] += self.nu_weight * g.x;
        grad[1] += self.nu_weight * g.y;
        self.nu_weight * cost
    }
}

/// Builds the perching problem: quartic-smooth position and smooth yaw
/// splines from the start state to the regenerated touchdown boundary,
/// per-piece unconstrained durations, the gated penalties above, and
/// the contact variables appended to the decision vector.
///
/// `plane` fixes the surface geometry; its landing point and heading are
/// re-anchored to the prediction at every evaluation.
pub fn assemble_perching_problem(
    prediction: &TargetPrediction,
    start: &FlatSample,
    plane: &PerchPlane,
    disc: &DiscModel,
    params: &PerchingParams,
) -> PenaltyProblem {
    assert!(params.tau_min < params.tau_max, "thrust envelope must be ordered");
    assert!(
        0.0 < params.d_min && params.d_min < params.d_max,
        "perception range must be ordered"
    );
    assert!(params.z_min < params.z_max, "height band must be ordered");
    assert!(params.limit_margin >= 0.0 && params.clearance >= 0.0, "margins must be non-negative");
    assert!(params.tau_lo_soft() < params.tau_hi_soft(), "margin swallows the thrust envelope");
    assert!(
        params.omega_xy_soft() > 0.0 && params.omega_z_soft() > 0.0,
        "margin swallows the rate limits"
    );
    assert!(params.z_soft().0 < params.z_soft().1, "margin swallows the height band");
    assert!(params.v_n >= 0.0, "touchdown speed must be non-negative");
    assert!(params.pieces >= 1, "need at least one piece");

    let prediction = Arc::new(prediction.clone());
    let (tp0, _) = prediction.state_after(0.0);
    let t_init = ((start.pos - tp0.pos).norm() / params.init_speed).max(0.5);

    let ts =
        terminal_state(&prediction, t_init, &TerminalVariables::rest(), plane, disc, params);
    // Land on the heading branch nearest the current yaw.
    let yaw_offset = start.yaw + angle_diff(ts.yaw[0], start.yaw) - ts.yaw[0];
    let yaw_end = [Vector1::new(ts.yaw[0] + yaw_offset), Vector1::new(ts.yaw[1])];

    let m = params.pieces;
    let start_pos = [start.pos, start.vel, start.acc, start.jerk];
    let start_yaw = [Vector1::new(start.yaw), Vector1::new(start.yaw_rate)];

    // A single-piece boundary solve seeds the interior waypoints.
    let seed_pos = MincoTrajectory::<3>::new(4, &start_pos, &ts.pos, &[], &[t_init])
        .expect("boundary spline is well posed");
    let seed_yaw = MincoTrajectory::<1>::new(2, &start_yaw, &yaw_end, &[], &[t_init])
        .expect("boundary spline is well posed");
    let mut wp_pos = Vec::with_capacity(m - 1);
    let mut wp_yaw = Vec::with_capacity(m - 1);
    for j in 1..m {
        let t = t_init * j as f64 / m as f64;
        wp_pos.push(seed_pos.sample(t, 0).0[0]);
        wp_yaw.push(seed_yaw.sample(t, 0).0[0]);
    }
    let durations = vec![t_init / m as f64; m];
    let pos = MincoTrajectory::<3>::new(4, &start_pos, &ts.pos, &wp_pos, &durations)
        .expect("spline sizes agree");
    let yaw = MincoTrajectory::<1>::new(2, &start_yaw, &yaw_end, &wp_yaw, &durations)
        .expect("spline sizes agree");

    let mut problem = PenaltyProblem::new(pos, yaw);
    problem.time_map = TimeMap::PerPieceExp;
    problem.rho_time = params.rho_time;
    problem.energy_weight_yaw = params.yaw_energy_weight;
    let w = params.weights;
    problem.stage_costs.push(Box::new(CollisionTerm {
        prediction: Arc::clone(&prediction),
        plane: *plane,
        disc: *disc,
        params: params.clone(),
        weight: w[0],
    }));
    problem.stage_costs.push(Box::new(PerceptionTerm {
        prediction: Arc::clone(&prediction),
        params: params.clone(),
        weight: w[1],
    }));
    problem
        .stage_costs
        .push(Box::new(BodyRateTerm { params: params.clone(), weight: w[2] }));
    problem.stage_costs.push(Box::new(ThrustTerm { params: params.clone(), weight: w[3] }));
    problem.stage_costs.push(Box::new(HeightTerm {
        prediction: Arc::clone(&prediction),
        params: params.clone(),
        weight: w[4],
    }));
    problem.terminal = Some(Box::new(PerchTerminal {
        prediction,
        plane: *plane,
        disc: *disc,
        params: params.clone(),
        yaw_offset,
        nu_weight: w[5],
    }));
    problem.extra = vec![0.0; if params.optimize_nu { 3 } else { 1 }];
    problem
}

/// Hard-check slack absorbing float noise where the boundary sits
/// exactly on a limit, as the contact sample does on the plane.
const CHECK_TOL: f64 = 1e-9;

struct ThrustCheck {
    params: PerchingParams,
}

impl PointCheck for ThrustCheck {
    fn name(&self) -> &'static str {
        "thrust"
    }

    fn violation(&self, _t: f64, pos: &[Vector3<f64>; 5], _yaw: &[f64; 3]) -> Option<f64> {
        let n = thrust_vector(&pos[2], self.params.gravity).norm();
        let over = (n - self.params.tau_max).max(self.params.tau_min - n);
        (over > CHECK_TOL).then_some(over)
    }
}

struct BodyRateCheck {
    params: PerchingParams,
}

impl PointCheck for BodyRateCheck {
    fn name(&self) -> &'static str {
        "body_rate"
    }

    fn violation(&self, _t: f64, pos: &[Vector3<f64>; 5], yaw: &[f64; 3]) -> Option<f64> {
        let tau = thrust_vector(&pos[2], self.params.gravity);
        if tau.norm() < MIN_THRUST {
            // Free fall is the thrust check's finding.
            return None;
        }
        let tilt = (normalized_direction_jacobian(&tau) * pos[3]).norm();
        let over = (tilt - self.params.omega_xy_max).max(yaw[1].abs() - self.params.omega_z_max);
        (over > CHECK_TOL).then_some(over)
    }
}

struct CollisionCheck {
    prediction: Arc<TargetPrediction>,
    plane: PerchPlane,
    disc: DiscModel,
    params: PerchingParams,
}

impl PointCheck for CollisionCheck {
    fn name(&self) -> &'static str {
        "collision"
    }

    fn violation(&self, t: f64, pos: &[Vector3<f64>; 5], yaw: &[f64; 3]) -> Option<f64> {
        let (tp, _) = self.prediction.state_after(t);
        if (pos[0] - tp.pos).norm() > self.params.gate_radius {
            return None;
        }
        let plane = self.plane.at(tp.pos, tp.heading);
        let sample = FlatSample {
            pos: pos[0],
            vel: pos[1],
            acc: pos[2],
            jerk: pos[3],
            yaw: yaw[0],
            yaw_rate: yaw[1],
        };
        match halfspace_violation(&self.disc, &plane, &sample, self.params.gravity) {
            Ok((v, _)) => (v > CHECK_TOL).then_some(v),
            Err(_) => None,
        }
    }
}

struct HeightCheck {
    prediction: Arc<TargetPrediction>,
    params: PerchingParams,
}

impl PointCheck for HeightCheck {
    fn name(&self) -> &'static str {
        "rel_height"
    }

    fn violation(&self, t: f64, pos: &[Vector3<f64>; 5], _yaw: &[f64; 3]) -> Option<f64> {
        let (tp, _) = self.prediction.state_after(t);
        let dz = pos[0].z - tp.pos.z;
        let over = (dz - self.params.z_max).max(self.params.z_min - dz);
        (over > CHECK_TOL).then_some(over)
    }
}

/// Hard-limit sweep checks matching the perching penalty terms by name,
/// for [`crate::optim::solve_with_recheck`].
pub fn perching_checks(
    prediction: &TargetPrediction,
    plane: &PerchPlane,
    disc: &DiscModel,
    params: &PerchingParams,
) -> Vec<Box<dyn PointCheck>> {
    let prediction = Arc::new(prediction.clone());
    vec![
        Box::new(ThrustCheck { params: params.clone() }),
        Box::new(BodyRateCheck { params: params.clone() }),
        Box::new(CollisionCheck {
            prediction: Arc::clone(&prediction),
            plane: *plane,
            disc: *disc,
            params: params.clone(),
        }),
        Box::new(HeightCheck { prediction, params: params.clone() }),
    ]
}

/// Dense sweep metrics of a solved perch trajectory.
#[derive(Debug, Clone)]
pub struct PerchReport {
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub tilt_rate_max: f64,
    pub yaw_rate_max: f64,
    /// Worst disc penetration of the platform plane inside the gate
    /// radius; zero when clear everywhere.
    pub worst_penetration: f64,
    /// Fraction of in-range samples with the landing point projecting
    /// inside the image bounds.
    pub visibility_duty: f64,
    /// Distance between the disc center and the landing point at the
    /// end of the trajectory.
    pub touchdown_error: f64,
    /// Angle between the final body z axis and the surface normal, rad.
    pub alignment_error: f64,
    pub samples: usize,
}

/// Sweeps a solved pair of splines against the platform prediction at
/// step `dt`.
pub fn perch_report(
    pos: &MincoTrajectory<3>,
    yaw: &MincoTrajectory<1>,
    prediction: &TargetPrediction,
    plane: &PerchPlane,
    disc: &DiscModel,
    params: &PerchingParams,
    dt: f64,
) -> PerchReport {
    assert!(dt > 0.0, "sweep step must be positive");
    let total = pos.total_time();
    let mut thrust_min = f64::INFINITY;
    let mut thrust_max = 0.0f64;
    let mut tilt_rate_max = 0.0f64;
    let mut yaw_rate_max = 0.0f64;
    let mut worst_penetration = 0.0f64;
    let mut in_range = 0usize;
    let mut visible = 0usize;
    let mut samples = 0usize;

    let mut t = 0.0;
    loop {
        let (p, _) = pos.sample(t, 3);
        let (y, _) = yaw.sample(t, 1);
        let sample = FlatSample {
            pos: p[0],
            vel: p[1],
            acc: p[2],
            jerk: p[3],
            yaw: y[0][0],
            yaw_rate: y[1][0],
        };
        let (tp, _) = prediction.state_after(t);

        let tau = thrust_vector(&sample.acc, params.gravity);
        let n = tau.norm();
        thrust_min = thrust_min.min(n);
        thrust_max = thrust_max.max(n);
        if n >= MIN_THRUST {
            tilt_rate_max =
                tilt_rate_max.max((normalized_direction_jacobian(&tau) * sample.jerk).norm());
        }
        yaw_rate_max = yaw_rate_max.max(sample.yaw_rate.abs());

        let dist = (sample.pos - tp.pos).norm();
        if dist <= params.gate_radius {
            let surface = plane.at(tp.pos, tp.heading);
            if let Ok((v, _)) = halfspace_violation(disc, &surface, &sample, params.gravity) {
                worst_penetration = worst_penetration.max(v);
            }
        }
        if dist >= params.d_min && dist <= params.d_max {
            in_range += 1;
            if let Ok((px, depth)) =
                project_point(&sample, &tp.pos, &params.camera, params.gravity)
            {
                if depth > MIN_DEPTH
                    && px.x.abs() <= params.camera.half_width
                    && px.y.abs() <= params.camera.half_height
                {
                    visible += 1;
                }
            }
        }

        samples += 1;
        if t >= total {
            break;
        }
        t = (t + dt).min(total);
    }

    let (p, _) = pos.sample(total, 3);
    let (y, _) = yaw.sample(total, 1);
    let end = FlatSample {
        pos: p[0],
        vel: p[1],
        acc: p[2],
        jerk: p[3],
        yaw: y[0][0],
        yaw_rate: y[1][0],
    };
    let (tp_end, _) = prediction.state_after(total);
    let surface = plane.at(tp_end.pos, tp_end.heading);
    let (touchdown_error, alignment_error) = match recover_attitude(&end, params.gravity) {
        Ok(att) => {
            let center = end.pos - disc.underside_offset * att.z_body;
            (
                (center - tp_end.pos).norm(),
                att.z_body.dot(&surface.z_axis).clamp(-1.0, 1.0).acos(),
            )
        }
        // Attitude undefined at the end: report the raw position gap and
        // the worst possible misalignment.
        Err(_) => ((end.pos - tp_end.pos).norm(), core::f64::consts::PI),
    };

    PerchReport {
        thrust_min,
        thrust_max,
        tilt_rate_max,
        yaw_rate_max,
        worst_penetration,
        visibility_duty: if in_range == 0 { 1.0 } else { visible as f64 / in_range as f64 },
        touchdown_error,
        alignment_error,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{solve_with_recheck, SolveOptions};
    use crate::target::CtraSegment;
    use approx::assert_relative_eq;
    use core::f64::consts::{FRAC_PI_2, PI};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn static_prediction(pos: Vector3<f64>, heading: f64) -> TargetPrediction {
        TargetPrediction::from_segments(
            vec![CtraSegment {
                t0: 0.0,
                duration: 20.0,
                pos,
                heading,
                v_h: 0.0,
                v_v: 0.0,
                turn_rate: 0.0,
                accel: 0.0,
            }],
            0.5,
            false,
        )
    }

    fn turning_prediction() -> TargetPrediction {
        TargetPrediction::from_segments(
            vec![CtraSegment {
                t0: 0.0,
                duration: 12.0,
                pos: Vector3::new(2.0, -1.0, 0.6),
                heading: 0.3,
                v_h: 1.5,
                v_v: 0.1,
                turn_rate: 0.4,
                accel: 0.0,
            }],
            0.25,
            false,
        )
    }

    /// τ_f putting the contact thrust exactly at `tau`.
    fn tau_f_for(tau: f64, params: &PerchingParams) -> f64 {
        ((tau - params.tau_mid()) / params.tau_rad()).asin()
    }

    fn fd_tol(analytic: f64, f0: f64, h: f64, rel: f64) -> f64 {
        rel * analytic.abs().max(1.0) + 1e-15 * f0.abs().max(1.0) / h
    }

    #[test]
    fn terminal_static_horizontal_touchdown() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        let target = Vector3::new(3.0, -1.0, 0.5);
        let pred = static_prediction(target, 0.7);
        let plane = PerchPlane::from_incline(target, 0.7, 0.0);
        let vars = TerminalVariables {
            nu: Vector2::zeros(),
            tau_f: tau_f_for(params.gravity, &params),
        };
        let ts = terminal_state(&pred, 5.0, &vars, &plane, &disc, &params);

        assert!(!ts.clamped);
        assert_relative_eq!(ts.pos[0], Vector3::new(3.0, -1.0, 0.54), epsilon = 1e-12);
        assert_relative_eq!(ts.pos[1], Vector3::new(0.0, 0.0, -0.2), epsilon = 1e-12);
        assert!(ts.pos[2].norm() < 1e-12);
        assert_eq!(ts.pos[3], Vector3::zeros());
        assert_relative_eq!(ts.yaw[0], 0.7, epsilon = 1e-12);
        assert_eq!(ts.yaw[1], 0.0);
        for k in 0..4 {
            assert_eq!(ts.d_time_pos[k], Vector3::zeros());
        }
        assert_eq!(ts.d_time_yaw, [0.0, 0.0]);
    }

    #[test]
    fn terminal_vertical_plane_thrust_example() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.12, 0.0);
        let target = Vector3::new(4.0, 2.0, 1.0);
        let pred = static_prediction(target, 0.0);
        // Vertical surface whose outward normal is +x.
        let plane =
            PerchPlane::new(target, 0.0, Vector3::z(), -Vector3::y(), Vector3::x());
        let vars = TerminalVariables { nu: Vector2::zeros(), tau_f: tau_f_for(10.0, &params) };
        let ts = terminal_state(&pred, 3.0, &vars, &plane, &disc, &params);

        assert_relative_eq!(ts.tau_e, 10.0, epsilon = 1e-12);
        assert_relative_eq!(ts.pos[2], Vector3::new(10.0, 0.0, -9.81), epsilon = 1e-12);
        assert_relative_eq!(ts.pos[1], Vector3::new(-0.2, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn terminal_time_derivatives_match_fd() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.05);
        let pred = turning_prediction();
        let plane = PerchPlane::from_incline(Vector3::zeros(), 0.0, 0.6);
        let vars = TerminalVariables { nu: Vector2::new(0.25, -0.15), tau_f: 0.4 };

        let t = 4.0;
        let h = 1e-6;
        let ts = terminal_state(&pred, t, &vars, &plane, &disc, &params);
        let tp = terminal_state(&pred, t + h, &vars, &plane, &disc, &params);
        let tm = terminal_state(&pred, t - h, &vars, &plane, &disc, &params);
        assert!(!ts.clamped);
        for k in 0..4 {
            let fd = (tp.pos[k] - tm.pos[k]) / (2.0 * h);
            assert_relative_eq!(fd, ts.d_time_pos[k], epsilon = 1e-5);
        }
        for k in 0..2 {
            let fd = (tp.yaw[k] - tm.yaw[k]) / (2.0 * h);
            assert!((fd - ts.d_time_yaw[k]).abs() < 1e-5);
        }

        // Beyond the horizon the boundary freezes and flags.
        let over = terminal_state(&pred, 15.0, &vars, &plane, &disc, &params);
        let edge = terminal_state(&pred, 12.0, &vars, &plane, &disc, &params);
        assert!(over.clamped);
        assert_relative_eq!(over.pos[0], edge.pos[0], epsilon = 1e-12);
        for k in 0..4 {
            assert_eq!(over.d_time_pos[k], Vector3::zeros());
        }
        assert_eq!(over.d_time_yaw, [0.0, 0.0]);
    }

    #[test]
    fn terminal_contact_variable_derivatives_match_fd() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.05);
        let pred = turning_prediction();
        let plane = PerchPlane::from_incline(Vector3::zeros(), 0.0, 0.9);
        let vars = TerminalVariables { nu: Vector2::new(0.3, -0.2), tau_f: 0.5 };
        let t = 3.0;
        let h = 1e-7;

        let ts = terminal_state(&pred, t, &vars, &plane, &disc, &params);
        let dx = TerminalVariables { nu: vars.nu + Vector2::new(h, 0.0), ..vars };
        let dy = TerminalVariables { nu: vars.nu + Vector2::new(0.0, h), ..vars };
        let df = TerminalVariables { tau_f: vars.tau_f + h, ..vars };

        let vx = (terminal_state(&pred, t, &dx, &plane, &disc, &params).pos[1] - ts.pos[1]) / h;
        let vy = (terminal_state(&pred, t, &dy, &plane, &disc, &params).pos[1] - ts.pos[1]) / h;
        let af = (terminal_state(&pred, t, &df, &plane, &disc, &params).pos[2] - ts.pos[2]) / h;
        assert_relative_eq!(vx, ts.d_nu_x, epsilon = 1e-5);
        assert_relative_eq!(vy, ts.d_nu_y, epsilon = 1e-5);
        assert_relative_eq!(af, ts.d_tau_f, epsilon = 1e-5);

        // ν never moves position or acceleration, τ_f never moves velocity.
        let far = TerminalVariables { nu: Vector2::new(5.0, -3.0), tau_f: vars.tau_f };
        let moved = terminal_state(&pred, t, &far, &plane, &disc, &params);
        assert_relative_eq!(moved.pos[0], ts.pos[0], epsilon = 1e-12);
        assert_relative_eq!(moved.pos[2], ts.pos[2], epsilon = 1e-12);
    }

    #[test]
    fn contact_thrust_stays_in_envelope() {
        let params = PerchingParams::default();
        let mut tau_f = -10.0;
        while tau_f <= 10.0 {
            let vars = TerminalVariables { nu: Vector2::zeros(), tau_f };
            let tau = vars.tau_e(&params);
            assert!(tau >= params.tau_min - 1e-12 && tau <= params.tau_max + 1e-12);
            tau_f += 0.1;
        }
    }

    #[test]
    fn touchdown_attitude_matches_surface_normal() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        for &incline in &[0.3, 0.9, 1.4] {
            for &heading in &[0.0, 2.1] {
                for &tau_f in &[-0.5, 0.8] {
                    let target = Vector3::new(1.0, -0.5, 0.8);
                    let pred = static_prediction(target, heading);
                    let plane = PerchPlane::from_incline(target, heading, incline);
                    let vars = TerminalVariables { nu: Vector2::new(0.1, 0.2), tau_f };
                    let ts = terminal_state(&pred, 2.0, &vars, &plane, &disc, &params);
                    let sample = FlatSample {
                        pos: ts.pos[0],
                        vel: ts.pos[1],
                        acc: ts.pos[2],
                        jerk: ts.pos[3],
                        yaw: ts.yaw[0],
                        yaw_rate: ts.yaw[1],
                    };
                    let att = recover_attitude(&sample, params.gravity).unwrap();
                    assert!((att.z_body - ts.plane.z_axis).norm() < 1e-9);
                    assert_relative_eq!(att.thrust, ts.tau_e, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn collision_is_free_far_away_even_for_wild_attitude() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        let target = static_prediction(Vector3::zeros(), 0.0).state_after(0.0).0;
        let plane = PerchPlane::from_incline(Vector3::zeros(), 0.0, 0.4);
        // Thrust points straight down: attitude recovery would fail here.
        let sample = FlatSample {
            pos: Vector3::new(6.0, 0.0, 1.0),
            acc: Vector3::new(0.0, 0.0, -15.0),
            ..FlatSample::default()
        };
        let v = cost_se3_collision(&sample, &target, &plane, &disc, &params).unwrap();
        assert_eq!(v.cost, 0.0);
        assert_eq!(v.gate, 0.0);
        assert_eq!(v.d_pos, Vector3::zeros());
        assert_eq!(v.d_acc, Vector3::zeros());
        assert_eq!(v.d_time, 0.0);
    }

    #[test]
    fn collision_is_free_for_clear_hover_inside_gate() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        let target_pos = Vector3::new(0.0, 0.0, 0.5);
        let target = static_prediction(target_pos, 0.0).state_after(0.0).0;
        let plane = PerchPlane::from_incline(target_pos, 0.0, 0.0);
        let sample = FlatSample {
            pos: target_pos + Vector3::new(0.0, 0.0, 0.5),
            ..FlatSample::default()
        };
        let v = cost_se3_collision(&sample, &target, &plane, &disc, &params).unwrap();
        assert_eq!(v.cost, 0.0);
        assert_eq!(v.gate, 1.0);
        assert_eq!(v.d_pos, Vector3::zeros());
        assert_eq!(v.d_acc, Vector3::zeros());
    }

    #[test]
    fn collision_gradients_match_fd() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.2, 0.05);
        let pred = turning_prediction();
        let t = 2.0;
        let (target, _) = pred.state_after(t);
        let plane_base = PerchPlane::from_incline(Vector3::zeros(), 0.0, 0.5);
        let plane = plane_base.at(target.pos, target.heading);
        // Tilted and slightly below the landing point: the disc pokes
        // through the surface.
        let sample = FlatSample {
            pos: target.pos + 0.05 * plane.z_axis + 0.1 * plane.x_axis,
            acc: Vector3::new(1.2, -0.6, 2.0),
            ..FlatSample::default()
        };
        let v = cost_se3_collision(&sample, &target, &plane_base, &disc, &params).unwrap();
        assert!(v.cost > 0.0);

        let h = 1e-6;
        let eval = |s: &FlatSample, tg: &TargetPoint| {
            cost_se3_collision(s, tg, &plane_base, &disc, &params).unwrap().cost
        };
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = h;
            let sp = FlatSample { pos: sample.pos + e, ..sample };
            let sm = FlatSample { pos: sample.pos - e, ..sample };
            let fd = (eval(&sp, &target) - eval(&sm, &target)) / (2.0 * h);
            assert!(
                (fd - v.d_pos[i]).abs() <= fd_tol(v.d_pos[i], v.cost, h, 1e-4),
                "pos[{i}]: fd {fd} vs {g}",
                g = v.d_pos[i]
            );
            let ap = FlatSample { acc: sample.acc + e, ..sample };
            let am = FlatSample { acc: sample.acc - e, ..sample };
            let fd = (eval(&ap, &target) - eval(&am, &target)) / (2.0 * h);
            assert!(
                (fd - v.d_acc[i]).abs() <= fd_tol(v.d_acc[i], v.cost, h, 1e-4),
                "acc[{i}]: fd {fd} vs {g}",
                g = v.d_acc[i]
            );
        }
        // Platform-motion chain against a time shift of the prediction.
        let (tgp, _) = pred.state_after(t + h);
        let (tgm, _) = pred.state_after(t - h);
        let fd = (eval(&sample, &tgp) - eval(&sample, &tgm)) / (2.0 * h);
        assert!(
            (fd - v.d_time).abs() <= fd_tol(v.d_time, v.cost, h, 1e-4),
            "time: fd {fd} vs {g}",
            g = v.d_time
        );
    }

    #[test]
    fn collision_gate_saturation_is_exact() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        let target = static_prediction(Vector3::zeros(), 0.0).state_after(0.0).0;
        let plane = PerchPlane::from_incline(Vector3::zeros(), 0.0, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let floor = params.gate_radius * (1.0 + params.eps).sqrt() + 1e-9;
        for _ in 0..50 {
            let dir = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let sample = FlatSample {
                pos: dir * rng.random_range(floor..20.0),
                acc: Vector3::new(
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-30.0..10.0),
                ),
                ..FlatSample::default()
            };
            let v = cost_se3_collision(&sample, &target, &plane, &disc, &params).unwrap();
            assert_eq!(v.cost, 0.0);
            assert_eq!(v.d_pos, Vector3::zeros());
            assert_eq!(v.d_acc, Vector3::zeros());
            assert_eq!(v.d_time, 0.0);
        }
    }

    #[test]
    fn perception_center_and_offset_pixels() {
        let params = PerchingParams {
            camera: CameraModel::front(400.0, 400.0, 320.0, 240.0),
            ..PerchingParams::default()
        };
        let centered = static_prediction(Vector3::new(2.0, 0.0, 0.0), 0.0).state_after(0.0).0;
        let sample = FlatSample::default();
        let v = cost_perception(&sample, &centered, &params).unwrap();
        assert_eq!(v.gate, 1.0);
        assert_relative_eq!(v.pixel, Vector2::zeros(), epsilon = 1e-12);
        assert_eq!(v.cost, 0.0);
        assert_eq!(v.d_pos, Vector3::zeros());
        assert_eq!(v.d_yaw, 0.0);

        // 0.1 m to the right at 2 m depth: 20 px with f = 400.
        let offset = static_prediction(Vector3::new(2.0, -0.1, 0.0), 0.0).state_after(0.0).0;
        let v = cost_perception(&sample, &offset, &params).unwrap();
        assert_eq!(v.gate, 1.0);
        assert_relative_eq!(v.pixel, Vector2::new(20.0, 0.0), epsilon = 1e-9);
        assert_relative_eq!(v.cost, 400.0, epsilon = 1e-9);
        assert!(!v.behind_camera);
    }

    #[test]
    fn perception_gradients_match_fd() {
        let params = PerchingParams::default();
        let pred = turning_prediction();
        let h = 1e-6;
        // One state in the band interior, one in the outer gate
        // transition where the range chain is active too. Both keep the
        // landing point in front of the forward camera.
        let t_and_pos = [
            (1.5, Vector3::new(-2.0, 0.3, 0.8)),
            (2.5, Vector3::new(-2.0, 0.3, 0.8)),
        ];
        for (k, &(t, off)) in t_and_pos.iter().enumerate() {
            let (target, _) = pred.state_after(t);
            let pos = if k == 1 {
                // Straddles d_max: gate derivative nonzero.
                target.pos
                    + (off / off.norm()) * params.d_max * (1.0 - 0.2 * params.eps)
            } else {
                target.pos + off
            };
            let sample = FlatSample {
                pos,
                acc: Vector3::new(0.8, 0.4, -1.0),
                yaw: 0.15,
                ..FlatSample::default()
            };
            let v = cost_perception(&sample, &target, &params).unwrap();
            assert!(v.gate > 0.0 && !v.behind_camera);
            let eval = |s: &FlatSample, tg: &TargetPoint| {
                cost_perception(s, tg, &params).unwrap().cost
            };
            for i in 0..3 {
                let mut e = Vector3::zeros();
                e[i] = h;
                let fd = (eval(&FlatSample { pos: sample.pos + e, ..sample }, &target)
                    - eval(&FlatSample { pos: sample.pos - e, ..sample }, &target))
                    / (2.0 * h);
                assert!(
                    (fd - v.d_pos[i]).abs() <= fd_tol(v.d_pos[i], v.cost, h, 1e-4),
                    "state {k} pos[{i}]: fd {fd} vs {g}",
                    g = v.d_pos[i]
                );
                let fd = (eval(&FlatSample { acc: sample.acc + e, ..sample }, &target)
                    - eval(&FlatSample { acc: sample.acc - e, ..sample }, &target))
                    / (2.0 * h);
                assert!(
                    (fd - v.d_acc[i]).abs() <= fd_tol(v.d_acc[i], v.cost, h, 1e-4),
                    "state {k} acc[{i}]: fd {fd} vs {g}",
                    g = v.d_acc[i]
                );
            }
            let fd = (eval(&FlatSample { yaw: sample.yaw + h, ..sample }, &target)
                - eval(&FlatSample { yaw: sample.yaw - h, ..sample }, &target))
                / (2.0 * h);
            assert!(
                (fd - v.d_yaw).abs() <= fd_tol(v.d_yaw, v.cost, h, 1e-4),
                "state {k} yaw: fd {fd} vs {g}",
                g = v.d_yaw
            );
            let (tgp, _) = pred.state_after(t + h);
            let (tgm, _) = pred.state_after(t - h);
            let fd = (eval(&sample, &tgp) - eval(&sample, &tgm)) / (2.0 * h);
            assert!(
                (fd - v.d_time).abs() <= fd_tol(v.d_time, v.cost, h, 1e-4),
                "state {k} time: fd {fd} vs {g}",
                g = v.d_time
            );
        }
    }

    #[test]
    fn perception_behind_camera_fallback() {
        let params = PerchingParams::default();
        // Landing point two meters behind the forward camera.
        let target = static_prediction(Vector3::new(-2.0, 0.0, 0.0), 0.0).state_after(0.0).0;
        let sample = FlatSample::default();
        let v = cost_perception(&sample, &target, &params).unwrap();
        assert!(v.behind_camera);
        assert!(v.cost >= BEHIND_CAMERA_COST);
        assert!(v.cost.is_finite());
        // The fallback slope still matches finite differences.
        let h = 1e-6;
        let eval = |s: &FlatSample| cost_perception(s, &target, &params).unwrap().cost;
        for i in 0..3 {
            let mut e = Vector3::zeros();
            e[i] = h;
            let fd = (eval(&FlatSample { pos: sample.pos + e, ..sample })
                - eval(&FlatSample { pos: sample.pos - e, ..sample }))
                / (2.0 * h);
            assert!(
                (fd - v.d_pos[i]).abs() <= fd_tol(v.d_pos[i], v.cost, h, 1e-4),
                "pos[{i}]: fd {fd} vs {g}",
                g = v.d_pos[i]
            );
        }
        // Moving the drone back (away from the point) raises the cost.
        assert!(v.d_pos.x > 0.0);
    }

    #[test]
    fn actuator_hover_is_free() {
        let params = PerchingParams::default();
        let v = cost_actuator(&FlatSample::default(), &params).unwrap();
        assert_eq!(v.thrust_cost, 0.0);
        assert_eq!(v.rate_cost, 0.0);
        assert_eq!(v.d_acc_thrust, Vector3::zeros());
        assert_eq!(v.d_jerk, Vector3::zeros());
        assert_eq!(v.d_yaw_rate, 0.0);
        assert_relative_eq!(v.thrust, STANDARD_GRAVITY, epsilon = 1e-12);
    }

    #[test]
    fn actuator_envelope_blend_matches_fd() {
        let params = PerchingParams::default();
        let h = 1e-6;
        // ‖τ‖² sits half a width inside each smoothing blend.
        let hi2 = params.tau_hi_soft() * params.tau_hi_soft();
        let lo2 = params.tau_lo_soft() * params.tau_lo_soft();
        let hi_z = (hi2 + 0.5 * params.mu).sqrt() - params.gravity;
        let lo_z = (lo2 - 0.5 * params.mu).sqrt() - params.gravity;
        for &az in &[hi_z, lo_z] {
            let sample = FlatSample {
                acc: Vector3::new(0.0, 0.0, az),
                jerk: Vector3::new(2.0, -1.0, 0.5),
                yaw_rate: 3.01,
                ..FlatSample::default()
            };
            let v = cost_actuator(&sample, &params).unwrap();
            assert!(v.thrust_cost > 0.0);
            let eval = |s: &FlatSample| {
                let a = cost_actuator(s, &params).unwrap();
                a.thrust_cost + a.rate_cost
            };
            let f0 = eval(&sample);
            for i in 0..3 {
                let mut e = Vector3::zeros();
                e[i] = h;
                let fd = (eval(&FlatSample { acc: sample.acc + e, ..sample })
                    - eval(&FlatSample { acc: sample.acc - e, ..sample }))
                    / (2.0 * h);
                let g = v.d_acc_thrust[i] + v.d_acc_rate[i];
                assert!((fd - g).abs() <= fd_tol(g, f0, h, 1e-4), "acc[{i}]: fd {fd} vs {g}");
                let fd = (eval(&FlatSample { jerk: sample.jerk + e, ..sample })
                    - eval(&FlatSample { jerk: sample.jerk - e, ..sample }))
                    / (2.0 * h);
                assert!(
                    (fd - v.d_jerk[i]).abs() <= fd_tol(v.d_jerk[i], f0, h, 1e-4),
                    "jerk[{i}]: fd {fd} vs {g}",
                    g = v.d_jerk[i]
                );
            }
            let fd = (eval(&FlatSample { yaw_rate: sample.yaw_rate + h, ..sample })
                - eval(&FlatSample { yaw_rate: sample.yaw_rate - h, ..sample }))
                / (2.0 * h);
            assert!(
                (fd - v.d_yaw_rate).abs() <= fd_tol(v.d_yaw_rate, f0, h, 1e-4),
                "yaw rate: fd {fd} vs {g}",
                g = v.d_yaw_rate
            );
        }
    }

    #[test]
    fn actuator_tilt_rate_is_exact_for_orthogonal_jerk() {
        let params = PerchingParams::default();
        let omega = 1.3;
        let sample = FlatSample {
            jerk: Vector3::new(omega * STANDARD_GRAVITY, 0.0, 0.0),
            ..FlatSample::default()
        };
        let v = cost_actuator(&sample, &params).unwrap();
        assert_relative_eq!(v.tilt_rate_sq, omega * omega, epsilon = 1e-12);
    }

    #[test]
    fn height_band_values_and_gradient() {
        let params = PerchingParams::default();
        let target = Vector3::new(1.0, 1.0, 0.5);
        let inside = FlatSample { pos: Vector3::new(0.0, 0.0, 1.5), ..FlatSample::default() };
        let (c, g) = cost_relative_height(&inside, &target, &params);
        assert_eq!(c, 0.0);
        assert_eq!(g, Vector3::zeros());

        // Two smoothing widths above the soft band: linear tail μ·1.5.
        let (z_lo, z_hi) = params.z_soft();
        let above = FlatSample {
            pos: Vector3::new(0.0, 0.0, target.z + z_hi + 2.0 * params.mu),
            ..FlatSample::default()
        };
        let (c, g) = cost_relative_height(&above, &target, &params);
        assert_relative_eq!(c, 1.5 * params.mu, epsilon = 1e-12);
        assert_relative_eq!(g.z, 1.0, epsilon = 1e-12);

        let h = 1e-6;
        for &z in &[target.z + z_hi + 0.03, target.z + z_lo - 0.04] {
            let s = FlatSample { pos: Vector3::new(0.0, 0.0, z), ..FlatSample::default() };
            let (_, g) = cost_relative_height(&s, &target, &params);
            let up = FlatSample { pos: Vector3::new(0.0, 0.0, z + h), ..FlatSample::default() };
            let dn = FlatSample { pos: Vector3::new(0.0, 0.0, z - h), ..FlatSample::default() };
            let fd = (cost_relative_height(&up, &target, &params).0
                - cost_relative_height(&dn, &target, &params).0)
                / (2.0 * h);
            assert!((fd - g.z).abs() < 1e-6, "z {z}: fd {fd} vs {gz}", gz = g.z);
        }
    }

    #[test]
    fn nu_regularization_arithmetic() {
        let (c, g) = cost_nu_regularization(&Vector2::new(0.3, -0.4));
        assert_relative_eq!(c, 0.25, epsilon = 1e-15);
        assert_relative_eq!(g, Vector2::new(0.6, -0.8), epsilon = 1e-15);
    }

    #[test]
    fn cost_ops_match_fd_at_random_states() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.18, 0.05);
        let pred = turning_prediction();
        let plane = PerchPlane::from_incline(Vector3::zeros(), 0.0, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let h = 1e-6;
        for case in 0..20 {
            let t = rng.random_range(0.5..10.0);
            let (target, _) = pred.state_after(t);
            let sample = FlatSample {
                pos: target.pos
                    + Vector3::new(
                        rng.random_range(-2.5..2.5),
                        rng.random_range(-2.5..2.5),
                        rng.random_range(-0.5..2.5),
                    ),
                vel: Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
                acc: Vector3::new(
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..4.0),
                    rng.random_range(-4.0..6.0),
                ),
                jerk: Vector3::new(
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                ),
                yaw: rng.random_range(-3.0..3.0),
                yaw_rate: rng.random_range(-2.0..2.0),
            };

            let total = |s: &FlatSample, tg: &TargetPoint| {
                let a = cost_actuator(s, &params).unwrap();
                cost_se3_collision(s, tg, &plane, &disc, &params).unwrap().cost
                    + cost_perception(s, tg, &params).unwrap().cost
                    + a.thrust_cost
                    + a.rate_cost
                    + cost_relative_height(s, &tg.pos, &params).0
            };
            let col = cost_se3_collision(&sample, &target, &plane, &disc, &params).unwrap();
            let per = cost_perception(&sample, &target, &params).unwrap();
            let act = cost_actuator(&sample, &params).unwrap();
            let hgt = cost_relative_height(&sample, &target.pos, &params);
            let f0 = total(&sample, &target);

            let g_pos = col.d_pos + per.d_pos + hgt.1;
            let g_acc = col.d_acc + per.d_acc + act.d_acc_thrust + act.d_acc_rate;
            for i in 0..3 {
                let mut e = Vector3::zeros();
                e[i] = h;
                let fd = (total(&FlatSample { pos: sample.pos + e, ..sample }, &target)
                    - total(&FlatSample { pos: sample.pos - e, ..sample }, &target))
                    / (2.0 * h);
                assert!(
                    (fd - g_pos[i]).abs() <= fd_tol(g_pos[i], f0, h, 1e-3),
                    "case {case} pos[{i}]: fd {fd} vs {g}",
                    g = g_pos[i]
                );
                let fd = (total(&FlatSample { acc: sample.acc + e, ..sample }, &target)
                    - total(&FlatSample { acc: sample.acc - e, ..sample }, &target))
                    / (2.0 * h);
                assert!(
                    (fd - g_acc[i]).abs() <= fd_tol(g_acc[i], f0, h, 1e-3),
                    "case {case} acc[{i}]: fd {fd} vs {g}",
                    g = g_acc[i]
                );
                let fd = (total(&FlatSample { jerk: sample.jerk + e, ..sample }, &target)
                    - total(&FlatSample { jerk: sample.jerk - e, ..sample }, &target))
                    / (2.0 * h);
                assert!(
                    (fd - act.d_jerk[i]).abs() <= fd_tol(act.d_jerk[i], f0, h, 1e-3),
                    "case {case} jerk[{i}]: fd {fd} vs {g}",
                    g = act.d_jerk[i]
                );
            }
            let fd = (total(&FlatSample { yaw: sample.yaw + h, ..sample }, &target)
                - total(&FlatSample { yaw: sample.yaw - h, ..sample }, &target))
                / (2.0 * h);
            assert!(
                (fd - per.d_yaw).abs() <= fd_tol(per.d_yaw, f0, h, 1e-3),
                "case {case} yaw: fd {fd} vs {g}",
                g = per.d_yaw
            );
            let (tgp, _) = pred.state_after(t + h);
            let (tgm, _) = pred.state_after(t - h);
            let g_time = col.d_time + per.d_time - hgt.1.z * target.vel.z;
            let fd = (total(&sample, &tgp) - total(&sample, &tgm)) / (2.0 * h);
            assert!(
                (fd - g_time).abs() <= fd_tol(g_time, f0, h, 1e-3),
                "case {case} time: fd {fd} vs {g}",
                g = g_time
            );
        }
    }

    fn fd_problem(problem: &mut PenaltyProblem, x: &[f64], rel: f64, label: &str) {
        let n = x.len();
        let mut g = vec![0.0; n];
        let f0 = problem.objective(x, &mut g);
        assert!(f0.is_finite(), "{label}: objective not finite");
        let h = 1e-6;
        let mut scratch = vec![0.0; n];
        for i in 0..n {
            let mut xp = x.to_vec();
            xp[i] += h;
            let fp = problem.objective(&xp, &mut scratch);
            xp[i] -= 2.0 * h;
            let fm = problem.objective(&xp, &mut scratch);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= fd_tol(g[i], f0, h, rel),
                "{label} var {i}: fd {fd} vs analytic {g}",
                g = g[i]
            );
        }
    }

    #[test]
    fn assembled_gradient_matches_fd() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        let pred = turning_prediction();
        let plane = PerchPlane::from_incline(Vector3::zeros(), 0.0, 0.6);
        let start = FlatSample {
            pos: Vector3::new(-1.5, 1.0, 1.6),
            vel: Vector3::new(0.8, -0.2, 0.0),
            yaw: 0.4,
            ..FlatSample::default()
        };
        let mut problem = assemble_perching_problem(&pred, &start, &plane, &disc, &params);
        let n = problem.var_count();
        let mut x = vec![0.0; n];
        problem.pack(&mut x);
        fd_problem(&mut problem, &x, 1e-3, "initial");

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..3 {
            let mut y = x.clone();
            for v in y.iter_mut() {
                *v += rng.random_range(-0.25..0.25);
            }
            fd_problem(&mut problem, &y, 1e-3, &alloc::format!("perturbed {round}"));
        }
    }

    #[test]
    fn assembled_gradient_matches_fd_past_horizon() {
        // Short prediction: the touchdown time clamps beyond the horizon
        // and the boundary freezes; the gradient must agree there too.
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        let pred = TargetPrediction::from_segments(
            vec![CtraSegment {
                t0: 0.0,
                duration: 1.5,
                pos: Vector3::new(2.0, 0.0, 0.6),
                heading: 0.3,
                v_h: 1.0,
                v_v: 0.0,
                turn_rate: 0.2,
                accel: 0.0,
            }],
            0.25,
            false,
        );
        let plane = PerchPlane::from_incline(Vector3::zeros(), 0.0, 0.4);
        let start = FlatSample {
            pos: Vector3::new(-8.0, 2.0, 2.0),
            yaw: 0.1,
            ..FlatSample::default()
        };
        let mut problem = assemble_perching_problem(&pred, &start, &plane, &disc, &params);
        let n = problem.var_count();
        let mut x = vec![0.0; n];
        problem.pack(&mut x);
        // T_init ≈ 2.8 s > 1.5 s horizon: already clamped at the seed.
        fd_problem(&mut problem, &x, 1e-3, "clamped");
    }

    #[test]
    fn static_horizontal_solve_perches_cleanly() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        let target = Vector3::new(0.0, 0.0, 0.5);
        let pred = static_prediction(target, 0.9);
        let plane = PerchPlane::from_incline(target, 0.9, 0.0);
        let start = FlatSample {
            pos: Vector3::new(-2.5, 0.4, 1.8),
            ..FlatSample::default()
        };
        let mut problem = assemble_perching_problem(&pred, &start, &plane, &disc, &params);
        let checks = perching_checks(&pred, &plane, &disc, &params);
        let opts =
            SolveOptions { max_iterations: 5000, cost_tol: 1e-9, ..SolveOptions::default() };
        let (report, feas) = solve_with_recheck(&mut problem, &opts, &checks, 1e-3);
        assert!(feas.ok, "violations: {:?}", feas.violations);
        assert!(report.converged, "{report:?}");
        assert!(report.cost.is_finite());

        let metrics =
            perch_report(&problem.pos, &problem.yaw, &pred, &plane, &disc, &params, 1e-3);
        assert!(metrics.touchdown_error < 1e-6, "touchdown {}", metrics.touchdown_error);
        assert!(metrics.alignment_error < 1e-6, "alignment {}", metrics.alignment_error);
        assert!(metrics.thrust_min >= params.tau_min - 1e-9);
        assert!(metrics.thrust_max <= params.tau_max + 1e-9);
        assert!(metrics.tilt_rate_max <= params.omega_xy_max + 1e-9);
        assert!(metrics.worst_penetration < 1e-9);

        // Contact at the platform heading, descending along the normal
        // with exactly the optimized slip.
        let total = problem.pos.total_time();
        let (end, _) = problem.pos.sample(total, 1);
        let nu = Vector2::new(problem.extra[0], problem.extra[1]);
        let expect = nu.x * plane.x_axis + nu.y * plane.y_axis - params.v_n * plane.z_axis;
        assert_relative_eq!(end[1], expect, epsilon = 1e-6);
        let (yaw_end, _) = problem.yaw.sample(total, 0);
        assert!(crate::angles::angle_diff(yaw_end[0][0], 0.9).abs() < 1e-9);
    }

    #[test]
    fn vertical_plane_solve_respects_limits() {
        let params = PerchingParams { z_min: -2.0, ..PerchingParams::default() };
        let disc = DiscModel::new(0.12, 0.03);
        let target = Vector3::new(3.0, 0.0, 1.2);
        let pred = static_prediction(target, 0.0);
        let plane = PerchPlane::from_incline(target, 0.0, FRAC_PI_2);
        let start = FlatSample {
            pos: Vector3::new(-0.5, 0.0, 1.2),
            ..FlatSample::default()
        };
        let mut problem = assemble_perching_problem(&pred, &start, &plane, &disc, &params);
        let checks = perching_checks(&pred, &plane, &disc, &params);
        let opts =
            SolveOptions { max_iterations: 5000, cost_tol: 1e-9, ..SolveOptions::default() };
        let (report, feas) = solve_with_recheck(&mut problem, &opts, &checks, 1e-3);
        assert!(feas.ok, "violations: {:?}", feas.violations);
        assert!(report.converged, "{report:?}");
        assert!(report.cost.is_finite());

        let metrics =
            perch_report(&problem.pos, &problem.yaw, &pred, &plane, &disc, &params, 1e-3);
        assert!(metrics.thrust_min >= params.tau_min - 1e-9);
        assert!(metrics.thrust_max <= params.tau_max + 1e-9);
        assert!(metrics.tilt_rate_max <= params.omega_xy_max + 1e-9);
        assert!(metrics.yaw_rate_max <= params.omega_z_max + 1e-9);
        assert!(metrics.alignment_error < 1e-6);
        // The body z axis ends on the horizontal surface normal.
        let total = problem.pos.total_time();
        let (end, _) = problem.pos.sample(total, 2);
        let att = recover_attitude(
            &FlatSample { pos: end[0], vel: end[1], acc: end[2], ..FlatSample::default() },
            params.gravity,
        )
        .unwrap();
        assert!((att.z_body - (-Vector3::x())).norm() < 1e-9);
    }

    #[test]
    fn tangential_relaxation_restores_steep_feasibility() {
        let params = PerchingParams {
            omega_xy_max: 2.0,
            z_min: -2.0,
            ..PerchingParams::default()
        };
        let disc = DiscModel::new(0.12, 0.03);
        let target = Vector3::new(2.0, 0.0, 1.5);
        let pred = static_prediction(target, 0.0);
        let plane = PerchPlane::from_incline(target, 0.0, 1.5);
        let start = FlatSample {
            pos: Vector3::new(-1.5, 0.0, 1.0),
            ..FlatSample::default()
        };
        let opts =
            SolveOptions { max_iterations: 5000, cost_tol: 1e-9, ..SolveOptions::default() };

        let mut fixed_params = params.clone();
        fixed_params.optimize_nu = false;
        let mut fixed =
            assemble_perching_problem(&pred, &start, &plane, &disc, &fixed_params);
        let checks = perching_checks(&pred, &plane, &disc, &fixed_params);
        let (_, fixed_feas) = solve_with_recheck(&mut fixed, &opts, &checks, 1e-3);

        let mut relaxed = assemble_perching_problem(&pred, &start, &plane, &disc, &params);
        let checks = perching_checks(&pred, &plane, &disc, &params);
        let (_, relaxed_feas) = solve_with_recheck(&mut relaxed, &opts, &checks, 1e-3);

        assert!(relaxed_feas.ok, "violations: {:?}", relaxed_feas.violations);
        assert!(!fixed_feas.ok, "zero-slip contact should violate a hard limit here");
        // The optimizer actually used the slip.
        let nu = Vector2::new(relaxed.extra[0], relaxed.extra[1]);
        assert!(nu.norm() > 0.05, "slip stayed at {nu:?}");
    }

    #[test]
    fn report_duty_cycle_counts_in_frame_samples() {
        let params = PerchingParams::default();
        let disc = DiscModel::new(0.15, 0.04);
        let target = Vector3::new(0.0, 0.0, 0.5);
        let pred = static_prediction(target, 0.0);
        let plane = PerchPlane::from_incline(target, 0.0, 0.0);
        // Hover facing the landing point from 2 m away: always visible.
        let start_pos = [
            Vector3::new(-2.0, 0.0, 0.5),
            Vector3::zeros(),
            Vector3::zeros(),
            Vector3::zeros(),
        ];
        let pos = MincoTrajectory::<3>::new(4, &start_pos, &start_pos, &[], &[2.0]).unwrap();
        let yaw0 = [Vector1::new(0.0), Vector1::new(0.0)];
        let yaw = MincoTrajectory::<1>::new(2, &yaw0, &yaw0, &[], &[2.0]).unwrap();
        let m = perch_report(&pos, &yaw, &pred, &plane, &disc, &params, 0.01);
        assert_eq!(m.visibility_duty, 1.0);
        assert_eq!(m.worst_penetration, 0.0);
        assert_relative_eq!(m.thrust_min, STANDARD_GRAVITY, epsilon = 1e-9);

        // Facing away: the landing point sits behind the camera.
        let yaw_pi = [Vector1::new(PI), Vector1::new(0.0)];
        let yaw = MincoTrajectory::<1>::new(2, &yaw_pi, &yaw_pi, &[], &[2.0]).unwrap();
        let m = perch_report(&pos, &yaw, &pred, &plane, &disc, &params, 0.01);
        assert_eq!(m.visibility_duty, 0.0);
    }
}
