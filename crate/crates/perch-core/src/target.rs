//! Target vehicle estimation and short-horizon motion prediction.
//!
//! The estimator is a constant-turn-rate-and-velocity (CTRV) extended Kalman
//! filter over `(ϱ_x, ϱ_y, ϱ_z, θ, v_h, v_v, ω_ϱ)` fed by position fixes.
//! Prediction expands constant-turn-rate-and-acceleration (CTRA) motion
//! primitives over a small control grid, greedily keeping the collision-free
//! candidate of least control effort, and exposes the resulting trajectory
//! through analytic per-segment accessors so downstream time derivatives are
//! exact rather than interpolated.

use alloc::vec::Vec;

use nalgebra::{Matrix3, SMatrix, Vector3};
#[allow(unused_imports)] // resolves f64 math in no_std builds; shadowed by inherent methods under test
use num_traits::Float;

use crate::angles::wrap_angle;
use crate::envmap::DistanceField;

/// Turn rates below this use the series form of the arc displacement.
const TURN_RATE_FLOOR: f64 = 1e-4;

pub type Cov7 = SMatrix<f64, 7, 7>;

/// CTRV state: planar arc motion plus independent vertical velocity.
#[derive(Debug, Clone, Copy)]
pub struct TargetState {
    pub pos: Vector3<f64>,
    pub heading: f64,
    pub v_h: f64,
    pub v_v: f64,
    pub turn_rate: f64,
    pub covariance: Cov7,
}

impl TargetState {
    pub fn new(pos: Vector3<f64>, heading: f64, v_h: f64, v_v: f64, turn_rate: f64) -> Self {
        Self {
            pos,
            heading: wrap_angle(heading),
            v_h,
            v_v,
            turn_rate,
            covariance: Cov7::identity(),
        }
    }
}

/// Horizontal arc displacement of a CTRA step: the integral of
/// `(v0 + a·τ)·(cos, sin)(θ0 + ω·τ)` over `[0, dt]`.
fn arc_displacement(v0: f64, a: f64, theta0: f64, omega: f64, dt: f64) -> (f64, f64) {
    let (s0, c0) = theta0.sin_cos();
    if omega.abs() >= TURN_RATE_FLOOR {
        let theta1 = theta0 + omega * dt;
        let (s1, c1) = theta1.sin_cos();
        let v1 = v0 + a * dt;
        let dx = (v1 * s1 - v0 * s0) / omega + a * (c1 - c0) / (omega * omega);
        let dy = (v0 * c0 - v1 * c1) / omega + a * (s1 - s0) / (omega * omega);
        (dx, dy)
    } else {
        // Series in ω, exact enough at the floor to keep half-step
        // composition consistent with the arc form.
        let i0 = v0 * dt + 0.5 * a * dt * dt;
        let i1 = 0.5 * v0 * dt * dt + a * dt * dt * dt / 3.0;
        let i2 = v0 * dt * dt * dt / 3.0 + 0.25 * a * dt * dt * dt * dt;
        let dx = c0 * i0 - omega * s0 * i1 - 0.5 * omega * omega * c0 * i2;
        let dy = s0 * i0 + omega * c0 * i1 - 0.5 * omega * omega * s0 * i2;
        (dx, dy)
    }
}

/// CTRV mean propagation (zero longitudinal acceleration).
fn ctrv_mean(state: &TargetState, dt: f64) -> TargetState {
    let (dx, dy) = arc_displacement(state.v_h, 0.0, state.heading, state.turn_rate, dt);
    TargetState {
        pos: state.pos + Vector3::new(dx, dy, state.v_v * dt),
        heading: wrap_angle(state.heading + state.turn_rate * dt),
        ..*state
    }
}

/// Jacobian of the CTRV mean map at `state`, for covariance propagation.
fn ctrv_jacobian(state: &TargetState, dt: f64) -> Cov7 {
    let mut f = Cov7::identity();
    let (v, th, w) = (state.v_h, state.heading, state.turn_rate);
    let (s0, c0) = th.sin_cos();
    if w.abs() >= TURN_RATE_FLOOR {
        let th1 = th + w * dt;
        let (s1, c1) = th1.sin_cos();
        f[(0, 3)] = v * (c1 - c0) / w;
        f[(0, 4)] = (s1 - s0) / w;
        f[(0, 6)] = v * (dt * c1 * w - (s1 - s0)) / (w * w);
        f[(1, 3)] = v * (s1 - s0) / w;
        f[(1, 4)] = (c0 - c1) / w;
        f[(1, 6)] = v * (dt * s1 * w - (c0 - c1)) / (w * w);
    } else {
        f[(0, 3)] = -v * dt * s0;
        f[(0, 4)] = dt * c0;
        f[(0, 6)] = -0.5 * v * dt * dt * s0;
        f[(1, 3)] = v * dt * c0;
        f[(1, 4)] = dt * s0;
        f[(1, 6)] = 0.5 * v * dt * dt * c0;
    }
    f[(2, 5)] = dt;
    f[(3, 6)] = dt;
    f
}

/// Propagates mean and covariance by `dt` under the CTRV model.
///
/// `q_rate` is the process-noise intensity per second; the step injects
/// `q_rate·dt`.
pub fn ekf_predict(state: &TargetState, dt: f64, q_rate: &Cov7) -> TargetState {
    assert!(dt > 0.0, "prediction step must be positive");
    let f = ctrv_jacobian(state, dt);
    let mut next = ctrv_mean(state, dt);
    let p = f * state.covariance * f.transpose() + q_rate * dt;
    next.covariance = 0.5 * (p + p.transpose());
    next
}

/// Position-only EKF update. Returns the new state and whether the
/// measurement passed the Mahalanobis gate; a rejected measurement leaves
/// the state unchanged.
pub fn ekf_update(
    state: &TargetState,
    measured_pos: &Vector3<f64>,
    r_meas: &Matrix3<f64>,
    gate: f64,
) -> (TargetState, bool) {
    let p = state.covariance;
    let p_xx = p.fixed_view::<3, 3>(0, 0).into_owned();
    let s = p_xx + r_meas;
    let Some(s_inv) = s.try_inverse() else {
        return (*state, false);
    };
    let innov = measured_pos - state.pos;
    if (innov.transpose() * s_inv * innov)[(0, 0)] > gate {
        return (*state, false);
    }

    // K = P·Hᵀ·S⁻¹ with H = [I₃ | 0].
    let ph_t = p.fixed_view::<7, 3>(0, 0).into_owned();
    let k = ph_t * s_inv;
    let dx = k * innov;

    let mut next = *state;
    next.pos += Vector3::new(dx[0], dx[1], dx[2]);
    next.heading = wrap_angle(state.heading + dx[3]);
    next.v_h += dx[4];
    next.v_v += dx[5];
    next.turn_rate += dx[6];

    // Joseph form keeps the covariance PSD under roundoff.
    let mut i_kh = Cov7::identity();
    for r in 0..7 {
        for c in 0..3 {
            i_kh[(r, c)] -= k[(r, c)];
        }
    }
    let cov = i_kh * p * i_kh.transpose() + k * r_meas * k.transpose();
    next.covariance = 0.5 * (cov + cov.transpose());
    (next, true)
}

/// One piecewise-constant-control prediction segment.
#[derive(Debug, Clone, Copy)]
pub struct CtraSegment {
    /// Absolute start time of the segment.
    pub t0: f64,
    pub duration: f64,
    pub pos: Vector3<f64>,
    pub heading: f64,
    pub v_h: f64,
    pub v_v: f64,
    pub turn_rate: f64,
    pub accel: f64,
}

/// Kinematic point on the predicted target path.
#[derive(Debug, Clone, Copy)]
pub struct TargetPoint {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub heading: f64,
    pub heading_rate: f64,
}

impl CtraSegment {
    /// Time into the segment at which braking brings the vehicle to rest.
    fn stop_time(&self) -> f64 {
        if self.accel < 0.0 {
            self.v_h / -self.accel
        } else {
            f64::INFINITY
        }
    }

    /// State `rel` seconds into the segment. A braking vehicle stops and
    /// holds position/heading instead of reversing; vertical motion is
    /// independent and continues.
    pub fn eval(&self, rel: f64) -> TargetPoint {
        let stopped = rel > self.stop_time();
        let r = rel.min(self.stop_time());
        let (dx, dy) = arc_displacement(self.v_h, self.accel, self.heading, self.turn_rate, r);
        let v = self.v_h + self.accel * r;
        let th = self.heading + self.turn_rate * r;
        let (s, c) = th.sin_cos();
        let (vel_h, acc_h, rate) = if stopped {
            (Vector3::zeros(), Vector3::zeros(), 0.0)
        } else {
            (
                Vector3::new(v * c, v * s, 0.0),
                Vector3::new(
                    self.accel * c - v * self.turn_rate * s,
                    self.accel * s + v * self.turn_rate * c,
                    0.0,
                ),
                self.turn_rate,
            )
        };
        TargetPoint {
            pos: self.pos + Vector3::new(dx, dy, self.v_v * rel),
            vel: Vector3::new(vel_h.x, vel_h.y, self.v_v),
            acc: acc_h,
            heading: th,
            heading_rate: rate,
        }
    }

    fn end_state(&self) -> (Vector3<f64>, f64, f64) {
        let p = self.eval(self.duration);
        let v = (self.v_h + self.accel * self.duration).max(0.0);
        (p.pos, p.heading, v)
    }
}

/// Predicted target trajectory over a finite horizon.
///
/// Sampled points back the discrete series consumed by the tracking stage;
/// the continuous accessors evaluate the underlying CTRA segments exactly.
#[derive(Debug, Clone)]
pub struct TargetPrediction {
    pub horizon: f64,
    pub dt: f64,
    pub segments: Vec<CtraSegment>,
    pub samples: Vec<TargetPoint>,
    /// Set when every candidate collided at some step and the expansion fell
    /// back to zero-control coasting.
    pub collision_fallback: bool,
}

impl TargetPrediction {
    pub fn from_segments(segments: Vec<CtraSegment>, dt: f64, collision_fallback: bool) -> Self {
        assert!(!segments.is_empty(), "prediction needs at least one segment");
        let last = segments.last().unwrap();
        let horizon = last.t0 + last.duration - segments[0].t0;
        let n = (horizon / dt).round() as usize;
        let t0 = segments[0].t0;
        let mut samples = Vec::with_capacity(n + 1);
        let me = Self { horizon, dt, segments, samples: Vec::new(), collision_fallback };
        for k in 0..=n {
            samples.push(me.state_at(t0 + k as f64 * dt).0);
        }
        Self { samples, ..me }
    }

    /// State at absolute time `t`, clamped into the prediction window.
    /// The flag reports whether clamping occurred.
    pub fn state_at(&self, t: f64) -> (TargetPoint, bool) {
        let t_start = self.segments[0].t0;
        let t_end = t_start + self.horizon;
        let (tc, clamped) = if t < t_start {
            (t_start, true)
        } else if t > t_end {
            (t_end, true)
        } else {
            (t, false)
        };
        // Segments are right-continuous: a boundary time belongs to the
        // later segment, except the horizon end.
        let mut seg = self.segments.len() - 1;
        for (i, s) in self.segments.iter().enumerate() {
            if tc < s.t0 + s.duration {
                seg = i;
                break;
            }
        }
        let s = &self.segments[seg];
        (s.eval(tc - s.t0), clamped)
    }

    /// State `rel` seconds after the prediction start.
    pub fn state_after(&self, rel: f64) -> (TargetPoint, bool) {
        self.state_at(self.segments[0].t0 + rel)
    }
}

/// Candidate grid and collision settings for primitive prediction.
#[derive(Debug, Clone)]
pub struct PrimitiveParams {
    pub accels: Vec<f64>,
    pub turn_deltas: Vec<f64>,
    /// Required ESDF clearance around the target's path.
    pub clearance: f64,
    /// Collision subsamples per primitive step.
    pub substeps: usize,
    /// Primitive steps across the horizon (tree depth).
    pub depth: usize,
}

impl Default for PrimitiveParams {
    fn default() -> Self {
        Self {
            accels: alloc::vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            turn_deltas: alloc::vec![-0.2, 0.0, 0.2],
            clearance: 1.0,
            substeps: 8,
            depth: 4,
        }
    }
}

fn segment_clear(seg: &CtraSegment, field: &DistanceField, params: &PrimitiveParams) -> bool {
    for i in 1..=params.substeps {
        let rel = seg.duration * i as f64 / params.substeps as f64;
        let p = seg.eval(rel);
        if field.query(&p.pos).distance < params.clearance {
            return false;
        }
    }
    true
}

struct PrimitiveSearch<'a> {
    field: &'a DistanceField,
    params: &'a PrimitiveParams,
    candidates: Vec<(f64, f64, f64)>,
    step: f64,
    v_v: f64,
    best_cost: f64,
    best: Option<Vec<CtraSegment>>,
    stack: Vec<CtraSegment>,
}

impl PrimitiveSearch<'_> {
    fn dfs(&mut self, level: usize, pos: Vector3<f64>, heading: f64, v_h: f64, turn_rate: f64, cost: f64) {
        if cost >= self.best_cost {
            return;
        }
        if level == self.params.depth {
            self.best_cost = cost;
            self.best = Some(self.stack.clone());
            return;
        }
        for ci in 0..self.candidates.len() {
            let (effort, a, dw) = self.candidates[ci];
            if cost + effort >= self.best_cost {
                break;
            }
            let seg = CtraSegment {
                t0: level as f64 * self.step,
                duration: self.step,
                pos,
                heading,
                v_h,
                v_v: self.v_v,
                turn_rate: turn_rate + dw,
                accel: a,
            };
            if !segment_clear(&seg, self.field, self.params) {
                continue;
            }
            let (p1, th1, v1) = seg.end_state();
            self.stack.push(seg);
            self.dfs(level + 1, p1, th1, v1, seg.turn_rate, cost + effort);
            self.stack.pop();
        }
    }
}

/// Predicts the target path by searching constant-control CTRA primitives.
///
/// The horizon splits into `params.depth` steps; each step picks one
/// `(accel, Δturn-rate)` pair from the candidate grid. Branch-and-bound
/// finds the collision-free sequence of least total effort `Σ(a² + Δω²)`
/// (ties broken by grid order, so the result is deterministic). Braking
/// candidates stop at zero speed rather than reversing. If no sequence is
/// collision-free the prediction coasts with zero controls and is flagged.
pub fn predict_primitives(
    state: &TargetState,
    field: &DistanceField,
    horizon: f64,
    dt: f64,
    params: &PrimitiveParams,
) -> TargetPrediction {
    assert!(horizon >= dt && dt > 0.0, "horizon must cover at least one step");
    assert!(params.depth >= 1);
    let step = horizon / params.depth as f64;

    let mut candidates: Vec<(f64, f64, f64)> = Vec::new();
    for &a in &params.accels {
        for &dw in &params.turn_deltas {
            candidates.push((a * a + dw * dw, a, dw));
        }
    }
    candidates.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());

    let mut search = PrimitiveSearch {
        field,
        params,
        candidates,
        step,
        v_v: state.v_v,
        best_cost: f64::INFINITY,
        best: None,
        stack: Vec::with_capacity(params.depth),
    };
    search.dfs(0, state.pos, state.heading, state.v_h, state.turn_rate, 0.0);

    match search.best {
        Some(segments) => TargetPrediction::from_segments(segments, dt, false),
        None => {
            let mut segments = Vec::with_capacity(params.depth);
            let (mut pos, mut heading, mut v_h) = (state.pos, state.heading, state.v_h);
            for k in 0..params.depth {
                let seg = CtraSegment {
                    t0: k as f64 * step,
                    duration: step,
                    pos,
                    heading,
                    v_h,
                    v_v: state.v_v,
                    turn_rate: state.turn_rate,
                    accel: 0.0,
                };
                let (p1, th1, v1) = seg.end_state();
                pos = p1;
                heading = th1;
                v_h = v1;
                segments.push(seg);
            }
            TargetPrediction::from_segments(segments, dt, true)
        }
    }
}
