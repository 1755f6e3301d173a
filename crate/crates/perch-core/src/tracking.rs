//! Visibility-aware tracking: viewpoint search over the occupancy grid and
//! the penalty assembly for the tracking stage.
//!
//! The search walks the predicted target series and greedily picks one
//! unoccluded viewpoint per target sample; the assembly turns the result
//! into a [`PenaltyProblem`] whose integrated terms keep the drone safe and
//! within its dynamic limits while anchored terms hold observation
//! distance, bearing, and a clear sight line at fixed prediction times.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // resolves f64 math in no_std builds; shadowed by inherent methods under test
use num_traits::Float;

use nalgebra::{Vector1, Vector3};

use crate::angles::angle_diff;
use crate::envmap::{DistanceField, VoxelGrid};
use crate::flatness::FlatSample;
use crate::minco::MincoTrajectory;
use crate::optim::{
    AnchorCost, PenaltyProblem, PointCheck, StageCost, StageGrad, StagePoint, TimeMap,
};
use crate::smoothing::{cubic_hinge, smooth_l1};
use crate::target::TargetPrediction;

/// Tracking-stage tuning: observation band, confident-FoV cone, clearance,
/// dynamic limits, and penalty weights.
#[derive(Debug, Clone)]
pub struct TrackingParams {
    /// Horizontal observation distance band, meters.
    pub d_l_h: f64,
    pub d_u_h: f64,
    /// Vertical band on the signed height of the drone above the target.
    pub d_l_v: f64,
    pub d_u_v: f64,
    /// Transition width of the soft upper horizontal bound.
    pub mu: f64,
    /// Confident-FoV cone slope: lateral offset over axial depth.
    pub fov_ratio: f64,
    /// Number of balls strung along the sight line.
    pub balls: usize,
    /// Obstacle clearance the drone itself must keep, meters.
    pub d_thr: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Preferred tracking distance for viewpoint extension.
    pub desired_distance: f64,
    /// Weights of the integrated terms: clearance, speed, acceleration.
    pub continuous_weights: [f64; 3],
    /// Weights of the anchored terms: distance, angle, occlusion.
    pub anchor_weights: [f64; 3],
    /// Spline pieces per plan.
    pub pieces: usize,
    /// Smoothness weight on the yaw spline.
    pub yaw_energy_weight: f64,
    /// Weight on total duration.
    pub rho_time: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self {
            d_l_h: 4.0,
            d_u_h: 7.0,
            d_l_v: 0.5,
            d_u_v: 2.5,
            mu: 0.1,
            // Half of the narrower 65 degree FoV, derated to keep the
            // target away from the image border.
            fov_ratio: (32.5f64).to_radians().tan() * 0.8,
            balls: 4,
            d_thr: 0.8,
            v_max: 3.0,
            a_max: 6.0,
            desired_distance: 5.5,
            continuous_weights: [1.0e4, 1.0e3, 1.0e3],
            anchor_weights: [200.0, 100.0, 500.0],
            pieces: 6,
            yaw_energy_weight: 1.0,
            rho_time: 50.0,
        }
    }
}

/// Output of the viewpoint search: one viewpoint per target sample plus
/// the grid path threading them in order.
#[derive(Debug, Clone)]
pub struct ViewpointPlan {
    pub viewpoints: Vec<Vector3<f64>>,
    /// Polyline from the first viewpoint to the last; grid-path vertices
    /// are interleaved between consecutive viewpoints.
    pub path: Vec<Vector3<f64>>,
    /// Target position each viewpoint observes.
    pub targets: Vec<Vector3<f64>>,
    /// One flag per segment `v_i -> v_{i+1}`: true when grid search failed
    /// and a straight line stands in.
    pub infeasible: Vec<bool>,
}

/// Greedy viewpoint search along the predicted target series.
///
/// For each new target sample the previous sight ray is marched first and
/// the target's own path segment second; the first sample that sees the
/// target becomes the base viewpoint, then [`extend_viewpoint`] walks it
/// out to the preferred distance. Consecutive viewpoints are connected
/// with grid paths.
pub fn find_viewpoints(
    prediction: &TargetPrediction,
    grid: &VoxelGrid,
    start: &Vector3<f64>,
    params: &TrackingParams,
) -> ViewpointPlan {
    let targets: Vec<Vector3<f64>> = prediction.samples.iter().map(|s| s.pos).collect();
    assert!(!targets.is_empty(), "prediction carries no samples");
    let step = grid.resolution;

    let mut viewpoints = vec![*start];
    let mut path = vec![*start];
    let mut infeasible = Vec::with_capacity(targets.len().saturating_sub(1));

    for i in 1..targets.len() {
        let prev_v = viewpoints[i - 1];
        let prev_t = targets[i - 1];
        let t = targets[i];

        // Previous sight ray first, then the target's chord to its new
        // sample. A fully shadowed sweep keeps the previous bearing.
        let mut s_res = prev_v;
        let mut found = false;
        for s in ray_samples(&prev_v, &prev_t, step).into_iter().chain(ray_samples(&prev_t, &t, step)) {
            if grid.raycast_free(&s, &t) {
                s_res = s;
                found = true;
                break;
            }
        }
        let base = if found { s_res } else { prev_v };
        let v = extend_viewpoint(grid, &base, &t, &prev_v, params.desired_distance, step);

        match grid_path(grid, &viewpoints[i - 1], &v) {
            Some(seg) => {
                path.extend(seg);
                infeasible.push(false);
            }
            None => infeasible.push(true),
        }
        path.push(v);
        viewpoints.push(v);
    }

    ViewpointPlan { viewpoints, path, targets, infeasible }
}

/// Inclusive samples from `a` to `b` spaced at most `step` apart.
fn ray_samples(a: &Vector3<f64>, b: &Vector3<f64>, step: f64) -> Vec<Vector3<f64>> {
    let d = b - a;
    let len = d.norm();
    let n = (len / step).ceil() as usize;
    let mut out = Vec::with_capacity(n + 1);
    for j in 0..=n {
        if j == n {
            out.push(*b);
        } else {
            out.push(a + d * (j as f64 * step / len));
        }
    }
    out
}

fn point_free(grid: &VoxelGrid, p: &Vector3<f64>) -> bool {
    match grid.voxel_of(p) {
        Some([i, j, k]) => !grid.is_occupied(i, j, k),
        // Outside the mapped volume counts as free, matching the raycast.
        None => true,
    }
}

/// Walks the base sample along the line away from the target until the
/// preferred distance is met or an obstacle (or lost sight) stops it.
/// A base farther than the preferred distance is pulled straight in;
/// the shortened sight line stays free.
fn extend_viewpoint(
    grid: &VoxelGrid,
    base: &Vector3<f64>,
    target: &Vector3<f64>,
    prev_view: &Vector3<f64>,
    d_bar: f64,
    step: f64,
) -> Vector3<f64> {
    let mut off = base - target;
    let mut dist = off.norm();
    if dist < 1e-9 {
        // Base collapsed onto the target; fall back to the old bearing.
        off = prev_view - target;
        dist = off.norm();
        if dist < 1e-9 {
            return *base;
        }
        off = off / dist * (step * 0.5).min(d_bar);
        dist = off.norm();
        let nudged = target + off;
        if !point_free(grid, &nudged) || !grid.raycast_free(&nudged, target) {
            return *base;
        }
    }
    let dir = off / dist;
    if dist >= d_bar {
        return target + dir * d_bar;
    }
    let mut best = target + dir * dist;
    let mut r = dist;
    while r < d_bar {
        r = (r + step).min(d_bar);
        let cand = target + dir * r;
        if !point_free(grid, &cand) || !grid.raycast_free(&cand, target) {
            break;
        }
        best = cand;
    }
    best
}

/// 26-connected A* between the voxels containing `a` and `b`.
///
/// Returns the chain of voxel centers including both ends, an empty chain
/// when source and goal share a voxel, or `None` when either endpoint is
/// unmapped/occupied or no path exists.
fn grid_path(grid: &VoxelGrid, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<Vec<Vector3<f64>>> {
    let sa = grid.voxel_of(a)?;
    let sb = grid.voxel_of(b)?;
    if grid.is_occupied(sa[0], sa[1], sa[2]) || grid.is_occupied(sb[0], sb[1], sb[2]) {
        return None;
    }
    if sa == sb {
        return Some(Vec::new());
    }

    let [nx, ny, nz] = grid.dims;
    let total = nx * ny * nz;
    let index = |c: [usize; 3]| (c[2] * ny + c[1]) * nx + c[0];
    let coords = |idx: usize| {
        let i = idx % nx;
        let j = (idx / nx) % ny;
        let k = idx / (nx * ny);
        [i, j, k]
    };
    let heuristic = |c: [usize; 3]| {
        let dx = c[0] as f64 - sb[0] as f64;
        let dy = c[1] as f64 - sb[1] as f64;
        let dz = c[2] as f64 - sb[2] as f64;
        (dx * dx + dy * dy + dz * dz).sqrt()
    };

    struct HeapEntry {
        f: f64,
        cell: usize,
    }
    impl PartialEq for HeapEntry {
        fn eq(&self, other: &Self) -> bool {
            self.f == other.f && self.cell == other.cell
        }
    }
    impl Eq for HeapEntry {}
    impl PartialOrd for HeapEntry {
        fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for HeapEntry {
        // Reversed: BinaryHeap is a max-heap and we pop the lowest f.
        fn cmp(&self, other: &Self) -> core::cmp::Ordering {
            other.f.total_cmp(&self.f).then_with(|| other.cell.cmp(&self.cell))
        }
    }

    let start = index(sa);
    let goal = index(sb);
    let mut g_score = vec![f64::INFINITY; total];
    let mut came = vec![usize::MAX; total];
    let mut closed = vec![false; total];
    let mut open = alloc::collections::BinaryHeap::new();
    g_score[start] = 0.0;
    open.push(HeapEntry { f: heuristic(sa), cell: start });

    while let Some(HeapEntry { cell, .. }) = open.pop() {
        if closed[cell] {
            continue;
        }
        if cell == goal {
            let mut chain = vec![cell];
            let mut cur = cell;
            while came[cur] != usize::MAX {
                cur = came[cur];
                chain.push(cur);
            }
            chain.reverse();
            return Some(
                chain
                    .into_iter()
                    .map(|idx| {
                        let [i, j, k] = coords(idx);
                        grid.center(i, j, k)
                    })
                    .collect(),
            );
        }
        closed[cell] = true;
        let c = coords(cell);
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                for dk in -1isize..=1 {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let ni = c[0] as isize + di;
                    let nj = c[1] as isize + dj;
                    let nk = c[2] as isize + dk;
                    if ni < 0
                        || nj < 0
                        || nk < 0
                        || ni >= nx as isize
                        || nj >= ny as isize
                        || nk >= nz as isize
                    {
                        continue;
                    }
                    let nc = [ni as usize, nj as usize, nk as usize];
                    if grid.is_occupied(nc[0], nc[1], nc[2]) {
                        continue;
                    }
                    let nidx = index(nc);
                    if closed[nidx] {
                        continue;
                    }
                    let edge = ((di * di + dj * dj + dk * dk) as f64).sqrt();
                    let tentative = g_score[cell] + edge;
                    if tentative < g_score[nidx] {
                        g_score[nidx] = tentative;
                        came[nidx] = cell;
                        open.push(HeapEntry { f: tentative + heuristic(nc), cell: nidx });
                    }
                }
            }
        }
    }
    None
}

/// Observation-distance penalty and its gradient in the drone position.
///
/// The vertical offset is banded with a cubic hinge on both sides; the
/// horizontal distance gets a hinge below the band and the gentler
/// smoothed-L1 ramp above it, so backing off never dominates safety.
pub fn cost_od(
    drone: &Vector3<f64>,
    target: &Vector3<f64>,
    params: &TrackingParams,
) -> (f64, Vector3<f64>) {
    let rel = drone - target;
    let dv = rel.z;
    let dh = (rel.x * rel.x + rel.y * rel.y).sqrt();

    let (lo_v, d_lo_v) = cubic_hinge(params.d_l_v - dv);
    let (hi_v, d_hi_v) = cubic_hinge(dv - params.d_u_v);
    let (lo_h, d_lo_h) = cubic_hinge(params.d_l_h - dh);
    let (hi_h, d_hi_h) = smooth_l1(dh - params.d_u_h, params.mu);

    let mut grad = Vector3::new(0.0, 0.0, d_hi_v - d_lo_v);
    let slope_h = d_hi_h - d_lo_h;
    if dh > 1e-9 {
        grad.x = slope_h * rel.x / dh;
        grad.y = slope_h * rel.y / dh;
    }
    (lo_v + hi_v + lo_h + hi_h, grad)
}

/// Observation-angle penalty: squared wrapped error between the yaw and
/// the horizontal bearing to the target.
#[derive(Debug, Clone, Copy)]
pub struct OaCostValue {
    pub cost: f64,
    pub d_pos: Vector3<f64>,
    pub d_yaw: f64,
    /// Target horizontally coincident with the drone; the bearing is
    /// undefined and the term goes inert.
    pub degenerate: bool,
}

pub fn cost_oa(drone: &Vector3<f64>, yaw: f64, target: &Vector3<f64>) -> OaCostValue {
    let ux = target.x - drone.x;
    let uy = target.y - drone.y;
    let s2 = ux * ux + uy * uy;
    if s2 <= 1e-12 {
        return OaCostValue { cost: 0.0, d_pos: Vector3::zeros(), d_yaw: 0.0, degenerate: true };
    }
    let psi_e = uy.atan2(ux);
    let err = angle_diff(yaw, psi_e);
    // d(psi_e)/d(drone) = (uy, -ux) / s2; the error flips its sign.
    let scale = 2.0 * err / s2;
    OaCostValue {
        cost: err * err,
        d_pos: Vector3::new(-scale * uy, scale * ux, 0.0),
        d_yaw: 2.0 * err,
        degenerate: false,
    }
}

/// Centers and radii of the sight-line balls between drone and target.
///
/// Ball `i` of `M` sits at the fraction `i/M` toward the target with
/// radius growing as the confident cone widens toward the target depth.
pub fn sight_balls(
    drone: &Vector3<f64>,
    target: &Vector3<f64>,
    params: &TrackingParams,
) -> Vec<(Vector3<f64>, f64)> {
    let to_target = target - drone;
    let dist = to_target.norm();
    let m = params.balls as f64;
    (1..=params.balls)
        .map(|i| {
            let lam = i as f64 / m;
            (drone + to_target * lam, params.fov_ratio * lam * dist)
        })
        .collect()
}

/// Occlusion penalty over the sight-line balls and its gradient in the
/// drone position. Each ball must fit inside the free space around its
/// center; intrusions are hinged cubically.
pub fn cost_oe(
    drone: &Vector3<f64>,
    target: &Vector3<f64>,
    field: &DistanceField,
    params: &TrackingParams,
) -> (f64, Vector3<f64>) {
    let to_target = target - drone;
    let dist = to_target.norm();
    if dist < 1e-9 || params.balls == 0 {
        return (0.0, Vector3::zeros());
    }
    // d dist / d drone.
    let d_dist = -to_target / dist;
    let m = params.balls as f64;
    let mut cost = 0.0;
    let mut grad = Vector3::zeros();
    for i in 1..=params.balls {
        let lam = i as f64 / m;
        let center = drone + to_target * lam;
        let radius = params.fov_ratio * lam * dist;
        let sample = field.query(&center);
        let (v, dv) = cubic_hinge(radius - sample.distance);
        cost += v;
        if dv != 0.0 {
            grad += dv * (params.fov_ratio * lam * d_dist - (1.0 - lam) * sample.gradient);
        }
    }
    (cost, grad)
}

/// Pointwise clearance and dynamic-limit penalties with their gradients.
#[derive(Debug, Clone, Copy)]
pub struct DynCosts {
    pub clearance: f64,
    pub d_pos: Vector3<f64>,
    pub speed: f64,
    pub d_vel: Vector3<f64>,
    pub accel: f64,
    pub d_acc: Vector3<f64>,
}

pub fn cost_clearance_dyn(
    sample: &FlatSample,
    field: &DistanceField,
    params: &TrackingParams,
) -> DynCosts {
    let q = field.query(&sample.pos);
    let (jo, d_jo) = cubic_hinge(params.d_thr * params.d_thr - q.distance * q.distance);
    let d_pos = d_jo * (-2.0 * q.distance) * q.gradient;

    let (jv, d_jv) = cubic_hinge(sample.vel.norm_squared() - params.v_max * params.v_max);
    let d_vel = d_jv * 2.0 * sample.vel;

    let (ja, d_ja) = cubic_hinge(sample.acc.norm_squared() - params.a_max * params.a_max);
    let d_acc = d_ja * 2.0 * sample.acc;

    DynCosts { clearance: jo, d_pos, speed: jv, d_vel, accel: ja, d_acc }
}

/// Evaluation metric: tangent of the angular gap between the sight axis
/// and the nearest occupied voxel that could occlude the target, i.e.
/// with positive depth short of the plane through the target. Infinite
/// when nothing lies between camera and target plane.
pub fn occlusion_margin(
    camera: &Vector3<f64>,
    target: &Vector3<f64>,
    grid: &VoxelGrid,
) -> f64 {
    let axis = target - camera;
    let depth_max = axis.norm();
    if depth_max < 1e-9 {
        return f64::INFINITY;
    }
    let axis = axis / depth_max;
    let mut best = f64::INFINITY;
    for cell in grid.occupied_cells() {
        let rel = grid.center(cell[0], cell[1], cell[2]) - camera;
        let depth = axis.dot(&rel);
        if depth <= 1e-9 || depth >= depth_max {
            continue;
        }
        let tangent = (rel - depth * axis).norm() / depth;
        if tangent < best {
            best = tangent;
        }
    }
    best
}

struct ClearanceCost {
    field: Arc<DistanceField>,
    d_thr: f64,
    w: f64,
}

impl StageCost for ClearanceCost {
    fn name(&self) -> &'static str {
        "clearance"
    }
    fn scale_weight(&mut self, factor: f64) {
        self.w *= factor;
    }
    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let q = self.field.query(&point.pos[0]);
        let (v, dv) = cubic_hinge(self.d_thr * self.d_thr - q.distance * q.distance);
        grad.pos[0] += self.w * dv * (-2.0 * q.distance) * q.gradient;
        self.w * v
    }
}

struct SpeedCost {
    v_max: f64,
    w: f64,
}

impl StageCost for SpeedCost {
    fn name(&self) -> &'static str {
        "speed"
    }
    fn scale_weight(&mut self, factor: f64) {
        self.w *= factor;
    }
    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let (v, dv) = cubic_hinge(point.pos[1].norm_squared() - self.v_max * self.v_max);
        grad.pos[1] += self.w * dv * 2.0 * point.pos[1];
        self.w * v
    }
}

struct AccelCost {
    a_max: f64,
    w: f64,
}

impl StageCost for AccelCost {
    fn name(&self) -> &'static str {
        "accel"
    }
    fn scale_weight(&mut self, factor: f64) {
        self.w *= factor;
    }
    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let (v, dv) = cubic_hinge(point.pos[2].norm_squared() - self.a_max * self.a_max);
        grad.pos[2] += self.w * dv * 2.0 * point.pos[2];
        self.w * v
    }
}

struct ObsDistanceCost {
    targets: Vec<Vector3<f64>>,
    params: TrackingParams,
    w: f64,
}

impl AnchorCost for ObsDistanceCost {
    fn name(&self) -> &'static str {
        "obs_distance"
    }
    fn scale_weight(&mut self, factor: f64) {
        self.w *= factor;
    }
    fn eval(&self, anchor: usize, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let (v, g) = cost_od(&point.pos[0], &self.targets[anchor], &self.params);
        grad.pos[0] += self.w * g;
        self.w * v
    }
}

struct ObsAngleCost {
    targets: Vec<Vector3<f64>>,
    w: f64,
}

impl AnchorCost for ObsAngleCost {
    fn name(&self) -> &'static str {
        "obs_angle"
    }
    fn scale_weight(&mut self, factor: f64) {
        self.w *= factor;
    }
    fn eval(&self, anchor: usize, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let oa = cost_oa(&point.pos[0], point.yaw[0], &self.targets[anchor]);
        grad.pos[0] += self.w * oa.d_pos;
        grad.yaw[0] += self.w * oa.d_yaw;
        self.w * oa.cost
    }
}

struct OcclusionCost {
    targets: Vec<Vector3<f64>>,
    field: Arc<DistanceField>,
    params: TrackingParams,
    w: f64,
}

impl AnchorCost for OcclusionCost {
    fn name(&self) -> &'static str {
        "occlusion"
    }
    fn scale_weight(&mut self, factor: f64) {
        self.w *= factor;
    }
    fn eval(&self, anchor: usize, point: &StagePoint, grad: &mut StageGrad) -> f64 {
        let (v, g) = cost_oe(&point.pos[0], &self.targets[anchor], &self.field, &self.params);
        grad.pos[0] += self.w * g;
        self.w * v
    }
}

struct ClearanceCheck {
    field: Arc<DistanceField>,
    d_thr: f64,
}

impl PointCheck for ClearanceCheck {
    fn name(&self) -> &'static str {
        "clearance"
    }
    fn violation(&self, _t: f64, pos: &[Vector3<f64>; 5], _yaw: &[f64; 3]) -> Option<f64> {
        let d = self.field.query(&pos[0]).distance;
        (d < self.d_thr).then_some(self.d_thr - d)
    }
}

struct SpeedCheck {
    v_max: f64,
}

impl PointCheck for SpeedCheck {
    fn name(&self) -> &'static str {
        "speed"
    }
    fn violation(&self, _t: f64, pos: &[Vector3<f64>; 5], _yaw: &[f64; 3]) -> Option<f64> {
        let v = pos[1].norm();
        (v > self.v_max).then_some(v - self.v_max)
    }
}

struct AccelCheck {
    a_max: f64,
}

impl PointCheck for AccelCheck {
    fn name(&self) -> &'static str {
        "accel"
    }
    fn violation(&self, _t: f64, pos: &[Vector3<f64>; 5], _yaw: &[f64; 3]) -> Option<f64> {
        let a = pos[2].norm();
        (a > self.a_max).then_some(a - self.a_max)
    }
}

/// Post-solve feasibility checks matching the tracking penalty names, so
/// the weighted retry can find the offending terms.
pub fn tracking_checks(
    params: &TrackingParams,
    field: &Arc<DistanceField>,
) -> Vec<Box<dyn PointCheck>> {
    vec![
        Box::new(ClearanceCheck { field: field.clone(), d_thr: params.d_thr }),
        Box::new(SpeedCheck { v_max: params.v_max }),
        Box::new(AccelCheck { a_max: params.a_max }),
    ]
}

/// Interior points at equal arc-length fractions `j/m` of the polyline.
fn sample_polyline(path: &[Vector3<f64>], m: usize) -> Vec<Vector3<f64>> {
    assert!(!path.is_empty());
    let mut cum = Vec::with_capacity(path.len());
    cum.push(0.0);
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(m.saturating_sub(1));
    for j in 1..m {
        let s = total * j as f64 / m as f64;
        if total < 1e-12 {
            out.push(path[0]);
            continue;
        }
        let mut seg = 1;
        while seg < cum.len() - 1 && cum[seg] < s {
            seg += 1;
        }
        let span = cum[seg] - cum[seg - 1];
        let f = if span > 1e-12 { (s - cum[seg - 1]) / span } else { 0.0 };
        out.push(path[seg - 1] + (path[seg] - path[seg - 1]) * f);
    }
    out
}

/// Builds the tracking penalty problem from a viewpoint plan.
///
/// Position runs on a jerk-smooth spline pinned to the drone state at the
/// start and to the last viewpoint (at rest) at the end; yaw runs on a
/// rate-smooth spline aimed at the final bearing. The total duration is
/// floored at the prediction horizon and anchors sit at the prediction's
/// sample times so their targets never move with the trajectory.
pub fn assemble_tracking_problem(
    prediction: &TargetPrediction,
    plan: &ViewpointPlan,
    field: &Arc<DistanceField>,
    start: &FlatSample,
    params: &TrackingParams,
) -> PenaltyProblem {
    assert_eq!(plan.viewpoints.len(), plan.targets.len(), "one viewpoint per target");
    assert!(plan.viewpoints.len() >= 2, "need at least two viewpoints");
    let horizon = prediction.horizon;
    let dt = prediction.dt;
    let m = params.pieces.max(1);
    let v_end = *plan.viewpoints.last().unwrap();

    let waypoints = sample_polyline(&plan.path, m);
    let durations = vec![horizon / m as f64; m];
    let pos = MincoTrajectory::new(
        3,
        &[start.pos, start.vel, start.acc],
        &[v_end, Vector3::zeros(), Vector3::zeros()],
        &waypoints,
        &durations,
    )
    .expect("tracking position boundary");

    // Anchors at the prediction's own sample clock; k = 0 is the fixed
    // start and carries nothing the optimizer could change.
    let n_anchor = ((horizon / dt) + 1e-9).floor() as usize;
    let n_anchor = n_anchor.min(plan.targets.len() - 1);
    assert!(n_anchor >= 1, "horizon shorter than one anchor step");
    let anchors: Vec<f64> = (1..=n_anchor).map(|k| k as f64 * dt).collect();
    let targets: Vec<Vector3<f64>> = (1..=n_anchor).map(|k| plan.targets[k]).collect();

    let last_target = targets[targets.len() - 1];
    let bearing = last_target - v_end;
    let psi_end = if bearing.x * bearing.x + bearing.y * bearing.y > 1e-12 {
        start.yaw + angle_diff(bearing.y.atan2(bearing.x), start.yaw)
    } else {
        start.yaw
    };
    let yaw_wp: Vec<Vector1<f64>> = (1..m)
        .map(|j| Vector1::new(start.yaw + (psi_end - start.yaw) * j as f64 / m as f64))
        .collect();
    let yaw = MincoTrajectory::new(
        2,
        &[Vector1::new(start.yaw), Vector1::new(start.yaw_rate)],
        &[Vector1::new(psi_end), Vector1::new(0.0)],
        &yaw_wp,
        &durations,
    )
    .expect("tracking yaw boundary");

    let mut problem = PenaltyProblem::new(pos, yaw);
    problem.time_map = TimeMap::TotalBounded { floor: horizon };
    problem.rho_time = params.rho_time;
    problem.energy_weight_yaw = params.yaw_energy_weight;
    problem.anchors = anchors;
    problem.stage_costs.push(Box::new(ClearanceCost {
        field: field.clone(),
        d_thr: params.d_thr,
        w: params.continuous_weights[0],
    }));
    problem
        .stage_costs
        .push(Box::new(SpeedCost { v_max: params.v_max, w: params.continuous_weights[1] }));
    problem
        .stage_costs
        .push(Box::new(AccelCost { a_max: params.a_max, w: params.continuous_weights[2] }));
    problem.anchor_costs.push(Box::new(ObsDistanceCost {
        targets: targets.clone(),
        params: params.clone(),
        w: params.anchor_weights[0],
    }));
    problem
        .anchor_costs
        .push(Box::new(ObsAngleCost { targets: targets.clone(), w: params.anchor_weights[1] }));
    problem.anchor_costs.push(Box::new(OcclusionCost {
        targets,
        field: field.clone(),
        params: params.clone(),
        w: params.anchor_weights[2],
    }));
    problem
}
