//! Penalty transcription: waypoints, time variables, and terminal
//! extras become one unconstrained vector, stage costs are integrated
//! by trapezoid quadrature, and every gradient flows back through the
//! spline's adjoint solve.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::mem;

use nalgebra::{Vector1, Vector3};

use crate::minco::{MincoError, MincoTrajectory};

use super::lbfgs::{minimize, LbfgsOptions};
use super::stage::{AnchorCost, StageCost, StageGrad, StagePoint, TerminalGenerator, TerminalUpdate};
use super::timemap::TimeMap;

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Relative infinity-norm gradient tolerance.
    pub grad_tol: f64,
    /// Relative cost-decrease plateau tolerance; the penalty surfaces
    /// are piecewise-smooth, so solves near the optimum often plateau
    /// long before the gradient test fires.
    pub cost_tol: f64,
    /// Quasi-Newton history length.
    pub memory: usize,
    /// Record per-iteration cost and gradient norm in the report.
    pub trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iterations: 200, grad_tol: 1e-5, cost_tol: 1e-12, memory: 8, trace: false }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
}

/// Outcome of one penalty solve, with the cost split by term so
/// ablations and logs can attribute it.
#[derive(Debug, Clone)]
pub struct OptReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub line_search_failed: bool,
    pub term_names: Vec<&'static str>,
    /// Weighted contribution of each term; sums to `cost`.
    pub term_values: Vec<f64>,
    /// Anchors that fell beyond the trajectory end at the solution.
    pub clamped_anchors: Vec<usize>,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Default)]
struct Scratch {
    durations: Vec<f64>,
    wp_pos: Vec<Vector3<f64>>,
    wp_yaw: Vec<Vector1<f64>>,
    end_yaw: Vec<Vector1<f64>>,
    grad_c_pos: Vec<Vector3<f64>>,
    grad_c_yaw: Vec<Vector1<f64>>,
    dt_pos: Vec<f64>,
    dt_yaw: Vec<f64>,
    dt_shared: Vec<f64>,
}

/// Coupled position and yaw splines over a shared piece layout, plus
/// the penalty terms evaluated on them.
///
/// The decision vector is laid out as interior position waypoints,
/// interior yaw waypoints, time variables (when `optimize_times`), and
/// terminal extras (when a generator is present).
pub struct PenaltyProblem {
    pub pos: MincoTrajectory<3>,
    pub yaw: MincoTrajectory<1>,
    pub time_map: TimeMap,
    pub optimize_times: bool,
    pub stage_costs: Vec<Box<dyn StageCost>>,
    pub anchor_costs: Vec<Box<dyn AnchorCost>>,
    /// Absolute times at which anchor costs are evaluated.
    pub anchors: Vec<f64>,
    /// Quadrature samples per piece.
    pub kappa: usize,
    pub energy_weight_pos: f64,
    pub energy_weight_yaw: f64,
    /// Weight on the total duration.
    pub rho_time: f64,
    pub terminal: Option<Box<dyn TerminalGenerator>>,
    /// Current terminal extra variables; owned here so a solve can warm
    /// start from the previous solution.
    pub extra: Vec<f64>,
    scratch: Scratch,
    term_values: Vec<f64>,
    clamped: Vec<usize>,
    last_terminal: Option<TerminalUpdate>,
}

/// Locates an absolute time on the piece layout. Junction ties resolve
/// to the later piece; times past the end clamp to the last piece end,
/// with a small tolerance absorbing roundoff before the point counts as
/// clamped.
fn locate_anchor(t: f64, durations: &[f64]) -> (usize, f64, bool) {
    let mut rem = t.max(0.0);
    let last = durations.len() - 1;
    for (i, &d) in durations.iter().enumerate() {
        if rem < d {
            return (i, rem, false);
        }
        rem -= d;
    }
    (last, durations[last], rem > 1e-9)
}

/// Inner product of a sample gradient with the next-order derivatives,
/// i.e. the sensitivity of the penalty to sliding the sample along the
/// trajectory.
fn state_drift(point: &StagePoint, grad: &StageGrad) -> f64 {
    let mut drift = 0.0;
    for k in 0..4 {
        drift += grad.pos[k].dot(&point.pos[k + 1]);
    }
    drift + grad.yaw[0] * point.yaw[1] + grad.yaw[1] * point.yaw[2]
}

impl PenaltyProblem {
    /// Wraps a position and yaw spline sharing one piece layout.
    pub fn new(pos: MincoTrajectory<3>, yaw: MincoTrajectory<1>) -> Self {
        assert_eq!(pos.piece_count(), yaw.piece_count(), "shared piece layout");
        Self {
            pos,
            yaw,
            time_map: TimeMap::PerPieceExp,
            optimize_times: true,
            stage_costs: Vec::new(),
            anchor_costs: Vec::new(),
            anchors: Vec::new(),
            kappa: 16,
            energy_weight_pos: 1.0,
            energy_weight_yaw: 1.0,
            rho_time: 0.0,
            terminal: None,
            extra: Vec::new(),
            scratch: Scratch::default(),
            term_values: Vec::new(),
            clamped: Vec::new(),
            last_terminal: None,
        }
    }

    pub fn piece_count(&self) -> usize {
        self.pos.piece_count()
    }

    fn time_var_count(&self) -> usize {
        if self.optimize_times {
            self.piece_count()
        } else {
            0
        }
    }

    fn extra_count(&self) -> usize {
        self.terminal.as_ref().map_or(0, |t| t.extra_count())
    }

    pub fn var_count(&self) -> usize {
        4 * (self.piece_count() - 1) + self.time_var_count() + self.extra_count()
    }

    /// Writes the current trajectory parameters into `x`.
    pub fn pack(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.var_count(), "decision vector length");
        let m = self.piece_count();
        for (j, w) in self.pos.waypoints().iter().enumerate() {
            x[3 * j..3 * j + 3].copy_from_slice(w.as_slice());
        }
        let ybase = 3 * (m - 1);
        for (j, w) in self.yaw.waypoints().iter().enumerate() {
            x[ybase + j] = w[0];
        }
        let mut off = ybase + (m - 1);
        if self.optimize_times {
            self.time_map.inverse(self.pos.durations(), &mut x[off..off + m]);
            off += m;
        }
        x[off..].copy_from_slice(&self.extra);
    }

    /// Rebuilds both splines from a decision vector. Fails when the
    /// realized durations are unusable, which the objective reports as
    /// an infinite cost.
    pub fn apply(&mut self, x: &[f64]) -> Result<(), MincoError> {
        let m = self.piece_count();
        let mut s = mem::take(&mut self.scratch);
        let (wp_pos_v, rest) = x.split_at(3 * (m - 1));
        let (wp_yaw_v, rest) = rest.split_at(m - 1);
        let (tv, extra) = rest.split_at(self.time_var_count());

        s.durations.clear();
        s.durations.extend_from_slice(self.pos.durations());
        if self.optimize_times {
            self.time_map.forward(tv, &mut s.durations);
        }
        if !s.durations.iter().all(|t| t.is_finite() && *t > 0.0) {
            self.scratch = s;
            return Err(MincoError::NonPositiveDuration);
        }
        s.wp_pos.clear();
        s.wp_pos.extend(wp_pos_v.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])));
        s.wp_yaw.clear();
        s.wp_yaw.extend(wp_yaw_v.iter().map(|&v| Vector1::new(v)));

        let result = if let Some(generator) = &self.terminal {
            self.extra.clear();
            self.extra.extend_from_slice(extra);
            let total: f64 = s.durations.iter().sum();
            let upd = generator.generate(total, extra);
            s.end_yaw.clear();
            s.end_yaw.extend(upd.yaw_end.iter().map(|&v| Vector1::new(v)));
            let r = self
                .pos
                .update_params(&s.wp_pos, &s.durations, Some(&upd.pos_end))
                .and_then(|()| self.yaw.update_params(&s.wp_yaw, &s.durations, Some(&s.end_yaw)));
            self.last_terminal = Some(upd);
            r
        } else {
            self.last_terminal = None;
            self.pos
                .update_params(&s.wp_pos, &s.durations, None)
                .and_then(|()| self.yaw.update_params(&s.wp_yaw, &s.durations, None))
        };
        self.scratch = s;
        result
    }

    fn sample_point(&self, piece: usize, tau: f64, t_abs: f64) -> StagePoint {
        let mut pos = [Vector3::zeros(); 5];
        for (k, slot) in pos.iter_mut().enumerate() {
            *slot = self.pos.piece_derivative(piece, tau, k);
        }
        let mut yaw = [0.0; 3];
        for (k, slot) in yaw.iter_mut().enumerate() {
            *slot = self.yaw.piece_derivative(piece, tau, k)[0];
        }
        StagePoint { t_abs, pos, yaw }
    }

    /// Full cost and gradient at `x`. The splines are left holding the
    /// evaluated parameters.
    pub fn objective(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), self.var_count());
        debug_assert_eq!(grad.len(), x.len());
        debug_assert!(self.kappa >= 1);
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        if self.apply(x).is_err() {
            return f64::INFINITY;
        }

        let m = self.piece_count();
        let s_pos = self.pos.order();
        let s_yaw = self.yaw.order();
        let mut s = mem::take(&mut self.scratch);
        s.grad_c_pos.clear();
        s.grad_c_pos.resize(2 * s_pos * m, Vector3::zeros());
        s.grad_c_yaw.clear();
        s.grad_c_yaw.resize(2 * s_yaw * m, Vector1::new(0.0));
        s.dt_pos.clear();
        s.dt_pos.resize(m, 0.0);
        s.dt_yaw.clear();
        s.dt_yaw.resize(m, 0.0);
        s.dt_shared.clear();
        s.dt_shared.resize(m, 0.0);
        self.term_values.clear();
        self.clamped.clear();

        // Smoothness energies; scaling right after accumulation bakes
        // the weights into both gradient channels.
        let e_pos = self.pos.energy_accumulate(&mut s.grad_c_pos, &mut s.dt_pos);
        for g in s.grad_c_pos.iter_mut() {
            *g *= self.energy_weight_pos;
        }
        for g in s.dt_pos.iter_mut() {
            *g *= self.energy_weight_pos;
        }
        let e_yaw = self.yaw.energy_accumulate(&mut s.grad_c_yaw, &mut s.dt_yaw);
        for g in s.grad_c_yaw.iter_mut() {
            *g *= self.energy_weight_yaw;
        }
        for g in s.dt_yaw.iter_mut() {
            *g *= self.energy_weight_yaw;
        }
        self.term_values.push(self.energy_weight_pos * e_pos);
        self.term_values.push(self.energy_weight_yaw * e_yaw);

        let total = self.pos.total_time();
        for dt in s.dt_shared.iter_mut() {
            *dt += self.rho_time;
        }
        self.term_values.push(self.rho_time * total);

        // Stage penalties: trapezoid rule with kappa intervals per piece.
        let stage_base = self.term_values.len();
        self.term_values.resize(stage_base + self.stage_costs.len(), 0.0);
        if !self.stage_costs.is_empty() {
            let inv_kappa = 1.0 / self.kappa as f64;
            let mut grad_pt = StageGrad::zero();
            let mut offset = 0.0;
            for i in 0..m {
                let ti = self.pos.durations()[i];
                for q in 0..=self.kappa {
                    let frac = q as f64 * inv_kappa;
                    let tau = ti * frac;
                    let point = self.sample_point(i, tau, offset + tau);
                    let wbar = if q == 0 || q == self.kappa { 0.5 } else { 1.0 };
                    let wq = wbar * ti * inv_kappa;
                    grad_pt.clear();
                    let mut v_total = 0.0;
                    for (k, term) in self.stage_costs.iter().enumerate() {
                        let v = term.eval(&point, &mut grad_pt);
                        self.term_values[stage_base + k] += wq * v;
                        v_total += v;
                    }
                    for k in 0..4 {
                        let gk = grad_pt.pos[k] * wq;
                        self.pos.accumulate_sample_grad(i, tau, k, &gk, &mut s.grad_c_pos);
                    }
                    for k in 0..2 {
                        let gk = Vector1::new(grad_pt.yaw[k] * wq);
                        self.yaw.accumulate_sample_grad(i, tau, k, &gk, &mut s.grad_c_yaw);
                    }
                    // T_i moves the sample along the piece and scales
                    // the quadrature weight; earlier durations shift
                    // absolute time only.
                    let drift = state_drift(&point, &grad_pt);
                    s.dt_shared[i] += wq * (drift + grad_pt.time) * frac + wbar * inv_kappa * v_total;
                    if grad_pt.time != 0.0 {
                        for dt in s.dt_shared[..i].iter_mut() {
                            *dt += wq * grad_pt.time;
                        }
                    }
                }
                offset += ti;
            }
        }

        // Anchor penalties at fixed absolute times.
        let anchor_base = self.term_values.len();
        self.term_values.resize(anchor_base + self.anchor_costs.len(), 0.0);
        if !self.anchor_costs.is_empty() {
            let mut grad_pt = StageGrad::zero();
            for (a_idx, &ta) in self.anchors.iter().enumerate() {
                let (pj, tau, clamped) = locate_anchor(ta, self.pos.durations());
                if clamped {
                    self.clamped.push(a_idx);
                }
                let point = self.sample_point(pj, tau, ta);
                grad_pt.clear();
                for (k, term) in self.anchor_costs.iter().enumerate() {
                    let v = term.eval(a_idx, &point, &mut grad_pt);
                    self.term_values[anchor_base + k] += v;
                }
                for k in 0..4 {
                    self.pos.accumulate_sample_grad(pj, tau, k, &grad_pt.pos[k], &mut s.grad_c_pos);
                }
                for k in 0..2 {
                    let gk = Vector1::new(grad_pt.yaw[k]);
                    self.yaw.accumulate_sample_grad(pj, tau, k, &gk, &mut s.grad_c_yaw);
                }
                // The anchor time is fixed, so growing an earlier piece
                // slides the sample backwards along its piece. A
                // clamped anchor instead rides the trajectory end.
                let drift = state_drift(&point, &grad_pt);
                if clamped {
                    s.dt_shared[m - 1] += drift;
                } else {
                    for dt in s.dt_shared[..pj].iter_mut() {
                        *dt -= drift;
                    }
                }
            }
        }

        let extra_off = 4 * (m - 1) + self.time_var_count();
        if let Some(generator) = &self.terminal {
            let v = generator.extra_cost(&self.extra, &mut grad[extra_off..]);
            self.term_values.push(v);
        }

        // Adjoint pullback. Shared duration terms ride the position
        // channel; the yaw channel keeps only its own energy term.
        for (dp, &ds) in s.dt_pos.iter_mut().zip(&s.dt_shared) {
            *dp += ds;
        }
        let gp = self.pos.backprop(&s.grad_c_pos, &s.dt_pos);
        let gy = self.yaw.backprop(&s.grad_c_yaw, &s.dt_yaw);
        s.dt_shared.clear();
        s.dt_shared.extend(gp.durations.iter().zip(&gy.durations).map(|(a, b)| a + b));

        // Terminal chain: the generated end state moves with the total
        // duration and the extras.
        if let Some(upd) = &self.last_terminal {
            let mut chain = 0.0;
            for k in 0..s_pos {
                chain += gp.end[k].dot(&upd.d_total_pos[k]);
            }
            for k in 0..s_yaw {
                chain += gy.end[k][0] * upd.d_total_yaw[k];
            }
            for dt in s.dt_shared.iter_mut() {
                *dt += chain;
            }
            for (v, g_extra) in grad[extra_off..].iter_mut().enumerate() {
                for k in 0..s_pos {
                    *g_extra += gp.end[k].dot(&upd.d_extra_pos[v][k]);
                }
                for k in 0..s_yaw {
                    *g_extra += gy.end[k][0] * upd.d_extra_yaw[v][k];
                }
            }
        }

        for (j, w) in gp.waypoints.iter().enumerate() {
            grad[3 * j] += w[0];
            grad[3 * j + 1] += w[1];
            grad[3 * j + 2] += w[2];
        }
        let ybase = 3 * (m - 1);
        for (j, w) in gy.waypoints.iter().enumerate() {
            grad[ybase + j] += w[0];
        }
        if self.optimize_times {
            let toff = ybase + (m - 1);
            self.time_map.pullback(&x[toff..toff + m], &s.dt_shared, &mut grad[toff..toff + m]);
        }

        self.scratch = s;
        // The buckets are the authority: the reported cost is their sum,
        // so the term split is bitwise exact.
        self.term_values.iter().sum()
    }

    /// Term labels in `term_values` order.
    pub fn term_names(&self) -> Vec<&'static str> {
        let mut names = vec!["pos_energy", "yaw_energy", "time"];
        names.extend(self.stage_costs.iter().map(|c| c.name()));
        names.extend(self.anchor_costs.iter().map(|c| c.name()));
        if self.terminal.is_some() {
            names.push("terminal_extra");
        }
        names
    }

    /// Scales the weight behind every term carrying `name`. Returns
    /// whether anything matched.
    pub fn scale_term(&mut self, name: &str, factor: f64) -> bool {
        match name {
            "pos_energy" => self.energy_weight_pos *= factor,
            "yaw_energy" => self.energy_weight_yaw *= factor,
            "time" => self.rho_time *= factor,
            _ => {
                let mut hit = false;
                for c in self.stage_costs.iter_mut() {
                    if c.name() == name {
                        c.scale_weight(factor);
                        hit = true;
                    }
                }
                for c in self.anchor_costs.iter_mut() {
                    if c.name() == name {
                        c.scale_weight(factor);
                        hit = true;
                    }
                }
                return hit;
            }
        }
        true
    }

    /// Minimizes the penalty from the current trajectory parameters and
    /// leaves the splines at the solution.
    pub fn solve(&mut self, opts: &SolveOptions) -> OptReport {
        let mut x = vec![0.0; self.var_count()];
        self.pack(&mut x);
        let lopts = LbfgsOptions {
            memory: opts.memory,
            max_iterations: opts.max_iterations,
            grad_tol: opts.grad_tol,
            cost_tol: opts.cost_tol,
            keep_iterates: opts.trace,
            ..Default::default()
        };
        let outcome = minimize(|xv, gv| self.objective(xv, gv), &mut x, &lopts);
        // One more evaluation at the reported minimizer so the stored
        // splines and the term split match the outcome.
        let mut g = vec![0.0; x.len()];
        let _ = self.objective(&x, &mut g);
        OptReport {
            iterations: outcome.iterations,
            evaluations: outcome.evaluations + 1,
            cost: outcome.cost,
            grad_norm: outcome.grad_norm,
            converged: outcome.converged,
            line_search_failed: outcome.line_search_failed,
            term_names: self.term_names(),
            term_values: self.term_values.clone(),
            clamped_anchors: self.clamped.clone(),
            trace: outcome
                .iterates
                .iter()
                .map(|r| TraceRow { iteration: r.iteration, cost: r.cost, grad_norm: r.grad_norm })
                .collect(),
        }
    }
}
