//! Dense feasibility sweep after a solve, with one weighted retry.
//!
//! Penalties keep the solver unconstrained, so nothing guarantees the
//! returned trajectory respects the underlying limits. The sweep
//! samples the solution on a fine grid; when a check fails, the
//! matching penalty weights are scaled up and the problem is solved
//! once more from the current solution.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::minco::MincoTrajectory;

use super::problem::{OptReport, PenaltyProblem, SolveOptions};

/// Pointwise limit evaluated on the solved trajectory. `name` must
/// match the cost term enforcing the limit for the retry scaling to
/// find it.
pub trait PointCheck {
    fn name(&self) -> &'static str;
    /// Positive violation amount at the sample, or `None` when the
    /// sample is within limits.
    fn violation(&self, t: f64, pos: &[Vector3<f64>; 5], yaw: &[f64; 3]) -> Option<f64>;
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub term: &'static str,
    /// Absolute trajectory time of the worst sample.
    pub time: f64,
    pub amount: f64,
}

#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub ok: bool,
    /// Worst violation for each offended check.
    pub violations: Vec<Violation>,
    pub samples: usize,
}

/// Sweeps both trajectories from start to end inclusive at step `dt`.
pub fn post_check(
    pos: &MincoTrajectory<3>,
    yaw: &MincoTrajectory<1>,
    checks: &[Box<dyn PointCheck>],
    dt: f64,
) -> FeasibilityReport {
    assert!(dt > 0.0, "sweep step must be positive");
    let total = pos.total_time();
    let mut worst: Vec<Option<Violation>> = checks.iter().map(|_| None).collect();
    let mut samples = 0usize;
    let mut t = 0.0;
    loop {
        let (piece, tau, _) = pos.locate(t);
        let mut p = [Vector3::zeros(); 5];
        for (k, slot) in p.iter_mut().enumerate() {
            *slot = pos.piece_derivative(piece, tau, k);
        }
        let (ypiece, ytau, _) = yaw.locate(t);
        let mut y = [0.0; 3];
        for (k, slot) in y.iter_mut().enumerate() {
            *slot = yaw.piece_derivative(ypiece, ytau, k)[0];
        }
        for (k, check) in checks.iter().enumerate() {
            if let Some(amount) = check.violation(t, &p, &y) {
                if worst[k].as_ref().is_none_or(|w| amount > w.amount) {
                    worst[k] = Some(Violation { term: check.name(), time: t, amount });
                }
            }
        }
        samples += 1;
        if t >= total {
            break;
        }
        t = (t + dt).min(total);
    }
    let violations: Vec<Violation> = worst.into_iter().flatten().collect();
    FeasibilityReport { ok: violations.is_empty(), violations, samples }
}

/// Solves, sweeps, and on failure retries once with every violated
/// term's weight scaled tenfold. The retry warm starts from the first
/// solution.
pub fn solve_with_recheck(
    problem: &mut PenaltyProblem,
    opts: &SolveOptions,
    checks: &[Box<dyn PointCheck>],
    dt_check: f64,
) -> (OptReport, FeasibilityReport) {
    let report = problem.solve(opts);
    let feasibility = post_check(&problem.pos, &problem.yaw, checks, dt_check);
    if feasibility.ok {
        return (report, feasibility);
    }
    for violation in &feasibility.violations {
        problem.scale_term(violation.term, 10.0);
    }
    let report = problem.solve(opts);
    let feasibility = post_check(&problem.pos, &problem.yaw, checks, dt_check);
    (report, feasibility)
}
