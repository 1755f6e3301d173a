//! Limited-memory quasi-Newton minimizer with a weak Wolfe line search.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // resolves f64 math in no_std builds; shadowed by inherent methods under test
use num_traits::Float;

const ARMIJO: f64 = 1e-4;
const CURVATURE: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `‖g‖∞ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when an accepted step decreases the cost by less than
    /// `cost_tol · max(1, |f|)`.
    pub cost_tol: f64,
    pub max_line_search: usize,
    /// Record every accepted iterate (for traces).
    pub keep_iterates: bool,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iterations: 200,
            grad_tol: 1e-5,
            cost_tol: 1e-12,
            max_line_search: 48,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub iterates: Vec<IterateRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f` starting from `x`; `x` holds the best iterate on
/// return. `f` fills the gradient and returns the cost; a non-finite
/// cost marks the point as unusable and the line search backs off.
pub fn minimize<F>(mut f: F, x: &mut [f64], opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut cost = f(x, &mut g);
    let mut evals = 1usize;
    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut rho_hist: VecDeque<f64> = VecDeque::new();
    let mut iterates = Vec::new();
    let mut converged = false;
    let mut line_search_failed = false;
    let mut iterations = 0;

    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];

    for iter in 0..opts.max_iterations {
        let gnorm = inf_norm(&g);
        if !cost.is_finite() || gnorm <= opts.grad_tol * cost.abs().max(1.0) {
            converged = cost.is_finite();
            break;
        }

        // Two-loop recursion for d = -H g.
        let mut d: Vec<f64> = g.to_vec();
        let k = s_hist.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            alphas[i] = rho_hist[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alphas[i] * yj;
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            for dj in d.iter_mut() {
                *dj *= gamma;
            }
        }
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alphas[i] - beta) * sj;
            }
        }
        for dj in d.iter_mut() {
            *dj = -*dj;
        }
        let mut dg = dot(&d, &g);
        if dg >= 0.0 {
            // Defective curvature pairs; fall back to steepest descent.
            for (dj, gj) in d.iter_mut().zip(&g) {
                *dj = -gj;
            }
            dg = -dot(&g, &g);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Weak Wolfe bisection.
        let mut lo = 0.0;
        let mut hi = f64::INFINITY;
        let mut alpha = if iter == 0 { (1.0 / (1.0 + gnorm)).min(1.0) } else { 1.0 };
        // Best Armijo-satisfying candidate seen, in case curvature
        // never holds within the trial budget.
        let mut fallback: Option<(f64, f64)> = None; // (alpha, cost)
        let mut accepted: Option<(f64, bool)> = None; // (cost, full wolfe)
        for _ in 0..opts.max_line_search {
            for ((xi, &x0), &di) in xt.iter_mut().zip(x.iter()).zip(&d) {
                *xi = x0 + alpha * di;
            }
            let ft = f(&xt, &mut gt);
            evals += 1;
            if !ft.is_finite() || ft > cost + ARMIJO * alpha * dg {
                hi = alpha;
            } else if dot(&gt, &d) < CURVATURE * dg {
                lo = alpha;
                if fallback.is_none_or(|(_, fc)| ft < fc) {
                    fallback = Some((alpha, ft));
                }
            } else {
                accepted = Some((ft, true));
                break;
            }
            alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * alpha };
            if hi.is_finite() && (hi - lo) <= 1e-16 * hi.max(1.0) {
                break;
            }
        }
        if accepted.is_none() {
            if let Some((fa, fc)) = fallback {
                // Re-evaluate at the fallback step so gt matches xt.
                for ((xi, &x0), &di) in xt.iter_mut().zip(x.iter()).zip(&d) {
                    *xi = x0 + fa * di;
                }
                let ft = f(&xt, &mut gt);
                evals += 1;
                debug_assert!((ft - fc).abs() <= 1e-9 * fc.abs().max(1.0));
                accepted = Some((ft, false));
            } else {
                line_search_failed = true;
                break;
            }
        }
        let (new_cost, full_wolfe) = accepted.unwrap();

        // Curvature pair from the accepted step.
        if full_wolfe {
            let s: Vec<f64> = xt.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gt.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if s_hist.len() == opts.memory {
                    s_hist.pop_front();
                    y_hist.pop_front();
                    rho_hist.pop_front();
                }
                rho_hist.push_back(1.0 / sy);
                s_hist.push_back(s);
                y_hist.push_back(y);
            }
        }

        let decrease = cost - new_cost;
        x.copy_from_slice(&xt);
        g.copy_from_slice(&gt);
        cost = new_cost;
        iterations = iter + 1;
        if opts.keep_iterates {
            iterates.push(IterateRecord {
                iteration: iterations,
                cost,
                grad_norm: inf_norm(&g),
                x: x.to_vec(),
            });
        }
        if decrease <= opts.cost_tol * cost.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    if !converged && !line_search_failed && iterations == opts.max_iterations {
        // Budget exhausted; report the tolerance state honestly.
        converged = inf_norm(&g) <= opts.grad_tol * cost.abs().max(1.0);
    }

    LbfgsOutcome {
        cost,
        grad_norm: inf_norm(&g),
        iterations,
        evaluations: evals,
        converged,
        line_search_failed,
        iterates,
    }
}
