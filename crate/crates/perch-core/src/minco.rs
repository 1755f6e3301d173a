//! Minimum-control-effort piecewise polynomial trajectories.
//!
//! A trajectory with control order `s` and `M` pieces stores one degree
//! `2s-1` polynomial per piece. The coefficients are the unique minimizer
//! of the control energy `∫‖z^(s)‖²` among all interpolants that meet the
//! boundary states, pass through the interior waypoints, and keep
//! `C^{2s-2}` continuity at junctions. They come from a banded linear
//! system solved in `O(M)` time, and cost gradients with respect to
//! coefficients and durations are pulled back to waypoints, durations,
//! and the end state through one adjoint solve of the same system.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::SVector;

#[allow(unused_imports)] // resolves f64 math in no_std builds; shadowed by inherent methods under test
use num_traits::Float;

/// Factorials up to the highest polynomial degree (`2s-1 = 7` for `s = 4`).
const FACT: [f64; 8] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0];

/// Parameter errors from trajectory construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MincoError {
    /// A piece duration was zero, negative, or non-finite.
    NonPositiveDuration,
    /// Control order outside the supported set {2, 3, 4}.
    UnsupportedOrder,
    /// Boundary, waypoint, and duration counts disagree.
    ShapeMismatch,
}

impl core::fmt::Display for MincoError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NonPositiveDuration => write!(f, "piece durations must be positive and finite"),
            Self::UnsupportedOrder => write!(f, "control order must be 2, 3, or 4"),
            Self::ShapeMismatch => write!(f, "boundary, waypoint, and duration shapes disagree"),
        }
    }
}

impl core::error::Error for MincoError {}

/// Writes the derivative of the monomial basis into `out`:
/// `out[j] = d^order/dt^order (t^j)`.
fn basis_into(two_s: usize, order: usize, t: f64, out: &mut [f64]) {
    for v in out[..two_s].iter_mut() {
        *v = 0.0;
    }
    let mut p = 1.0;
    for j in order..two_s {
        out[j] = FACT[j] / FACT[j - order] * p;
        p *= t;
    }
}

/// Square banded matrix with in-place LU factorization.
///
/// No pivoting: the junction row ordering used by [`MincoTrajectory`]
/// keeps every pivot structurally nonzero, and the dense-solve oracle
/// test backs up the numerics.
#[derive(Debug, Clone)]
struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl BandedLu {
    fn new(n: usize, lower: usize, upper: usize) -> Self {
        Self { n, lower, upper, data: vec![0.0; (lower + upper + 1) * n] }
    }

    fn reset(&mut self) {
        for v in self.data.iter_mut() {
            *v = 0.0;
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.upper >= j && j + self.lower >= i, "outside band");
        (i + self.upper - j) * self.n + j
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    fn factorize(&mut self) {
        for k in 0..self.n {
            let piv = self.get(k, k);
            let i_max = (k + self.lower).min(self.n - 1);
            let j_max = (k + self.upper).min(self.n - 1);
            for i in k + 1..=i_max {
                let l = self.get(i, k) / piv;
                self.set(i, k, l);
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=j_max {
                    let u = self.get(k, j);
                    if u != 0.0 {
                        let at = self.idx(i, j);
                        self.data[at] -= l * u;
                    }
                }
            }
        }
    }

    /// Solves `A x = b` in place using the stored factors, one
    /// right-hand-side column per vector lane.
    fn solve<const D: usize>(&self, b: &mut [SVector<f64, D>]) {
        for j in 0..self.n {
            let i_max = (j + self.lower).min(self.n - 1);
            for i in j + 1..=i_max {
                let l = self.get(i, j);
                if l != 0.0 {
                    let bj = b[j];
                    b[i] -= bj * l;
                }
            }
        }
        for j in (0..self.n).rev() {
            b[j] /= self.get(j, j);
            for i in j.saturating_sub(self.upper)..j {
                let u = self.get(i, j);
                if u != 0.0 {
                    let bj = b[j];
                    b[i] -= bj * u;
                }
            }
        }
    }

    /// Solves `Aᵀ x = b` in place, reusing the factors as `UᵀLᵀ`.
    fn solve_transposed<const D: usize>(&self, b: &mut [SVector<f64, D>]) {
        for j in 0..self.n {
            b[j] /= self.get(j, j);
            let i_max = (j + self.upper).min(self.n - 1);
            for i in j + 1..=i_max {
                let u = self.get(j, i);
                if u != 0.0 {
                    let bj = b[j];
                    b[i] -= bj * u;
                }
            }
        }
        for j in (0..self.n).rev() {
            let i_max = (j + self.lower).min(self.n - 1);
            for i in j + 1..=i_max {
                let l = self.get(i, j);
                if l != 0.0 {
                    let bi = b[i];
                    b[j] -= bi * l;
                }
            }
        }
    }
}

/// Cost gradient pulled back to trajectory parameters.
#[derive(Debug, Clone)]
pub struct TrajGradient<const D: usize> {
    /// One entry per interior waypoint.
    pub waypoints: Vec<SVector<f64, D>>,
    /// One entry per piece duration.
    pub durations: Vec<f64>,
    /// One entry per end-state derivative order `0..s`.
    pub end: Vec<SVector<f64, D>>,
}

/// Piecewise polynomial trajectory in `D` dimensions.
///
/// Construction solves the banded interpolation system once; the
/// factorization is retained so end-state retargets and adjoint gradient
/// solves reuse it without refactorizing.
#[derive(Debug, Clone)]
pub struct MincoTrajectory<const D: usize> {
    s: usize,
    pieces: usize,
    durations: Vec<f64>,
    start: Vec<SVector<f64, D>>,
    end: Vec<SVector<f64, D>>,
    waypoints: Vec<SVector<f64, D>>,
    /// Monomial coefficients, `2s` per piece, low degree first.
    coeffs: Vec<SVector<f64, D>>,
    lu: BandedLu,
    rhs: Vec<SVector<f64, D>>,
}

impl<const D: usize> MincoTrajectory<D> {
    /// Builds the minimum-`∫‖z^(s)‖²` interpolant of the boundary states
    /// (derivative orders `0..s` at each end), interior waypoints, and
    /// piece durations.
    pub fn new(
        order_s: usize,
        start: &[SVector<f64, D>],
        end: &[SVector<f64, D>],
        waypoints: &[SVector<f64, D>],
        durations: &[f64],
    ) -> Result<Self, MincoError> {
        if !(2..=4).contains(&order_s) {
            return Err(MincoError::UnsupportedOrder);
        }
        if start.len() != order_s
            || end.len() != order_s
            || durations.len() != waypoints.len() + 1
        {
            return Err(MincoError::ShapeMismatch);
        }
        let pieces = durations.len();
        let n = 2 * order_s * pieces;
        let mut traj = Self {
            s: order_s,
            pieces,
            durations: durations.to_vec(),
            start: start.to_vec(),
            end: end.to_vec(),
            waypoints: waypoints.to_vec(),
            coeffs: vec![SVector::zeros(); n],
            lu: BandedLu::new(n, 2 * order_s, 2 * order_s),
            rhs: vec![SVector::zeros(); n],
        };
        traj.rebuild()?;
        Ok(traj)
    }

    /// Re-solves with new waypoints and durations (and optionally a new
    /// end state), reusing buffers. The piece count may change.
    pub fn update_params(
        &mut self,
        waypoints: &[SVector<f64, D>],
        durations: &[f64],
        end: Option<&[SVector<f64, D>]>,
    ) -> Result<(), MincoError> {
        if durations.len() != waypoints.len() + 1 {
            return Err(MincoError::ShapeMismatch);
        }
        if let Some(e) = end {
            if e.len() != self.s {
                return Err(MincoError::ShapeMismatch);
            }
            self.end.copy_from_slice(e);
        }
        self.pieces = durations.len();
        self.durations.clear();
        self.durations.extend_from_slice(durations);
        self.waypoints.clear();
        self.waypoints.extend_from_slice(waypoints);
        self.rebuild()
    }

    /// Re-solves for a new end state only. Durations are unchanged, so
    /// the existing factorization is reused (no refactorization).
    pub fn set_end_state(&mut self, end: &[SVector<f64, D>]) -> Result<(), MincoError> {
        if end.len() != self.s {
            return Err(MincoError::ShapeMismatch);
        }
        self.end.copy_from_slice(end);
        self.load_rhs();
        self.lu.solve(&mut self.rhs);
        core::mem::swap(&mut self.coeffs, &mut self.rhs);
        Ok(())
    }

    fn rebuild(&mut self) -> Result<(), MincoError> {
        for &t in &self.durations {
            if !t.is_finite() || t <= 0.0 {
                return Err(MincoError::NonPositiveDuration);
            }
        }
        let n = 2 * self.s * self.pieces;
        if self.lu.n != n {
            self.lu = BandedLu::new(n, 2 * self.s, 2 * self.s);
            self.coeffs.resize(n, SVector::zeros());
            self.rhs.resize(n, SVector::zeros());
        }
        self.load_matrix();
        self.lu.factorize();
        self.load_rhs();
        self.lu.solve(&mut self.rhs);
        core::mem::swap(&mut self.coeffs, &mut self.rhs);
        Ok(())
    }

    /// Fills the banded matrix. Row layout per junction, chosen so the
    /// band stays within `(2s, 2s)`: continuity of orders `s..2s-2`,
    /// then the waypoint row, then continuity of orders `0..s-1`.
    fn load_matrix(&mut self) {
        let s = self.s;
        let two_s = 2 * s;
        let mut beta = [0.0; 8];
        self.lu.reset();
        for k in 0..s {
            self.lu.set(k, k, FACT[k]);
        }
        for j in 1..self.pieces {
            let t = self.durations[j - 1];
            let rb = s + (j - 1) * two_s;
            let cp = (j - 1) * two_s;
            let cc = j * two_s;
            for r in 0..s - 1 {
                let k = s + r;
                basis_into(two_s, k, t, &mut beta);
                for (col, &b) in beta[..two_s].iter().enumerate().skip(k) {
                    self.lu.set(rb + r, cp + col, b);
                }
                self.lu.set(rb + r, cc + k, -FACT[k]);
            }
            basis_into(two_s, 0, t, &mut beta);
            for (col, &b) in beta[..two_s].iter().enumerate() {
                self.lu.set(rb + s - 1, cp + col, b);
            }
            for k in 0..s {
                basis_into(two_s, k, t, &mut beta);
                for (col, &b) in beta[..two_s].iter().enumerate().skip(k) {
                    self.lu.set(rb + s + k, cp + col, b);
                }
                self.lu.set(rb + s + k, cc + k, -FACT[k]);
            }
        }
        let t = self.durations[self.pieces - 1];
        let re = two_s * self.pieces - s;
        let cl = (self.pieces - 1) * two_s;
        for k in 0..s {
            basis_into(two_s, k, t, &mut beta);
            for (col, &b) in beta[..two_s].iter().enumerate().skip(k) {
                self.lu.set(re + k, cl + col, b);
            }
        }
    }

    fn load_rhs(&mut self) {
        let s = self.s;
        let two_s = 2 * s;
        let n = two_s * self.pieces;
        for v in self.rhs.iter_mut() {
            *v = SVector::zeros();
        }
        self.rhs[..s].copy_from_slice(&self.start);
        for j in 1..self.pieces {
            self.rhs[j * two_s - 1] = self.waypoints[j - 1];
        }
        self.rhs[n - s..].copy_from_slice(&self.end);
    }

    pub fn order(&self) -> usize {
        self.s
    }

    pub fn piece_count(&self) -> usize {
        self.pieces
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn waypoints(&self) -> &[SVector<f64, D>] {
        &self.waypoints
    }

    pub fn start_state(&self) -> &[SVector<f64, D>] {
        &self.start
    }

    pub fn end_state(&self) -> &[SVector<f64, D>] {
        &self.end
    }

    /// All monomial coefficients, `2s` per piece, low degree first.
    pub fn coefficients(&self) -> &[SVector<f64, D>] {
        &self.coeffs
    }

    pub fn total_time(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// `order`-th derivative of piece `piece` at local time `tau`.
    pub fn piece_derivative(&self, piece: usize, tau: f64, order: usize) -> SVector<f64, D> {
        let two_s = 2 * self.s;
        if order >= two_s {
            return SVector::zeros();
        }
        let c = &self.coeffs[piece * two_s..(piece + 1) * two_s];
        let mut acc = SVector::zeros();
        for j in (order..two_s).rev() {
            acc = acc * tau + c[j] * (FACT[j] / FACT[j - order]);
        }
        acc
    }

    /// Maps global time to `(piece, local time, clamped)`. Times outside
    /// `[0, total_time]` clamp to the nearest endpoint and set the flag.
    pub fn locate(&self, t: f64) -> (usize, f64, bool) {
        if t < 0.0 {
            return (0, 0.0, true);
        }
        let last = self.pieces - 1;
        let mut rem = t;
        for (i, &ti) in self.durations.iter().enumerate() {
            if rem <= ti {
                return (i, rem, false);
            }
            if i == last {
                // Partial-sum roundoff should not flag t == total_time.
                let clamped = rem - ti > 1e-9 * (1.0 + t);
                return (i, ti, clamped);
            }
            rem -= ti;
        }
        unreachable!("piece count is never zero")
    }

    /// Evaluates derivative orders `0..=max_order` at global time `t`.
    /// The flag reports whether `t` was clamped into `[0, total_time]`.
    pub fn sample(&self, t: f64, max_order: usize) -> (Vec<SVector<f64, D>>, bool) {
        let (piece, tau, clamped) = self.locate(t);
        let out = (0..=max_order)
            .map(|k| self.piece_derivative(piece, tau, k))
            .collect();
        (out, clamped)
    }

    /// Control energy `Σ_i ∫_0^{T_i} ‖z^(s)‖²` by exact polynomial
    /// integration.
    pub fn energy(&self) -> f64 {
        let mut grad_t = vec![0.0; self.pieces];
        let mut grad_c = vec![SVector::zeros(); self.coeffs.len()];
        self.energy_accumulate(&mut grad_c, &mut grad_t)
    }

    /// Adds the energy gradients into caller-held accumulators:
    /// `∂E/∂c` into `grad_c` (one slot per coefficient) and the direct
    /// fixed-coefficient duration term `‖z^(s)(T_i)‖²` into `grad_t`.
    /// Returns the energy.
    pub fn energy_accumulate(
        &self,
        grad_c: &mut [SVector<f64, D>],
        grad_t: &mut [f64],
    ) -> f64 {
        let s = self.s;
        let two_s = 2 * s;
        assert_eq!(grad_c.len(), self.coeffs.len(), "coefficient gradient shape");
        assert_eq!(grad_t.len(), self.pieces, "duration gradient shape");
        let mut total = 0.0;
        for i in 0..self.pieces {
            let t = self.durations[i];
            let c = &self.coeffs[i * two_s..(i + 1) * two_s];
            // z^(s) = Σ_j d_j τ^j with d_j = c_{s+j} (s+j)!/j!
            let mut d = [SVector::<f64, D>::zeros(); 4];
            for (j, dj) in d[..s].iter_mut().enumerate() {
                *dj = c[s + j] * (FACT[s + j] / FACT[j]);
            }
            for j in 0..s {
                let mut gd = SVector::<f64, D>::zeros();
                for l in 0..s {
                    let e = (j + l + 1) as i32;
                    let w = t.powi(e) / f64::from(e);
                    total += d[j].dot(&d[l]) * w;
                    gd += d[l] * (2.0 * w);
                }
                grad_c[i * two_s + s + j] += gd * (FACT[s + j] / FACT[j]);
            }
            grad_t[i] += self.piece_derivative(i, t, s).norm_squared();
        }
        total
    }

    /// Convenience wrapper returning the energy and its full pullback.
    pub fn energy_and_gradient(&self) -> (f64, TrajGradient<D>) {
        let mut grad_c = vec![SVector::zeros(); self.coeffs.len()];
        let mut grad_t = vec![0.0; self.pieces];
        let e = self.energy_accumulate(&mut grad_c, &mut grad_t);
        (e, self.backprop(&grad_c, &grad_t))
    }

    /// Adds `∂J/∂z^(order)` at a sample point into the coefficient
    /// gradient accumulator. Local-time dependence on the duration is
    /// the caller's concern (it lands in the direct duration term).
    pub fn accumulate_sample_grad(
        &self,
        piece: usize,
        tau: f64,
        order: usize,
        dj_dz: &SVector<f64, D>,
        grad_c: &mut [SVector<f64, D>],
    ) {
        let two_s = 2 * self.s;
        let base = piece * two_s;
        let mut p = 1.0;
        for j in order..two_s {
            grad_c[base + j] += dj_dz * (FACT[j] / FACT[j - order] * p);
            p *= tau;
        }
    }

    /// Pulls a cost gradient on coefficients (plus direct duration
    /// terms taken at fixed coefficients) back to waypoints, durations,
    /// and the end state through one adjoint banded solve.
    pub fn backprop(
        &self,
        grad_c: &[SVector<f64, D>],
        grad_t_direct: &[f64],
    ) -> TrajGradient<D> {
        let s = self.s;
        let two_s = 2 * s;
        let n = two_s * self.pieces;
        assert_eq!(grad_c.len(), n, "coefficient gradient shape");
        assert_eq!(grad_t_direct.len(), self.pieces, "duration gradient shape");
        let mut adj = grad_c.to_vec();
        self.lu.solve_transposed(&mut adj);

        let waypoints = (1..self.pieces).map(|j| adj[j * two_s - 1]).collect();
        let end = (0..s).map(|k| adj[n - s + k]).collect();

        // dJ/dT_i picks up -Σ_r λ_r ∂(A c)_r/∂T_i over the rows that
        // evaluate piece i at its own duration.
        let mut durations = grad_t_direct.to_vec();
        for i in 0..self.pieces {
            let t = self.durations[i];
            let mut acc = 0.0;
            if i + 1 < self.pieces {
                let rb = s + i * two_s;
                for r in 0..s - 1 {
                    acc += adj[rb + r].dot(&self.piece_derivative(i, t, s + r + 1));
                }
                acc += adj[rb + s - 1].dot(&self.piece_derivative(i, t, 1));
                for k in 0..s {
                    acc += adj[rb + s + k].dot(&self.piece_derivative(i, t, k + 1));
                }
            } else {
                for k in 0..s {
                    acc += adj[n - s + k].dot(&self.piece_derivative(i, t, k + 1));
                }
            }
            durations[i] -= acc;
        }
        TrajGradient { waypoints, durations, end }
    }
}
