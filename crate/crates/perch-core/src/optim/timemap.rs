//! Smooth changes of variables that keep piece durations positive.

#[allow(unused_imports)] // resolves f64 math in no_std builds; shadowed by inherent methods under test
use num_traits::Float;

/// Keeps exponents sane; realized durations stay positive and finite.
const VAR_CLAMP: f64 = 40.0;

/// Diffeomorphism from unconstrained variables to piece durations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeMap {
    /// Total duration `floor + slack²` split by a softmax partition.
    /// Variables: one partition entry per piece but the last, then the
    /// slack. All-zero variables give a uniform split of `floor`.
    TotalBounded { floor: f64 },
    /// Independent per-piece map `T_i = exp(v_i)`.
    PerPieceExp,
}

impl TimeMap {
    /// Realizes durations from variables. Lengths must match.
    pub fn forward(&self, vars: &[f64], durations: &mut [f64]) {
        assert_eq!(vars.len(), durations.len(), "one time variable per piece");
        match *self {
            TimeMap::PerPieceExp => {
                for (t, &v) in durations.iter_mut().zip(vars) {
                    *t = v.clamp(-VAR_CLAMP, VAR_CLAMP).exp();
                }
            }
            TimeMap::TotalBounded { floor } => {
                let m = vars.len();
                let slack = vars[m - 1];
                let total = floor + slack * slack;
                let mut denom = 1.0;
                for &v in &vars[..m - 1] {
                    denom += v.clamp(-VAR_CLAMP, VAR_CLAMP).exp();
                }
                for i in 0..m - 1 {
                    durations[i] = vars[i].clamp(-VAR_CLAMP, VAR_CLAMP).exp() / denom * total;
                }
                // The last share is 1/denom by construction; the direct
                // form stays positive where `total - used` cancels.
                durations[m - 1] = total / denom;
            }
        }
    }

    /// Maps a gradient on durations back to the variables.
    pub fn pullback(&self, vars: &[f64], d_durations: &[f64], out: &mut [f64]) {
        assert_eq!(vars.len(), d_durations.len());
        assert_eq!(vars.len(), out.len());
        match *self {
            TimeMap::PerPieceExp => {
                for ((o, &v), &dt) in out.iter_mut().zip(vars).zip(d_durations) {
                    let vc = v.clamp(-VAR_CLAMP, VAR_CLAMP);
                    *o = if v.abs() < VAR_CLAMP { dt * vc.exp() } else { 0.0 };
                }
            }
            TimeMap::TotalBounded { floor } => {
                let m = vars.len();
                let slack = vars[m - 1];
                let total = floor + slack * slack;
                let mut denom = 1.0;
                for &v in &vars[..m - 1] {
                    denom += v.clamp(-VAR_CLAMP, VAR_CLAMP).exp();
                }
                // Fractional shares w_i of the total, last piece included.
                let share = |i: usize| -> f64 {
                    if i + 1 == m {
                        1.0 / denom
                    } else {
                        vars[i].clamp(-VAR_CLAMP, VAR_CLAMP).exp() / denom
                    }
                };
                let mut inner = 0.0;
                for (i, &dt) in d_durations.iter().enumerate() {
                    inner += dt * share(i);
                }
                for i in 0..m - 1 {
                    out[i] = if vars[i].abs() < VAR_CLAMP {
                        total * share(i) * (d_durations[i] - inner)
                    } else {
                        0.0
                    };
                }
                out[m - 1] = 2.0 * slack * inner;
            }
        }
    }

    /// Variables that realize the given durations. For the bounded kind
    /// the partition is always recovered; totals below the floor clamp
    /// the slack at zero, so the realized total is the floor.
    pub fn inverse(&self, durations: &[f64], out: &mut [f64]) {
        assert_eq!(durations.len(), out.len());
        match *self {
            TimeMap::PerPieceExp => {
                for (o, &t) in out.iter_mut().zip(durations) {
                    *o = t.ln();
                }
            }
            TimeMap::TotalBounded { floor } => {
                let m = durations.len();
                let total: f64 = durations.iter().sum();
                let last = durations[m - 1];
                for i in 0..m - 1 {
                    out[i] = (durations[i] / last).ln();
                }
                out[m - 1] = (total - floor).max(0.0).sqrt();
            }
        }
    }
}
