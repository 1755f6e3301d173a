//! Cost-term interfaces consumed by the penalty transcription.

use alloc::vec::Vec;

use nalgebra::Vector3;

/// Flat-output sample handed to cost terms: position derivative orders
/// `0..=4` and yaw derivative orders `0..=2` at one absolute time.
/// Orders beyond the polynomial degree read as zero.
#[derive(Debug, Clone)]
pub struct StagePoint {
    pub t_abs: f64,
    pub pos: [Vector3<f64>; 5],
    pub yaw: [f64; 3],
}

/// Gradient accumulator for one sample. Cost terms add their weighted
/// contributions into the fields; the transcription chains them.
#[derive(Debug, Clone)]
pub struct StageGrad {
    /// One slot per position derivative order `0..=3`.
    pub pos: [Vector3<f64>; 4],
    /// One slot per yaw derivative order `0..=1`.
    pub yaw: [f64; 2],
    /// Explicit absolute-time sensitivity at a fixed flat state, i.e.
    /// target motion passing through the penalty arguments.
    pub time: f64,
}

impl StageGrad {
    pub fn zero() -> Self {
        Self { pos: [Vector3::zeros(); 4], yaw: [0.0; 2], time: 0.0 }
    }

    pub fn clear(&mut self) {
        *self = Self::zero();
    }
}

/// Penalty integrated over the whole trajectory by quadrature.
pub trait StageCost {
    fn name(&self) -> &'static str;
    fn scale_weight(&mut self, factor: f64);
    /// Weighted cost density at the sample; gradients are added into
    /// `grad`.
    fn eval(&self, point: &StagePoint, grad: &mut StageGrad) -> f64;
}

/// Penalty evaluated at fixed absolute anchor times. `grad.time` is
/// ignored here: anchors do not move with the piece durations.
pub trait AnchorCost {
    fn name(&self) -> &'static str;
    fn scale_weight(&mut self, factor: f64);
    fn eval(&self, anchor: usize, point: &StagePoint, grad: &mut StageGrad) -> f64;
}

/// End boundary recomputed from the total duration and the extra
/// variables, with its Jacobians.
#[derive(Debug, Clone)]
pub struct TerminalUpdate {
    /// End-state derivative orders `0..s_pos`.
    pub pos_end: Vec<Vector3<f64>>,
    /// End-state derivative orders `0..s_yaw`.
    pub yaw_end: Vec<f64>,
    /// Sensitivity of each end entry to the total duration.
    pub d_total_pos: Vec<Vector3<f64>>,
    pub d_total_yaw: Vec<f64>,
    /// Sensitivity to each extra variable, indexed `[extra][order]`.
    pub d_extra_pos: Vec<Vec<Vector3<f64>>>,
    pub d_extra_yaw: Vec<Vec<f64>>,
}

/// Generates the moving end boundary every evaluation.
pub trait TerminalGenerator {
    fn extra_count(&self) -> usize;
    fn generate(&self, t_total: f64, extra: &[f64]) -> TerminalUpdate;
    /// Cost carried by the extra variables themselves (for example a
    /// relaxation penalty); gradients are added into `grad`.
    fn extra_cost(&self, extra: &[f64], grad: &mut [f64]) -> f64 {
        let _ = (extra, grad);
        0.0
    }
}
