//! Spatiotemporal trajectory optimization.
//!
//! The pieces compose bottom-up: [`timemap`] turns unconstrained
//! variables into positive durations, [`stage`] defines the cost-term
//! interfaces, [`problem`] transcribes a pair of coupled splines plus
//! penalties into one smooth objective, [`lbfgs`] minimizes it, and
//! [`postcheck`] sweeps the solution against hard limits with a
//! weighted retry.

pub mod lbfgs;
pub mod postcheck;
pub mod problem;
pub mod stage;
pub mod timemap;

pub use lbfgs::{minimize, IterateRecord, LbfgsOptions, LbfgsOutcome};
pub use postcheck::{post_check, solve_with_recheck, FeasibilityReport, PointCheck, Violation};
pub use problem::{OptReport, PenaltyProblem, SolveOptions, TraceRow};
pub use stage::{
    AnchorCost, StageCost, StageGrad, StagePoint, TerminalGenerator, TerminalUpdate,
};
pub use timemap::TimeMap;
