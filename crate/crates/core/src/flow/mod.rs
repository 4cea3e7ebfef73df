//! Ricci flow integrators, dynamic rescaling and the gauged modified flow.

pub(crate) mod gauge;
mod hom;
mod modified;
pub(crate) mod ricci;
mod trajectory;

pub use hom::{extinction_time, run_hom, step_hom};
pub use modified::{gauged_ancient_flow, step_modified, GaugeOptions, ModifiedDirection, ModifiedStep};
pub use ricci::{
    cfl_bound, curvature_growth_margins, run_ricci, step_ricci, DtPolicy, RicciConfig, RicciRun, SingularSignal, Step,
};
pub use trajectory::{
    dynamic_rescale, Direction, FlowTrajectory, GaugedTrajectory, MetricState, RescaleMode, RescalingSequence,
};
