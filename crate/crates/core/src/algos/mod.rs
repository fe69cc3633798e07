//! Online estimators: TD(0), iterate-averaged TD(0) and centered TD (CTD).

mod ctd;
mod estimator;
mod schedule;
mod td;

pub use ctd::{CtdConfig, CtdState, SampleMode};
pub use estimator::{run_estimator, Estimator, EstimatorTrace, RunSetup};
pub use schedule::StepSchedule;
pub use td::{td_error, td_increment, TdIncrement, TdState};
