//! Configuration, schedules, experiment grids and summaries.

pub mod config;
pub mod grid;
pub mod output;
pub mod probe;
pub mod schedule;

pub use config::{Config, Resolved, RunMetadata, ScheduleMode};
pub use grid::{analyze, run_grid, ExperimentGrid, Summary};
pub use probe::{utility_probe, ProbeTable};
pub use schedule::{theoretical_schedule, Schedule, ScheduleInputs};
