//! Experiment plans, sweeps, metrics files and plot data.

pub mod csvio;
pub mod plan;
pub mod rollout;
pub mod steady;

pub use plan::{
    aggregate, run_plan, ExperimentPlan, ManifestRow, MetricsRow, Mode, PlotRow, PolicySpec, QueueRow, RunReport,
    SummaryRow, Sweep, SweepAxis,
};
pub use rollout::{run_episode, EpisodeRecord, TraceRow};
pub use steady::{steady_metrics, SteadyMetrics};
