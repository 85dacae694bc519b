//! Post-hoc behavioural and surrogate-safety metrics, plus scoring of the
//! in-session questionnaires and N-back task.

mod behavior;
mod instruments;
mod nback;
mod pipeline;
mod surrogate;

pub use behavior::{
    crossing_series, cyclist_stats, deviation_area, following_series, hard_accel_events, lane_metrics, mean_std,
    min_distance, motion_onset, pedestrian_stats, reaction_times, steering_reversals, transit_stats, vehicle_stats,
    yielding_events, CyclistStats, LaneMetrics, Measure, MetricParams, PairPoint, PedestrianStats, ReactionTimes,
    Relation, Trajectory, TrajectorySample, TransitStats, VehicleStats,
};
pub use instruments::{score_instruments, Instrument, InstrumentResponse, InstrumentScores, PANAS_POSITIVE};
pub use nback::{grade_nback, nback_targets, NbackScore, Stimulus, NBACK_WINDOW_US};
pub use pipeline::{
    compute_metrics, instrument_rows, nback_rows, run_data_from_log, write_metrics, InstrumentRow, LaneRow,
    MetricsReport, NbackRow, ReactionRow, RunData, SafetyRow, SeriesRow,
};
pub use surrogate::{crossing_ttc, drac, follow_ttc, occupancy, ConflictApproach, Drac, DRAC_CAP};
