//! Conflict judging, detection metrics and the experiment drivers.

mod compare;
mod judge;
mod run;
mod sweep;

pub use compare::{
    cross_outcomes, run_mixing_comparison, sign_test_p, summarize, write_comparison_csv, MixingComparison, SeedComparison,
    MIN_COMPARISON_SEEDS,
};
pub use judge::{control_correct, detection_rate, judge, Judgement, MatchedRule};
pub use run::{
    evaluate_all, evaluate_instance, reports_from, run_condition_grid, write_reports_csv, EvalReport, InstanceOutcome,
    Metrics, RunMeta, DEFAULT_MAX_NEW,
};
pub use sweep::{run_epsilon_sweep, write_sweep_csv, SweepOptions, SweepPoint, SweepResult, SweepTarget};
