//! Experiment orchestration: scenarios, episodes, training, studies and reports.

mod bounds;
mod drift;
mod episode;
mod experiments;
mod policies;
mod report;
mod scenario;
mod train;

pub use episode::{
    audit, run_episode, Audit, Collect, DecisionRecord, EpisodeRecord, Experience, Prepared, StepRecord, Summary,
    SUCCESS_REWARD,
};
pub use policies::{
    BaselinePolicy, Choice, DecisionContext, DqnExplore, ExplorePolicy, HybridConfig, HybridPolicy, PolicyKind,
    RoutingPolicy, TrustMode,
};
pub use scenario::{DemandConfig, DriftSchedule, Scenario};
pub use train::{
    build_policy, imitation_data, train, train_dqn, train_imitation, train_planner, train_reinforcement, CurveRow, Models,
    TrainAlgo, TrainConfig, TrainingLog, TRAIN_SEED_BASE,
};
pub use experiments::{
    ablation_table, evaluate, metric_stats, relative_drops, run_ablation, run_comparative, run_feasibility,
    scalability, strict_ordering, strictly_smallest, sweep_adversary, AblationRow, AblationTable, Comparative,
    ComparativeConfig, EvalRow, Evaluation, MetricStats, ScalabilityRow, SweepRow, TimingRow, Verdict,
    ABLATION_VARIANTS, FEASIBILITY_ALPHAS,
};
pub use drift::{
    drift_trace, run_drift_study, DriftMdp, DriftMdpConfig, DriftStudy, DriftStudyConfig, RegretTrace,
};
pub use report::{
    bar_chart, chart_points, emit_report, line_chart, read_csv, sha256_hex, sweep_series, write_ablation, write_csv,
    write_bounds, write_drift, write_regret, write_scalability, write_sweep, write_timing, write_training, AblationCsv,
    AggregationCsv, DriftCsv, FileEntry, HybridBoundCsv, RegretCsv,
    Manifest, ReportSummary, Series, SweepCsv, CSV_SCHEMA_VERSION, MANIFEST,
};
pub use bounds::{
    check_aggregation, check_bounds, check_hybrid, hybrid_levels, imitation_regret_rate, regret_instance,
    tiny_instance, BoundsConfig, BoundsReport, InstanceRow, RegretRate,
};
