//! Experiment management: configs, training runs, comparisons, analysis
//! exports and ablations.

pub mod ablate;
pub mod analysis;
pub mod compare;
pub mod config;
pub mod runs;
pub mod stats;

pub use ablate::{ablate, clumsy_graph, redundant_graph, save_clumsy_parent, train_variant, Ablation, AblationReport, AblationRow};
pub use analysis::{
    composition_stats, effort_csv, effort_series, trajectories, trajectory_targets, weight_heatmap, weight_sources, ArtifactMeta,
    CompositionStats, EffortPoint, EffortSeries, Heatmap, TrajectoryLine,
};
pub use compare::{compare, paired_eval_seed, Cell, ComparisonTable};
pub use config::ExperimentConfig;
pub use runs::{Experiment, RunOptions, RunSummary};
pub use stats::{decreasing_trend, mean_stderr, TrendTest};
