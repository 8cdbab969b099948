//! Golden runs, fault-injection and approximate-computing campaigns,
//! protection-set comparison, metric overhead and the fixture trainer.

mod compare;
mod config;
mod overhead;
mod report;
mod run;
mod train;

pub use compare::{compare_campaigns, compare_sets, protection_set, threshold_for_top_k, ProtectionComparison};
pub use config::{CampaignConfig, CampaignInputs, CampaignMode, DatasetSpec, FaultBudget, LutRef, DEFAULT_FLOAT_EPS};
pub use overhead::{measure_metric_overhead, LayerOverhead, OverheadStat};
pub use report::{
    histogram, CampaignReport, ClassCounts, DatasetInfo, FaultRecord, Histogram, LayerSummary, MaskedDepthStats,
    ModelInfo, RecordMetric, RuntimeStats, DATASET_NOTE, REPORT_SCHEMA, REPORT_VERSION,
};
pub use run::{run_axc_campaign, run_campaign, run_fi_campaign, run_golden, with_workers, GoldenRun};
pub use train::{accuracy, fixture_architecture, train_fixture_model, TrainConfig, TrainSummary};
