//! Downstream protocols and their metrics.

pub mod anomaly;
pub mod cluster;
pub mod metrics;
pub mod train;

pub use anomaly::{anomaly_eval, auroc, AnomalyMetrics};
pub use cluster::{adjusted_rand_index, cluster_eval, kmeans, normalized_mutual_info, silhouette, ClusterMetrics};
pub use metrics::{confusion, macro_f1, Metrics};
pub use train::{
    evaluate, evaluate_ensemble, few_shot_eval, finetune, linear_probe, Classifier, EpisodeSpec, FewShotSummary, FinetuneConfig,
    FinetuneResult,
    ProbeConfig,
};
