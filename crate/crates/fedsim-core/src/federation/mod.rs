//! The round-based protocol engine: local client training, the three server
//! strategies (parameter averaging, proxy-logit distillation, data-free
//! generator distillation), the two non-federated baselines, and the
//! experiment driver that ties them to evaluation and traffic accounting.

pub mod experiment;
pub mod local;
pub mod rounds;
pub mod types;

pub use experiment::{
    run_experiment, Experiment, MethodOutcome, RoundCheckpoint, RunArtifacts,
    CONVERGENCE_TOLERANCE,
};
pub use local::{
    average_reports, evaluate_model, local_train, local_train_detailed, LocalTrainOutcome,
};
pub use rounds::{
    distill_kl_value, fedavg_round, fedkd_round, fedkdf_round, generator_objective,
    teacher_distribution, weighted_average_mlps, FedKdStats, FedKdfStats,
};
pub use types::{ClientState, Method, PayloadKind, RoundConfig};
