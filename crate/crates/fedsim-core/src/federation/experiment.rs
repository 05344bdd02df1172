//! Experiment orchestration: run one method for all rounds over fixed
//! partitions, producing per-round evaluation reports and the traffic ledger.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelPrior};
use crate::error::{Error, Result};
use crate::federation::local::{average_reports, evaluate_model};
use crate::federation::rounds::{fedavg_round, fedkd_round, fedkdf_round, FedKdStats, FedKdfStats};
use crate::federation::types::{ClientState, Method, RoundConfig};
use crate::metrics::{
    ledger_totals, AucReport, BootstrapConfig, CommLedger, LedgerTotals, RoundReport,
    WirePrecision,
};
use crate::models::{ArchConfig, GeneratorParams, ModelParams, TaskMode};
use crate::numerics::{RngStream, StreamPurpose, Tensor};

/// A run "converges" at the first round whose mAUC is within this distance
/// of the best mAUC seen anywhere in the run.
pub const CONVERGENCE_TOLERANCE: f64 = 0.005;

/// Everything needed to run one method end to end.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub arch: ArchConfig,
    pub mode: TaskMode,
    pub rounds: RoundConfig,
    pub boot: BootstrapConfig,
    pub wire: WirePrecision,
    pub seed: u64,
}

/// The serializable result of one method's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: String,
    pub seed: u64,
    pub rounds: Vec<RoundReport>,
    pub final_mauc: f64,
    pub best_mauc: f64,
    /// First round whose mAUC is within the tolerance of the best.
    pub convergence_round: usize,
    pub bytes_to_convergence_up: u64,
    pub bytes_to_convergence_down: u64,
    pub totals: LedgerTotals,
}

/// Snapshot of the global artifacts at the end of one round. The standalone
/// baseline has no global artifact and records nothing.
#[derive(Debug, Clone)]
pub struct RoundCheckpoint {
    pub round: usize,
    /// Full global model (centralized, parameter averaging, logit distillation).
    pub model: Option<ModelParams>,
    /// Aggregated predictor head (data-free distillation).
    pub predictor: Option<crate::models::Mlp>,
    /// Conditional generator (data-free distillation).
    pub generator: Option<GeneratorParams>,
}

/// Outcome plus the raw ledger and per-round protocol diagnostics.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub outcome: MethodOutcome,
    pub ledger: CommLedger,
    pub checkpoints: Vec<RoundCheckpoint>,
    pub fedkd: Vec<FedKdStats>,
    pub fedkdf: Vec<FedKdfStats>,
}

/// First index whose value is within the tolerance of the maximum.
fn convergence_index(maucs: &[f64]) -> usize {
    let best = maucs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    maucs
        .iter()
        .position(|&m| m >= best - CONVERGENCE_TOLERANCE)
        .unwrap_or(0)
}

fn check_congruent(ds: &Dataset, what: &str, exp: &Experiment) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::invalid(format!("{what} dataset is empty")));
    }
    if ds.feature_dim() != exp.arch.feature_dim {
        return Err(Error::ShapeMismatch {
            context: "experiment dataset width",
            expected: vec![exp.arch.feature_dim],
            got: vec![ds.feature_dim()],
        });
    }
    if ds.num_classes() != exp.arch.num_classes {
        return Err(Error::ShapeMismatch {
            context: "experiment class count",
            expected: vec![exp.arch.num_classes],
            got: vec![ds.num_classes()],
        });
    }
    if ds.mode != exp.mode {
        return Err(Error::invalid(format!("{what} dataset task mode differs")));
    }
    Ok(())
}

/// Fixed (labels, noise) batch used to probe the generator objective before
/// and after each round's generator training. Labels are drawn uniformly so
/// the probe exists before any prior has been estimated.
fn probe_batch(exp: &Experiment) -> (Tensor, Tensor) {
    let c = exp.arch.num_classes;
    let probs = match exp.mode {
        TaskMode::Multiclass => vec![1.0 / c as f64; c],
        TaskMode::Multilabel => vec![0.5; c],
    };
    let uniform = LabelPrior { probs, total: 0 };
    let mut rng = RngStream::for_purpose(exp.seed, StreamPurpose::GenProbe, 0, 0);
    let y = uniform.sample_batch(exp.mode, exp.rounds.server_batch, &mut rng);
    let noise = rng.normal_tensor(vec![exp.rounds.server_batch, exp.arch.noise_dim], 1.0);
    (y, noise)
}

/// Run `method` for `exp.rounds.total_rounds` rounds over the given client
/// partitions, evaluating on `test` after every round. `proxy` is required
/// for the logit-distillation method and ignored otherwise. Baselines
/// (centralized, standalone) train locally and move no bytes.
pub fn run_experiment(
    method: Method,
    partitions: &[Dataset],
    test: &Dataset,
    proxy: Option<&Dataset>,
    exp: &Experiment,
) -> Result<RunArtifacts> {
    exp.arch.validate()?;
    exp.rounds.validate()?;
    exp.boot.validate()?;
    if partitions.is_empty() {
        return Err(Error::invalid("no client partitions"));
    }
    for (k, p) in partitions.iter().enumerate() {
        check_congruent(p, &format!("client {k}"), exp)?;
    }
    check_congruent(test, "test", exp)?;
    let proxy = match (method, proxy) {
        (Method::FedKD, Some(p)) => {
            check_congruent(p, "proxy", exp)?;
            Some(p)
        }
        (Method::FedKD, None) => {
            return Err(Error::invalid("logit distillation requires a proxy dataset"))
        }
        _ => None,
    };

    let mut ledger = CommLedger::new(exp.wire)?;
    let init = ModelParams::init(
        &exp.arch,
        &mut RngStream::for_purpose(exp.seed, StreamPurpose::ModelInit, 0, 0),
    )?;

    // pooled data for the centralized baseline; clients otherwise
    let mut clients: Vec<ClientState> = if method == Method::Centralized {
        let refs: Vec<&Dataset> = partitions.iter().collect();
        vec![ClientState {
            id: 0,
            data: Dataset::concat(&refs)?,
            model: init.clone(),
        }]
    } else {
        partitions
            .iter()
            .enumerate()
            .map(|(id, data)| ClientState {
                id,
                data: data.clone(),
                model: init.clone(),
            })
            .collect()
    };

    let mut global = init.clone();
    let mut theta_p = init.predictor.clone();
    let mut generator = GeneratorParams::init(
        &exp.arch,
        &mut RngStream::for_purpose(exp.seed, StreamPurpose::ModelInit, 0, 1),
    )?;
    let mut prior: Option<LabelPrior> = None;
    let probe = probe_batch(exp);

    let mut reports = Vec::with_capacity(exp.rounds.total_rounds);
    let mut checkpoints = Vec::new();
    let mut fedkd_stats = Vec::new();
    let mut fedkdf_stats = Vec::new();

    for round in 0..exp.rounds.total_rounds {
        let auc: AucReport = match method {
            Method::Centralized | Method::Standalone => {
                let trained: Vec<ModelParams> = clients
                    .iter()
                    .map(|c| {
                        crate::federation::local::local_train(
                            c,
                            &c.model,
                            &exp.rounds,
                            exp.mode,
                            exp.seed,
                            round,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (c, t) in clients.iter_mut().zip(trained) {
                    c.model = t;
                }
                let per_client: Vec<AucReport> = clients
                    .iter()
                    .map(|c| {
                        evaluate_model(&c.model, test, exp.mode, &exp.boot, exp.seed, round)
                    })
                    .collect::<Result<Vec<_>>>()?;
                average_reports(&per_client)?
            }
            Method::FedAvg => {
                global = fedavg_round(
                    &mut clients,
                    &global,
                    &exp.rounds,
                    exp.mode,
                    exp.seed,
                    round,
                    &mut ledger,
                )?;
                evaluate_model(&global, test, exp.mode, &exp.boot, exp.seed, round)?
            }
            Method::FedKD => {
                let (student, stats) = fedkd_round(
                    &mut clients,
                    &global,
                    proxy.expect("proxy checked above"),
                    &exp.rounds,
                    exp.mode,
                    exp.seed,
                    round,
                    &mut ledger,
                )?;
                global = student;
                fedkd_stats.push(stats);
                evaluate_model(&global, test, exp.mode, &exp.boot, exp.seed, round)?
            }
            Method::FedKDF => {
                let (new_p, new_g, stats) = fedkdf_round(
                    &mut clients,
                    &theta_p,
                    &generator,
                    &mut prior,
                    Some(&probe),
                    &exp.rounds,
                    &exp.arch,
                    exp.mode,
                    exp.seed,
                    round,
                    &mut ledger,
                )?;
                theta_p = new_p;
                generator = new_g;
                fedkdf_stats.push(stats);
                // deployment view: each client's personal extractor under the
                // fresh global head; report the mean across clients
                let per_client: Vec<AucReport> = clients
                    .iter()
                    .map(|c| {
                        let deployed = ModelParams {
                            extractor: c.model.extractor.clone(),
                            predictor: theta_p.clone(),
                        };
                        evaluate_model(&deployed, test, exp.mode, &exp.boot, exp.seed, round)
                    })
                    .collect::<Result<Vec<_>>>()?;
                average_reports(&per_client)?
            }
        };
        match method {
            Method::Centralized => checkpoints.push(RoundCheckpoint {
                round,
                model: Some(clients[0].model.clone()),
                predictor: None,
                generator: None,
            }),
            Method::Standalone => {}
            Method::FedAvg | Method::FedKD => checkpoints.push(RoundCheckpoint {
                round,
                model: Some(global.clone()),
                predictor: None,
                generator: None,
            }),
            Method::FedKDF => checkpoints.push(RoundCheckpoint {
                round,
                model: None,
                predictor: Some(theta_p.clone()),
                generator: Some(generator.clone()),
            }),
        }
        let (up, down) = ledger.cumulative_through(round);
        reports.push(RoundReport {
            round,
            method: method.as_str().to_string(),
            auc,
            cum_bytes_up: up,
            cum_bytes_down: down,
        });
    }

    let maucs: Vec<f64> = reports.iter().map(|r| r.auc.mauc).collect();
    let best_mauc = maucs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let convergence_round = convergence_index(&maucs);
    let (conv_up, conv_down) = ledger.cumulative_through(convergence_round);
    let totals = ledger_totals(&ledger, exp.rounds.total_rounds.saturating_sub(1));

    Ok(RunArtifacts {
        outcome: MethodOutcome {
            method: method.as_str().to_string(),
            seed: exp.seed,
            final_mauc: *maucs.last().expect("at least one round"),
            best_mauc,
            convergence_round,
            bytes_to_convergence_up: conv_up,
            bytes_to_convergence_down: conv_down,
            totals,
            rounds: reports,
        },
        ledger,
        checkpoints,
        fedkd: fedkd_stats,
        fedkdf: fedkdf_stats,
    })
}
