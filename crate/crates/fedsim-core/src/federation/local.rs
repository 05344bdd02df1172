//! Client-side training and model evaluation helpers.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::types::{ClientState, RoundConfig};
use crate::metrics::{auc_report, mauc, AucReport, BootstrapConfig};
use crate::models::{
    activate_graph, forward_features, predict_proba, task_loss_graph, ModelParams, TaskMode,
};
use crate::numerics::{sgd_step, Graph, RngStream, StreamPurpose, Tensor};

/// Trained parameters plus the per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct LocalTrainOutcome {
    pub params: ModelParams,
    pub epoch_mean_loss: Vec<f64>,
}

/// Mini-batch SGD on the task loss over the client's private shard, starting
/// from `init`. Batch order reshuffles every epoch from the client's
/// per-round stream, so the result is a pure function of
/// (experiment seed, round, client id, init, data).
pub fn local_train(
    state: &ClientState,
    init: &ModelParams,
    cfg: &RoundConfig,
    mode: TaskMode,
    seed: u64,
    round: usize,
) -> Result<ModelParams> {
    Ok(local_train_detailed(state, init, cfg, mode, seed, round)?.params)
}

/// As [`local_train`], also reporting per-epoch mean loss.
pub fn local_train_detailed(
    state: &ClientState,
    init: &ModelParams,
    cfg: &RoundConfig,
    mode: TaskMode,
    seed: u64,
    round: usize,
) -> Result<LocalTrainOutcome> {
    if state.data.is_empty() {
        return Err(Error::invalid(format!(
            "client {} has no training data",
            state.id
        )));
    }
    cfg.validate()?;
    let mut rng = RngStream::for_purpose(seed, StreamPurpose::LocalTrain, round, state.id);
    let mut model = init.clone();
    let n = state.data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_mean_loss = Vec::with_capacity(cfg.local_epochs);

    for _ in 0..cfg.local_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(cfg.local_batch) {
            let batch = state.data.subset(batch_idx);
            let loss = sgd_batch(&mut model, &batch.features, &batch.labels, mode, cfg.local_lr)?;
            loss_sum += loss * batch_idx.len() as f64;
        }
        epoch_mean_loss.push(loss_sum / n as f64);
    }
    Ok(LocalTrainOutcome {
        params: model,
        epoch_mean_loss,
    })
}

/// One SGD step of the task loss on a batch; returns the pre-step loss.
pub fn sgd_batch(
    model: &mut ModelParams,
    x: &Tensor,
    y: &Tensor,
    mode: TaskMode,
    lr: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let xid = g.leaf(x.clone());
    let (z, mut param_ids) = model.extractor.forward_graph(&mut g, xid)?;
    let (logits, pred_ids) = model.predictor.forward_graph(&mut g, z)?;
    param_ids.extend(pred_ids);
    let proba = activate_graph(&mut g, logits, mode)?;
    let loss = task_loss_graph(&mut g, proba, y, mode)?;
    let loss_value = g.value(loss).item()?;
    g.backward(loss)?;
    let grads = g.gradients(&param_ids);
    let mut targets = model.params_mut();
    sgd_step(&mut targets, &grads, lr)?;
    Ok(loss_value)
}

/// Score a model on a test set and build the per-class AUC report.
pub fn evaluate_model(
    model: &ModelParams,
    test: &Dataset,
    mode: TaskMode,
    boot: &BootstrapConfig,
    seed: u64,
    round: usize,
) -> Result<AucReport> {
    let z = forward_features(&test.features, &model.extractor)?;
    let proba = predict_proba(&z, &model.predictor, mode)?;
    auc_report(&proba, &test.labels, boot, seed, round)
}

/// Entrywise mean of per-client reports over a shared test set (identical
/// class lists required); the mean AUC vector defines the pooled mAUC.
pub fn average_reports(reports: &[AucReport]) -> Result<AucReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("no reports to average"))?;
    for r in reports {
        if r.classes != first.classes || r.skipped_classes != first.skipped_classes {
            return Err(Error::invalid(
                "cannot average reports with different class coverage",
            ));
        }
    }
    let k = reports.len() as f64;
    let cols = first.auc.len();
    let mean_of = |get: fn(&AucReport) -> &Vec<f64>| -> Vec<f64> {
        (0..cols)
            .map(|i| reports.iter().map(|r| get(r)[i]).sum::<f64>() / k)
            .collect()
    };
    let auc = mean_of(|r| &r.auc);
    let ci_low = mean_of(|r| &r.ci_low);
    let ci_high = mean_of(|r| &r.ci_high);
    let mauc = mauc(&auc)?;
    Ok(AucReport {
        classes: first.classes.clone(),
        auc,
        ci_low,
        ci_high,
        mauc,
        skipped_classes: first.skipped_classes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic;
    use crate::models::ArchConfig;

    fn toy_setup(n: usize, seed: u64) -> (ClientState, RoundConfig, ArchConfig) {
        let arch = ArchConfig {
            feature_dim: 8,
            latent_dim: 4,
            num_classes: 2,
            noise_dim: 2,
            extractor_hidden: vec![16],
            predictor_hidden: vec![],
            generator_hidden: vec![8],
        };
        let data = make_synthetic(2, 8, n, 6.0, TaskMode::Multiclass, seed).unwrap();
        let model = ModelParams::init(&arch, &mut RngStream::for_purpose(
            seed,
            StreamPurpose::ModelInit,
            0,
            0,
        ))
        .unwrap();
        let state = ClientState {
            id: 0,
            data,
            model,
        };
        (state, RoundConfig::default(), arch)
    }

    fn all_params(model: &ModelParams) -> Vec<&crate::numerics::Tensor> {
        model
            .extractor
            .params()
            .into_iter()
            .chain(model.predictor.params())
            .collect()
    }

    #[test]
    fn tiny_learning_rate_is_a_no_op() {
        let (state, mut cfg, _) = toy_setup(64, 3);
        cfg.local_epochs = 2;
        cfg.local_lr = 1e-30;
        let out = local_train(&state, &state.model, &cfg, TaskMode::Multiclass, 3, 0).unwrap();
        for (got, want) in all_params(&out).iter().zip(all_params(&state.model)) {
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_data_trains_to_high_accuracy() {
        let (state, mut cfg, _) = toy_setup(200, 5);
        cfg.local_epochs = 50;
        cfg.local_lr = 0.1;
        let out =
            local_train_detailed(&state, &state.model, &cfg, TaskMode::Multiclass, 5, 0).unwrap();

        // averaged epoch loss decreases monotonically
        for w in out.epoch_mean_loss.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "epoch loss went up: {} -> {}",
                w[0],
                w[1]
            );
        }

        // final accuracy above 0.95
        let z = forward_features(&state.data.features, &out.params.extractor).unwrap();
        let proba = predict_proba(&z, &out.params.predictor, TaskMode::Multiclass).unwrap();
        let mut correct = 0usize;
        for i in 0..state.data.len() {
            let pred = proba.row(i)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            let truth = state.data.dominant_class(i);
            if pred == truth {
                correct += 1;
            }
        }
        assert!(correct as f64 / state.data.len() as f64 > 0.95);
    }

    #[test]
    fn deterministic_given_seed_and_round() {
        let (state, mut cfg, _) = toy_setup(100, 7);
        cfg.local_epochs = 3;
        let a = local_train(&state, &state.model, &cfg, TaskMode::Multiclass, 7, 2).unwrap();
        let b = local_train(&state, &state.model, &cfg, TaskMode::Multiclass, 7, 2).unwrap();
        for (x, y) in a.extractor.params().iter().zip(b.extractor.params().iter()) {
            let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        // a different round index trains differently
        let c = local_train(&state, &state.model, &cfg, TaskMode::Multiclass, 7, 3).unwrap();
        assert_ne!(
            a.extractor.layers[0].weights.data(),
            c.extractor.layers[0].weights.data()
        );
    }

    #[test]
    fn empty_shard_is_rejected() {
        let (mut state, cfg, arch) = toy_setup(10, 9);
        state.data.ids.clear();
        state.data.features = crate::numerics::Tensor::zeros(vec![0, arch.feature_dim]);
        state.data.labels = crate::numerics::Tensor::zeros(vec![0, arch.num_classes]);
        let init = state.model.clone();
        assert!(local_train(&state, &init, &cfg, TaskMode::Multiclass, 9, 0).is_err());
    }

    #[test]
    fn report_averaging() {
        let a = AucReport {
            classes: vec![0, 1],
            auc: vec![0.8, 0.6],
            ci_low: vec![0.7, 0.5],
            ci_high: vec![0.9, 0.7],
            mauc: 0.7,
            skipped_classes: vec![],
        };
        let mut b = a.clone();
        b.auc = vec![0.6, 0.8];
        b.mauc = 0.7;
        let avg = average_reports(&[a.clone(), b]).unwrap();
        assert!((avg.auc[0] - 0.7).abs() < 1e-15);
        assert!((avg.auc[1] - 0.7).abs() < 1e-15);
        assert!((avg.mauc - 0.7).abs() < 1e-12);

        let mut c = a.clone();
        c.classes = vec![0, 2];
        assert!(average_reports(&[a, c]).is_err());
    }
}
