//! The three server strategies: full-model parameter averaging, proxy-set
//! logit distillation, and data-free distillation through a conditional
//! generator.

use rayon::prelude::*;

use crate::data::{estimate_label_prior, Dataset, LabelPrior};
use crate::error::{Error, Result};
use crate::federation::local::local_train;
use crate::federation::types::{ClientState, PayloadKind, RoundConfig};
use crate::metrics::{CommLedger, Direction};
use crate::models::{
    activate, activate_graph, concat_label_noise, ensemble_logits, forward_features,
    generate_latent, predict_logits, task_loss, task_loss_graph, ArchConfig, GeneratorParams,
    Mlp, ModelParams, TaskMode, PROB_CLAMP,
};
use crate::numerics::{sgd_step, Graph, RngStream, StreamPurpose, Tensor};

/// Indices into `clients` sorted by ascending client id; every reduce and
/// every ledger append walks this order so list order never matters.
fn ascending_ids(clients: &[ClientState]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..clients.len()).collect();
    order.sort_by_key(|&i| clients[i].id);
    order
}

/// Weighted elementwise average of congruent MLPs; `parts` must already be
/// in reduce order and weights are applied in that order.
pub fn weighted_average_mlps(parts: &[(f64, &Mlp)]) -> Result<Mlp> {
    let (_, first) = parts
        .first()
        .ok_or_else(|| Error::invalid("average of empty model list"))?;
    let dims: Vec<usize> = std::iter::once(first.input_width())
        .chain(first.layers.iter().map(|l| l.output_width()))
        .collect();
    let mut acc = Mlp::zeros(&dims);
    for (w, mlp) in parts {
        if mlp.layers.len() != first.layers.len() {
            return Err(Error::invalid("models with different layer counts"));
        }
        for (dst, src) in acc.params_mut().into_iter().zip(mlp.params()) {
            if !dst.same_shape(src) {
                return Err(Error::ShapeMismatch {
                    context: "weighted_average_mlps",
                    expected: dst.shape().to_vec(),
                    got: src.shape().to_vec(),
                });
            }
            for (a, &v) in dst.data_mut().iter_mut().zip(src.data()) {
                *a += w * v;
            }
        }
    }
    Ok(acc)
}

/// Sample-size weights n_k / sum(n) for the given processing order.
fn sample_weights(clients: &[ClientState], order: &[usize]) -> Vec<f64> {
    let total: usize = order.iter().map(|&i| clients[i].num_examples()).sum();
    order
        .iter()
        .map(|&i| clients[i].num_examples() as f64 / total as f64)
        .collect()
}

// ---------------------------------------------------------------------------
// Parameter averaging
// ---------------------------------------------------------------------------

/// One round of full-model training and sample-size-weighted averaging.
pub fn fedavg_round(
    clients: &mut [ClientState],
    global: &ModelParams,
    cfg: &RoundConfig,
    mode: TaskMode,
    seed: u64,
    round: usize,
    ledger: &mut CommLedger,
) -> Result<ModelParams> {
    if clients.is_empty() {
        return Err(Error::invalid("round over empty client set"));
    }
    let order = ascending_ids(clients);
    let p = global.param_count() as u64;

    for &i in &order {
        ledger.record(round, clients[i].id, Direction::Down, PayloadKind::FullModel, p);
    }
    let trained: Vec<ModelParams> = order
        .par_iter()
        .map(|&i| local_train(&clients[i], global, cfg, mode, seed, round))
        .collect::<Result<Vec<_>>>()?;
    for &i in &order {
        ledger.record(round, clients[i].id, Direction::Up, PayloadKind::FullModel, p);
    }

    let weights = sample_weights(clients, &order);
    let ext_parts: Vec<(f64, &Mlp)> = weights
        .iter()
        .zip(&trained)
        .map(|(&w, t)| (w, &t.extractor))
        .collect();
    let pred_parts: Vec<(f64, &Mlp)> = weights
        .iter()
        .zip(&trained)
        .map(|(&w, t)| (w, &t.predictor))
        .collect();
    let aggregated = ModelParams {
        extractor: weighted_average_mlps(&ext_parts)?,
        predictor: weighted_average_mlps(&pred_parts)?,
    };

    for (&i, t) in order.iter().zip(trained) {
        clients[i].model = t;
    }
    Ok(aggregated)
}

// ---------------------------------------------------------------------------
// Proxy-set logit distillation
// ---------------------------------------------------------------------------

/// Diagnostics from one distillation round.
#[derive(Debug, Clone)]
pub struct FedKdStats {
    /// Mean KL(teacher ‖ student) over the full proxy before any server step.
    pub initial_kl: f64,
    /// KL at the start of each server step (mini-batch estimate).
    pub server_losses: Vec<f64>,
}

/// sigma(mean of client logit matrices), summed in ascending client-id order.
pub fn teacher_distribution(client_logits: &[(usize, Tensor)], mode: TaskMode) -> Result<Tensor> {
    if client_logits.is_empty() {
        return Err(Error::invalid("teacher over empty logit set"));
    }
    let mut order: Vec<usize> = (0..client_logits.len()).collect();
    order.sort_by_key(|&i| client_logits[i].0);
    let mut acc = client_logits[order[0]].1.clone();
    for &i in &order[1..] {
        let t = &client_logits[i].1;
        if !acc.same_shape(t) {
            return Err(Error::ShapeMismatch {
                context: "teacher_distribution",
                expected: acc.shape().to_vec(),
                got: t.shape().to_vec(),
            });
        }
        for (a, &v) in acc.data_mut().iter_mut().zip(t.data()) {
            *a += v;
        }
    }
    let k = client_logits.len() as f64;
    for v in acc.data_mut() {
        *v /= k;
    }
    activate(&acc, mode)
}

/// Teacher self-information term that turns a soft-target cross-entropy into
/// a KL divergence: multiclass (1/B) sum t ln t, multilabel also counting the
/// complement, normalized per class. Zero entries contribute zero.
fn teacher_entropy_term(teacher: &Tensor, mode: TaskMode) -> f64 {
    let b = teacher.rows() as f64;
    let mut total = 0.0;
    match mode {
        TaskMode::Multiclass => {
            for &t in teacher.data() {
                if t > 0.0 {
                    total += t * t.ln();
                }
            }
            total / b
        }
        TaskMode::Multilabel => {
            for &t in teacher.data() {
                if t > 0.0 {
                    total += t * t.ln();
                }
                if t < 1.0 {
                    total += (1.0 - t) * (1.0 - t).ln();
                }
            }
            total / (b * teacher.cols() as f64)
        }
    }
}

/// Mean KL(teacher ‖ student) over rows, matching the graph-side loss.
pub fn distill_kl_value(student_proba: &Tensor, teacher: &Tensor, mode: TaskMode) -> Result<f64> {
    let ce = task_loss(student_proba, teacher, mode)?;
    Ok(ce + teacher_entropy_term(teacher, mode))
}

/// One SGD step pulling the full model's output distribution toward teacher
/// rows; returns the pre-step KL on this batch. The gradient comes from the
/// soft-target cross-entropy, whose teacher-entropy offset is constant.
fn distill_step(
    model: &mut ModelParams,
    x: &Tensor,
    teacher: &Tensor,
    mode: TaskMode,
    lr: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let xid = g.leaf(x.clone());
    let (z, mut param_ids) = model.extractor.forward_graph(&mut g, xid)?;
    let (logits, pred_ids) = model.predictor.forward_graph(&mut g, z)?;
    param_ids.extend(pred_ids);
    let proba = activate_graph(&mut g, logits, mode)?;
    let ce = task_loss_graph(&mut g, proba, teacher, mode)?;
    let kl = g.value(ce).item()? + teacher_entropy_term(teacher, mode);
    g.backward(ce)?;
    let grads = g.gradients(&param_ids);
    let mut targets = model.params_mut();
    sgd_step(&mut targets, &grads, lr)?;
    Ok(kl)
}

/// One round of proxy-set distillation: clients train locally and upload
/// proxy logits; the server distills the global student toward
/// sigma(mean logits) and sends the student's logits back down; clients
/// optionally take a few distillation steps toward them.
#[allow(clippy::too_many_arguments)]
pub fn fedkd_round(
    clients: &mut [ClientState],
    global: &ModelParams,
    proxy: &Dataset,
    cfg: &RoundConfig,
    mode: TaskMode,
    seed: u64,
    round: usize,
    ledger: &mut CommLedger,
) -> Result<(ModelParams, FedKdStats)> {
    if clients.is_empty() {
        return Err(Error::invalid("round over empty client set"));
    }
    if proxy.is_empty() {
        return Err(Error::invalid("proxy set is empty"));
    }
    let order = ascending_ids(clients);
    let m = proxy.len() as u64;
    let c = proxy.num_classes() as u64;

    // local training continues from each client's own model; no broadcast
    let trained: Vec<ModelParams> = order
        .par_iter()
        .map(|&i| local_train(&clients[i], &clients[i].model, cfg, mode, seed, round))
        .collect::<Result<Vec<_>>>()?;
    for (&i, t) in order.iter().zip(trained) {
        clients[i].model = t;
    }

    // upload: proxy logit matrices
    let client_logits: Vec<(usize, Tensor)> = order
        .par_iter()
        .map(|&i| -> Result<(usize, Tensor)> {
            let z = forward_features(&proxy.features, &clients[i].model.extractor)?;
            Ok((clients[i].id, predict_logits(&z, &clients[i].model.predictor)?))
        })
        .collect::<Result<Vec<_>>>()?;
    for &i in &order {
        ledger.record(round, clients[i].id, Direction::Up, PayloadKind::LogitMatrix, m * c);
    }

    let teacher = teacher_distribution(&client_logits, mode)?;

    let mut student = global.clone();
    let z0 = forward_features(&proxy.features, &student.extractor)?;
    let proba0 = activate(&predict_logits(&z0, &student.predictor)?, mode)?;
    let initial_kl = distill_kl_value(&proba0, &teacher, mode)?;

    // server distillation on proxy mini-batches
    let mut rng = RngStream::for_purpose(seed, StreamPurpose::ServerDistill, round, 0);
    let mut server_losses = Vec::with_capacity(cfg.server_steps);
    for _ in 0..cfg.server_steps {
        let idx = batch_indices(proxy.len(), cfg.server_batch, &mut rng);
        let batch = proxy.subset(&idx);
        let teacher_rows = rows_of(&teacher, &idx);
        server_losses.push(distill_step(
            &mut student,
            &batch.features,
            &teacher_rows,
            mode,
            cfg.server_lr,
        )?);
    }

    // download: the student's proxy logits, then optional client-side steps
    let zs = forward_features(&proxy.features, &student.extractor)?;
    let student_logits = predict_logits(&zs, &student.predictor)?;
    let student_proba = activate(&student_logits, mode)?;
    for &i in &order {
        ledger.record(round, clients[i].id, Direction::Down, PayloadKind::LogitMatrix, m * c);
    }
    if cfg.client_distill_steps > 0 {
        let results: Vec<ModelParams> = order
            .par_iter()
            .map(|&i| -> Result<ModelParams> {
                let state = &clients[i];
                let mut model = state.model.clone();
                // stream index offset by one: 0 belongs to the server
                let mut rng = RngStream::for_purpose(
                    seed,
                    StreamPurpose::ServerDistill,
                    round,
                    state.id + 1,
                );
                for _ in 0..cfg.client_distill_steps {
                    let idx = batch_indices(proxy.len(), cfg.server_batch, &mut rng);
                    let batch = proxy.subset(&idx);
                    let teacher_rows = rows_of(&student_proba, &idx);
                    distill_step(
                        &mut model,
                        &batch.features,
                        &teacher_rows,
                        mode,
                        cfg.client_distill_lr,
                    )?;
                }
                Ok(model)
            })
            .collect::<Result<Vec<_>>>()?;
        for (&i, t) in order.iter().zip(results) {
            clients[i].model = t;
        }
    }

    Ok((
        student,
        FedKdStats {
            initial_kl,
            server_losses,
        },
    ))
}

/// A fresh mini-batch of row indices: a random subset when the batch is
/// smaller than the set, the full set in order otherwise.
fn batch_indices(len: usize, batch: usize, rng: &mut RngStream) -> Vec<usize> {
    if batch >= len {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut idx);
    idx.truncate(batch);
    idx
}

/// Rows of a matrix selected by index, in the given order.
fn rows_of(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![idx.len(), c], data).expect("rows_of shape")
}

// ---------------------------------------------------------------------------
// Data-free generator distillation
// ---------------------------------------------------------------------------

/// Diagnostics from one data-free round.
#[derive(Debug, Clone)]
pub struct FedKdfStats {
    /// Generator objective at the start of each generator step.
    pub generator_losses: Vec<f64>,
    /// Predictor fine-tune loss at the start of each step.
    pub finetune_losses: Vec<f64>,
    /// Objective on the fixed probe batch before/after generator training.
    pub probe_loss_before: Option<f64>,
    pub probe_loss_after: Option<f64>,
    /// The aggregated predictor before the generator-sample fine-tune.
    pub pre_finetune_predictor: Mlp,
}

/// The generator objective: task loss of the ensemble prediction on
/// generated latents for sampled labels. `predictors` must be the uploaded
/// heads keyed by client id.
pub fn generator_objective(
    y: &Tensor,
    noise: &Tensor,
    generator: &GeneratorParams,
    predictors: &[(usize, &Mlp)],
    mode: TaskMode,
) -> Result<f64> {
    let z = generate_latent(y, noise, generator)?;
    let logits = ensemble_logits(&z, predictors)?;
    let proba = activate(&logits, mode)?;
    task_loss(&proba, y, mode)
}

/// One generator SGD step against the frozen predictor ensemble; returns the
/// pre-step objective. `predictors` must already be in ascending-id order.
fn generator_step(
    generator: &mut GeneratorParams,
    y: &Tensor,
    noise: &Tensor,
    predictors: &[(usize, &Mlp)],
    mode: TaskMode,
    lr: f64,
) -> Result<f64> {
    let input = concat_label_noise(y, noise)?;
    let mut g = Graph::new();
    let iid = g.leaf(input);
    let (z, gen_ids) = generator.net.forward_graph(&mut g, iid)?;
    let mut acc: Option<crate::numerics::NodeId> = None;
    for (_, pred) in predictors {
        let (logits, _) = pred.forward_graph(&mut g, z)?;
        acc = Some(match acc {
            None => logits,
            Some(a) => g.add(a, logits)?,
        });
    }
    let sum = acc.expect("nonempty ensemble");
    let mean = g.affine(sum, 1.0 / predictors.len() as f64, 0.0);
    let proba = activate_graph(&mut g, mean, mode)?;
    let loss = task_loss_graph(&mut g, proba, y, mode)?;
    let loss_value = g.value(loss).item()?;
    g.backward(loss)?;
    let grads = g.gradients(&gen_ids);
    let mut targets = generator.net.params_mut();
    sgd_step(&mut targets, &grads, lr)?;
    Ok(loss_value)
}

/// One SGD step of the aggregated predictor on frozen-generator samples;
/// returns the pre-step loss.
fn predictor_step(
    predictor: &mut Mlp,
    z: &Tensor,
    y: &Tensor,
    mode: TaskMode,
    lr: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let zid = g.leaf(z.clone());
    let (logits, param_ids) = predictor.forward_graph(&mut g, zid)?;
    let proba = activate_graph(&mut g, logits, mode)?;
    let loss = task_loss_graph(&mut g, proba, y, mode)?;
    let loss_value = g.value(loss).item()?;
    g.backward(loss)?;
    let grads = g.gradients(&param_ids);
    let mut targets = predictor.params_mut();
    sgd_step(&mut targets, &grads, lr)?;
    Ok(loss_value)
}

/// One data-free round: broadcast the predictor head, train locally, upload
/// heads (plus label histograms on round 0), aggregate, train the generator
/// against the uploaded ensemble, then fine-tune the aggregate on generator
/// samples. Feature extractors are personal and never transmitted.
#[allow(clippy::too_many_arguments)]
pub fn fedkdf_round(
    clients: &mut [ClientState],
    predictor: &Mlp,
    generator: &GeneratorParams,
    prior: &mut Option<LabelPrior>,
    probe: Option<&(Tensor, Tensor)>,
    cfg: &RoundConfig,
    arch: &ArchConfig,
    mode: TaskMode,
    seed: u64,
    round: usize,
    ledger: &mut CommLedger,
) -> Result<(Mlp, GeneratorParams, FedKdfStats)> {
    if clients.is_empty() {
        return Err(Error::invalid("round over empty client set"));
    }
    let order = ascending_ids(clients);
    let p_pred = predictor.param_count() as u64;
    let c = arch.num_classes as u64;

    // (1) broadcast the current head; clients keep their own extractors
    for &i in &order {
        ledger.record(
            round,
            clients[i].id,
            Direction::Down,
            PayloadKind::PredictorOnly,
            p_pred,
        );
        clients[i].model.predictor = predictor.clone();
    }
    let trained: Vec<ModelParams> = order
        .par_iter()
        .map(|&i| local_train(&clients[i], &clients[i].model, cfg, mode, seed, round))
        .collect::<Result<Vec<_>>>()?;
    for (&i, t) in order.iter().zip(trained) {
        clients[i].model = t;
    }

    // (2) upload heads; on round 0 also per-class count histograms
    for &i in &order {
        ledger.record(
            round,
            clients[i].id,
            Direction::Up,
            PayloadKind::PredictorOnly,
            p_pred,
        );
    }
    if round == 0 {
        let mut histograms = Vec::with_capacity(order.len());
        let mut totals = Vec::with_capacity(order.len());
        for &i in &order {
            ledger.record(
                round,
                clients[i].id,
                Direction::Up,
                PayloadKind::LabelHistogram,
                c,
            );
            histograms.push(clients[i].data.label_histogram());
            totals.push(clients[i].num_examples() as u64);
        }
        *prior = Some(estimate_label_prior(&histograms, &totals, mode)?);
    }
    let prior_ref = prior
        .as_ref()
        .ok_or_else(|| Error::invalid("label prior has not been estimated"))?;

    // (3) aggregate the uploaded heads
    let uploaded: Vec<(usize, &Mlp)> = order
        .iter()
        .map(|&i| (clients[i].id, &clients[i].model.predictor))
        .collect();
    let weights: Vec<f64> = if cfg.uniform_predictor_weighting {
        vec![1.0 / order.len() as f64; order.len()]
    } else {
        sample_weights(clients, &order)
    };
    let parts: Vec<(f64, &Mlp)> = weights
        .iter()
        .zip(&uploaded)
        .map(|(&w, &(_, mlp))| (w, mlp))
        .collect();
    let mut theta_p = weighted_average_mlps(&parts)?;

    // (4) generator training against the frozen uploaded ensemble
    let probe_loss_before = match probe {
        Some((py, pn)) => Some(generator_objective(py, pn, generator, &uploaded, mode)?),
        None => None,
    };
    let mut gen = generator.clone();
    let mut grng = RngStream::for_purpose(seed, StreamPurpose::GeneratorTrain, round, 0);
    let mut generator_losses = Vec::with_capacity(cfg.generator_steps);
    for _ in 0..cfg.generator_steps {
        let y = prior_ref.sample_batch(mode, cfg.server_batch, &mut grng);
        let noise = grng.normal_tensor(vec![cfg.server_batch, arch.noise_dim], 1.0);
        generator_losses.push(generator_step(
            &mut gen,
            &y,
            &noise,
            &uploaded,
            mode,
            cfg.generator_lr,
        )?);
    }
    let probe_loss_after = match probe {
        Some((py, pn)) => Some(generator_objective(py, pn, &gen, &uploaded, mode)?),
        None => None,
    };

    // (5) fine-tune the aggregate on frozen-generator samples
    let pre_finetune_predictor = theta_p.clone();
    let mut frng = RngStream::for_purpose(seed, StreamPurpose::FineTune, round, 0);
    let mut finetune_losses = Vec::with_capacity(cfg.server_steps);
    for _ in 0..cfg.server_steps {
        let y = prior_ref.sample_batch(mode, cfg.server_batch, &mut frng);
        let noise = frng.normal_tensor(vec![cfg.server_batch, arch.noise_dim], 1.0);
        let z = generate_latent(&y, &noise, &gen)?;
        finetune_losses.push(predictor_step(&mut theta_p, &z, &y, mode, cfg.server_lr)?);
    }

    Ok((
        theta_p,
        gen,
        FedKdfStats {
            generator_losses,
            finetune_losses,
            probe_loss_before,
            probe_loss_after,
            pre_finetune_predictor,
        },
    ))
}

// `PROB_CLAMP` is re-exported for distillation callers that pre-clamp
// teacher probabilities; keep the reference so the import stays honest.
const _: f64 = PROB_CLAMP;
