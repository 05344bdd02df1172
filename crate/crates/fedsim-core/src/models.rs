//! The model zoo: feature extractor + predictor split, conditional generator,
//! losses, and the flat binary parameter layout used for checkpoints and
//! communication accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, RngStream, Tensor};

/// Slope of the leaky rectifier used on all hidden layers.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Probabilities are clamped into [PROB_CLAMP, 1 - PROB_CLAMP] before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Classification task flavor; fixed for the lifetime of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Multiclass,
    Multilabel,
}

/// Layer widths for every network in the experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Input data width D.
    pub feature_dim: usize,
    /// Latent feature width d; must stay below D.
    pub latent_dim: usize,
    pub num_classes: usize,
    pub noise_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            feature_dim: 32,
            latent_dim: 16,
            num_classes: 8,
            noise_dim: 8,
            extractor_hidden: vec![64, 64],
            predictor_hidden: vec![],
            generator_hidden: vec![64],
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.latent_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid("architecture widths must be positive"));
        }
        if self.latent_dim >= self.feature_dim {
            return Err(Error::invalid(format!(
                "latent_dim ({}) must be smaller than feature_dim ({})",
                self.latent_dim, self.feature_dim
            )));
        }
        if self.noise_dim == 0 {
            return Err(Error::invalid("noise_dim must be positive"));
        }
        Ok(())
    }

    pub fn extractor_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.feature_dim];
        dims.extend(&self.extractor_hidden);
        dims.push(self.latent_dim);
        dims
    }

    pub fn predictor_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend(&self.predictor_hidden);
        dims.push(self.num_classes);
        dims
    }

    pub fn generator_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.num_classes + self.noise_dim];
        dims.extend(&self.generator_hidden);
        dims.push(self.latent_dim);
        dims
    }
}

/// One dense layer: weights (in x out) plus bias (out).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn input_width(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// A multilayer perceptron: hidden layers leaky-rectified, final layer linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    /// He-style initialization from a deterministic stream.
    pub fn init(dims: &[usize], rng: &mut RngStream) -> Self {
        let mut layers = Vec::new();
        for win in dims.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            layers.push(DenseLayer {
                weights: rng.normal_tensor(vec![fan_in, fan_out], scale),
                bias: Tensor::zeros(vec![fan_out]),
            });
        }
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer {
                weights: Tensor::zeros(vec![w[0], w[1]]),
                bias: Tensor::zeros(vec![w[1]]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::input_width)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_width)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    /// Straight inference pass outside any autodiff graph.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_width() {
            return Err(Error::ShapeMismatch {
                context: "mlp forward",
                expected: vec![self.input_width()],
                got: vec![x.cols()],
            });
        }
        let last = self.layers.len() - 1;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = crate::numerics::matmul(&cur, &layer.weights)?;
            let m = layer.bias.len();
            for row in out.data_mut().chunks_exact_mut(m) {
                for (v, b) in row.iter_mut().zip(layer.bias.data()) {
                    *v += b;
                }
            }
            if i != last {
                for v in out.data_mut() {
                    if *v <= 0.0 {
                        *v *= LEAKY_SLOPE;
                    }
                }
            }
            cur = out;
        }
        Ok(cur)
    }

    /// Forward pass recorded on a graph; returns the output node and the
    /// parameter leaves in (w0, b0, w1, b1, ...) order.
    pub fn forward_graph(&self, g: &mut Graph, x: NodeId) -> Result<(NodeId, Vec<NodeId>)> {
        if g.value(x).cols() != self.input_width() {
            return Err(Error::ShapeMismatch {
                context: "mlp forward_graph",
                expected: vec![self.input_width()],
                got: vec![g.value(x).cols()],
            });
        }
        let last = self.layers.len() - 1;
        let mut param_ids = Vec::with_capacity(self.layers.len() * 2);
        let mut cur = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.leaf(layer.weights.clone());
            let b = g.leaf(layer.bias.clone());
            param_ids.push(w);
            param_ids.push(b);
            cur = g.matmul(cur, w)?;
            cur = g.add_row_bias(cur, b)?;
            if i != last {
                cur = g.leaky_relu(cur, LEAKY_SLOPE);
            }
        }
        Ok((cur, param_ids))
    }
}

/// The theta = [theta_f, theta_p] split: feature extractor and predictor head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub extractor: Mlp,
    pub predictor: Mlp,
}

impl ModelParams {
    pub fn init(arch: &ArchConfig, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        Ok(ModelParams {
            extractor: Mlp::init(&arch.extractor_dims(), rng),
            predictor: Mlp::init(&arch.predictor_dims(), rng),
        })
    }

    pub fn param_count(&self) -> usize {
        self.extractor.param_count() + self.predictor.param_count()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.extractor.params_mut();
        v.extend(self.predictor.params_mut());
        v
    }
}

/// The conditional generator mapping (one-hot label, noise) to a latent feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub net: Mlp,
}

impl GeneratorParams {
    pub fn init(arch: &ArchConfig, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        Ok(GeneratorParams {
            net: Mlp::init(&arch.generator_dims(), rng),
        })
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }
}

/// z = F(x; theta_f).
pub fn forward_features(x: &Tensor, extractor: &Mlp) -> Result<Tensor> {
    extractor.forward(x)
}

/// g(z; theta_p): raw class scores, no activation.
pub fn predict_logits(z: &Tensor, predictor: &Mlp) -> Result<Tensor> {
    predictor.forward(z)
}

/// sigma(g(z; theta_p)): softmax rows for multiclass, elementwise sigmoid
/// for multilabel.
pub fn predict_proba(z: &Tensor, predictor: &Mlp, mode: TaskMode) -> Result<Tensor> {
    let logits = predict_logits(z, predictor)?;
    activate(&logits, mode)
}

pub fn activate(logits: &Tensor, mode: TaskMode) -> Result<Tensor> {
    match mode {
        TaskMode::Multiclass => crate::numerics::softmax(logits),
        TaskMode::Multilabel => Ok(crate::numerics::sigmoid(logits)),
    }
}

/// Column-concatenate a one-hot (or binary) label batch with a noise batch.
pub fn concat_label_noise(y: &Tensor, noise: &Tensor) -> Result<Tensor> {
    if y.rows() != noise.rows() {
        return Err(Error::ShapeMismatch {
            context: "concat_label_noise",
            expected: vec![y.rows()],
            got: vec![noise.rows()],
        });
    }
    let (n, cy, cn) = (y.rows(), y.cols(), noise.cols());
    let mut data = Vec::with_capacity(n * (cy + cn));
    for i in 0..n {
        data.extend_from_slice(y.row(i));
        data.extend_from_slice(noise.row(i));
    }
    Tensor::new(vec![n, cy + cn], data)
}

/// z = G(concat(y, noise); omega); deterministic in its inputs.
pub fn generate_latent(y: &Tensor, noise: &Tensor, generator: &GeneratorParams) -> Result<Tensor> {
    let input = concat_label_noise(y, noise)?;
    generator.net.forward(&input)
}

/// Unweighted mean of K predictor logit outputs, summed in ascending
/// client-id order so the result is independent of list order.
pub fn ensemble_logits(z: &Tensor, predictors: &[(usize, &Mlp)]) -> Result<Tensor> {
    if predictors.is_empty() {
        return Err(Error::invalid("ensemble over empty predictor list"));
    }
    let mut order: Vec<usize> = (0..predictors.len()).collect();
    order.sort_by_key(|&i| predictors[i].0);

    let mut acc: Option<Tensor> = None;
    for &i in &order {
        let logits = predict_logits(z, predictors[i].1)?;
        acc = Some(match acc {
            None => logits,
            Some(mut a) => {
                if !a.same_shape(&logits) {
                    return Err(Error::ShapeMismatch {
                        context: "ensemble_logits",
                        expected: a.shape().to_vec(),
                        got: logits.shape().to_vec(),
                    });
                }
                for (av, lv) in a.data_mut().iter_mut().zip(logits.data()) {
                    *av += lv;
                }
                a
            }
        });
    }
    let mut out = acc.expect("nonempty");
    let k = predictors.len() as f64;
    for v in out.data_mut() {
        *v /= k;
    }
    Ok(out)
}

/// Mean task loss over a batch of probability rows.
///
/// Multiclass: categorical cross-entropy. Multilabel: per-class binary
/// cross-entropy averaged over classes and examples. Probabilities are
/// clamped into [PROB_CLAMP, 1 - PROB_CLAMP] before logs.
pub fn task_loss(proba: &Tensor, y: &Tensor, mode: TaskMode) -> Result<f64> {
    if !proba.same_shape(y) {
        return Err(Error::ShapeMismatch {
            context: "task_loss",
            expected: y.shape().to_vec(),
            got: proba.shape().to_vec(),
        });
    }
    let n = proba.rows() as f64;
    let mut total = 0.0;
    match mode {
        TaskMode::Multiclass => {
            for (&p, &t) in proba.data().iter().zip(y.data()) {
                if t > 0.0 {
                    total -= t * p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
                }
            }
            Ok(total / n)
        }
        TaskMode::Multilabel => {
            for (&p, &t) in proba.data().iter().zip(y.data()) {
                let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
            }
            Ok(total / (n * proba.cols() as f64))
        }
    }
}

/// Graph version of [`activate`].
pub fn activate_graph(g: &mut Graph, logits: NodeId, mode: TaskMode) -> Result<NodeId> {
    match mode {
        TaskMode::Multiclass => g.softmax_rows(logits),
        TaskMode::Multilabel => Ok(g.sigmoid(logits)),
    }
}

/// Graph version of [`task_loss`]; `y` enters as a constant leaf.
pub fn task_loss_graph(g: &mut Graph, proba: NodeId, y: &Tensor, mode: TaskMode) -> Result<NodeId> {
    if !g.value(proba).same_shape(y) {
        return Err(Error::ShapeMismatch {
            context: "task_loss_graph",
            expected: y.shape().to_vec(),
            got: g.value(proba).shape().to_vec(),
        });
    }
    let n = g.value(proba).rows() as f64;
    let c = g.value(proba).cols() as f64;
    let y_id = g.leaf(y.clone());
    let pc = g.clamp(proba, PROB_CLAMP, 1.0 - PROB_CLAMP);
    match mode {
        TaskMode::Multiclass => {
            let lp = g.ln(pc)?;
            let picked = g.mul(y_id, lp)?;
            let total = g.sum_all(picked);
            Ok(g.affine(total, -1.0 / n, 0.0))
        }
        TaskMode::Multilabel => {
            let lp = g.ln(pc)?;
            let pos = g.mul(y_id, lp)?;
            let one_minus_p = g.affine(pc, -1.0, 1.0);
            let lq = g.ln(one_minus_p)?;
            let y_neg = g.affine(y_id, -1.0, 1.0);
            let neg = g.mul(y_neg, lq)?;
            let both = g.add(pos, neg)?;
            let total = g.sum_all(both);
            Ok(g.affine(total, -1.0 / (n * c), 0.0))
        }
    }
}

// ---------------------------------------------------------------------------
// Flat binary layout: u32 layer count, then (in, out) u32 pairs, then f32
// values per layer (weights row-major, then bias), all little-endian. This is
// also the element count the communication ledger charges for.
// ---------------------------------------------------------------------------

pub fn mlp_to_bytes(mlp: &Mlp) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
    for layer in &mlp.layers {
        out.extend_from_slice(&(layer.input_width() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.output_width() as u32).to_le_bytes());
    }
    for layer in &mlp.layers {
        for &v in layer.weights.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &v in layer.bias.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn mlp_from_bytes(bytes: &[u8]) -> Result<(Mlp, usize)> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::Parse("truncated parameter block".into()));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    let layer_count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let i = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let o = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        shapes.push((i, o));
    }
    let mut layers = Vec::with_capacity(layer_count);
    for (i, o) in shapes {
        let mut w = Vec::with_capacity(i * o);
        for _ in 0..i * o {
            w.push(f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64);
        }
        let mut b = Vec::with_capacity(o);
        for _ in 0..o {
            b.push(f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64);
        }
        layers.push(DenseLayer {
            weights: Tensor::new(vec![i, o], w)?,
            bias: Tensor::new(vec![o], b)?,
        });
    }
    Ok((Mlp { layers }, pos))
}

pub fn model_to_bytes(model: &ModelParams) -> Vec<u8> {
    let mut out = mlp_to_bytes(&model.extractor);
    out.extend(mlp_to_bytes(&model.predictor));
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let (extractor, used) = mlp_from_bytes(bytes)?;
    let (predictor, _) = mlp_from_bytes(&bytes[used..])?;
    Ok(ModelParams {
        extractor,
        predictor,
    })
}
