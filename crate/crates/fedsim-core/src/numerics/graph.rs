//! Reverse-mode automatic differentiation over tensors.
//!
//! A [`Graph`] records every operation applied to its nodes; calling
//! [`Graph::backward`] on a scalar node fills in gradients for everything
//! reachable from it. Each training step builds a fresh graph, so workers
//! never share autodiff state.

use crate::error::{Error, Result};
use crate::numerics::tensor::{self, Tensor};

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Row-broadcast bias add: (n x m) + (m).
    AddRowBias(NodeId, NodeId),
    /// y = mul * x + add with constant coefficients; backward only needs mul.
    Affine(NodeId, f64),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    Clamp(NodeId, f64, f64),
    Ln(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Per-parameter gradient tensors mirroring the shapes of a parameter set.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub tensors: Vec<Tensor>,
}

/// A recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`.
    /// Zero for nodes the target does not depend on.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[id.0].value.shape().to_vec()),
        }
    }

    /// Collect gradients for a list of parameter leaves.
    pub fn gradients(&self, params: &[NodeId]) -> Gradient {
        Gradient {
            tensors: params.iter().map(|&p| self.grad(p)).collect(),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(Error::ShapeMismatch {
                context: "graph add",
                expected: va.shape().to_vec(),
                got: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(Error::ShapeMismatch {
                context: "graph sub",
                expected: va.shape().to_vec(),
                got: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(Error::ShapeMismatch {
                context: "graph mul",
                expected: va.shape().to_vec(),
                got: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Add a width-m bias vector to every row of an (n x m) tensor.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let m = vx.cols();
        if vb.len() != m {
            return Err(Error::ShapeMismatch {
                context: "add_row_bias",
                expected: vec![m],
                got: vb.shape().to_vec(),
            });
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_exact_mut(m) {
            for (v, b) in row.iter_mut().zip(vb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddRowBias(x, bias)))
    }

    /// y = mul * x + add, elementwise with constant scalars.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| mul * v + add).collect();
        let value = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Affine(x, mul))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let vx = self.value(x);
        let data = vx
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = tensor::sigmoid(self.value(x));
        self.push(value, Op::Sigmoid(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let value = tensor::softmax(self.value(x))?;
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v.clamp(lo, hi)).collect();
        let value = Tensor::new(vx.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Clamp(x, lo, hi))
    }

    /// Natural log; errors on non-positive entries.
    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::NonFinite("ln of non-positive value".into()));
        }
        let data = vx.data().iter().map(|v| v.ln()).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Ln(x)))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let s: f64 = vx.data().iter().sum();
        let n = vx.len() as f64;
        self.push(Tensor::scalar(s / n), Op::MeanAll(x))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::invalid("backward requires a scalar node"));
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        // Nodes only reference earlier nodes, so index order is topological.
        for i in (0..self.nodes.len()).rev() {
            let grad = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &grad, &op)?;
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: NodeId, delta: Tensor) {
        let node = &mut self.nodes[target.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn propagate(&mut self, idx: usize, grad: &Tensor, op: &Op) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // dA = dC * B^T, dB = A^T * dC
                let (m, n) = (grad.rows(), grad.cols());
                let k = self.value(a).cols();
                let (va, vb) = (self.value(a).clone(), self.value(b).clone());
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = grad.data()[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += g * vb.data()[p * n + j];
                        }
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let av = va.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += av * grad.data()[i * n + j];
                        }
                    }
                }
                self.accumulate(a, Tensor::new(vec![m, k], da)?);
                self.accumulate(b, Tensor::new(vec![k, n], db)?);
            }
            Op::Add(a, b) => {
                self.accumulate(a, grad.clone());
                self.accumulate(b, grad.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, grad.clone());
                let neg = grad.data().iter().map(|v| -v).collect();
                self.accumulate(b, Tensor::new(grad.shape().to_vec(), neg)?);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(g, y)| g * y)
                    .collect();
                let db: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(g, x)| g * x)
                    .collect();
                self.accumulate(a, Tensor::new(grad.shape().to_vec(), da)?);
                self.accumulate(b, Tensor::new(grad.shape().to_vec(), db)?);
            }
            Op::AddRowBias(x, bias) => {
                let m = self.value(bias).len();
                let mut db = vec![0.0; m];
                for row in grad.data().chunks_exact(m) {
                    for (acc, g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                self.accumulate(x, grad.clone());
                self.accumulate(bias, Tensor::new(vec![m], db)?);
            }
            Op::Affine(x, mul) => {
                let dx = grad.data().iter().map(|g| mul * g).collect();
                self.accumulate(x, Tensor::new(grad.shape().to_vec(), dx)?);
            }
            Op::LeakyRelu(x, slope) => {
                let dx: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { slope * g })
                    .collect();
                self.accumulate(x, Tensor::new(grad.shape().to_vec(), dx)?);
            }
            Op::Sigmoid(x) => {
                let s = &self.nodes[idx].value;
                let dx: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(s.data())
                    .map(|(g, &y)| g * y * (1.0 - y))
                    .collect();
                self.accumulate(x, Tensor::new(grad.shape().to_vec(), dx)?);
            }
            Op::SoftmaxRows(x) => {
                // dx_j = s_j (g_j - sum_k g_k s_k), per row
                let s = self.nodes[idx].value.clone();
                let c = s.cols();
                let mut dx = vec![0.0; s.len()];
                for (r, (srow, grow)) in s
                    .data()
                    .chunks_exact(c)
                    .zip(grad.data().chunks_exact(c))
                    .enumerate()
                {
                    let dot: f64 = srow.iter().zip(grow).map(|(si, gi)| si * gi).sum();
                    for j in 0..c {
                        dx[r * c + j] = srow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(x, Tensor::new(grad.shape().to_vec(), dx)?);
            }
            Op::Clamp(x, lo, hi) => {
                let dx: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(g, &v)| if v > lo && v < hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(x, Tensor::new(grad.shape().to_vec(), dx)?);
            }
            Op::Ln(x) => {
                let dx: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(g, &v)| g / v)
                    .collect();
                self.accumulate(x, Tensor::new(grad.shape().to_vec(), dx)?);
            }
            Op::SumAll(x) => {
                let g = grad.data()[0];
                let vx = self.value(x);
                let dx = vec![g; vx.len()];
                self.accumulate(x, Tensor::new(vx.shape().to_vec(), dx)?);
            }
            Op::MeanAll(x) => {
                let vx = self.value(x);
                let g = grad.data()[0] / vx.len() as f64;
                let dx = vec![g; vx.len()];
                self.accumulate(x, Tensor::new(vx.shape().to_vec(), dx)?);
            }
        }
        Ok(())
    }
}

/// One step of stochastic gradient descent: params <- params - lr * grads.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &Gradient, lr: f64) -> Result<()> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.tensors.len() {
        return Err(Error::ShapeMismatch {
            context: "sgd_step",
            expected: vec![params.len()],
            got: vec![grads.tensors.len()],
        });
    }
    for (p, g) in params.iter_mut().zip(&grads.tensors) {
        if !p.same_shape(g) {
            return Err(Error::ShapeMismatch {
                context: "sgd_step",
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
        p.check_finite("sgd_step")?;
    }
    Ok(())
}
