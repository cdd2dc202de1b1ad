//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation in execution order. Leaves are
//! either constants or bound parameters; [`Graph::backward`] walks the
//! record once in reverse and accumulates exact analytic gradients.
//! The operator set is deliberately closed: matmul, add, sub, scale,
//! elementwise mul, tanh, relu, transpose, diag_from_vector,
//! frobenius_norm_sq, mean, sum and reciprocal_clamped. Everything else
//! (bias addition, losses, the factorized Koopman operators) is composed
//! from these.

use thiserror::Error;

use crate::linalg::{matmul_nt, matmul_tn, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("domain error in {op}: non-finite input")]
    Domain { op: &'static str },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// A trainable array with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub value: Matrix,
    pub grad: Matrix,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            requires_grad: true,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Named parameter tensors, in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.tensors.push(Tensor::new(value));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.data().len()).sum()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Tanh(Var),
    Relu(Var),
    Transpose(Var),
    DiagFromVector(Var),
    FrobeniusNormSq(Var),
    Mean(Var),
    Sum(Var),
    ReciprocalClamped(Var, f64),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
    /// Index into the bound [`ParamSet`], for parameter leaves.
    param: Option<usize>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient of the last backward pass with respect to `v`, if it
    /// received any.
    pub fn grad(&self, v: Var) -> Option<Matrix> {
        let (r, c) = self.shape(v);
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Matrix::from_raw(r, c, g.clone()))
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// A differentiable leaf not tied to a parameter set.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf holding a copy of parameter `idx`; its gradient flows back
    /// through [`Graph::accumulate_into`].
    pub fn param(&mut self, params: &ParamSet, idx: usize) -> Var {
        let t = params.tensor(idx);
        let v = self.push(Op::Leaf, t.value.clone(), t.requires_grad);
        self.nodes[v.0].param = Some(idx);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::Dimension {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.matmul(vb).map_err(|e| AutodiffError::Dimension {
            op: "matmul",
            detail: e.to_string(),
        })?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).add(self.value(b)).expect("shapes checked");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).sub(self.value(b)).expect("shapes checked");
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), out, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(Op::Scale(a, s), out, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Matrix::from_raw(va.rows(), va.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    fn unary(&mut self, op: Op, name: &'static str, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let va = self.value(a);
        if !va.all_finite() {
            return Err(AutodiffError::Domain { op: name });
        }
        let out = Matrix::from_raw(
            va.rows(),
            va.cols(),
            va.data().iter().map(|&x| f(x)).collect(),
        );
        let rg = self.rg(a);
        Ok(self.push(op, out, rg))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Tanh(a), "tanh", a, f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Op::Relu(a), "relu", a, |x| x.max(0.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(Op::Transpose(a), out, rg)
    }

    /// Square diagonal matrix from a row or column vector.
    pub fn diag_from_vector(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != 1 && c != 1 {
            return Err(AutodiffError::Dimension {
                op: "diag_from_vector",
                detail: format!("expected a vector, got {r}x{c}"),
            });
        }
        let out = Matrix::from_diag(self.value(a).data());
        let rg = self.rg(a);
        Ok(self.push(Op::DiagFromVector(a), out, rg))
    }

    pub fn frobenius_norm_sq(&mut self, a: Var) -> Var {
        let out = Matrix::from_raw(1, 1, vec![self.value(a).frobenius_norm_sq()]);
        let rg = self.rg(a);
        self.push(Op::FrobeniusNormSq(a), out, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.data().len() as f64;
        let rg = self.rg(a);
        self.push(Op::Mean(a), Matrix::from_raw(1, 1, vec![m]), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        let rg = self.rg(a);
        self.push(Op::Sum(a), Matrix::from_raw(1, 1, vec![s]), rg)
    }

    /// Elementwise `1 / max(x, eps)`.
    pub fn reciprocal_clamped(&mut self, a: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(AutodiffError::Contract(format!(
                "reciprocal_clamped needs eps > 0, got {eps}"
            )));
        }
        let va = self.value(a);
        let data = va.data().iter().map(|&x| 1.0 / x.max(eps)).collect();
        let out = Matrix::from_raw(va.rows(), va.cols(), data);
        let rg = self.rg(a);
        Ok(self.push(Op::ReciprocalClamped(a, eps), out, rg))
    }

    /// Reverse pass from a scalar node. Gradients from earlier passes are
    /// discarded; parameter tensors only change through
    /// [`Graph::accumulate_into`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (rows, cols) = node.value.shape();
                    if self.rg(a) {
                        let ga = matmul_nt(&g, self.value(b), rows);
                        accumulate_owned(&mut grads[a.0], ga.into_data());
                    }
                    if self.rg(b) {
                        let gb = matmul_tn(self.value(a), &g, cols);
                        accumulate_owned(&mut grads[b.0], gb.into_data());
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                    if self.rg(b) {
                        accumulate(&mut grads[b.0], &g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                    if self.rg(b) {
                        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                        accumulate(&mut grads[b.0], &neg);
                    }
                }
                Op::Scale(a, s) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * s).collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let ga: Vec<f64> = g
                            .iter()
                            .zip(self.value(b).data())
                            .map(|(x, y)| x * y)
                            .collect();
                        accumulate(&mut grads[a.0], &ga);
                    }
                    if self.rg(b) {
                        let gb: Vec<f64> = g
                            .iter()
                            .zip(self.value(a).data())
                            .map(|(x, y)| x * y)
                            .collect();
                        accumulate(&mut grads[b.0], &gb);
                    }
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(x, &inp)| if inp > 0.0 { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Transpose(a) => {
                    let (rows, cols) = node.value.shape();
                    let gt: Vec<f64> = (0..cols)
                        .flat_map(|j| (0..rows).map(move |i| (i, j)))
                        .map(|(i, j)| g[i * cols + j])
                        .collect();
                    accumulate(&mut grads[a.0], &gt);
                }
                Op::DiagFromVector(a) => {
                    let n = node.value.rows();
                    let ga: Vec<f64> = (0..n).map(|i| g[i * n + i]).collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::FrobeniusNormSq(a) => {
                    let s = 2.0 * g[0];
                    let ga: Vec<f64> = self.value(a).data().iter().map(|x| s * x).collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                Op::Mean(a) => {
                    let n = self.value(a).data().len();
                    accumulate(&mut grads[a.0], &vec![g[0] / n as f64; n]);
                }
                Op::Sum(a) => {
                    let n = self.value(a).data().len();
                    accumulate(&mut grads[a.0], &vec![g[0]; n]);
                }
                Op::ReciprocalClamped(a, eps) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(x, &inp)| if inp > eps { -x / (inp * inp) } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[a.0], &ga);
                }
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients of every parameter leaf into `params`.
    /// A parameter bound more than once receives the sum.
    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for (id, node) in self.nodes.iter().enumerate() {
            let (Some(idx), Some(Some(g))) = (node.param, self.grads.get(id)) else {
                continue;
            };
            let t = params.tensor_mut(idx);
            if !t.requires_grad {
                continue;
            }
            t.grad
                .data_mut()
                .iter_mut()
                .zip(g)
                .for_each(|(acc, x)| *acc += x);
        }
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
        None => *slot = Some(g),
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, x)| *a += x),
        None => *slot = Some(g.to_vec()),
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self::with_hyperparameters(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(
        params: &ParamSet,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .iter()
            .map(|(_, t)| vec![0.0; t.value.data().len()])
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, idx: usize) -> &[f64] {
        &self.m[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &[f64] {
        &self.v[idx]
    }

    /// Applies one update from the gradients currently held in `params`.
    /// Parameters are left untouched when any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.m.len() != params.len()
            || params
                .iter()
                .zip(&self.m)
                .any(|((_, t), m)| t.value.data().len() != m.len())
        {
            return Err(AutodiffError::Contract(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        for (name, t) in params.iter() {
            if !t.grad.all_finite() {
                return Err(AutodiffError::NonFiniteGradient {
                    name: name.to_string(),
                });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for idx in 0..params.len() {
            let t = params.tensor_mut(idx);
            if !t.requires_grad {
                continue;
            }
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let grad = t.grad.data().to_vec();
            for (k, (w, g)) in t.value.data_mut().iter_mut().zip(grad).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
