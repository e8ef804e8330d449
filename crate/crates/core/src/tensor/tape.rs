use super::{Matrix, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// Matrix times a 1x1 variable.
    ScaleBy(Var, Var),
    BroadcastAddRow(Var, Var),
    Hadamard(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    RowSum(Var),
    RowMean(Var),
    /// N x F -> N x 1
    SumCols(Var),
    SelectRows(Var, Vec<usize>),
    VStack(Vec<Var>),
    Bce(Var, Vec<f64>),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

/// Append-only record of primitive applications.
///
/// Nodes are stored in creation order, which is a topological order, so the
/// backward pass is a single reverse sweep that visits every node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`; zeros when nothing flowed into it.
    pub fn grad(&self, v: Var) -> Matrix {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Matrix, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Scale(a, c))
    }

    /// `a * s` where `s` is a 1x1 variable.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(TensorError::Shape {
                op: "scale_by",
                lhs: self.value(a).shape(),
                rhs: sv.shape(),
            });
        }
        let value = self.value(a).scale(sv[(0, 0)]);
        let rg = self.any_grad(&[a, s]);
        Ok(self.push(value, rg, Op::ScaleBy(a, s)))
    }

    /// Adds the 1 x F row vector `row` to every row of `m`.
    pub fn broadcast_add_row(&mut self, m: Var, row: Var) -> Result<Var, TensorError> {
        let rv = self.value(row);
        if rv.rows() != 1 {
            return Err(TensorError::Shape {
                op: "broadcast_add_row",
                lhs: self.value(m).shape(),
                rhs: rv.shape(),
            });
        }
        let value = self.value(m).broadcast_add_row(rv.as_slice())?;
        let rg = self.any_grad(&[m, row]);
        Ok(self.push(value, rg, Op::BroadcastAddRow(m, row)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::Shape {
                op: "hadamard",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let value = Matrix::from_vec(
            va.rows(),
            va.cols(),
            va.as_slice()
                .iter()
                .zip(vb.as_slice())
                .map(|(x, y)| x * y)
                .collect(),
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Hadamard(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::Sigmoid(a))
    }

    /// Sum of all rows: N x F -> 1 x F.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).row_sum();
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::RowSum(a))
    }

    /// Mean of all rows: N x F -> 1 x F.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let n = self.value(a).rows() as f64;
        let value = self.value(a).row_sum().scale(1.0 / n);
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::RowMean(a))
    }

    /// Sum within each row: N x F -> N x 1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = Matrix::column_vector((0..va.rows()).map(|i| va.row(i).iter().sum()).collect());
        let rg = self.any_grad(&[a]);
        self.push(value, rg, Op::SumCols(a))
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let va = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= va.rows()) {
            return Err(TensorError::Shape {
                op: "select_rows",
                lhs: va.shape(),
                rhs: (bad, 0),
            });
        }
        let value = va.select_rows(indices);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, rg, Op::SelectRows(a, indices.to_vec())))
    }

    /// Stacks the given matrices vertically. All must share a column count.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(first) = parts.first() else {
            return Ok(self.constant(Matrix::zeros(0, 0)));
        };
        let mut value = self.value(*first).clone();
        for p in &parts[1..] {
            value = value.vstack(self.value(*p))?;
        }
        let rg = self.any_grad(parts);
        Ok(self.push(value, rg, Op::VStack(parts.to_vec())))
    }

    /// Mean binary cross-entropy of an N x 1 column of logits.
    pub fn bce_loss(&mut self, logits: Var, labels: &[f64]) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        if lv.cols() != 1 || lv.rows() != labels.len() {
            return Err(TensorError::Shape {
                op: "bce_loss",
                lhs: lv.shape(),
                rhs: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(TensorError::Label {
                op: "bce_loss",
                value: bad,
            });
        }
        let n = labels.len() as f64;
        let total: f64 = lv
            .as_slice()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Matrix::scalar(total / n),
            rg,
            Op::Bce(logits, labels.to_vec()),
        ))
    }

    /// Mean squared difference over all entries.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let diff = self.value(a).sub(self.value(b)).map_err(|_| TensorError::Shape {
            op: "mse_loss",
            lhs: self.value(a).shape(),
            rhs: self.value(b).shape(),
        })?;
        let value = Matrix::scalar(diff.frobenius_sq() / diff.len() as f64);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::Mse(a, b)))
    }

    /// Reverse sweep from the scalar `output`.
    ///
    /// Previously accumulated gradients are cleared first, so repeated calls
    /// produce identical results.
    pub fn backward(&mut self, output: Var) -> Result<(), TensorError> {
        if self.value(output).shape() != (1, 1) {
            return Err(TensorError::NotScalar("backward"));
        }
        self.zero_grad();
        self.nodes[output.0].grad = Some(Matrix::scalar(1.0));
        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.propagate(idx, &op, &upstream);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Matrix) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.axpy(1.0, &delta).expect("gradient shape invariant"),
            None => node.grad = Some(delta),
        }
    }

    fn propagate(&mut self, idx: usize, op: &Op, up: &Matrix) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // C = A B  =>  dA = dC B^T, dB = A^T dC
                if self.requires_grad(*a) {
                    let d = up.matmul(&self.value(*b).transpose()).expect("shape");
                    self.accumulate(*a, d);
                }
                if self.requires_grad(*b) {
                    let d = self.value(*a).transpose().matmul(up).expect("shape");
                    self.accumulate(*b, d);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, up.clone());
                self.accumulate(*b, up.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, up.clone());
                self.accumulate(*b, up.scale(-1.0));
            }
            Op::Scale(a, c) => self.accumulate(*a, up.scale(*c)),
            Op::ScaleBy(a, s) => {
                let sv = self.value(*s)[(0, 0)];
                if self.requires_grad(*s) {
                    let dot: f64 = self
                        .value(*a)
                        .as_slice()
                        .iter()
                        .zip(up.as_slice())
                        .map(|(x, g)| x * g)
                        .sum();
                    self.accumulate(*s, Matrix::scalar(dot));
                }
                self.accumulate(*a, up.scale(sv));
            }
            Op::BroadcastAddRow(m, row) => {
                self.accumulate(*m, up.clone());
                self.accumulate(*row, up.row_sum());
            }
            Op::Hadamard(a, b) => {
                if self.requires_grad(*a) {
                    let d = elementwise(up, self.value(*b), |g, y| g * y);
                    self.accumulate(*a, d);
                }
                if self.requires_grad(*b) {
                    let d = elementwise(up, self.value(*a), |g, x| g * x);
                    self.accumulate(*b, d);
                }
            }
            Op::Relu(a) => {
                let d = elementwise(up, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(*a, d);
            }
            Op::Sigmoid(a) => {
                let d = elementwise(up, &self.nodes[idx].value, |g, s| g * s * (1.0 - s));
                self.accumulate(*a, d);
            }
            Op::RowSum(a) | Op::RowMean(a) => {
                let rows = self.value(*a).rows();
                let c = if matches!(op, Op::RowMean(_)) {
                    1.0 / rows as f64
                } else {
                    1.0
                };
                let d = Matrix::from_fn(rows, up.cols(), |_, j| c * up[(0, j)]);
                self.accumulate(*a, d);
            }
            Op::SumCols(a) => {
                let (r, c) = self.value(*a).shape();
                let d = Matrix::from_fn(r, c, |i, _| up[(i, 0)]);
                self.accumulate(*a, d);
            }
            Op::SelectRows(a, indices) => {
                let (r, c) = self.value(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        d[(i, j)] += up[(k, j)];
                    }
                }
                self.accumulate(*a, d);
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = self.value(*p).shape();
                    let d = Matrix::from_fn(r, c, |i, j| up[(offset + i, j)]);
                    offset += r;
                    self.accumulate(*p, d);
                }
            }
            Op::Bce(logits, labels) => {
                let g = up[(0, 0)] / labels.len() as f64;
                let z = self.value(*logits);
                let d = Matrix::column_vector(
                    z.as_slice()
                        .iter()
                        .zip(labels)
                        .map(|(&z, &y)| g * (sigmoid(z) - y))
                        .collect(),
                );
                self.accumulate(*logits, d);
            }
            Op::Mse(a, b) => {
                let diff = self.value(*a).sub(self.value(*b)).expect("shape");
                let c = 2.0 * up[(0, 0)] / diff.len() as f64;
                let d = diff.scale(c);
                if self.requires_grad(*b) {
                    self.accumulate(*b, d.scale(-1.0));
                }
                self.accumulate(*a, d);
            }
        }
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
