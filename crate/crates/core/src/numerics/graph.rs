//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! Ops are recorded in construction order, which is already a topological
//! order (an op can only reference earlier nodes), so the backward pass is a
//! single reverse sweep that touches each reachable node exactly once.
//! Forward values are computed eagerly and cached on the node.
//!
//! Every op checks its output for NaN/Inf; the first offending node poisons
//! the graph and `forward_backward` reports it by name instead of letting the
//! values propagate silently.

use std::collections::BTreeMap;

use super::tensor::{gemm_a_bt_acc, gemm_at_b_acc, matmul, Tensor};
use super::NumericsError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
#[allow(dead_code)] // constant fields document the op even when backward ignores them
enum Op {
    Input,
    Param(String),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Clamp(NodeId, f64, f64),
    /// matrix + row vector, broadcast over rows
    AddRow(NodeId, NodeId),
    /// matrix + column vector, broadcast over columns
    AddCol(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    /// n×m → n×1
    RowSum(NodeId),
    /// n×m → 1×m
    MeanRows(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    Transpose(NodeId),
    /// gather rows of a table; gradient scatter-adds
    RowSelect(NodeId, Vec<usize>),
    LogSoftmaxRows(NodeId),
    /// n×m with one column index per row → n×1
    PickPerRow(NodeId, Vec<usize>),
    /// unfold a T×C time-major matrix into conv patches of `width` at `stride`
    Im2Col {
        input: NodeId,
        width: usize,
        stride: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Sqrt(_) => "sqrt",
            Op::Clamp(..) => "clamp",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::RowSum(_) => "row_sum",
            Op::MeanRows(_) => "mean_rows",
            Op::MeanAll(_) => "mean_all",
            Op::SumAll(_) => "sum_all",
            Op::Transpose(_) => "transpose",
            Op::RowSelect(..) => "row_select",
            Op::LogSoftmaxRows(_) => "log_softmax_rows",
            Op::PickPerRow(..) => "pick_per_row",
            Op::Im2Col { .. } => "im2col",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// name → node, for collecting parameter gradients
    params: BTreeMap<String, NodeId>,
    poisoned: Option<(usize, &'static str)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Human-readable label for error messages.
    fn node_label(&self, id: usize) -> String {
        match &self.nodes[id].op {
            Op::Param(name) => format!("param {name:?}"),
            op => op.name().to_string(),
        }
    }

    /// Shape-checked constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value, false)
    }

    /// Registers `value` as a named trainable parameter.
    ///
    /// Panics if the name was already registered on this graph.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        assert!(
            !self.params.contains_key(name),
            "parameter {name:?} registered twice"
        );
        let id = self.push(Op::Param(name.to_string()), value, true);
        self.params.insert(name.to_string(), id);
        id
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        if self.poisoned.is_none() && !value.all_finite() {
            self.poisoned = Some((self.nodes.len(), op.name()));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        id
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- op builders -------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        let rg = self.needs_grad(&[a, b]);
        self.push(Op::MatMul(a, b), v, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x + y);
        let rg = self.needs_grad(&[a, b]);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x - y);
        let rg = self.needs_grad(&[a, b]);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip(a, b, |x, y| x * y);
        let rg = self.needs_grad(&[a, b]);
        self.push(Op::Mul(a, b), v, rg)
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.shape(),
            vb.shape(),
            "elementwise op shape mismatch: {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_vec(va.shape(), data).expect("same shape")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let rg = self.needs_grad(&[a]);
        self.push(Op::Scale(a, c), v, rg)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        let rg = self.needs_grad(&[a]);
        self.push(Op::AddConst(a, c), v, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let rg = self.needs_grad(&[a]);
        self.push(Op::Tanh(a), v, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.needs_grad(&[a]);
        self.push(Op::Sigmoid(a), v, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.needs_grad(&[a]);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        let rg = self.needs_grad(&[a]);
        self.push(Op::Exp(a), v, rg)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        let rg = self.needs_grad(&[a]);
        self.push(Op::Sqrt(a), v, rg)
    }

    /// Clamp to `[lo, hi]`; gradient passes through inside the range, zero outside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.needs_grad(&[a]);
        self.push(Op::Clamp(a, lo, hi), v, rg)
    }

    /// `m + v` with `v` a 1×c row vector broadcast over the rows of `m`.
    pub fn add_row(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (vm, vv) = (self.value(m), self.value(v));
        assert_eq!(vv.rows(), 1, "add_row wants a row vector");
        assert_eq!(vm.cols(), vv.cols(), "add_row width mismatch");
        let c = vm.cols();
        let data = vm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + vv.data()[i % c])
            .collect();
        let out = Tensor::from_vec(vm.shape(), data).expect("same shape");
        let rg = self.needs_grad(&[m, v]);
        self.push(Op::AddRow(m, v), out, rg)
    }

    /// `m + v` with `v` an n×1 column vector broadcast over the columns of `m`.
    pub fn add_col(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (vm, vv) = (self.value(m), self.value(v));
        assert_eq!(vv.cols(), 1, "add_col wants a column vector");
        assert_eq!(vm.rows(), vv.rows(), "add_col height mismatch");
        let c = vm.cols();
        let data = vm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + vv.data()[i / c])
            .collect();
        let out = Tensor::from_vec(vm.shape(), data).expect("same shape");
        let rg = self.needs_grad(&[m, v]);
        self.push(Op::AddCol(m, v), out, rg)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows(), vb.rows(), "concat_cols row mismatch");
        let (r, ca, cb) = (va.rows(), va.cols(), vb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(va.row(i));
            data.extend_from_slice(vb.row(i));
        }
        let out = Tensor::from_vec(&[r, ca + cb], data).expect("sized");
        let rg = self.needs_grad(&[a, b]);
        self.push(Op::ConcatCols(a, b), out, rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        assert!(start + len <= c, "slice_cols out of range");
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&va.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(&[r, len], data).expect("sized");
        let rg = self.needs_grad(&[a]);
        self.push(Op::SliceCols(a, start, len), out, rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut r = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), c, "concat_rows width mismatch");
            data.extend_from_slice(v.data());
            r += v.rows();
        }
        let out = Tensor::from_vec(&[r, c], data).expect("sized");
        let rg = self.needs_grad(parts);
        self.push(Op::ConcatRows(parts.to_vec()), out, rg)
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = (0..va.rows()).map(|i| va.row(i).iter().sum()).collect();
        let out = Tensor::from_vec(&[va.rows(), 1], data).expect("sized");
        let rg = self.needs_grad(&[a]);
        self.push(Op::RowSum(a), out, rg)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (acc, &x) in data.iter_mut().zip(va.row(i)) {
                *acc += x;
            }
        }
        for acc in data.iter_mut() {
            *acc /= r as f64;
        }
        let out = Tensor::from_vec(&[1, c], data).expect("sized");
        let rg = self.needs_grad(&[a]);
        self.push(Op::MeanRows(a), out, rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let v = va.data().iter().sum::<f64>() / va.len() as f64;
        let rg = self.needs_grad(&[a]);
        self.push(Op::MeanAll(a), Tensor::scalar(v), rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).data().iter().sum::<f64>();
        let rg = self.needs_grad(&[a]);
        self.push(Op::SumAll(a), Tensor::scalar(v), rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.needs_grad(&[a]);
        self.push(Op::Transpose(a), v, rg)
    }

    pub fn row_select(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let vt = self.value(table);
        let c = vt.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            assert!(i < vt.rows(), "row_select index {i} out of range");
            data.extend_from_slice(vt.row(i));
        }
        let out = Tensor::from_vec(&[indices.len(), c], data).expect("sized");
        let rg = self.needs_grad(&[table]);
        self.push(Op::RowSelect(table, indices.to_vec()), out, rg)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = va.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        let out = Tensor::from_vec(&[r, c], data).expect("sized");
        let rg = self.needs_grad(&[a]);
        self.push(Op::LogSoftmaxRows(a), out, rg)
    }

    pub fn pick_per_row(&mut self, a: NodeId, cols: &[usize]) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.rows(), cols.len(), "pick_per_row length mismatch");
        let data = cols
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < va.cols(), "pick_per_row column out of range");
                va.at(i, j)
            })
            .collect();
        let out = Tensor::from_vec(&[cols.len(), 1], data).expect("sized");
        let rg = self.needs_grad(&[a]);
        self.push(Op::PickPerRow(a, cols.to_vec()), out, rg)
    }

    /// Unfolds a T×C matrix into (T−width)/stride+1 rows of width·C patch values.
    pub fn im2col(&mut self, input: NodeId, width: usize, stride: usize) -> NodeId {
        let v = self.value(input);
        let (t, c) = (v.rows(), v.cols());
        assert!(t >= width, "im2col: {t} frames < width {width}");
        let t_out = (t - width) / stride + 1;
        let mut data = Vec::with_capacity(t_out * width * c);
        for o in 0..t_out {
            for w in 0..width {
                data.extend_from_slice(v.row(o * stride + w));
            }
        }
        let out = Tensor::from_vec(&[t_out, width * c], data).expect("sized");
        let rg = self.needs_grad(&[input]);
        self.push(
            Op::Im2Col {
                input,
                width,
                stride,
            },
            out,
            rg,
        )
    }

    // ---- backward ----------------------------------------------------------

    /// Runs the backward pass from a scalar loss node.
    ///
    /// Returns the loss value and `∂loss/∂param` for every registered
    /// parameter (zeros for parameters the loss does not reach).
    pub fn forward_backward(
        &self,
        loss: NodeId,
    ) -> Result<(f64, BTreeMap<String, Tensor>), NumericsError> {
        if let Some((node, _)) = self.poisoned {
            return Err(NumericsError::NonFinite {
                node,
                op: self.node_label(node),
            });
        }
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.len() != 1 {
            return Err(NumericsError::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let loss_value = loss_val.item();

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().expect("checked");
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let g = grads[id.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.shape()));
            if !g.all_finite() {
                return Err(NumericsError::NonFinite {
                    node: id.0,
                    op: format!("gradient of param {name:?}"),
                });
            }
            out.insert(name.clone(), g);
        }
        Ok((loss_value, out))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.rows(), va.cols());
                let n = vb.cols();
                if self.nodes[a.0].requires_grad {
                    // ∂L/∂A = G·Bᵀ
                    let mut ga = Tensor::zeros(&[m, k]);
                    gemm_a_bt_acc(ga.data_mut(), g.data(), vb.data(), m, n, k);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    // ∂L/∂B = Aᵀ·G
                    let mut gb = Tensor::zeros(&[k, n]);
                    gemm_at_b_acc(gb.data_mut(), va.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let mut ga = g.clone();
                    for (x, y) in ga.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *x *= y;
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = g.clone();
                    for (x, y) in gb.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *x *= y;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddConst(a, _) => self.accumulate(grads, *a, g.clone()),
            Op::Tanh(a) => {
                let mut ga = g.clone();
                for (x, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                    *x *= 1.0 - y * y;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                for (x, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                    *x *= y * (1.0 - y);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let mut ga = g.clone();
                for (x, y) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *x *= if *y > 0.0 { 1.0 } else { 0.0 };
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let mut ga = g.clone();
                for (x, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                    *x *= y;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sqrt(a) => {
                // d√x = 1/(2√x)
                let mut ga = g.clone();
                for (x, y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                    *x *= 0.5 / y;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Clamp(a, lo, hi) => {
                let mut ga = g.clone();
                for (x, y) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *x *= if *y >= *lo && *y <= *hi { 1.0 } else { 0.0 };
                }
                self.accumulate(grads, *a, ga);
            }
            Op::AddRow(m, v) => {
                self.accumulate(grads, *m, g.clone());
                if self.nodes[v.0].requires_grad {
                    let c = g.cols();
                    let mut gv = Tensor::zeros(&[1, c]);
                    for i in 0..g.rows() {
                        for (acc, &x) in gv.data_mut().iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    self.accumulate(grads, *v, gv);
                }
            }
            Op::AddCol(m, v) => {
                self.accumulate(grads, *m, g.clone());
                if self.nodes[v.0].requires_grad {
                    let data = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                    let gv = Tensor::from_vec(&[g.rows(), 1], data).expect("sized");
                    self.accumulate(grads, *v, gv);
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let r = g.rows();
                if self.nodes[a.0].requires_grad {
                    let mut data = Vec::with_capacity(r * ca);
                    for i in 0..r {
                        data.extend_from_slice(&g.row(i)[..ca]);
                    }
                    self.accumulate(
                        grads,
                        *a,
                        Tensor::from_vec(&[r, ca], data).expect("sized"),
                    );
                }
                if self.nodes[b.0].requires_grad {
                    let mut data = Vec::with_capacity(r * cb);
                    for i in 0..r {
                        data.extend_from_slice(&g.row(i)[ca..]);
                    }
                    self.accumulate(
                        grads,
                        *b,
                        Tensor::from_vec(&[r, cb], data).expect("sized"),
                    );
                }
            }
            Op::SliceCols(a, start, len) => {
                let va = self.value(*a);
                let mut ga = Tensor::zeros(&[va.rows(), va.cols()]);
                let c = va.cols();
                for i in 0..g.rows() {
                    for j in 0..*len {
                        ga.data_mut()[i * c + start + j] = g.at(i, j);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vr = self.value(p).rows();
                    if self.nodes[p.0].requires_grad {
                        let c = g.cols();
                        let data = g.data()[offset * c..(offset + vr) * c].to_vec();
                        self.accumulate(
                            grads,
                            p,
                            Tensor::from_vec(&[vr, c], data).expect("sized"),
                        );
                    }
                    offset += vr;
                }
            }
            Op::RowSum(a) => {
                let va = self.value(*a);
                let (r, c) = (va.rows(), va.cols());
                let mut ga = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let gi = g.data()[i];
                    for j in 0..c {
                        ga.data_mut()[i * c + j] = gi;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let (r, c) = (va.rows(), va.cols());
                let mut ga = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    for j in 0..c {
                        ga.data_mut()[i * c + j] = g.data()[j] / r as f64;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::MeanAll(a) => {
                let va = self.value(*a);
                let scale = g.item() / va.len() as f64;
                self.accumulate(grads, *a, Tensor::filled(va.shape(), scale));
            }
            Op::SumAll(a) => {
                let va = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(va.shape(), g.item()));
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::RowSelect(table, indices) => {
                let vt = self.value(*table);
                let c = vt.cols();
                let mut gt = Tensor::zeros(&[vt.rows(), c]);
                for (out_row, &src_row) in indices.iter().enumerate() {
                    for j in 0..c {
                        gt.data_mut()[src_row * c + j] += g.at(out_row, j);
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::LogSoftmaxRows(a) => {
                // dx = g − softmax(x) · Σ_row g
                let y = &node.value;
                let (r, c) = (y.rows(), y.cols());
                let mut ga = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let gsum: f64 = g.row(i).iter().sum();
                    for j in 0..c {
                        ga.data_mut()[i * c + j] = g.at(i, j) - y.at(i, j).exp() * gsum;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::PickPerRow(a, cols) => {
                let va = self.value(*a);
                let c = va.cols();
                let mut ga = Tensor::zeros(&[va.rows(), c]);
                for (i, &j) in cols.iter().enumerate() {
                    ga.data_mut()[i * c + j] = g.data()[i];
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Im2Col {
                input,
                width,
                stride,
            } => {
                let v = self.value(*input);
                let (t, c) = (v.rows(), v.cols());
                let t_out = (t - width) / stride + 1;
                let mut ga = Tensor::zeros(&[t, c]);
                for o in 0..t_out {
                    for w in 0..*width {
                        let src = &g.row(o)[w * c..(w + 1) * c];
                        let dst_row = o * stride + w;
                        for j in 0..c {
                            ga.data_mut()[dst_row * c + j] += src[j];
                        }
                    }
                }
                self.accumulate(grads, *input, ga);
            }
        }
    }
}
