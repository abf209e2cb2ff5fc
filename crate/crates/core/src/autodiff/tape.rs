use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_into, Param, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis selector for reductions. `Rows` reduces down each column,
/// `Cols` reduces across each row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Concat { inputs: Vec<Var>, axis: Axis },
    SliceRows { input: Var, start: usize },
    StackRow { inputs: Vec<Var>, row: usize },
    MaskedSoftmax { input: Var, mask: Vec<bool>, axis: Axis },
    Mean { input: Var, axis: Axis, mask: Option<Vec<bool>> },
    Sum(Var),
    Gather { table: Var, ids: Vec<usize> },
    Embedding { param: usize, ids: Vec<usize> },
    Dropout { input: Var, scale: Vec<f64> },
    NegLog { input: Var, index: usize, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a reverse sweep visits each node once. A tape is meant to be
/// built for one batch and dropped after [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when the loss
    /// does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but yields zeros for unreachable values.
    pub fn wrt(&self, tape: &Tape, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let v = tape.value(var);
                Tensor::zeros(v.rows(), v.cols())
            }
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, rows: usize, cols: usize) -> &mut Tensor {
    slot.get_or_insert_with(|| Tensor::zeros(rows, cols))
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf { param: None } };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// A free differentiable leaf, not tied to any parameter slot.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// Copies a parameter onto the tape. `slot` is the parameter's index in
    /// the slice later passed to [`Tape::accumulate_into`].
    pub fn param(&mut self, slot: usize, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Leaf { param: Some(slot) }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(AutodiffError::shape("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let mut out = vec![0.0; av.rows() * bv.cols()];
        matmul_into(av, bv, &mut out);
        let value = Tensor::from_parts(av.rows(), bv.cols(), out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op_name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_parts(av.rows(), av.cols(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row vector to every row of an `r x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(AutodiffError::shape("add_row", format!("{:?} + row {:?}", av.shape(), rv.shape())));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut value = self.value(a).clone();
        value.scale_in_place(factor);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::from_parts(av.rows(), av.cols(), data);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::from_parts(av.rows(), av.cols(), data);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    /// Concatenates along `axis`: `Cols` places inputs side by side (the
    /// last axis), `Rows` stacks them vertically.
    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var, AutodiffError> {
        let first = inputs.first().ok_or_else(|| AutodiffError::shape("concat", "no inputs".into()))?;
        let value = match axis {
            Axis::Cols => {
                let rows = self.value(*first).rows();
                if let Some(bad) = inputs.iter().find(|v| self.value(**v).rows() != rows) {
                    return Err(AutodiffError::shape("concat", format!("row count {} vs {rows}", self.value(*bad).rows())));
                }
                let cols: usize = inputs.iter().map(|v| self.value(*v).cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for v in inputs {
                        data.extend_from_slice(self.value(*v).row(r));
                    }
                }
                Tensor::from_parts(rows, cols, data)
            }
            Axis::Rows => {
                let cols = self.value(*first).cols();
                if let Some(bad) = inputs.iter().find(|v| self.value(**v).cols() != cols) {
                    return Err(AutodiffError::shape("concat", format!("column count {} vs {cols}", self.value(*bad).cols())));
                }
                let rows: usize = inputs.iter().map(|v| self.value(*v).rows()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for v in inputs {
                    data.extend_from_slice(self.value(*v).data());
                }
                Tensor::from_parts(rows, cols, data)
            }
        };
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if len == 0 || start + len > av.rows() {
            return Err(AutodiffError::shape("slice_rows", format!("rows {start}..{} of {}", start + len, av.rows())));
        }
        let cols = av.cols();
        let value = Tensor::from_parts(len, cols, av.data()[start * cols..(start + len) * cols].to_vec());
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SliceRows { input: a, start }, rg))
    }

    /// Builds a matrix whose row `t` is row `row` of `inputs[t]`.
    ///
    /// Used to pull one sample's sequence out of time-major batch states.
    pub fn stack_row(&mut self, inputs: &[Var], row: usize) -> Result<Var, AutodiffError> {
        let first = inputs.first().ok_or_else(|| AutodiffError::shape("stack_row", "no inputs".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::with_capacity(inputs.len() * cols);
        for v in inputs {
            let t = self.value(*v);
            if t.cols() != cols || row >= t.rows() {
                return Err(AutodiffError::shape("stack_row", format!("row {row} of {:?}, expected {cols} columns", t.shape())));
            }
            data.extend_from_slice(t.row(row));
        }
        let value = Tensor::from_parts(inputs.len(), cols, data);
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::StackRow { inputs: inputs.to_vec(), row }, rg))
    }

    /// Softmax over each slice along `axis`, restricted to entries whose
    /// mask is set. Masked entries come out as exact zeros.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool], axis: Axis) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(AutodiffError::shape("masked_softmax", format!("mask of {} for {:?}", mask.len(), av.shape())));
        }
        let mut out = vec![0.0; av.len()];
        for (slice, idx) in slices(av.rows(), av.cols(), axis).enumerate() {
            let max = idx
                .clone()
                .filter(|&i| mask[i])
                .map(|i| av.data()[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(AutodiffError::DegenerateMask { op: "masked_softmax", slice });
            }
            let mut total = 0.0;
            for i in idx.clone() {
                if mask[i] {
                    let e = (av.data()[i] - max).exp();
                    out[i] = e;
                    total += e;
                }
            }
            for i in idx {
                if mask[i] {
                    out[i] /= total;
                }
            }
        }
        let value = Tensor::from_parts(av.rows(), av.cols(), out);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::MaskedSoftmax { input: a, mask: mask.to_vec(), axis }, rg))
    }

    /// Mean along `axis`. With a mask (one flag per reduced index), only the
    /// flagged entries are averaged.
    pub fn mean(&mut self, a: Var, axis: Axis, mask: Option<&[bool]>) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        let reduced = match axis {
            Axis::Rows => av.rows(),
            Axis::Cols => av.cols(),
        };
        if let Some(m) = mask {
            if m.len() != reduced {
                return Err(AutodiffError::shape("mean", format!("mask of {} for {reduced} reduced entries", m.len())));
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let n = (0..reduced).filter(|&i| keep(i)).count();
        if n == 0 {
            return Err(AutodiffError::DegenerateMask { op: "mean", slice: 0 });
        }
        let value = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; av.cols()];
                for r in (0..av.rows()).filter(|&r| keep(r)) {
                    for (o, x) in out.iter_mut().zip(av.row(r)) {
                        *o += x;
                    }
                }
                out.iter_mut().for_each(|o| *o /= n as f64);
                Tensor::from_parts(1, av.cols(), out)
            }
            Axis::Cols => {
                let out = (0..av.rows())
                    .map(|r| av.row(r).iter().enumerate().filter(|(c, _)| keep(*c)).map(|(_, x)| x).sum::<f64>() / n as f64)
                    .collect();
                Tensor::from_parts(av.rows(), 1, out)
            }
        };
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Mean { input: a, axis, mask: mask.map(<[bool]>::to_vec) }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Rows of an on-tape table selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let value = gather(self.value(table), ids)?;
        let rg = self.any_grad(&[table]);
        Ok(self.push(value, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    /// Embedding lookup that reads the table in place instead of copying it
    /// onto the tape. The gradient is scattered into parameter `slot` by
    /// [`Tape::accumulate_into`]; `trainable = false` records a constant.
    pub fn embedding(&mut self, slot: usize, table: &Tensor, ids: &[usize], trainable: bool) -> Result<Var, AutodiffError> {
        let value = gather(table, ids)?;
        Ok(self.push(value, Op::Embedding { param: slot, ids: ids.to_vec() }, trainable))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`.
    /// Outside training, or at rate 0, this returns `a` itself.
    pub fn dropout(&mut self, a: Var, rate: f64, train: bool, seed: u64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let av = self.value(a);
        let scale: Vec<f64> = (0..av.len()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let data = av.data().iter().zip(&scale).map(|(x, s)| x * s).collect();
        let value = Tensor::from_parts(av.rows(), av.cols(), data);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Dropout { input: a, scale }, rg))
    }

    /// `-ln(a[index] + eps)` as a `1 x 1` value; `index` is row-major.
    pub fn neg_log(&mut self, a: Var, index: usize, eps: f64) -> Result<Var, AutodiffError> {
        let av = self.value(a);
        if index >= av.len() {
            return Err(AutodiffError::shape("neg_log", format!("index {index} of {:?}", av.shape())));
        }
        let value = Tensor::scalar(-(av.data()[index] + eps).ln());
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::NegLog { input: a, index, eps }, rg))
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(AutodiffError::NonScalarLoss { rows: lv.rows(), cols: lv.cols() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        // Only inputs that require grad receive contributions.
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let shape_of = |v: Var| {
            let t = &self.nodes[v.0].value;
            (t.rows(), t.cols())
        };
        macro_rules! slot {
            ($v:expr) => {{
                let (r, c) = shape_of($v);
                accumulate(&mut grads[$v.0], r, c)
            }};
        }
        match &node.op {
            Op::Leaf { .. } | Op::Embedding { .. } => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    let bt = bv.transpose();
                    let ga = slot!(*a);
                    matmul_into(g, &bt, ga.data_mut());
                }
                if wants(*b) {
                    let at = av.transpose();
                    let gb = slot!(*b);
                    matmul_into(&at, g, gb.data_mut());
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    slot!(*a).add_assign(&g.transpose());
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    slot!(*a).add_assign(g);
                }
                if wants(*b) {
                    slot!(*b).add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    slot!(*a).add_assign(g);
                }
                if wants(*b) {
                    for (x, gv) in slot!(*b).data_mut().iter_mut().zip(g.data()) {
                        *x -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    for ((x, gv), y) in slot!(*a).data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *x += gv * y;
                    }
                }
                if wants(*b) {
                    for ((x, gv), y) in slot!(*b).data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *x += gv * y;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    slot!(*a).add_assign(g);
                }
                if wants(*row) {
                    let gr = slot!(*row);
                    for r in 0..g.rows() {
                        for (x, gv) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *x += gv;
                        }
                    }
                }
            }
            Op::Scale(a, factor) => {
                if wants(*a) {
                    for (x, gv) in slot!(*a).data_mut().iter_mut().zip(g.data()) {
                        *x += factor * gv;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    for ((x, gv), y) in slot!(*a).data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *x += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    for ((x, gv), y) in slot!(*a).data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *x += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Concat { inputs, axis } => match axis {
                Axis::Cols => {
                    let mut offset = 0;
                    for v in inputs {
                        let w = shape_of(*v).1;
                        if wants(*v) {
                            let gv = slot!(*v);
                            for r in 0..g.rows() {
                                for (x, y) in gv.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                    *x += y;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Axis::Rows => {
                    let mut offset = 0;
                    for v in inputs {
                        let (h, w) = shape_of(*v);
                        if wants(*v) {
                            let src = &g.data()[offset * w..(offset + h) * w];
                            for (x, y) in slot!(*v).data_mut().iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                        offset += h;
                    }
                }
            },
            Op::SliceRows { input, start } => {
                if wants(*input) {
                    let cols = g.cols();
                    let gi = slot!(*input);
                    let dst = &mut gi.data_mut()[start * cols..(start + g.rows()) * cols];
                    for (x, y) in dst.iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
            Op::StackRow { inputs, row } => {
                for (t, v) in inputs.iter().enumerate() {
                    if wants(*v) {
                        for (x, y) in slot!(*v).row_mut(*row).iter_mut().zip(g.row(t)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { input, mask, axis } => {
                if wants(*input) {
                    let y = &node.value;
                    let gi = slot!(*input);
                    for idx in slices(y.rows(), y.cols(), *axis) {
                        let dot: f64 = idx.clone().filter(|&i| mask[i]).map(|i| y.data()[i] * g.data()[i]).sum();
                        for i in idx {
                            if mask[i] {
                                gi.data_mut()[i] += y.data()[i] * (g.data()[i] - dot);
                            }
                        }
                    }
                }
            }
            Op::Mean { input, axis, mask } => {
                if wants(*input) {
                    let (rows, cols) = shape_of(*input);
                    let keep = |i: usize| mask.as_ref().is_none_or(|m| m[i]);
                    let gi = slot!(*input);
                    match axis {
                        Axis::Rows => {
                            let n = (0..rows).filter(|&r| keep(r)).count() as f64;
                            for r in (0..rows).filter(|&r| keep(r)) {
                                for (x, y) in gi.row_mut(r).iter_mut().zip(g.data()) {
                                    *x += y / n;
                                }
                            }
                        }
                        Axis::Cols => {
                            let n = (0..cols).filter(|&c| keep(c)).count() as f64;
                            for r in 0..rows {
                                let gr = g.data()[r];
                                for (c, x) in gi.row_mut(r).iter_mut().enumerate() {
                                    if keep(c) {
                                        *x += gr / n;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let gv = g.item();
                    slot!(*a).data_mut().iter_mut().for_each(|x| *x += gv);
                }
            }
            Op::Gather { table, ids } => {
                if wants(*table) {
                    let gt = slot!(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, y) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Dropout { input, scale } => {
                if wants(*input) {
                    for ((x, gv), s) in slot!(*input).data_mut().iter_mut().zip(g.data()).zip(scale) {
                        *x += gv * s;
                    }
                }
            }
            Op::NegLog { input, index, eps } => {
                if wants(*input) {
                    let x = self.value(*input).data()[*index];
                    slot!(*input).data_mut()[*index] -= g.item() / (x + eps);
                }
            }
        }
    }

    /// Adds the gradients of every parameter leaf and embedding lookup into
    /// `params[slot].grad`. Repeated calls accumulate.
    pub fn accumulate_into(&self, grads: &Gradients, params: &mut [&mut Param]) -> Result<(), AutodiffError> {
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(g) = grads.grads[i].as_ref() else { continue };
            match &node.op {
                Op::Leaf { param: Some(slot) } => {
                    let p = params
                        .get_mut(*slot)
                        .ok_or_else(|| AutodiffError::Contract(format!("no parameter in slot {slot}")))?;
                    same_shape("accumulate", &p.grad, g)?;
                    p.grad.add_assign(g);
                }
                Op::Embedding { param: slot, ids } => {
                    let p = params
                        .get_mut(*slot)
                        .ok_or_else(|| AutodiffError::Contract(format!("no parameter in slot {slot}")))?;
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, y) in p.grad.row_mut(id).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn gather(table: &Tensor, ids: &[usize]) -> Result<Tensor, AutodiffError> {
    if ids.is_empty() {
        return Err(AutodiffError::shape("gather_rows", "no ids".into()));
    }
    let cols = table.cols();
    let mut data = Vec::with_capacity(ids.len() * cols);
    for &id in ids {
        if id >= table.rows() {
            return Err(AutodiffError::shape("gather_rows", format!("row {id} of {}", table.rows())));
        }
        data.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(ids.len(), cols, data))
}

/// Iterator over flat-index ranges of each reduction slice.
fn slices(rows: usize, cols: usize, axis: Axis) -> impl Iterator<Item = SliceIter> {
    let count = match axis {
        Axis::Rows => cols,
        Axis::Cols => rows,
    };
    (0..count).map(move |k| match axis {
        Axis::Rows => SliceIter { next: k, step: cols, remaining: rows },
        Axis::Cols => SliceIter { next: k * cols, step: 1, remaining: cols },
    })
}

#[derive(Clone)]
struct SliceIter {
    next: usize,
    step: usize,
    remaining: usize,
}

impl Iterator for SliceIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        let i = self.next;
        self.next += self.step;
        self.remaining -= 1;
        Some(i)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
