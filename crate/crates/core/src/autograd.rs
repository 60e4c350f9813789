//! A small reverse-mode autodiff tape over `f64` matrices.
//!
//! Every value is a 2-D array. Row vectors are `1 x n`, scalars `1 x 1`.
//! Parameters live in a [`ParamSet`] outside the graph; their gradients are
//! accumulated into a matching [`Grads`] by [`Graph::backward`].

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

pub type Tensor = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(
            self.values
                .iter()
                .map(|v| Tensor::zeros(v.raw_dim()))
                .collect(),
        )
    }
}

/// Gradient accumulators aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn zero(&mut self) {
        self.0.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
        frozen: Option<usize>,
    },
    Unfold {
        x: Var,
        width: usize,
    },
    MaxRows {
        x: Var,
        argmax: Vec<usize>,
    },
    SelectRow(Var, usize),
    StackRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    Sum(Vec<Var>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter node holds a value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => op_parents(&op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) * self.value(row);
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Var {
        let out = self.value(a) * &mask;
        self.push(out, Op::MulConst(a, mask))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(out, Op::Gelu(a))
    }

    /// Rows of `table` selected by `ids`. Row `frozen`, if given, receives no gradient.
    pub fn gather(&mut self, table: Var, ids: &[usize], frozen: Option<usize>) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&t.row(id));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                frozen,
            },
        )
    }

    /// Sliding windows over rows: row `t` of the result is rows `t..t+width`
    /// of `x` laid end to end, giving `(T - width + 1) x (width * d)`.
    pub fn unfold(&mut self, x: Var, width: usize) -> Var {
        let v = self.value(x);
        let (t, d) = v.dim();
        assert!(width >= 1 && width <= t, "window {width} over {t} rows");
        let mut out = Tensor::zeros((t - width + 1, width * d));
        for start in 0..=t - width {
            for k in 0..width {
                out.slice_mut(s![start, k * d..(k + 1) * d])
                    .assign(&v.row(start + k));
            }
        }
        self.push(out, Op::Unfold { x, width })
    }

    /// Column-wise maximum over rows, `1 x n`. Ties resolve to the first row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut argmax = vec![0; v.ncols()];
        let mut out = Tensor::zeros((1, v.ncols()));
        for (j, col) in v.columns().into_iter().enumerate() {
            let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
            for (i, &x) in col.iter().enumerate() {
                if x > best {
                    best = x;
                    best_i = i;
                }
            }
            argmax[j] = best_i;
            out[[0, j]] = best;
        }
        self.push(out, Op::MaxRows { x, argmax })
    }

    pub fn select_row(&mut self, x: Var, row: usize) -> Var {
        let out = self.value(x).slice(s![row..row + 1, ..]).to_owned();
        self.push(out, Op::SelectRow(x, row))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let views: Vec<_> = rows.iter().map(|r| self.value(*r).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("rows share a width");
        self.push(out, Op::StackRows(rows.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|r| self.value(*r).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("parts share a height");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(x, start, end))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).t().as_standard_layout().into_owned();
        self.push(out, Op::Transpose(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).as_standard_layout().into_owned();
        out.rows_mut()
            .into_iter()
            .for_each(|mut r| softmax_in_place(r.as_slice_mut().expect("standard layout")));
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x);
        let n = v.ncols() as f64;
        let mut out = v.clone();
        let mut inv_std = Vec::with_capacity(v.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNormRows { x, inv_std })
    }

    /// Mean softmax cross-entropy of `B x C` logits against class targets, `1 x 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.nrows(), targets.len());
        let mut probs = l.as_standard_layout().into_owned();
        let mut loss = 0.0;
        for (mut row, (&t, lrow)) in probs.rows_mut().into_iter().zip(targets.iter().zip(l.rows())) {
            let max = lrow.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + lrow.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - lrow[t];
            softmax_in_place(row.as_slice_mut().unwrap());
        }
        let out = Tensor::from_elem((1, 1), loss / targets.len() as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut out = self.value(parts[0]).clone();
        for p in &parts[1..] {
            out += self.value(*p);
        }
        self.push(out, Op::Sum(parts.to_vec()))
    }

    /// Back-propagates from a `1 x 1` output, adding parameter gradients into `grads`.
    pub fn backward(&self, output: Var, grads: &mut Grads) {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar");
        let mut node_grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        node_grads.resize_with(self.nodes.len(), || None);
        node_grads[output.0] = Some(Tensor::from_elem((1, 1), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = Acc {
                graph: self,
                node_grads: &mut node_grads,
                grads: &mut *grads,
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.0[id.0] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc.add(*a, ga);
                    acc.add(*b, gb);
                }
                Op::Add(a, b) => {
                    acc.add(*b, g.clone());
                    acc.add(*a, g);
                }
                Op::AddRow(a, row) => {
                    acc.add(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc.add(*a, g);
                }
                Op::Mul(a, b) => {
                    acc.add(*a, &g * self.value(*b));
                    acc.add(*b, &g * self.value(*a));
                }
                Op::MulRow(a, row) => {
                    let grow = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc.add(*a, &g * self.value(*row));
                    acc.add(*row, grow);
                }
                Op::Scale(a, f) => acc.add(*a, g * *f),
                Op::MulConst(a, mask) => acc.add(*a, g * mask),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc.add(*a, Zip::from(&g).and(y).map_collect(|g, y| g * y * (1.0 - y)));
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc.add(*a, Zip::from(&g).and(y).map_collect(|g, y| g * (1.0 - y * y)));
                }
                Op::Relu(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc.add(
                        *a,
                        Zip::from(&g)
                            .and(y)
                            .map_collect(|g, y| if *y > 0.0 { *g } else { 0.0 }),
                    );
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    acc.add(*a, Zip::from(&g).and(x).map_collect(|g, x| g * gelu_grad(*x)));
                }
                Op::Gather { table, ids, frozen } => {
                    acc.scatter_rows(*table, ids, *frozen, &g);
                }
                Op::Unfold { x, width } => {
                    let (t, d) = self.value(*x).dim();
                    let mut gx = Tensor::zeros((t, d));
                    for start in 0..g.nrows() {
                        for k in 0..*width {
                            let mut dst = gx.row_mut(start + k);
                            dst += &g.slice(s![start, k * d..(k + 1) * d]);
                        }
                    }
                    acc.add(*x, gx);
                }
                Op::MaxRows { x, argmax } => {
                    let mut gx = Tensor::zeros(self.value(*x).raw_dim());
                    for (j, &i) in argmax.iter().enumerate() {
                        gx[[i, j]] += g[[0, j]];
                    }
                    acc.add(*x, gx);
                }
                Op::SelectRow(x, row) => {
                    let mut gx = Tensor::zeros(self.value(*x).raw_dim());
                    gx.row_mut(*row).assign(&g.row(0));
                    acc.add(*x, gx);
                }
                Op::StackRows(rows) => {
                    let mut offset = 0;
                    for r in rows {
                        let h = self.value(*r).nrows();
                        acc.add(*r, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc.add(*p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let mut gx = Tensor::zeros(self.value(*x).raw_dim());
                    gx.slice_mut(s![.., *start..*end]).assign(&g);
                    acc.add(*x, gx);
                }
                Op::Transpose(x) => acc.add(*x, g.t().as_standard_layout().into_owned()),
                Op::SoftmaxRows(x) => {
                    let y = node.value.as_ref().unwrap();
                    let gy = &g * y;
                    let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc.add(*x, gy - y * &dots);
                }
                Op::LayerNormRows { x, inv_std } => {
                    let xhat = node.value.as_ref().unwrap();
                    let n = xhat.ncols() as f64;
                    let mut gx = Tensor::zeros(xhat.raw_dim());
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let sum_g = gr.sum();
                        let sum_gh = gr.dot(&hr);
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = inv / n * (n * gr[c] - sum_g - hr[c] * sum_gh);
                        }
                    }
                    acc.add(*x, gx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gl[[r, t]] -= 1.0;
                    }
                    acc.add(*logits, gl * scale);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc.add(*p, g.clone());
                    }
                }
            }
        }
    }
}

struct Acc<'a, 'g, 'p> {
    graph: &'g Graph<'p>,
    node_grads: &'a mut Vec<Option<Tensor>>,
    grads: &'a mut Grads,
}

impl Acc<'_, '_, '_> {
    fn add(&mut self, v: Var, g: Tensor) {
        let node = &self.graph.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        if let Op::Param(id) = node.op {
            self.grads.0[id.0] += &g;
            return;
        }
        match &mut self.node_grads[v.0] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn scatter_rows(&mut self, table: Var, ids: &[usize], frozen: Option<usize>, g: &Tensor) {
        let node = &self.graph.nodes[table.0];
        if !node.requires_grad {
            return;
        }
        let target = match node.op {
            Op::Param(id) => &mut self.grads.0[id.0],
            _ => {
                let shape = self.graph.value(table).raw_dim();
                self.node_grads[table.0].get_or_insert_with(|| Tensor::zeros(shape))
            }
        };
        for (i, &id) in ids.iter().enumerate() {
            if Some(id) == frozen {
                continue;
            }
            let mut row = target.row_mut(id);
            row += &g.row(i);
        }
    }
}

fn op_parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::MulRow(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::MulConst(a, _)
        | Op::Sigmoid(a)
        | Op::Tanh(a)
        | Op::Relu(a)
        | Op::Gelu(a)
        | Op::SelectRow(a, _)
        | Op::SliceCols(a, _, _)
        | Op::Transpose(a)
        | Op::SoftmaxRows(a) => vec![*a],
        Op::Gather { table, .. } => vec![*table],
        Op::Unfold { x, .. } | Op::MaxRows { x, .. } | Op::LayerNormRows { x, .. } => vec![*x],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::StackRows(v) | Op::ConcatCols(v) | Op::Sum(v) => v.clone(),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
