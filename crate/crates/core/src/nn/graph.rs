//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and enough bookkeeping to push gradients back to its parents. Nodes that
//! do not depend on any gradient-requiring leaf are skipped during the
//! backward sweep, so constants (frozen parameters, data) cost nothing and
//! receive no gradient at all.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct LstmCache {
    batch: usize,
    hidden: usize,
    // post-activation gates [i | f | g | o], one block of `batch` rows per step
    gates: Array2<f64>,
    cells: Array2<f64>,
    cells_tanh: Array2<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    ScaleVar(usize, usize),
    ShiftVar(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Exp(usize),
    Log(usize),
    Recip(usize),
    Softmax(usize),
    LogSoftmax(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Gather { parent: usize, width: usize, index: Vec<Option<usize>> },
    Pick(usize, Vec<usize>),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    SumCols(usize),
    RowNorm(usize),
    Grl(usize),
    Reshape(usize),
    Clamp(usize, f64, f64),
    Lstm { x: usize, w_ih: usize, w_hh: usize, bias: usize, cache: Box<LstmCache> },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// `None` when no path connects `var` to the loss.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like `like` when there is none.
    pub fn get_or_zeros(&self, var: Var, like: (usize, usize)) -> Array2<f64> {
        self.get(var).cloned().unwrap_or_else(|| Array2::zeros(like))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

fn log_softmax_rows(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
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

    fn push(&mut self, value: Array2<f64>, op: Op, parents: &[usize]) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar_value on non-scalar node");
        val[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, i: usize) -> &Array2<f64> {
        &self.nodes[i].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a.0).dot(self.val(b.0));
        self.push(value, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.val(a.0).dot(&self.val(b.0).t());
        self.push(value, Op::MatMulT(a.0, b.0), &[a.0, b.0])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.val(a.0).t().to_owned();
        self.push(value, Op::Transpose(a.0), &[a.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.val(a.0) + self.val(b.0);
        self.push(value, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.val(a.0) - self.val(b.0);
        self.push(value, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.val(a.0) * self.val(b.0);
        self.push(value, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    /// Adds a `1 × D` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "add_row: bias shape");
        let value = self.val(a.0) + self.val(row.0);
        self.push(value, Op::AddRow(a.0, row.0), &[a.0, row.0])
    }

    /// Multiplies row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (t, _) = self.shape(a);
        assert_eq!(self.shape(col), (t, 1), "mul_col: column shape");
        let value = self.val(a.0) * self.val(col.0);
        self.push(value, Op::MulCol(a.0, col.0), &[a.0, col.0])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.val(a.0) * c;
        self.push(value, Op::Scale(a.0, c), &[a.0])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let value = self.val(a.0) + c;
        self.push(value, Op::Shift(a.0), &[a.0])
    }

    /// `s · a` for a learnable `1 × 1` scalar `s`.
    pub fn scale_var(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1));
        let k = self.val(s.0)[[0, 0]];
        let value = self.val(a.0) * k;
        self.push(value, Op::ScaleVar(a.0, s.0), &[a.0, s.0])
    }

    /// `a + s` for a learnable `1 × 1` scalar `s`.
    pub fn shift_var(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1));
        let k = self.val(s.0)[[0, 0]];
        let value = self.val(a.0) + k;
        self.push(value, Op::ShiftVar(a.0, s.0), &[a.0, s.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.val(a.0).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a.0), &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.val(a.0).mapv(f64::tanh);
        self.push(value, Op::Tanh(a.0), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.val(a.0).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(a.0), &[a.0])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.val(a.0).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(a.0, slope), &[a.0])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.val(a.0).mapv(f64::exp);
        self.push(value, Op::Exp(a.0), &[a.0])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.val(a.0).mapv(f64::ln);
        self.push(value, Op::Log(a.0), &[a.0])
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.val(a.0).mapv(|v| 1.0 / v);
        self.push(value, Op::Recip(a.0), &[a.0])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.val(a.0));
        self.push(value, Op::Softmax(a.0), &[a.0])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.val(a.0));
        self.push(value, Op::LogSoftmax(a.0), &[a.0])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.val(p.0).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(value, Op::ConcatCols(idx.clone()), &idx)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.val(p.0).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: col mismatch");
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(value, Op::ConcatRows(idx.clone()), &idx)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.val(a.0).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows(a.0, start), &[a.0])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.val(a.0).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols(a.0, start), &[a.0])
    }

    /// Builds each output row by concatenating `width` rows of `a` chosen by
    /// `index` (row-major, `width` entries per output row); `None` inserts a
    /// zero row. Convolution unfolding, duration expansion and crop padding
    /// are all expressed through this op.
    pub fn gather(&mut self, a: Var, width: usize, index: Vec<Option<usize>>) -> Var {
        assert!(width > 0 && index.len() % width == 0, "gather: bad index length");
        let src = self.val(a.0);
        let cols = src.ncols();
        let rows = index.len() / width;
        let mut value = Array2::zeros((rows, width * cols));
        for r in 0..rows {
            for j in 0..width {
                if let Some(i) = index[r * width + j] {
                    value.slice_mut(s![r, j * cols..(j + 1) * cols]).assign(&src.row(i));
                }
            }
        }
        self.push(value, Op::Gather { parent: a.0, width, index }, &[a.0])
    }

    /// `out[i] = a[i, index[i]]`, shaped `T × 1`.
    pub fn pick(&mut self, a: Var, index: Vec<usize>) -> Var {
        let src = self.val(a.0);
        assert_eq!(src.nrows(), index.len(), "pick: one index per row");
        let value = Array2::from_shape_fn((index.len(), 1), |(i, _)| src[[i, index[i]]]);
        self.push(value, Op::Pick(a.0, index), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.val(a.0).sum());
        self.push(value, Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.val(a.0);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(value, Op::Mean(a.0), &[a.0])
    }

    /// Column sums, `1 × D`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.val(a.0).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumRows(a.0), &[a.0])
    }

    /// Row sums, `T × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.val(a.0).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a.0), &[a.0])
    }

    /// Euclidean norm of every row, `T × 1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let value = self
            .val(a.0)
            .map_axis(Axis(1), |r| r.dot(&r).sqrt())
            .insert_axis(Axis(1));
        self.push(value, Op::RowNorm(a.0), &[a.0])
    }

    /// Scales every row of `a` to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let n = self.row_norm(a);
        let inv = self.recip(n);
        self.mul_col(a, inv)
    }

    /// Gradient reversal: identity on the forward pass, negated gradient on
    /// the backward pass.
    pub fn grl(&mut self, a: Var) -> Var {
        let value = self.val(a.0).clone();
        self.push(value, Op::Grl(a.0), &[a.0])
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.val(a.0);
        assert_eq!(src.len(), rows * cols, "reshape: element count");
        let flat: Vec<f64> = src.iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("reshape");
        self.push(value, Op::Reshape(a.0), &[a.0])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.val(a.0).mapv(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(a.0, lo, hi), &[a.0])
    }

    /// One unidirectional LSTM layer over a time-major sequence.
    ///
    /// `x` is `(steps·batch) × input`, rows `t·batch .. (t+1)·batch` holding
    /// step `t`. `w_ih` is `input × 4H`, `w_hh` is `H × 4H`, `bias` is
    /// `1 × 4H`, gates ordered input, forget, cell, output. Returns every
    /// hidden state in the same layout. Initial state is zero.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, batch: usize) -> Var {
        let xv = self.val(x.0);
        let wih = self.val(w_ih.0);
        let whh = self.val(w_hh.0);
        let hidden = whh.nrows();
        assert_eq!(whh.ncols(), 4 * hidden, "lstm: w_hh shape");
        assert_eq!(wih.dim(), (xv.ncols(), 4 * hidden), "lstm: w_ih shape");
        assert_eq!(self.val(bias.0).dim(), (1, 4 * hidden), "lstm: bias shape");
        assert!(batch > 0 && xv.nrows() % batch == 0, "lstm: rows not a multiple of batch");
        let steps = xv.nrows() / batch;

        let mut pre = xv.dot(wih) + self.val(bias.0);
        let mut cells = Array2::zeros((steps * batch, hidden));
        let mut cells_tanh = Array2::zeros((steps * batch, hidden));
        let mut out = Array2::zeros((steps * batch, hidden));
        let mut h_prev = Array2::<f64>::zeros((batch, hidden));
        let mut c_prev = Array2::<f64>::zeros((batch, hidden));
        for t in 0..steps {
            let rows = t * batch..(t + 1) * batch;
            let rec = h_prev.dot(whh);
            let mut gates = pre.slice_mut(s![rows.clone(), ..]);
            gates += &rec;
            gates.slice_mut(s![.., 0..2 * hidden]).mapv_inplace(sigmoid);
            gates.slice_mut(s![.., 2 * hidden..3 * hidden]).mapv_inplace(f64::tanh);
            gates.slice_mut(s![.., 3 * hidden..]).mapv_inplace(sigmoid);
            let i = gates.slice(s![.., 0..hidden]);
            let f = gates.slice(s![.., hidden..2 * hidden]);
            let g = gates.slice(s![.., 2 * hidden..3 * hidden]);
            let o = gates.slice(s![.., 3 * hidden..]);
            let c = &f * &c_prev + &i * &g;
            let ct = c.mapv(f64::tanh);
            let h = &o * &ct;
            cells.slice_mut(s![rows.clone(), ..]).assign(&c);
            cells_tanh.slice_mut(s![rows.clone(), ..]).assign(&ct);
            out.slice_mut(s![rows, ..]).assign(&h);
            h_prev = h;
            c_prev = c;
        }
        let cache = Box::new(LstmCache { batch, hidden, gates: pre, cells, cells_tanh });
        self.push(
            out,
            Op::Lstm { x: x.0, w_ih: w_ih.0, w_hh: w_hh.0, bias: bias.0, cache },
            &[x.0, w_ih.0, w_hh.0, bias.0],
        )
    }

    /// Backpropagates from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<Array2<f64>>], i: usize, g: Array2<f64>) {
        if !self.nodes[i].requires_grad {
            return;
        }
        match &mut grads[i] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn accum_with<F>(&self, grads: &mut [Option<Array2<f64>>], i: usize, f: F)
    where
        F: FnOnce(&mut Array2<f64>),
    {
        if !self.nodes[i].requires_grad {
            return;
        }
        let acc = grads[i].get_or_insert_with(|| Array2::zeros(self.nodes[i].value.dim()));
        f(acc);
    }

    fn backprop_node(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].requires_grad {
                    self.accum(grads, *a, g.dot(&self.val(*b).t()));
                }
                if self.nodes[*b].requires_grad {
                    self.accum(grads, *b, self.val(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.nodes[*a].requires_grad {
                    self.accum(grads, *a, g.dot(self.val(*b)));
                }
                if self.nodes[*b].requires_grad {
                    self.accum(grads, *b, g.t().dot(self.val(*a)));
                }
            }
            Op::Transpose(a) => self.accum(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.nodes[*a].requires_grad {
                    self.accum(grads, *a, g * self.val(*b));
                }
                if self.nodes[*b].requires_grad {
                    self.accum(grads, *b, g * self.val(*a));
                }
            }
            Op::AddRow(a, r) => {
                self.accum(grads, *a, g.clone());
                if self.nodes[*r].requires_grad {
                    self.accum(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulCol(a, c) => {
                if self.nodes[*a].requires_grad {
                    self.accum(grads, *a, g * self.val(*c));
                }
                if self.nodes[*c].requires_grad {
                    let gc = (g * self.val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accum(grads, *c, gc);
                }
            }
            Op::Scale(a, c) => self.accum(grads, *a, g * *c),
            Op::Shift(a) => self.accum(grads, *a, g.clone()),
            Op::ScaleVar(a, s) => {
                let k = self.val(*s)[[0, 0]];
                if self.nodes[*a].requires_grad {
                    self.accum(grads, *a, g * k);
                }
                if self.nodes[*s].requires_grad {
                    let gs = (g * self.val(*a)).sum();
                    self.accum(grads, *s, Array2::from_elem((1, 1), gs));
                }
            }
            Op::ShiftVar(a, s) => {
                self.accum(grads, *a, g.clone());
                if self.nodes[*s].requires_grad {
                    self.accum(grads, *s, Array2::from_elem((1, 1), g.sum()));
                }
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= y * (1.0 - y));
                self.accum(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(y).for_each(|d, &y| *d *= 1.0 - y * y);
                self.accum(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                self.accum(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= slope
                    }
                });
                self.accum(grads, *a, d);
            }
            Op::Exp(a) => self.accum(grads, *a, g * y),
            Op::Log(a) => self.accum(grads, *a, g / self.val(*a)),
            Op::Recip(a) => self.accum(grads, *a, -(g * y * y)),
            Op::Softmax(a) => {
                let dot = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                self.accum(grads, *a, y * &(g - &dot));
            }
            Op::LogSoftmax(a) => {
                let total = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                let soft = y.mapv(f64::exp);
                self.accum(grads, *a, g - &(soft * &total));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.val(p).ncols();
                    if self.nodes[p].requires_grad {
                        self.accum(grads, p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = self.val(p).nrows();
                    if self.nodes[p].requires_grad {
                        self.accum(grads, p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::SliceRows(a, start) => {
                let n = g.nrows();
                self.accum_with(grads, *a, |acc| {
                    let mut dst = acc.slice_mut(s![*start..*start + n, ..]);
                    dst += g;
                });
            }
            Op::SliceCols(a, start) => {
                let n = g.ncols();
                self.accum_with(grads, *a, |acc| {
                    let mut dst = acc.slice_mut(s![.., *start..*start + n]);
                    dst += g;
                });
            }
            Op::Gather { parent, width, index } => {
                let cols = self.val(*parent).ncols();
                self.accum_with(grads, *parent, |acc| {
                    for (k, entry) in index.iter().enumerate() {
                        if let Some(src) = entry {
                            let (r, j) = (k / width, k % width);
                            let mut dst = acc.row_mut(*src);
                            dst += &g.slice(s![r, j * cols..(j + 1) * cols]);
                        }
                    }
                });
            }
            Op::Pick(a, index) => {
                self.accum_with(grads, *a, |acc| {
                    for (r, &c) in index.iter().enumerate() {
                        acc[[r, c]] += g[[r, 0]];
                    }
                });
            }
            Op::Sum(a) => {
                let shape = self.val(*a).dim();
                self.accum(grads, *a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::Mean(a) => {
                let shape = self.val(*a).dim();
                let n = (shape.0 * shape.1) as f64;
                self.accum(grads, *a, Array2::from_elem(shape, g[[0, 0]] / n));
            }
            Op::SumRows(a) => {
                let shape = self.val(*a).dim();
                let d = g.broadcast(shape).expect("sum_rows broadcast").to_owned();
                self.accum(grads, *a, d);
            }
            Op::SumCols(a) => {
                let shape = self.val(*a).dim();
                let d = g.broadcast(shape).expect("sum_cols broadcast").to_owned();
                self.accum(grads, *a, d);
            }
            Op::RowNorm(a) => {
                let x = self.val(*a);
                let mut d = x.clone();
                for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                    let n = y[[r, 0]];
                    let k = if n > 0.0 { g[[r, 0]] / n } else { 0.0 };
                    row.mapv_inplace(|v| v * k);
                }
                self.accum(grads, *a, d);
            }
            Op::Grl(a) => self.accum(grads, *a, -g),
            Op::Reshape(a) => {
                let shape = self.val(*a).dim();
                let flat: Vec<f64> = g.iter().copied().collect();
                self.accum(grads, *a, Array2::from_shape_vec(shape, flat).expect("reshape grad"));
            }
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.val(*a)).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0
                    }
                });
                self.accum(grads, *a, d);
            }
            Op::Lstm { x, w_ih, w_hh, bias, cache } => {
                self.backprop_lstm(i, g, grads, [*x, *w_ih, *w_hh, *bias], cache);
            }
        }
    }

    fn backprop_lstm(
        &self,
        node: usize,
        g: &Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
        [x, w_ih, w_hh, bias]: [usize; 4],
        cache: &LstmCache,
    ) {
        let LstmCache { batch, hidden, gates, cells, cells_tanh } = cache;
        let (batch, hd) = (*batch, *hidden);
        let out = &self.nodes[node].value;
        let whh = self.val(w_hh);
        let steps = out.nrows() / batch;

        let mut d_pre = Array2::<f64>::zeros(gates.dim());
        let mut dh_next = Array2::<f64>::zeros((batch, hd));
        let mut dc_next = Array2::<f64>::zeros((batch, hd));
        for t in (0..steps).rev() {
            let rows = t * batch..(t + 1) * batch;
            let gt = gates.slice(s![rows.clone(), ..]);
            let (gi, gf) = (gt.slice(s![.., 0..hd]), gt.slice(s![.., hd..2 * hd]));
            let (gg, go) = (gt.slice(s![.., 2 * hd..3 * hd]), gt.slice(s![.., 3 * hd..]));
            let ct = cells_tanh.slice(s![rows.clone(), ..]);
            let dh = &g.slice(s![rows.clone(), ..]) + &dh_next;
            let d_o = &dh * &ct;
            let dc = &dh * &go * &ct.mapv(|v| 1.0 - v * v) + &dc_next;
            let c_prev = if t > 0 {
                cells.slice(s![(t - 1) * batch..t * batch, ..]).to_owned()
            } else {
                Array2::zeros((batch, hd))
            };
            let di = &dc * &gg;
            let dg = &dc * &gi;
            let df = &dc * &c_prev;
            dc_next = &dc * &gf;

            let mut dp = d_pre.slice_mut(s![rows, ..]);
            Zip::from(dp.slice_mut(s![.., 0..hd])).and(&di).and(&gi).for_each(|d, &a, &s| {
                *d = a * s * (1.0 - s)
            });
            Zip::from(dp.slice_mut(s![.., hd..2 * hd])).and(&df).and(&gf).for_each(|d, &a, &s| {
                *d = a * s * (1.0 - s)
            });
            Zip::from(dp.slice_mut(s![.., 2 * hd..3 * hd])).and(&dg).and(&gg).for_each(
                |d, &a, &s| *d = a * (1.0 - s * s),
            );
            Zip::from(dp.slice_mut(s![.., 3 * hd..])).and(&d_o).and(&go).for_each(|d, &a, &s| {
                *d = a * s * (1.0 - s)
            });
            dh_next = dp.dot(&whh.t());
        }

        if self.nodes[w_hh].requires_grad && steps > 1 {
            let prev = out.slice(s![0..(steps - 1) * batch, ..]);
            let later = d_pre.slice(s![batch.., ..]);
            self.accum(grads, w_hh, prev.t().dot(&later));
        }
        if self.nodes[bias].requires_grad {
            self.accum(grads, bias, d_pre.sum_axis(Axis(0)).insert_axis(Axis(0)));
        }
        if self.nodes[w_ih].requires_grad {
            self.accum(grads, w_ih, self.val(x).t().dot(&d_pre));
        }
        if self.nodes[x].requires_grad {
            self.accum(grads, x, d_pre.dot(&self.val(w_ih).t()));
        }
    }
}
