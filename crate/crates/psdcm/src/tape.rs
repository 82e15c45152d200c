//! Reverse-mode automatic differentiation over dense row-major matrices.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TapeError {
    #[error("backward already ran on this tape; reset it first")]
    AlreadyBackpropagated,
    #[error("loss must be a 1x1 value, got {0}x{1}")]
    NotScalar(usize, usize),
    #[error("variable {0} does not belong to this tape")]
    ForeignVar(usize),
}

/// Dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Mat {
        Mat::from_vec(1, 1, vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a (r×k) · b (k×c)`.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let s = a.data[i * a.cols + k];
            if s == 0.0 {
                continue;
            }
            for (o, bv) in o.iter_mut().zip(b.row(k)) {
                *o += s * bv;
            }
        }
    }
    out
}

/// `aᵀ · b`.
fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows);
    let mut out = Mat::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let br = b.row(r);
        for i in 0..a.cols {
            let s = a.data[r * a.cols + i];
            if s == 0.0 {
                continue;
            }
            for (o, bv) in out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(br) {
                *o += s * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`.
fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols);
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

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
    /// Adds a 1×c row to every row.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    /// Column-wise max over rows; stores the winning row per column.
    MaxRows(Var, Vec<usize>),
    /// Repeats a 1×c row `n` times.
    Broadcast(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    /// Output row `i` is input row `idx[i]`.
    Gather(Var, Vec<usize>),
    /// Euclidean norm of each row, as a column.
    RowNorm(Var),
    /// Each row repeated `factor` times.
    RepeatRows(Var, usize),
    Sum(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Records operations for one forward pass; gradients come from [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients indexed by tape variable.
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when `v` is unused.
    pub fn get_or_zero(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((1, x.cols), r.shape(), "row broadcast shape");
        let mut v = x.clone();
        for chunk in v.data.chunks_mut(x.cols) {
            for (o, b) in chunk.iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        self.push(v, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|p| f(*p)).collect());
        self.push(v, op)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |p| k * p, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |p| p + k, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |p| 1.0 / (1.0 + (-p).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |p| p * p, Op::Square(a))
    }

    pub fn max_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut arg = vec![0usize; x.cols];
        let mut v = Mat::from_vec(1, x.cols, x.row(0).to_vec());
        for r in 1..x.rows {
            for (c, val) in x.row(r).iter().enumerate() {
                if *val > v.data[c] {
                    v.data[c] = *val;
                    arg[c] = r;
                }
            }
        }
        self.push(v, Op::MaxRows(a, arg))
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, 1, "broadcast needs a single row");
        let mut data = Vec::with_capacity(n * x.cols);
        for _ in 0..n {
            data.extend_from_slice(&x.data);
        }
        let v = Mat::from_vec(n, x.cols, data);
        self.push(v, Op::Broadcast(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows, rows, "concat_cols row count");
                v.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols, cols, "concat_rows column count");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(x.rows * len);
        for r in 0..x.rows {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let v = Mat::from_vec(x.rows, len, data);
        self.push(v, Op::SliceCols(a, start))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows, "slice_rows out of range");
        let v = Mat::from_vec(
            len,
            x.cols,
            x.data[start * x.cols..(start + len) * x.cols].to_vec(),
        );
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows * x.cols, rows * cols, "reshape size");
        let v = Mat::from_vec(rows, cols, x.data.clone());
        self.push(v, Op::Reshape(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let v = Mat::from_vec(idx.len(), x.cols, data);
        self.push(v, Op::Gather(a, idx.to_vec()))
    }

    pub fn row_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows)
            .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let v = Mat::from_vec(x.rows, 1, data);
        self.push(v, Op::RowNorm(a))
    }

    /// Each row repeated `factor` times in place: row `i` becomes rows `i*factor..(i+1)*factor`.
    pub fn repeat_rows(&mut self, a: Var, factor: usize) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(x.rows * factor * x.cols);
        for r in 0..x.rows {
            for _ in 0..factor {
                data.extend_from_slice(x.row(r));
            }
        }
        let v = Mat::from_vec(x.rows * factor, x.cols, data);
        self.push(v, Op::RepeatRows(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Mat::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).data.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse sweep from a scalar. A tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Grads, TapeError> {
        if self.consumed {
            return Err(TapeError::AlreadyBackpropagated);
        }
        if loss.0 >= self.nodes.len() {
            return Err(TapeError::ForeignVar(loss.0));
        }
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TapeError::NotScalar(shape.0, shape.1));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = &node.value;
            let mut acc = |v: Var, d: Mat| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            let elementwise = |x: &Mat, f: &dyn Fn(usize, f64) -> f64| {
                Mat::from_vec(
                    x.rows,
                    x.cols,
                    g.data.iter().enumerate().map(|(k, gv)| f(k, *gv)).collect(),
                )
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, matmul_nt(&g, bv));
                    acc(*b, matmul_tn(av, &g));
                }
                Op::AddRow(a, row) => {
                    let mut r = Mat::zeros(1, g.cols);
                    for chunk in g.data.chunks(g.cols) {
                        for (o, v) in r.data.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    acc(*row, r);
                    acc(*a, g.clone());
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*b, elementwise(&g, &|_, gv| -gv));
                    acc(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, elementwise(&g, &|k, gv| gv * bv.data[k]));
                    acc(*b, elementwise(&g, &|k, gv| gv * av.data[k]));
                }
                Op::Scale(a, k) => acc(*a, elementwise(&g, &|_, gv| gv * k)),
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::Tanh(a) => acc(
                    *a,
                    elementwise(&g, &|k, gv| gv * (1.0 - val.data[k] * val.data[k])),
                ),
                Op::Sigmoid(a) => acc(
                    *a,
                    elementwise(&g, &|k, gv| gv * val.data[k] * (1.0 - val.data[k])),
                ),
                Op::Exp(a) => acc(*a, elementwise(&g, &|k, gv| gv * val.data[k])),
                Op::Abs(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(*a, elementwise(&g, &|k, gv| gv * sign(x.data[k])));
                }
                Op::Square(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(*a, elementwise(&g, &|k, gv| 2.0 * gv * x.data[k]));
                }
                Op::MaxRows(a, arg) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for (c, &r) in arg.iter().enumerate() {
                        d.data[r * x.cols + c] = g.data[c];
                    }
                    acc(*a, d);
                }
                Op::Broadcast(a) => {
                    let mut r = Mat::zeros(1, g.cols);
                    for chunk in g.data.chunks(g.cols) {
                        for (o, v) in r.data.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    acc(*a, r);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.nodes[p.0].value.cols;
                        let mut d = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            d.data[r * cols..(r + 1) * cols]
                                .copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        acc(*p, d);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.data.len();
                        let shape = self.nodes[p.0].value.shape();
                        acc(
                            *p,
                            Mat::from_vec(shape.0, shape.1, g.data[off..off + n].to_vec()),
                        );
                        off += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        d.data[r * x.cols + start..r * x.cols + start + g.cols]
                            .copy_from_slice(g.row(r));
                    }
                    acc(*a, d);
                }
                Op::SliceRows(a, start) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = Mat::zeros(x.rows, x.cols);
                    d.data[start * x.cols..start * x.cols + g.data.len()].copy_from_slice(&g.data);
                    acc(*a, d);
                }
                Op::Reshape(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(*a, Mat::from_vec(x.rows, x.cols, g.data.clone()));
                }
                Op::Gather(a, idx) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for (i, &src) in idx.iter().enumerate() {
                        for c in 0..x.cols {
                            d.data[src * x.cols + c] += g.data[i * x.cols + c];
                        }
                    }
                    acc(*a, d);
                }
                Op::RowNorm(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let n = val.data[r];
                        if n > 0.0 {
                            for c in 0..x.cols {
                                d.data[r * x.cols + c] = g.data[r] * x.data[r * x.cols + c] / n;
                            }
                        }
                    }
                    acc(*a, d);
                }
                Op::RepeatRows(a, factor) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = Mat::zeros(x.rows, x.cols);
                    for r in 0..g.rows {
                        let src = r / factor;
                        for c in 0..x.cols {
                            d.data[src * x.cols + c] += g.data[r * x.cols + c];
                        }
                    }
                    acc(*a, d);
                }
                Op::Sum(a) => {
                    let x = &self.nodes[a.0].value;
                    acc(
                        *a,
                        Mat::from_vec(x.rows, x.cols, vec![g.data[0]; x.data.len()]),
                    );
                }
            }
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
