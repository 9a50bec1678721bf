//! Minimal dense tensors with reverse-mode gradient accumulation.
//!
//! A [`Tape`] records every primitive applied during a forward pass; calling
//! [`Tape::backward`] on a scalar loss walks the record in reverse and
//! accumulates adjoints into every tensor registered as a trainable
//! parameter. Gradients for a parameter shared across many time steps sum
//! over all of its uses, which is exactly what unrolled backpropagation
//! through time requires.
//!
//! [`finite_difference_check`] provides the independent verification path:
//! central differences of the same loss, compared coordinate by coordinate
//! against the tape's gradients.

use crate::error::{Error, Result};
use crate::rng::Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Tensor extent: a vector of a given length or a row-major matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Vector(n) => write!(f, "({n})"),
            Shape::Matrix(r, c) => write!(f, "({r}x{c})"),
        }
    }
}

/// Dense double-precision tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::vector(vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Fills with draws from Normal(0, sigma^2).
    pub fn randomize_normal(&mut self, sigma: f64, rng: &mut Rng) {
        for v in &mut self.data {
            *v = rng.normal(0.0, sigma);
        }
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a named trainable tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// The trainable parameters of a model, owned outside any tape so that
/// optimizers can update them between forward/backward passes.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GPC1";

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(tensor);
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

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar coordinates across all tensors.
    pub fn coordinate_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Sum of squares of every trainable coordinate, biases included.
    pub fn sum_squares(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|w| w * w)
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }

    /// Writes a versioned checkpoint of named tensors; round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for (name, tensor) in self.names.iter().zip(&self.values) {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u64).to_le_bytes());
            buf.extend_from_slice(nb);
            match tensor.shape {
                Shape::Vector(n) => {
                    buf.push(1);
                    buf.extend_from_slice(&(n as u64).to_le_bytes());
                }
                Shape::Matrix(r, c) => {
                    buf.push(2);
                    buf.extend_from_slice(&(r as u64).to_le_bytes());
                    buf.extend_from_slice(&(c as u64).to_le_bytes());
                }
            }
            for v in &tensor.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| crate::error::io_err(path, e))?;
        file.write_all(&buf)
            .map_err(|e| crate::error::io_err(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| crate::error::io_err(path, e))?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    row: 0,
                    col: *cursor,
                    msg: "truncated checkpoint".into(),
                });
            }
            let s = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(s)
        };
        let read_u64 = |cursor: &mut usize| -> Result<u64> {
            let s = take(cursor, 8)?;
            Ok(u64::from_le_bytes(s.try_into().unwrap()))
        };
        if take(&mut cursor, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: 0,
                col: 0,
                msg: "bad checkpoint magic".into(),
            });
        }
        let count = read_u64(&mut cursor)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = read_u64(&mut cursor)? as usize;
            let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec()).map_err(|_| {
                Error::Parse {
                    path: path.display().to_string(),
                    row: 0,
                    col: cursor,
                    msg: "invalid utf-8 tensor name".into(),
                }
            })?;
            let tag = take(&mut cursor, 1)?[0];
            let shape = match tag {
                1 => Shape::Vector(read_u64(&mut cursor)? as usize),
                2 => {
                    let r = read_u64(&mut cursor)? as usize;
                    let c = read_u64(&mut cursor)? as usize;
                    Shape::Matrix(r, c)
                }
                _ => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        row: 0,
                        col: cursor,
                        msg: format!("unknown shape tag {tag}"),
                    })
                }
            };
            let mut data = Vec::with_capacity(shape.len());
            for _ in 0..shape.len() {
                let s = take(&mut cursor, 8)?;
                data.push(f64::from_le_bytes(s.try_into().unwrap()));
            }
            set.add(name, Tensor { shape, data });
        }
        Ok(set)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf value: a constant or a mirror of a ParamSet tensor.
    Leaf,
    /// W·x (+ b). W is (d x k), x is a k-vector, b an optional d-vector.
    Affine {
        w: Var,
        x: Var,
        b: Option<Var>,
    },
    Sigmoid(Var),
    Tanh(Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Var, Var),
    Slice {
        src: Var,
        start: usize,
        len: usize,
    },
    Sum(Var),
    /// mean_k |pred_k - target_k| as a scalar.
    MeanAbsError {
        pred: Var,
        target: Var,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every parameter, indexed by
/// [`ParamId`]. Parameters the loss never touched get zero gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_param: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.by_param[id.0]
    }

    pub fn all_finite(&self) -> bool {
        self.by_param.iter().all(Tensor::all_finite)
    }
}

/// Records a forward computation over parameter leaves and constants.
pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, left: Shape, right: Shape) -> Error {
    Error::Shape {
        op,
        left: left.to_string(),
        right: right.to_string(),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar_value(&self, var: Var) -> Result<f64> {
        let t = self.value(var);
        if t.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar node, found shape {}",
                t.shape
            )));
        }
        Ok(t.data[0])
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {:?}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Leaf mirroring a trainable parameter; repeated calls share one node
    /// so gradient contributions from every use accumulate together.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let value = self.params.get(id).clone();
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        let var = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(var);
        var
    }

    /// Constant leaf: inputs, targets, initial states.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let (rows, cols) = match self.value(w).shape {
            Shape::Matrix(r, c) => (r, c),
            s => return Err(shape_err("affine weight", s, self.value(x).shape)),
        };
        let xs = self.value(x).shape;
        if xs.len() != cols {
            return Err(shape_err("affine", Shape::Matrix(rows, cols), xs));
        }
        if let Some(bv) = b {
            let bs = self.value(bv).shape;
            if bs.len() != rows {
                return Err(shape_err("affine bias", Shape::Vector(rows), bs));
            }
        }
        let wt = &self.nodes[w.0].value.data;
        let xt = &self.nodes[x.0].value.data;
        let mut out = match b {
            Some(bv) => self.nodes[bv.0].value.data.clone(),
            None => vec![0.0; rows],
        };
        for r in 0..rows {
            let row = &wt[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(xt.iter()) {
                acc += wv * xv;
            }
            out[r] += acc;
        }
        let req =
            self.requires(w) || self.requires(x) || b.map(|v| self.requires(v)).unwrap_or(false);
        self.push(Op::Affine { w, x, b }, Tensor::vector(out), req)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&v| sigmoid(v)).collect();
        let shape = self.value(a).shape;
        let req = self.requires(a);
        self.push(Op::Sigmoid(a), Tensor { shape, data }, req)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&v| v.tanh()).collect();
        let shape = self.value(a).shape;
        let req = self.requires(a);
        self.push(Op::Tanh(a), Tensor { shape, data }, req)
    }

    fn elementwise_pair(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape, self.value(b).shape);
        if sa.len() != sb.len() {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("hadamard", a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape;
        let req = self.requires(a) || self.requires(b);
        self.push(Op::Hadamard(a, b), Tensor { shape, data }, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("add", a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape;
        let req = self.requires(a) || self.requires(b);
        self.push(Op::Add(a, b), Tensor { shape, data }, req)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair("sub", a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape;
        let req = self.requires(a) || self.requires(b);
        self.push(Op::Sub(a, b), Tensor { shape, data }, req)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&v| v * factor).collect();
        let shape = self.value(a).shape;
        let req = self.requires(a);
        self.push(Op::Scale(a, factor), Tensor { shape, data }, req)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let data = self.value(a).data.iter().map(|&v| v + c).collect();
        let shape = self.value(a).shape;
        let req = self.requires(a);
        self.push(Op::AddScalar(a), Tensor { shape, data }, req)
    }

    /// 1 - a, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut data = self.value(a).data.clone();
        data.extend_from_slice(&self.value(b).data);
        let req = self.requires(a) || self.requires(b);
        self.push(Op::Concat(a, b), Tensor::vector(data), req)
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        if start + len > t.len() {
            return Err(shape_err("slice", t.shape, Shape::Vector(start + len)));
        }
        let data = t.data[start..start + len].to_vec();
        let req = self.requires(src);
        self.push(Op::Slice { src, start, len }, Tensor::vector(data), req)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data.iter().sum();
        let req = self.requires(a);
        self.push(Op::Sum(a), Tensor::scalar(total), req)
    }

    /// Scalar mean absolute error between a prediction and a target.
    pub fn mean_abs_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.elementwise_pair("mean_abs_error", pred, target)?;
        let n = self.value(pred).len() as f64;
        let total: f64 = self
            .value(pred)
            .data
            .iter()
            .zip(&self.value(target).data)
            .map(|(p, t)| (p - t).abs())
            .sum();
        let req = self.requires(pred) || self.requires(target);
        self.push(
            Op::MeanAbsError { pred, target },
            Tensor::scalar(total / n),
            req,
        )
    }

    /// Reverse pass from a scalar loss; accumulates adjoints into every
    /// parameter across all of its uses.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, found shape {}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(out_grad) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(out_grad);
                }
                Op::Affine { w, x, b } => {
                    let (rows, cols) = match self.value(*w).shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    if self.requires(*w) {
                        let xv = &self.nodes[x.0].value.data;
                        let gw = grads[w.0].get_or_insert_with(|| vec![0.0; rows * cols]);
                        for r in 0..rows {
                            let g = out_grad[r];
                            if g != 0.0 {
                                let row = &mut gw[r * cols..(r + 1) * cols];
                                for (slot, xvj) in row.iter_mut().zip(xv.iter()) {
                                    *slot += g * xvj;
                                }
                            }
                        }
                    }
                    if self.requires(*x) {
                        let wv = &self.nodes[w.0].value.data;
                        let gx = grads[x.0].get_or_insert_with(|| vec![0.0; cols]);
                        for r in 0..rows {
                            let g = out_grad[r];
                            if g != 0.0 {
                                let row = &wv[r * cols..(r + 1) * cols];
                                for (slot, wvj) in gx.iter_mut().zip(row.iter()) {
                                    *slot += g * wvj;
                                }
                            }
                        }
                    }
                    if let Some(bv) = b {
                        if self.requires(*bv) {
                            let gb = grads[bv.0].get_or_insert_with(|| vec![0.0; rows]);
                            for (slot, g) in gb.iter_mut().zip(out_grad.iter()) {
                                *slot += g;
                            }
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if self.requires(*a) {
                        let out = &self.nodes[idx].value.data;
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; out.len()]);
                        for ((slot, &y), g) in ga.iter_mut().zip(out.iter()).zip(out_grad.iter()) {
                            *slot += g * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    if self.requires(*a) {
                        let out = &self.nodes[idx].value.data;
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; out.len()]);
                        for ((slot, &y), g) in ga.iter_mut().zip(out.iter()).zip(out_grad.iter()) {
                            *slot += g * (1.0 - y * y);
                        }
                    }
                }
                Op::Hadamard(a, b) => {
                    if self.requires(*a) {
                        let bv = self.nodes[b.0].value.data.clone();
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; bv.len()]);
                        for ((slot, bvj), g) in ga.iter_mut().zip(bv.iter()).zip(out_grad.iter()) {
                            *slot += g * bvj;
                        }
                    }
                    if self.requires(*b) {
                        let av = self.nodes[a.0].value.data.clone();
                        let gb = grads[b.0].get_or_insert_with(|| vec![0.0; av.len()]);
                        for ((slot, avj), g) in gb.iter_mut().zip(av.iter()).zip(out_grad.iter()) {
                            *slot += g * avj;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &side in &[*a, *b] {
                        if self.requires(side) {
                            let gs = grads[side.0].get_or_insert_with(|| vec![0.0; out_grad.len()]);
                            for (slot, g) in gs.iter_mut().zip(out_grad.iter()) {
                                *slot += g;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires(*a) {
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; out_grad.len()]);
                        for (slot, g) in ga.iter_mut().zip(out_grad.iter()) {
                            *slot += g;
                        }
                    }
                    if self.requires(*b) {
                        let gb = grads[b.0].get_or_insert_with(|| vec![0.0; out_grad.len()]);
                        for (slot, g) in gb.iter_mut().zip(out_grad.iter()) {
                            *slot -= g;
                        }
                    }
                }
                Op::Scale(a, factor) => {
                    if self.requires(*a) {
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; out_grad.len()]);
                        for (slot, g) in ga.iter_mut().zip(out_grad.iter()) {
                            *slot += g * factor;
                        }
                    }
                }
                Op::AddScalar(a) => {
                    if self.requires(*a) {
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; out_grad.len()]);
                        for (slot, g) in ga.iter_mut().zip(out_grad.iter()) {
                            *slot += g;
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let la = self.value(*a).len();
                    if self.requires(*a) {
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; la]);
                        for (slot, g) in ga.iter_mut().zip(out_grad[..la].iter()) {
                            *slot += g;
                        }
                    }
                    if self.requires(*b) {
                        let lb = self.value(*b).len();
                        let gb = grads[b.0].get_or_insert_with(|| vec![0.0; lb]);
                        for (slot, g) in gb.iter_mut().zip(out_grad[la..].iter()) {
                            *slot += g;
                        }
                    }
                }
                Op::Slice { src, start, len } => {
                    if self.requires(*src) {
                        let total = self.value(*src).len();
                        let gs = grads[src.0].get_or_insert_with(|| vec![0.0; total]);
                        for (slot, g) in gs[*start..*start + *len].iter_mut().zip(out_grad.iter()) {
                            *slot += g;
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.requires(*a) {
                        let la = self.value(*a).len();
                        let ga = grads[a.0].get_or_insert_with(|| vec![0.0; la]);
                        let g = out_grad[0];
                        for slot in ga.iter_mut() {
                            *slot += g;
                        }
                    }
                }
                Op::MeanAbsError { pred, target } => {
                    let n = self.value(*pred).len() as f64;
                    let g = out_grad[0] / n;
                    let diffs: Vec<f64> = self
                        .value(*pred)
                        .data
                        .iter()
                        .zip(&self.value(*target).data)
                        .map(|(p, t)| sign(p - t))
                        .collect();
                    if self.requires(*pred) {
                        let gp = grads[pred.0].get_or_insert_with(|| vec![0.0; diffs.len()]);
                        for (slot, s) in gp.iter_mut().zip(diffs.iter()) {
                            *slot += g * s;
                        }
                    }
                    if self.requires(*target) {
                        let gt = grads[target.0].get_or_insert_with(|| vec![0.0; diffs.len()]);
                        for (slot, s) in gt.iter_mut().zip(diffs.iter()) {
                            *slot -= g * s;
                        }
                    }
                }
            }
        }

        let mut by_param: Vec<Tensor> = self
            .params
            .ids()
            .map(|id| Tensor::zeros(self.params.get(id).shape))
            .collect();
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = grads[v.0].take() {
                    by_param[pid].data = g;
                }
            }
        }
        let result = Gradients { by_param };
        if !result.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(result)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Affine { .. } => "affine",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Hadamard(_, _) => "hadamard",
        Op::Add(_, _) => "add",
        Op::Sub(_, _) => "sub",
        Op::Scale(_, _) => "scale",
        Op::AddScalar(_) => "add_scalar",
        Op::Concat(_, _) => "concat",
        Op::Slice { .. } => "slice",
        Op::Sum(_) => "sum",
        Op::MeanAbsError { .. } => "mean_abs_error",
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

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Compares tape gradients with central finite differences of the same loss.
///
/// `build` must construct the full forward pass from the current parameter
/// values and return the scalar loss node. It is evaluated twice up front;
/// a value mismatch means the function is not deterministic and the check
/// aborts. Returns the max over coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_difference_check<F>(params: &mut ParamSet, eps: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Contract(format!(
            "central-difference step {eps} outside the double-precision sweet spot [1e-6, 1e-4]"
        )));
    }
    let eval = |params: &ParamSet, build: &mut F| -> Result<f64> {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        tape.scalar_value(loss)
    };

    let base = eval(params, &mut build)?;
    let again = eval(params, &mut build)?;
    if base != again {
        return Err(Error::Contract(
            "loss function is not deterministic; repeated evaluation differs".into(),
        ));
    }

    let analytic = {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };

    let ids: Vec<ParamId> = params.ids().collect();
    let mut max_rel = 0.0f64;
    for id in ids {
        for i in 0..params.get(id).len() {
            let original = params.get(id).data[i];
            params.get_mut(id).data[i] = original + eps;
            let plus = eval(params, &mut build)?;
            params.get_mut(id).data[i] = original - eps;
            let minus = eval(params, &mut build)?;
            params.get_mut(id).data[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data[i];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
