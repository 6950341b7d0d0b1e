//! Dense row-major `f64` tensors of rank 0, 1 or 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a tensor. Rank 0 is a scalar (`[]`).
pub type Shape = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::Shape(format!("rank {} tensors are not supported", shape.len())));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Matrix view: scalars are `1x1`, vectors are single rows.
    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.dims2();
        self.data[row * c + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Nested-array form used by checkpoints.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value;
        match self.rank() {
            0 => Value::from(self.data[0]),
            1 => Value::from(self.data.clone()),
            _ => {
                let (r, _) = self.dims2();
                Value::Array((0..r).map(|i| Value::from(self.row(i).to_vec())).collect())
            }
        }
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Tensor> {
        use serde_json::Value;
        let num = |v: &Value| v.as_f64().ok_or_else(|| Error::Parse(format!("expected number, got {v}")));
        match value {
            Value::Number(_) => Ok(Tensor::scalar(num(value)?)),
            Value::Array(items) if items.iter().all(Value::is_array) && !items.is_empty() => {
                let rows = items
                    .iter()
                    .map(|row| row.as_array().unwrap().iter().map(num).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                Tensor::from_rows(&rows)
            }
            Value::Array(items) => Ok(Tensor::vector(items.iter().map(num).collect::<Result<_>>()?)),
            other => Err(Error::Parse(format!("expected nested array, got {other}"))),
        }
    }
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[0], shape[1]),
    }
}

/// Result shape of an elementwise binary op, allowing size-1 broadcasting.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Shape> {
    if a == b {
        return Ok(a.to_vec());
    }
    if a.is_empty() {
        return Ok(b.to_vec());
    }
    if b.is_empty() {
        return Ok(a.to_vec());
    }
    let (ar, ac) = dims2(a);
    let (br, bc) = dims2(b);
    let dim = |x: usize, y: usize| -> Result<usize> {
        match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
        }
    };
    let rows = dim(ar, br)?;
    let cols = dim(ac, bc)?;
    if a.len() == 1 && b.len() == 1 {
        return Ok(vec![cols]);
    }
    Ok(vec![rows, cols])
}

/// Elementwise combine with broadcasting into `out_shape`.
pub(crate) fn zip_broadcast(a: &Tensor, b: &Tensor, out_shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Tensor { shape: out_shape.to_vec(), data };
    }
    let (r, c) = dims2(out_shape);
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let ai = if ar == 1 { 0 } else { i };
        let bi = if br == 1 { 0 } else { i };
        for j in 0..c {
            let x = a.data[ai * ac + if ac == 1 { 0 } else { j }];
            let y = b.data[bi * bc + if bc == 1 { 0 } else { j }];
            data.push(f(x, y));
        }
    }
    Tensor { shape: out_shape.to_vec(), data }
}

/// Sum a tensor down to `target` shape (inverse of broadcasting).
pub(crate) fn sum_to(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    if x.shape == target {
        return Ok(x.clone());
    }
    if target.is_empty() {
        return Ok(Tensor::scalar(x.data.iter().sum()));
    }
    let (r, c) = x.dims2();
    let (tr, tc) = dims2(target);
    if (tr != r && tr != 1) || (tc != c && tc != 1) {
        return Err(Error::Shape(format!("cannot sum {:?} to {:?}", x.shape, target)));
    }
    let mut out = vec![0.0; tr * tc];
    for i in 0..r {
        let oi = if tr == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if tc == 1 { 0 } else { j };
            out[oi * tc + oj] += x.data[i * c + j];
        }
    }
    Tensor::new(target, out)
}

/// Broadcast `x` up to `target` shape.
pub(crate) fn expand(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    let out = broadcast_shape(&x.shape, target)?;
    if out != target {
        return Err(Error::Shape(format!("cannot expand {:?} to {:?}", x.shape, target)));
    }
    let zero = Tensor::zeros(target);
    Ok(zip_broadcast(x, &zero, target, |a, _| a))
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!("matmul needs rank-2 operands, got {:?} and {:?}", a.shape, b.shape)));
    }
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    if k != k2 {
        return Err(Error::Shape(format!("matmul inner dims differ: {:?} x {:?}", a.shape, b.shape)));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

pub(crate) fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::Shape(format!("transpose needs rank 2, got {:?}", a.shape)));
    }
    let (r, c) = a.dims2();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data[i * c + j];
        }
    }
    Tensor::matrix(c, r, out)
}
