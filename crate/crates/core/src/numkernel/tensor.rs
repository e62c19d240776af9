//! Dense row-major `f64` tensors and the plain kernels shared by the
//! differentiable graph and by tape-free inference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent when viewed as a matrix; rank-1 tensors are a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// First entry; the value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Rows gathered by index, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor {
            shape: vec![idx.len(), c],
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Little-endian byte image of the values.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(())
}

fn row_vector(op: &'static str, a: &Tensor, v: &Tensor) -> Result<()> {
    if v.rows() != 1 || v.cols() != a.cols() {
        return Err(Error::shape(
            op,
            format!("row vector {:?} does not match {:?}", v.shape, a.shape),
        ));
    }
    Ok(())
}

/// Plain kernels. Graph ops call these for their forward pass so that tape
/// and tape-free evaluation round identically.
pub mod kernel {
    use super::*;

    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = (a.rows(), a.cols());
        let (k2, n) = (b.rows(), b.cols());
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", a.shape, b.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
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

    /// `a^T · b`
    pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = (a.rows(), a.cols());
        let (m2, n) = (b.rows(), b.cols());
        if m != m2 {
            return Err(Error::shape(
                "matmul_tn",
                format!("{:?}^T x {:?}", a.shape, b.shape),
            ));
        }
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let arow = &a.data[i * k..(i + 1) * k];
            let brow = &b.data[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        Tensor::matrix(k, n, out)
    }

    /// `a · b^T`
    pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = (a.rows(), a.cols());
        let (n, k2) = (b.rows(), b.cols());
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} x {:?}^T", a.shape, b.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b.data[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        Tensor::matrix(m, n, out)
    }

    pub fn zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(op, a, b)?;
        Ok(Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        zip("add", a, b, |x, y| x + y)
    }

    pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        zip("sub", a, b, |x, y| x - y)
    }

    pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        zip("mul", a, b, |x, y| x * y)
    }

    /// Adds a 1×C row vector to every row.
    pub fn add_row(a: &Tensor, v: &Tensor) -> Result<Tensor> {
        row_vector("add_row", a, v)?;
        let c = a.cols();
        let mut out = a.clone();
        for row in out.data.chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(&v.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Multiplies every row elementwise by a 1×C row vector.
    pub fn mul_row(a: &Tensor, v: &Tensor) -> Result<Tensor> {
        row_vector("mul_row", a, v)?;
        let c = a.cols();
        let mut out = a.clone();
        for row in out.data.chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(&v.data) {
                *o *= b;
            }
        }
        Ok(out)
    }

    pub fn scale(a: &Tensor, s: f64) -> Tensor {
        a.map(|v| v * s)
    }

    pub fn relu(a: &Tensor) -> Tensor {
        a.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Row-wise numerically stable softmax.
    pub fn softmax_rows(a: &Tensor) -> Tensor {
        let c = a.cols();
        let mut out = a.clone();
        for row in out.data.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        out
    }

    /// Per-column batch statistics: (mean, biased variance).
    pub fn column_moments(a: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let (m, c) = (a.rows(), a.cols());
        let mut mean = vec![0.0; c];
        for row in a.data.chunks(c) {
            for (s, &v) in mean.iter_mut().zip(row) {
                *s += v;
            }
        }
        for s in &mut mean {
            *s /= m as f64;
        }
        let mut var = vec![0.0; c];
        for row in a.data.chunks(c) {
            for ((s, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        for s in &mut var {
            *s /= m as f64;
        }
        (mean, var)
    }

    /// Frozen-statistics normalization `(x - mean) / std`, applied
    /// column-wise; shared by every inference path.
    pub fn normalize_frozen(a: &Tensor, mean: &Tensor, std: &Tensor) -> Result<Tensor> {
        row_vector("normalize", a, mean)?;
        row_vector("normalize", a, std)?;
        let c = a.cols();
        let mut out = a.clone();
        for row in out.data.chunks_mut(c) {
            for ((o, &mu), &sd) in row.iter_mut().zip(&mean.data).zip(&std.data) {
                *o = (*o - mu) / sd;
            }
        }
        Ok(out)
    }

    pub fn squared_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
        same_shape("squared_distance", a, b)?;
        Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum())
    }

    pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
        Ok(squared_distance(pred, target)? / pred.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::kernel::*;
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        assert!(matmul(&a, &b).is_err());
        assert!(add(&a, &b).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let ab = matmul(&a, &b).unwrap();
        assert_eq!(ab.data(), &[58.0, 64.0, 139.0, 154.0]);
        let at = Tensor::matrix(3, 2, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert_eq!(matmul_tn(&at, &b).unwrap(), ab);
        let bt = Tensor::matrix(2, 3, vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]).unwrap();
        assert_eq!(matmul_nt(&a, &bt).unwrap(), ab);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let a = Tensor::matrix(2, 3, vec![1000.0, 0.0, -1000.0, 0.1, 0.2, 0.3]).unwrap();
        let s = softmax_rows(&a);
        for r in 0..2 {
            let total: f64 = s.row_slice(r).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(s.is_finite());
    }
}
