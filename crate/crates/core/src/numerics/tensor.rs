use crate::error::{Error, Result};
use rand::Rng;

/// Dense row-major tensor of 64-bit floats. Everything in this crate is
/// rank 2; scalars are `[1, 1]`, row vectors `[1, n]`, column vectors `[n, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("from_rows: no rows"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows: ragged rows"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// Uniform init in [-scale, scale], consuming the given RNG.
    pub fn randomize<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!(
                "zip: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: [{m}x{k}] x [{k2}x{n}]"
            )));
        }
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `[r x c] + [1 x c]` broadcast add.
    pub fn add_row_broadcast(&self, row: &Tensor) -> Result<Tensor> {
        if row.rows() != 1 || row.cols() != self.cols() {
            return Err(Error::shape(format!(
                "add_row: {:?} + {:?}",
                self.shape,
                row.shape()
            )));
        }
        let mut out = self.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out.set(i, j, out.at(i, j) + row.at(0, j));
            }
        }
        Ok(out)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    /// im2col over rows: `[T x C] -> [T_out x kernel*C]` with zero padding.
    pub fn unfold(&self, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
        let rows = self.rows();
        if rows + 2 * pad < kernel {
            return Err(Error::shape("unfold: input shorter than kernel"));
        }
        let t_out = (rows + 2 * pad - kernel) / stride + 1;
        let c = self.cols();
        let mut out = Tensor::zeros(t_out, kernel * c);
        for o in 0..t_out {
            for k in 0..kernel {
                let src = o * stride + k;
                if src < pad || src - pad >= rows {
                    continue; // zero pad
                }
                let src = src - pad;
                for j in 0..c {
                    out.set(o, k * c + j, self.at(src, j));
                }
            }
        }
        Ok(out)
    }
}

/// Row layer norm with gain/bias rows (`[1 x c]` each).
pub fn layer_norm_rows(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let c = x.cols();
    if gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c {
        return Err(Error::shape("layer_norm: gain/bias must be [1 x cols]"));
    }
    let mut out = Tensor::zeros(x.rows(), c);
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..c {
            out.set(i, j, (row[j] - mean) * inv * gain.at(0, j) + bias.at(0, j));
        }
    }
    Ok(out)
}

/// log(exp(a) + exp(b)) with -inf treated as zero probability.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
