//! Dense row-major tensor of f64 values.
//!
//! This is the value carrier for all model math. Gradient tracking lives in
//! [`crate::numerics::tape`]; a `Tensor` on its own is a plain array.

use crate::error::{Error, Result};

/// GELU tanh-approximation constants: sqrt(2/pi) and the cubic coefficient.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.7978845608028654;
pub const GELU_CUBIC_COEFF: f64 = 0.044715;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), ncols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    /// Rows of a 2-D tensor.
    pub fn nrows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "nrows on non-2D tensor");
        self.shape[0]
    }

    pub fn ncols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "ncols on non-2D tensor");
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.ncols();
        &self.data[r * c..(r + 1) * c]
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

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} vs {:?}",
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
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// In-place accumulation, used by the backward pass on fan-out.
    pub fn accumulate(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "accumulate shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::Shape("matmul requires 2-D operands".into()));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dims: {}x{} vs {}x{}",
                m, k, k2, n
            )));
        }
        let mut out = vec![0.0; m * n];
        // ikj order keeps the inner loop sequential over both out and b.
        for i in 0..m {
            for kk in 0..k {
                let a = self.data[i * k + kk];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::Shape("transpose requires a 2-D tensor".into()));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Iterate over the lanes of `axis`: yields (base offset, stride) pairs so a
    /// lane's elements live at `base + i*stride` for `i in 0..shape[axis]`.
    fn lanes(&self, axis: usize) -> Result<(usize, usize, Vec<usize>)> {
        if axis >= self.shape.len() {
            return Err(Error::Shape(format!(
                "axis {} out of range for shape {:?}",
                axis, self.shape
            )));
        }
        let len = self.shape[axis];
        let stride: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut bases = Vec::with_capacity(outer * stride);
        for o in 0..outer {
            for s in 0..stride {
                bases.push(o * len * stride + s);
            }
        }
        Ok((len, stride, bases))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (len, stride, bases) = self.lanes(axis)?;
        let mut out = self.data.clone();
        for &base in &bases {
            let mut max = f64::NEG_INFINITY;
            for i in 0..len {
                max = max.max(out[base + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..len {
                let e = (out[base + i * stride] - max).exp();
                out[base + i * stride] = e;
                sum += e;
            }
            for i in 0..len {
                out[base + i * stride] /= sum;
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Backward of softmax for one output `y` and upstream grad `g`:
    /// dx_i = y_i * (g_i - sum_j g_j y_j), lane-wise.
    pub(crate) fn softmax_backward(y: &Tensor, grad: &Tensor, axis: usize) -> Tensor {
        let (len, stride, bases) = y.lanes(axis).expect("axis validated in forward");
        let mut out = vec![0.0; y.data.len()];
        for &base in &bases {
            let mut dot = 0.0;
            for i in 0..len {
                let idx = base + i * stride;
                dot += grad.data[idx] * y.data[idx];
            }
            for i in 0..len {
                let idx = base + i * stride;
                out[idx] = y.data[idx] * (grad.data[idx] - dot);
            }
        }
        Tensor {
            shape: y.shape.clone(),
            data: out,
        }
    }
}

/// Elementwise GELU, tanh approximation:
/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC_COEFF * x * x * x)).tanh())
}

/// Derivative of the tanh-approximation GELU.
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC_COEFF * x * x * x);
    let t = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![3.0, -1.5], vec![0.25, 7.0]]).unwrap();
        let id = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(id.matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let z = Tensor::zeros(vec![2, 3]);
        let c = a.matmul(&z).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_dim_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_uniform() {
        let x = Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = x.softmax(0).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let x = Tensor::new(vec![2], vec![0.0, 2f64.ln()]).unwrap();
        let y = x.softmax(0).unwrap();
        assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.5, 0.0]).unwrap();
        let shifted = x.map(|v| v + 17.25);
        let a = x.softmax(0).unwrap();
        let b = shifted.softmax(0).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_rows(&[vec![1.0, -4.0, 2.0], vec![100.0, 100.5, 99.0]]).unwrap();
        let y = x.softmax(1).unwrap();
        for r in 0..2 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_invalid_axis() {
        let x = Tensor::zeros(vec![2, 2]);
        assert!(matches!(x.softmax(2), Err(Error::Shape(_))));
    }

    #[test]
    fn gelu_asymptotes() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0).abs() < 1e-6);
    }

    #[test]
    fn matmul_associative() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let rnd = |rng: &mut rand_chacha::ChaCha8Rng, m: usize, n: usize| {
                Tensor::new(vec![m, n], (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .unwrap()
            };
            let a = rnd(&mut rng, 3, 4);
            let b = rnd(&mut rng, 4, 5);
            let c = rnd(&mut rng, 5, 2);
            let lhs = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let rhs = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                let denom = x.abs().max(y.abs()).max(1.0);
                assert!((x - y).abs() / denom < 1e-9);
            }
        }
    }
}
