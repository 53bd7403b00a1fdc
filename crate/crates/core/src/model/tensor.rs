use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Dense row-major tensor of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Symmetric uniform initialization in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for v in &mut t.data {
                *v = dist.sample(rng);
            }
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out += W[rows] · x`
    pub fn matvec_add(&self, rows: Range<usize>, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols());
        debug_assert_eq!(out.len(), rows.len());
        for (o, r) in out.iter_mut().zip(rows) {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += W[rows]^T · y`
    pub fn matvec_t_add(&self, rows: Range<usize>, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols());
        debug_assert_eq!(y.len(), rows.len());
        for (&yi, r) in y.iter().zip(rows) {
            if yi != 0.0 {
                axpy(yi, self.row(r), out);
            }
        }
    }

    /// `W[row_offset..] += y ⊗ x`
    pub fn outer_add(&mut self, row_offset: usize, y: &[f64], x: &[f64]) {
        debug_assert_eq!(x.len(), self.cols());
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, x, self.row_mut(row_offset + i));
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
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

/// Copy of the first rows of `t` padded with zero rows up to `rows`.
pub fn pad_rows(t: &Tensor, rows: usize) -> Tensor {
    let mut out = Tensor::zeros(&[rows, t.cols()]);
    let n = t.len().min(out.len());
    out.data[..n].copy_from_slice(&t.data[..n]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_both_ways() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = vec![0.0; 2];
        w.matvec_add(0..2, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, vec![-2.0, -2.0]);
        let mut out = vec![0.0; 3];
        w.matvec_t_add(0..2, &[1.0, 1.0], &mut out);
        assert_eq!(out, vec![5.0, 7.0, 9.0]);
        let mut out = vec![0.0; 1];
        w.matvec_add(1..2, &[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, vec![15.0]);
    }

    #[test]
    fn outer_product_block() {
        let mut w = Tensor::zeros(&[3, 2]);
        w.outer_add(1, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(w.data(), &[0.0, 0.0, 3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
