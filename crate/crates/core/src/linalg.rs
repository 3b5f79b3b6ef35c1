//! Dense row-major matrices and vector helpers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    /// Uniform(-bound, bound) initialisation.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| T::of(rng.gen_range(-bound..bound)))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// `self · x`
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self · [a ‖ b]` without materialising the concatenation.
    pub fn matvec_concat(&self, a: &[T], b: &[T]) -> Vec<T> {
        debug_assert_eq!(a.len() + b.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                dot(&row[..a.len()], a) + dot(&row[a.len()..], b)
            })
            .collect()
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[T]) -> Vec<T> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += w * yi;
            }
        }
        out
    }

    /// `self += scale · u vᵀ`
    pub fn add_outer(&mut self, scale: T, u: &[T], v: &[T]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let s = scale * ui;
            if s == T::zero() {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += s * vj;
            }
        }
    }

    /// `self += scale · u [a ‖ b]ᵀ`
    pub fn add_outer_concat(&mut self, scale: T, u: &[T], a: &[T], b: &[T]) {
        debug_assert_eq!(a.len() + b.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let s = scale * ui;
            if s == T::zero() {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &x) in row.iter_mut().zip(a.iter().chain(b)) {
                *r += s * x;
            }
        }
    }

    /// `self += scale · other`
    pub fn axpy(&mut self, scale: T, other: &Matrix<T>) {
        axpy(&mut self.data, scale, &other.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += scale · x`
pub fn axpy<T: Scalar>(y: &mut [T], scale: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (a, &b) in y.iter_mut().zip(x) {
        *a += scale * b;
    }
}

pub fn uniform_vec<T: Scalar, R: Rng>(len: usize, bound: f64, rng: &mut R) -> Vec<T> {
    (0..len).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
}

pub fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_loops() {
        let m = Matrix::<f64>::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.matvec_t(&[1.0, 2.0]), vec![6.0, 9.0, 12.0]);
        assert_eq!(m.matvec_concat(&[1.0], &[0.0, -1.0]), vec![-2.0, -2.0]);
    }

    #[test]
    fn add_outer_concat_matches_add_outer() {
        let mut a = Matrix::<f64>::zeros(2, 3);
        let mut b = Matrix::<f64>::zeros(2, 3);
        a.add_outer(0.5, &[1.0, 2.0], &[3.0, 4.0, 5.0]);
        b.add_outer_concat(0.5, &[1.0, 2.0], &[3.0], &[4.0, 5.0]);
        assert_eq!(a, b);
    }
}
