//! Small dense helpers: row-major matrices, dot products, and cosine similarity
//! with its gradient.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
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
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `acc += s * x`
#[inline]
pub fn axpy<T: Scalar>(acc: &mut [T], s: T, x: &[T]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, &v) in acc.iter_mut().zip(x) {
        *a = *a + s * v;
    }
}

/// Cosine similarity clamped to `[-1, 1]`; zero if either argument has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "cosine: dimension mismatch");
    let na = norm(a);
    let nb = norm(b);
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    let c = dot(a, b) / (na * nb);
    // Comparisons rather than `max`/`min`, which would turn NaN into a bound.
    if c > T::one() {
        T::one()
    } else if c < -T::one() {
        -T::one()
    } else {
        c
    }
}

/// Accumulates `g * d cos(a,b)/da` into `ga` and `g * d cos(a,b)/db` into `gb`.
///
/// The clamp is treated as identity; the zero-norm case contributes nothing.
pub fn cosine_backward<T: Scalar>(a: &[T], b: &[T], g: T, ga: &mut [T], gb: &mut [T]) {
    let na = norm(a);
    let nb = norm(b);
    if na == T::zero() || nb == T::zero() || g == T::zero() {
        return;
    }
    let inv = T::one() / (na * nb);
    let c = dot(a, b) * inv;
    let ka = c / (na * na);
    let kb = c / (nb * nb);
    for i in 0..a.len() {
        ga[i] = ga[i] + g * (b[i] * inv - ka * a[i]);
        gb[i] = gb[i] + g * (a[i] * inv - kb * b[i]);
    }
}

/// Like [`cosine_backward`] but only the gradient with respect to `a`.
pub fn cosine_backward_a<T: Scalar>(a: &[T], b: &[T], g: T, ga: &mut [T]) {
    let na = norm(a);
    let nb = norm(b);
    if na == T::zero() || nb == T::zero() || g == T::zero() {
        return;
    }
    let inv = T::one() / (na * nb);
    let ka = dot(a, b) * inv / (na * na);
    for i in 0..a.len() {
        ga[i] = ga[i] + g * (b[i] * inv - ka * a[i]);
    }
}

pub fn all_finite<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}
