use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::QfError;
use crate::Scalar;

/// Sparse symmetric real matrix stored as its upper triangle.
///
/// Each stored `(i, j, v)` with `i < j` stands for both `A[i][j]` and
/// `A[j][i]`; evaluation therefore applies off-diagonal entries twice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefMatrix<T> {
    n: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> CoefMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        CoefMatrix { n, entries: Vec::new() }
    }

    /// Builds a matrix from full-matrix entries of the upper or lower triangle.
    /// `(i, j)` and `(j, i)` address the same stored entry and repeated
    /// positions accumulate; exact zeros are dropped.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize, T)>) -> Result<Self, QfError> {
        let mut acc: Vec<(usize, usize, T)> = Vec::new();
        for (i, j, v) in entries {
            if i >= n || j >= n {
                return Err(QfError::Dimension { expected: n, got: i.max(j) + 1 });
            }
            acc.push((i.min(j), i.max(j), v));
        }
        acc.sort_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(usize, usize, T)> = Vec::with_capacity(acc.len());
        for (i, j, v) in acc {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|e| e.2 != T::zero());
        Ok(CoefMatrix { n, entries: merged })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    /// Full-matrix entry `A[i][j]`.
    pub fn get(&self, i: usize, j: usize) -> T {
        let key = (i.min(j), i.max(j));
        self.entries
            .binary_search_by_key(&key, |&(a, b, _)| (a, b))
            .map(|k| self.entries[k].2)
            .unwrap_or_else(|_| T::zero())
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[T]) -> Result<T, QfError> {
        if x.len() != self.n {
            return Err(QfError::Dimension { expected: self.n, got: x.len() });
        }
        Ok(self.quad_form_unchecked(x, &mut NoCount))
    }

    fn quad_form_unchecked<C: OpCounter>(&self, x: &[T], counter: &mut C) -> T {
        let two = T::lit(2.0);
        let mut acc = T::zero();
        for &(i, j, v) in &self.entries {
            if i == j {
                acc += v * x[i] * x[i];
            } else {
                acc += two * v * x[i] * x[j];
                counter.doubling();
            }
            counter.mul_add();
        }
        acc
    }

    /// `tr(A R Rᵀ) = Σ_c R[:,c]ᵀ A R[:,c]`, linear in the number of stored entries.
    pub fn trace_rrt(&self, r: &Factor<T>) -> Result<T, QfError> {
        self.trace_rrt_counted(r, &mut NoCount)
    }

    /// As [`trace_rrt`](Self::trace_rrt), reporting the arithmetic to `counter`.
    pub fn trace_rrt_counted<C: OpCounter>(&self, r: &Factor<T>, counter: &mut C) -> Result<T, QfError> {
        if r.n() != self.n {
            return Err(QfError::Dimension { expected: self.n, got: r.n() });
        }
        Ok((0..r.rank()).map(|c| self.quad_form_unchecked(r.col(c), counter)).sum())
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>, QfError> {
        if x.len() != self.n {
            return Err(QfError::Dimension { expected: self.n, got: x.len() });
        }
        let mut y = vec![T::zero(); self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        Ok(y)
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.n]; self.n];
        for &(i, j, v) in &self.entries {
            d[i][j] = v;
            d[j][i] = v;
        }
        d
    }

    /// `self + w·other`.
    pub fn add_scaled(&self, w: T, other: &CoefMatrix<T>) -> Result<CoefMatrix<T>, QfError> {
        if other.n != self.n {
            return Err(QfError::Dimension { expected: self.n, got: other.n });
        }
        let items = self.entries.iter().copied().chain(other.entries.iter().map(|&(i, j, v)| (i, j, w * v)));
        CoefMatrix::from_entries(self.n, items)
    }

    pub fn frobenius_norm(&self) -> T {
        let two = T::lit(2.0);
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * v } else { two * v * v })
            .sum::<T>()
            .sqrt()
    }

    /// Coordinate-list text, one `i j value` line per stored entry, zero-based.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for &(i, j, v) in &self.entries {
            let _ = writeln!(s, "{i} {j} {v:e}");
        }
        s
    }
}

/// Receives one event per stored entry visited by a trace evaluation.
pub trait OpCounter {
    fn mul_add(&mut self);
    fn doubling(&mut self);
}

pub struct NoCount;

impl OpCounter for NoCount {
    #[inline]
    fn mul_add(&mut self) {}
    #[inline]
    fn doubling(&mut self) {}
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CountingOps {
    pub mul_adds: usize,
    pub doublings: usize,
}

impl OpCounter for CountingOps {
    fn mul_add(&mut self) {
        self.mul_adds += 1;
    }
    fn doubling(&mut self) {
        self.doublings += 1;
    }
}

/// Dense `n × r` factor `R`, stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor<T> {
    n: usize,
    r: usize,
    data: Vec<T>,
}

impl<T: Scalar> Factor<T> {
    pub fn zeros(n: usize, r: usize) -> Self {
        Factor { n, r, data: vec![T::zero(); n * r] }
    }

    pub fn from_col_major(n: usize, r: usize, data: Vec<T>) -> Result<Self, QfError> {
        if data.len() != n * r {
            return Err(QfError::Dimension { expected: n * r, got: data.len() });
        }
        Ok(Factor { n, r, data })
    }

    /// Single-column factor.
    pub fn from_vector(x: Vec<T>) -> Self {
        Factor { n: x.len(), r: 1, data: x }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> T {
        self.data[c * self.n + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, c: usize, v: T) {
        self.data[c * self.n + i] = v;
    }

    pub fn col(&self, c: usize) -> &[T] {
        &self.data[c * self.n..(c + 1) * self.n]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.data[c * self.n..(c + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Appends a column.
    pub fn with_column(&self, col: &[T]) -> Result<Self, QfError> {
        if col.len() != self.n {
            return Err(QfError::Dimension { expected: self.n, got: col.len() });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(col);
        Ok(Factor { n: self.n, r: self.r + 1, data })
    }

    /// `RᵀR`, row-major `r × r`.
    pub fn gram(&self) -> Vec<Vec<T>> {
        let mut g = vec![vec![T::zero(); self.r]; self.r];
        for a in 0..self.r {
            for b in a..self.r {
                let v: T = self.col(a).iter().zip(self.col(b)).map(|(x, y)| *x * *y).sum();
                g[a][b] = v;
                g[b][a] = v;
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }
}
