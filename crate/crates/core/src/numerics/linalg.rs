//! Small dense linear-algebra kernel: row-major matrices, LU solves, the
//! Padé scaling-and-squaring exponential, a Taylor exponential action for
//! matrix-free operators, and a symmetric eigensolver.

use std::ops::{Index, IndexMut};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn<F: FnMut(usize, usize) -> T>(rows: usize, cols: usize, mut f: F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| *x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * *b;
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![T::zero(); n * p];
        for i in 0..n {
            let out_row = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[k * p..(k + 1) * p];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * *b;
                }
            }
        }
        Self { rows: n, cols: p, data: out }
    }

    /// True if `|a_ij - a_ji| <= tol * max|a|` for all entries.
    pub fn is_symmetric(&self, tol: T) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let bound = tol * self.max_abs();
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= bound))
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).fold(T::zero(), |acc, (a, b)| acc + *a * *b))
            .collect()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> T {
        let mut best = T::zero();
        for j in 0..self.cols {
            let mut s = T::zero();
            for i in 0..self.rows {
                s += self[(i, j)].abs();
            }
            best = best.max(s);
        }
        best
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Solves `self * X = rhs` by LU with partial pivoting.
    pub fn solve_matrix(&self, rhs: &Self) -> Result<Self> {
        let lu = Lu::new(self)?;
        let mut out = Self::zeros(rhs.rows, rhs.cols);
        let mut col = vec![T::zero(); rhs.rows];
        for j in 0..rhs.cols {
            for i in 0..rhs.rows {
                col[i] = rhs[(i, j)];
            }
            let x = lu.solve(&col);
            for i in 0..rhs.rows {
                out[(i, j)] = x[i];
            }
        }
        Ok(out)
    }

    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        if rhs.len() != self.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, got: rhs.len() });
        }
        Ok(Lu::new(self)?.solve(rhs))
    }

    /// Matrix exponential by scaling and squaring with the degree-13 Padé
    /// approximant.
    pub fn expm(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch { expected: self.rows, got: self.cols });
        }
        let n = self.rows;
        if n == 0 {
            return Ok(Self::zeros(0, 0));
        }
        const B: [f64; 14] = [
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ];
        let theta13 = 5.371920351148152;
        let norm = self.norm_one().to_f64_lossy();
        let squarings = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
        let a = self.scaled(T::of(2f64.powi(-squarings)));
        let b = |k: usize| T::of(B[k]);
        let id = Self::identity(n);
        let a2 = a.matmul(&a);
        let a4 = a2.matmul(&a2);
        let a6 = a4.matmul(&a2);

        let mut inner = a6.scaled(b(13));
        inner.axpy(b(11), &a4);
        inner.axpy(b(9), &a2);
        let mut u = a6.matmul(&inner);
        u.axpy(b(7), &a6);
        u.axpy(b(5), &a4);
        u.axpy(b(3), &a2);
        u.axpy(b(1), &id);
        let u = a.matmul(&u);

        let mut inner = a6.scaled(b(12));
        inner.axpy(b(10), &a4);
        inner.axpy(b(8), &a2);
        let mut v = a6.matmul(&inner);
        v.axpy(b(6), &a6);
        v.axpy(b(4), &a4);
        v.axpy(b(2), &a2);
        v.axpy(b(0), &id);

        let mut r = v.sub(&u).solve_matrix(&v.add(&u))?;
        for _ in 0..squarings {
            r = r.matmul(&r);
        }
        Ok(r)
    }

    /// Eigen-decomposition of a symmetric matrix (Householder
    /// tridiagonalisation followed by implicit QL).
    pub fn symmetric_eigen(&self) -> Result<SymmetricEigen<T>> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch { expected: self.rows, got: self.cols });
        }
        SymmetricEigen::new(self)
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

struct Lu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    fn new(m: &DenseMatrix<T>) -> Result<Self> {
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = m.max_abs().max(T::min_positive_value());
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * T::epsilon() * T::of(1e-3) {
                return Err(Error::SingularSystem);
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        let v = lu[k * n + j];
                        lu[i * n + j] -= f * v;
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }
}

/// Eigenvalues in ascending order with orthonormal eigenvectors stored as
/// the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: DenseMatrix<T>,
}

impl<T: Real> SymmetricEigen<T> {
    fn new(a: &DenseMatrix<T>) -> Result<Self> {
        let n = a.rows;
        if n == 0 {
            return Ok(Self { values: vec![], vectors: DenseMatrix::zeros(0, 0) });
        }
        // symmetrise to guard against round-off asymmetry in the input
        let mut v = DenseMatrix::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)]) * T::of(0.5));
        let mut d = vec![T::zero(); n];
        let mut e = vec![T::zero(); n];
        tred2(&mut v, &mut d, &mut e);
        tql2(&mut v, &mut d, &mut e)?;
        Ok(Self { values: d, vectors: v })
    }

    /// Column `k` of the eigenvector matrix.
    pub fn vector(&self, k: usize) -> Vec<T> {
        (0..self.vectors.rows()).map(|i| self.vectors[(i, k)]).collect()
    }
}

fn tred2<T: Real>(v: &mut DenseMatrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
                v[(j, i)] = T::zero();
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[(k, j)] -= upd;
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[(k, j)] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = T::zero();
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

fn tql2<T: Real>(v: &mut DenseMatrix<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    let two = T::of(2.0);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 200 {
                    return Err(Error::NonConvergence { lo: l as f64, hi: m as f64 });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let hk = v[(k, i + 1)];
                        let vki = v[(k, i)];
                        v[(k, i + 1)] = s * vki + c * hk;
                        v[(k, i)] = c * vki - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, dj) in d.iter().enumerate().skip(i + 1) {
            if *dj < p {
                k = j;
                p = *dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for j in 0..n {
                let tmp = v[(j, i)];
                v[(j, i)] = v[(j, k)];
                v[(j, k)] = tmp;
            }
        }
    }
    Ok(())
}

/// Computes `exp(t M) v` for an operator `M` available only through its
/// action, using shifted, sub-stepped Taylor series.
///
/// `norm_bound` must bound the induced norm of `M - shift * I`; the
/// series is sub-stepped so each step has `|t| * norm_bound / steps <= 1`.
pub fn expm_action<T, F>(mut apply: F, v: &[T], t: T, shift: T, norm_bound: T) -> Vec<T>
where
    T: Real,
    F: FnMut(&[T], &mut [T]),
{
    let n = v.len();
    let steps = (norm_bound * t.abs()).ceil().to_usize().unwrap_or(1).max(1);
    let h = t / T::of_usize(steps);
    let decay = (shift * h).exp();
    let mut x = v.to_vec();
    let mut term = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let tol = T::epsilon() * T::of(0.5);
    for _ in 0..steps {
        term.copy_from_slice(&x);
        let mut small_in_row = 0;
        for k in 1..=60 {
            apply(&term, &mut next);
            let scale = h / T::of_usize(k);
            for i in 0..n {
                next[i] = (next[i] - shift * term[i]) * scale;
            }
            std::mem::swap(&mut term, &mut next);
            let tn = term.iter().fold(T::zero(), |m, a| m.max(a.abs()));
            let xn = x.iter().fold(T::zero(), |m, a| m.max(a.abs()));
            for i in 0..n {
                x[i] += term[i];
            }
            if tn <= tol * xn {
                small_in_row += 1;
                if small_in_row >= 2 {
                    break;
                }
            } else {
                small_in_row = 0;
            }
        }
        for xi in x.iter_mut() {
            *xi *= decay;
        }
    }
    x
}

/// Largest algebraic eigenpair of a symmetric operator by Lanczos with full
/// reorthogonalisation, started from `start`.
#[derive(Debug, Clone)]
pub struct LanczosTop<T> {
    pub value: T,
    /// Second-largest Ritz value, a lower bound on the second eigenvalue.
    pub next_value: T,
    pub vector: Vec<T>,
    pub residual: T,
    pub converged: bool,
}

pub fn lanczos_top<T, F>(mut apply: F, start: &[T], max_iter: usize, tol: T) -> Result<LanczosTop<T>>
where
    T: Real,
    F: FnMut(&[T], &mut [T]),
{
    let n = start.len();
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y);
    let norm0 = dot(start, start).sqrt();
    if n == 0 || norm0 == T::zero() {
        return Err(Error::InvalidParameter("Lanczos needs a nonzero start vector".into()));
    }
    let max_iter = max_iter.clamp(1, n);
    let mut basis: Vec<Vec<T>> = vec![start.iter().map(|v| *v / norm0).collect()];
    let mut alpha: Vec<T> = Vec::new();
    let mut beta: Vec<T> = Vec::new();
    let mut w = vec![T::zero(); n];
    let mut best: Option<LanczosTop<T>> = None;
    for k in 0..max_iter {
        apply(&basis[k], &mut w);
        let a = dot(&w, &basis[k]);
        alpha.push(a);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * *qi;
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        let m = alpha.len();
        let tri = DenseMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                T::zero()
            }
        });
        let eig = tri.symmetric_eigen()?;
        let top = eig.values[m - 1];
        let y = eig.vector(m - 1);
        let residual = b * y[m - 1].abs();
        let scale = alpha.iter().chain(beta.iter()).fold(T::zero(), |s, v| s.max(v.abs())).max(T::min_positive_value());
        let done = residual <= tol * scale || b <= T::epsilon() * scale || k + 1 == max_iter;
        if done {
            let mut vector = vec![T::zero(); n];
            for (q, c) in basis.iter().zip(&y) {
                for (v, qi) in vector.iter_mut().zip(q) {
                    *v += *c * *qi;
                }
            }
            let next_value = if m > 1 { eig.values[m - 2] } else { T::neg_infinity() };
            let converged = residual <= tol * scale || b <= T::epsilon() * scale;
            best = Some(LanczosTop { value: top, next_value, vector, residual, converged });
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|v| *v / b).collect());
    }
    Ok(best.expect("loop runs at least once"))
}

/// Work counters of [`krylov_expm_symmetric`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KrylovStats {
    pub applications: usize,
    /// Number of sub-intervals the range was split into.
    pub substeps: usize,
}

/// Computes `exp(t M) v` for a symmetric operator `M` by Lanczos with full
/// reorthogonalisation. When `max_dim` basis vectors do not reach the
/// requested accuracy over the whole of `t`, the interval is split and the
/// process restarted from the partial result.
pub fn krylov_expm_symmetric<T, F>(mut apply: F, v: &[T], t: T, rtol: T, max_dim: usize) -> Result<(Vec<T>, KrylovStats)>
where
    T: Real,
    F: FnMut(&[T], &mut [T]),
{
    let n = v.len();
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y);
    let max_dim = max_dim.clamp(2, n.max(2));
    let mut stats = KrylovStats::default();
    let mut w = v.to_vec();
    let mut remaining = t;
    let mut buf = vec![T::zero(); n];
    while remaining > T::zero() {
        let beta0 = dot(&w, &w).sqrt();
        if beta0 == T::zero() {
            break;
        }
        let mut basis: Vec<Vec<T>> = vec![w.iter().map(|x| *x / beta0).collect()];
        let mut alpha: Vec<T> = Vec::new();
        let mut beta: Vec<T> = Vec::new();
        let mut step: Option<(T, Vec<T>)> = None;
        for k in 0..max_dim {
            apply(&basis[k], &mut buf);
            stats.applications += 1;
            alpha.push(dot(&buf, &basis[k]));
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(&buf, q);
                    for (wi, qi) in buf.iter_mut().zip(q) {
                        *wi -= c * *qi;
                    }
                }
            }
            let b = dot(&buf, &buf).sqrt();
            let scale = alpha.iter().chain(beta.iter()).fold(T::zero(), |s, x| s.max(x.abs())).max(T::min_positive_value());
            let breakdown = b <= T::epsilon() * scale || k + 1 == n;
            if breakdown || (k + 1) % 5 == 0 || k + 1 == max_dim {
                let m = alpha.len();
                let tri = DenseMatrix::from_fn(m, m, |i, j| {
                    if i == j {
                        alpha[i]
                    } else if i + 1 == j {
                        beta[i]
                    } else if j + 1 == i {
                        beta[j]
                    } else {
                        T::zero()
                    }
                });
                let eig = tri.symmetric_eigen()?;
                let coefficients = |tau: T| -> (T, Vec<T>) {
                    let mut y = vec![T::zero(); m];
                    for i in 0..m {
                        let c = eig.vectors[(0, i)] * (tau * eig.values[i]).exp();
                        for (r, yr) in y.iter_mut().enumerate() {
                            *yr += c * eig.vectors[(r, i)];
                        }
                    }
                    let err = if breakdown { T::zero() } else { b * y[m - 1].abs() };
                    let size = dot(&y, &y).sqrt();
                    (if err <= rtol * size { T::zero() } else { err }, y)
                };
                let (err, y) = coefficients(remaining);
                if err == T::zero() {
                    step = Some((remaining, y));
                    break;
                }
                if k + 1 == max_dim {
                    let mut tau = remaining;
                    while tau > remaining * T::of(1e-12) {
                        tau *= T::of(0.5);
                        let (err, y) = coefficients(tau);
                        if err == T::zero() {
                            step = Some((tau, y));
                            break;
                        }
                    }
                    break;
                }
            }
            beta.push(b);
            basis.push(buf.iter().map(|x| *x / b).collect());
        }
        let (tau, y) = step.ok_or(Error::IntegratorFailure { x: (t - remaining).to_f64_lossy() })?;
        w.iter_mut().for_each(|x| *x = T::zero());
        for (q, c) in basis.iter().zip(&y) {
            let c = *c * beta0;
            for (wi, qi) in w.iter_mut().zip(q) {
                *wi += c * *qi;
            }
        }
        remaining = if tau >= remaining { T::zero() } else { remaining - tau };
        stats.substeps += 1;
    }
    Ok((w, stats))
}

/// Conjugate gradients for a symmetric positive (semi)definite operator.
/// Returns the solution and the final relative residual.
pub fn conjugate_gradient<T, F>(mut apply: F, b: &[T], tol: T, max_iter: usize) -> (Vec<T>, T)
where
    T: Real,
    F: FnMut(&[T], &mut [T]),
{
    let n = b.len();
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y);
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![T::zero(); n];
    if bnorm == T::zero() {
        return (x, T::zero());
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= T::zero() {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * bnorm {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    (x, rr.sqrt() / bnorm)
}
