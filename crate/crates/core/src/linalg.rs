//! Minimal dense linear algebra for the small systems that arise here.
//!
//! Parameter dimensions are `p + q` (a handful), so a row-major matrix with
//! partial-pivot LU and a Jacobi symmetric eigensolver is all that is
//! needed. Everything is generic over [`Real`](crate::scalar::Real).

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    /// Build from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diag(&self) -> Vec<F> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn transpose(&self) -> Mat<F> {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[F]) -> Vec<F> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// Rank-one update `self += s * u vᵀ`.
    pub fn add_outer(&mut self, s: F, u: &[F], v: &[F]) {
        assert_eq!(self.rows, u.len());
        assert_eq!(self.cols, v.len());
        for i in 0..self.rows {
            let su = s * u[i];
            if su == F::zero() {
                continue;
            }
            for j in 0..self.cols {
                self[(i, j)] = self[(i, j)] + su * v[j];
            }
        }
    }

    pub fn scale(&self, s: F) -> Mat<F> {
        let mut out = self.clone();
        for x in &mut out.data {
            *x = *x * s;
        }
        out
    }

    pub fn sub(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (x, y) in out.data.iter_mut().zip(&other.data) {
            *x = *x - *y;
        }
        out
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> F {
        (0..self.rows)
            .map(|i| self.row(i).iter().fold(F::zero(), |acc, &x| acc + x.abs()))
            .fold(F::zero(), F::max)
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &x| acc.max(x.abs()))
    }

    /// Solve `self * x = rhs` for a single right-hand side via LU with
    /// partial pivoting.
    pub fn solve(&self, rhs: &[F]) -> Result<Vec<F>> {
        let lu = Lu::factor(self)?;
        Ok(lu.solve(rhs))
    }

    pub fn inverse(&self) -> Result<Mat<F>> {
        let n = self.rows;
        assert_eq!(n, self.cols, "inverse of non-square matrix");
        let lu = Lu::factor(self)?;
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![F::zero(); n];
        for j in 0..n {
            e[j] = F::one();
            let col = lu.solve(&e);
            e[j] = F::zero();
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }

    /// Infinity-norm condition number estimate `‖A‖·‖A⁻¹‖`.
    pub fn condition_inf(&self) -> Result<F> {
        Ok(self.inf_norm() * self.inverse()?.inf_norm())
    }

    pub fn is_symmetric(&self, tol: F) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
    pub fn sym_eigenvalues(&self) -> Vec<F> {
        assert_eq!(self.rows, self.cols, "eigenvalues of non-square matrix");
        let n = self.rows;
        let mut a = self.clone();
        // symmetrize to guard against tiny asymmetries
        for i in 0..n {
            for j in 0..n {
                let m = (a[(i, j)] + a[(j, i)]) / F::from_f64_lossy(2.0);
                a[(i, j)] = m;
                a[(j, i)] = m;
            }
        }
        let eps = F::epsilon() * F::from_f64_lossy(64.0);
        for _sweep in 0..64 {
            let mut off = F::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off = off + a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= eps * a.inf_norm().max(F::one()) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == F::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (F::from_f64_lossy(2.0) * apq);
                    let t = {
                        let s = if theta >= F::zero() {
                            F::one()
                        } else {
                            -F::one()
                        };
                        s / (theta.abs() + (theta * theta + F::one()).sqrt())
                    };
                    let c = F::one() / (t * t + F::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        a.diag()
    }
}

impl<F: Real> std::ops::Index<(usize, usize)> for Mat<F> {
    type Output = F;
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F: Real> std::ops::IndexMut<(usize, usize)> for Mat<F> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting.
struct Lu<F> {
    n: usize,
    lu: Mat<F>,
    piv: Vec<usize>,
}

impl<F: Real> Lu<F> {
    fn factor(a: &Mat<F>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU of non-square matrix");
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut pivot_row = k;
            let mut pivot_val = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = i;
                }
            }
            if pivot_val <= F::min_positive_value() {
                return Err(Error::SingularJacobian(format!(
                    "pivot {:e} at column {k}",
                    pivot_val.as_f64()
                )));
            }
            if pivot_row != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = tmp;
                }
                piv.swap(k, pivot_row);
            }
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / lu[(k, k)];
                lu[(i, k)] = factor;
                for j in (k + 1)..n {
                    lu[(i, j)] = lu[(i, j)] - factor * lu[(k, j)];
                }
            }
        }
        Ok(Lu { n, lu, piv })
    }

    fn solve(&self, rhs: &[F]) -> Vec<F> {
        let n = self.n;
        let mut x: Vec<F> = self.piv.iter().map(|&p| rhs[p]).collect();
        for i in 1..n {
            for j in 0..i {
                let f = self.lu[(i, j)];
                x[i] = x[i] - f * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let f = self.lu[(i, j)];
                x[i] = x[i] - f * x[j];
            }
            x[i] = x[i] / self.lu[(i, i)];
        }
        x
    }
}
