//! Dense LU factorization with partial pivoting, plus the few solves the ICA
//! model needs. Matrices here are small (D <= a few hundred), so a textbook
//! Doolittle factorization is adequate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
pub struct Lu<T> {
    /// Packed factors: strict lower part holds L (unit diagonal), upper part holds U.
    lu: Array2<T>,
    /// Row `i` of the factored matrix is row `perm[i]` of the input.
    perm: Vec<usize>,
    sign: T,
}

impl<T: Real> Lu<T> {
    pub fn factor(a: ArrayView2<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::shape("lu", "square matrix", format!("{:?}", a.dim())));
        }
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        let scale = lu.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !scale.is_finite() {
            return Err(Error::Numeric {
                context: "lu input",
                index: 0,
            });
        }
        let tiny = scale * T::epsilon() * T::from_count(n.max(1));
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[[i, k]].abs()))
                .fold((k, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= tiny || scale == T::zero() {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.swap([k, j], [p, j]);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[[k, k]];
            for i in (k + 1)..n {
                let f = lu[[i, k]] / pivot;
                lu[[i, k]] = f;
                if f != T::zero() {
                    for j in (k + 1)..n {
                        let u = lu[[k, j]];
                        lu[[i, j]] -= f * u;
                    }
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    pub fn log_abs_det(&self) -> T {
        self.lu.diag().iter().map(|d| d.abs().ln()).sum()
    }

    pub fn det(&self) -> T {
        self.lu.diag().iter().fold(self.sign, |acc, d| acc * *d)
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<T>) -> Array1<T> {
        let n = self.dim();
        let mut x: Array1<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s / self.lu[[i, i]];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: ArrayView1<T>) -> Array1<T> {
        let n = self.dim();
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, Lᵀ w = y, x = Pᵀ w.
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[[j, i]] * y[j];
            }
            y[i] = s / self.lu[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.lu[[j, i]] * y[j];
            }
            y[i] = s;
        }
        let mut x = Array1::zeros(n);
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Solves `A X = B` column by column; `b` is `n × k`.
    pub fn solve_columns(&self, b: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve(col));
        }
        out
    }

    /// Solves `Aᵀ X = B` column by column.
    pub fn solve_transpose_columns(&self, b: ArrayView2<T>) -> Array2<T> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve_transpose(col));
        }
        out
    }

    /// Explicit inverse. Only for gradients that genuinely need `A⁻¹`.
    pub fn inverse(&self) -> Array2<T> {
        let n = self.dim();
        self.solve_columns(Array2::eye(n).view())
    }
}

/// 2-norm condition number via singular values (f64 SVD).
pub fn condition_number<T: Real>(a: ArrayView2<T>) -> f64 {
    let (r, c) = a.dim();
    let m = nalgebra::DMatrix::from_fn(r, c, |i, j| a[[i, j]].as_f64());
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
