//! Maps between unconstrained sampler coordinates and constrained parameters.
//!
//! Each transform reports the log absolute Jacobian determinant of the
//! unconstrained-to-constrained map together with its derivative, so model
//! kernels can add both to the log posterior.

use crate::distributions::CholeskyCorr;
use crate::error::{Error, Result};

/// `x = exp(u)` for strictly positive parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct Positive;

impl Positive {
    #[inline]
    pub fn constrain(&self, u: f64) -> f64 {
        u.exp()
    }

    pub fn unconstrain(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("positive parameter required, got {x}")));
        }
        Ok(x.ln())
    }

    /// Log Jacobian `u` and its derivative `1`.
    #[inline]
    pub fn log_jacobian(&self, u: f64) -> (f64, f64) {
        (u, 1.0)
    }

    /// `dx/du`.
    #[inline]
    pub fn dx_du(&self, u: f64) -> f64 {
        u.exp()
    }
}

/// `x = lo + (hi - lo) * logistic(u)` for parameters on an open interval.
#[derive(Debug, Clone, Copy)]
pub struct Bounded {
    pub lo: f64,
    pub hi: f64,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl Bounded {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Bounded { lo, hi })
    }

    #[inline]
    pub fn constrain(&self, u: f64) -> f64 {
        self.lo + (self.hi - self.lo) * logistic(u)
    }

    pub fn unconstrain(&self, x: f64) -> Result<f64> {
        if !(x > self.lo && x < self.hi) {
            return Err(Error::Domain(format!(
                "value {x} outside open interval ({}, {})",
                self.lo, self.hi
            )));
        }
        let p = (x - self.lo) / (self.hi - self.lo);
        Ok(p.ln() - (-p).ln_1p())
    }

    /// Log Jacobian `log(hi - lo) + log s + log(1 - s)` and its derivative
    /// `1 - 2 s`, where `s = logistic(u)`.
    #[inline]
    pub fn log_jacobian(&self, u: f64) -> (f64, f64) {
        let value = (self.hi - self.lo).ln() - softplus(-u) - softplus(u);
        (value, 1.0 - 2.0 * logistic(u))
    }

    #[inline]
    pub fn dx_du(&self, u: f64) -> f64 {
        let s = logistic(u);
        (self.hi - self.lo) * s * (1.0 - s)
    }
}

/// Stick-breaking map from `d(d-1)/2` reals to the Cholesky factor of a
/// `d x d` correlation matrix. Unconstrained entries are ordered row by row
/// below the diagonal.
#[derive(Debug, Clone, Copy)]
pub struct CorrCholesky {
    pub dim: usize,
}

impl CorrCholesky {
    pub fn new(dim: usize) -> Self {
        CorrCholesky { dim }
    }

    pub fn free_len(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        i * (i - 1) / 2 + j
    }

    pub fn constrain(&self, y: &[f64]) -> CholeskyCorr {
        let d = self.dim;
        debug_assert_eq!(y.len(), self.free_len());
        let mut l = vec![0.0; d * d];
        l[0] = 1.0;
        for i in 1..d {
            // remaining squared norm of row i
            let mut rest: f64 = 1.0;
            for j in 0..i {
                let z = y[Self::idx(i, j)].tanh();
                l[i * d + j] = z * rest.sqrt();
                rest *= 1.0 - z * z;
            }
            l[i * d + i] = rest.sqrt();
        }
        CholeskyCorr::from_factor_unchecked(d, l)
    }

    pub fn unconstrain(&self, corr: &CholeskyCorr) -> Result<Vec<f64>> {
        if corr.dim() != self.dim {
            return Err(Error::Domain("factor dimension mismatch".into()));
        }
        corr.validate()?;
        let d = self.dim;
        let mut y = vec![0.0; self.free_len()];
        for i in 1..d {
            let mut rest: f64 = 1.0;
            for j in 0..i {
                let lij = corr.get(i, j);
                let z = lij / rest.sqrt();
                if !(z.abs() < 1.0) {
                    return Err(Error::Domain("factor is on the boundary of the correlation set".into()));
                }
                y[Self::idx(i, j)] = z.atanh();
                rest -= lij * lij;
            }
        }
        Ok(y)
    }

    /// Log Jacobian of the map from `y` to the off-diagonal entries of
    /// `Omega = L L^T`, with its gradient.
    ///
    /// With `a = log(1 - tanh(y)^2)`, every term is linear in `a`: the entry in
    /// column `j` carries weight `(d - j) / 2`.
    pub fn log_jacobian(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim;
        let mut value = 0.0;
        let mut grad = vec![0.0; y.len()];
        for i in 1..d {
            for j in 0..i {
                let k = Self::idx(i, j);
                let z = y[k].tanh();
                let w = 0.5 * (d - j) as f64;
                value += w * log1m_tanh_sq(y[k]);
                grad[k] = -2.0 * w * z;
            }
        }
        (value, grad)
    }

    /// Pulls a gradient with respect to factor entries (row-major, `d x d`)
    /// back to the unconstrained coordinates.
    pub fn pullback(&self, y: &[f64], grad_factor: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let corr = self.constrain(y);
        let mut out = vec![0.0; y.len()];
        for i in 1..d {
            // sqrt of the remaining norm before column j, for this row
            let mut sqrt_rest = Vec::with_capacity(i);
            let mut rest: f64 = 1.0;
            let mut zs = Vec::with_capacity(i);
            for j in 0..i {
                let z = y[Self::idx(i, j)].tanh();
                sqrt_rest.push(rest.sqrt());
                zs.push(z);
                rest *= 1.0 - z * z;
            }
            // entries of row i: L[i, j] for j < i and L[i, i]
            for m in 0..i {
                let k = Self::idx(i, m);
                let zm = zs[m];
                let mut g = 0.0;
                for j in 0..=i {
                    let gij = grad_factor[i * d + j];
                    if gij == 0.0 {
                        continue;
                    }
                    let lij = corr.get(i, j);
                    let dl = if j == m {
                        sqrt_rest[j] * (1.0 - zm * zm)
                    } else if m < j {
                        -lij * zm
                    } else {
                        0.0
                    };
                    g += gij * dl;
                }
                out[k] = g;
            }
        }
        out
    }
}

/// `log(1 - tanh(y)^2)` computed stably for large `|y|`.
#[inline]
pub fn log1m_tanh_sq(y: f64) -> f64 {
    // 1 - tanh^2 = sech^2 = 4 e^{-2|y|} / (1 + e^{-2|y|})^2
    let a = y.abs();
    (4.0f64).ln() - 2.0 * a - 2.0 * (-2.0 * a).exp().ln_1p()
}
