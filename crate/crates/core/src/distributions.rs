//! Log densities with analytic partial derivatives.
//!
//! Every density is evaluated in log space. Normalising constants are kept for
//! the normal, bivariate normal, half-Cauchy and uniform densities; the LKJ
//! density drops its normaliser (it depends only on `eta` and the dimension).

use std::f64::consts::PI;

use crate::error::{Error, Result};

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Log density of a univariate normal and its partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalGrad {
    pub logpdf: f64,
    pub d_x: f64,
    pub d_mean: f64,
    pub d_sd: f64,
}

pub fn normal_lpdf_grad(x: f64, mean: f64, sd: f64) -> Result<NormalGrad> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Domain(format!("normal sd must be positive, got {sd}")));
    }
    Ok(normal_lpdf_grad_unchecked(x, mean, sd))
}

/// [`normal_lpdf_grad`] without the domain check, for kernels whose scales are
/// positive by construction.
#[inline]
pub fn normal_lpdf_grad_unchecked(x: f64, mean: f64, sd: f64) -> NormalGrad {
    let inv = 1.0 / sd;
    let r = (x - mean) * inv;
    let d_x = -r * inv;
    NormalGrad {
        logpdf: -HALF_LOG_TWO_PI - sd.ln() - 0.5 * r * r,
        d_x,
        d_mean: -d_x,
        d_sd: (r * r - 1.0) * inv,
    }
}

/// Log density of `n` iid normal observations with common mean and sd,
/// evaluated from the count, sample mean and centred sum of squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalSuffGrad {
    pub logpdf: f64,
    pub d_mean: f64,
    pub d_sd: f64,
}

#[inline]
pub fn normal_suff_lpdf_grad(n: f64, ybar: f64, centred_ss: f64, mean: f64, sd: f64) -> NormalSuffGrad {
    if n == 0.0 {
        return NormalSuffGrad {
            logpdf: 0.0,
            d_mean: 0.0,
            d_sd: 0.0,
        };
    }
    let inv2 = 1.0 / (sd * sd);
    let dev = ybar - mean;
    let q = centred_ss + n * dev * dev;
    NormalSuffGrad {
        logpdf: -n * (HALF_LOG_TWO_PI + sd.ln()) - 0.5 * q * inv2,
        d_mean: n * dev * inv2,
        d_sd: -n / sd + q * inv2 / sd,
    }
}

/// A scalar log density with its derivative in the variate. `logpdf` is
/// `-inf` (and `d_x` zero) outside the support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarGrad {
    pub logpdf: f64,
    pub d_x: f64,
}

impl ScalarGrad {
    pub fn in_support(&self) -> bool {
        self.logpdf > f64::NEG_INFINITY
    }

    const OUTSIDE: ScalarGrad = ScalarGrad {
        logpdf: f64::NEG_INFINITY,
        d_x: 0.0,
    };
}

/// Half-Cauchy on `(0, inf)`: `log[2 / (pi s (1 + (x/s)^2))]`.
pub fn half_cauchy_lpdf_grad(x: f64, scale: f64) -> Result<ScalarGrad> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("half-Cauchy scale must be positive, got {scale}")));
    }
    if !(x > 0.0) {
        return Ok(ScalarGrad::OUTSIDE);
    }
    Ok(half_cauchy_lpdf_grad_unchecked(x, scale))
}

#[inline]
pub fn half_cauchy_lpdf_grad_unchecked(x: f64, scale: f64) -> ScalarGrad {
    let r = x / scale;
    ScalarGrad {
        logpdf: (2.0 / PI).ln() - scale.ln() - r.mul_add(r, 1.0).ln(),
        d_x: -2.0 * x / (scale * scale + x * x),
    }
}

/// Uniform on `[lo, hi]`; `-inf` outside.
pub fn uniform_lpdf(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::Domain(format!("uniform bounds must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    if x < lo || x > hi || x.is_nan() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-(hi - lo).ln())
}

/// Lower-triangular Cholesky factor of a correlation matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyCorr {
    dim: usize,
    factor: Vec<f64>,
}

impl CholeskyCorr {
    const TOL: f64 = 1e-10;

    pub fn new(dim: usize, factor: Vec<f64>) -> Result<Self> {
        if dim == 0 || factor.len() != dim * dim {
            return Err(Error::Domain(format!(
                "Cholesky factor of dimension {dim} needs {} entries, got {}",
                dim * dim,
                factor.len()
            )));
        }
        let c = CholeskyCorr { dim, factor };
        c.validate()?;
        Ok(c)
    }

    pub fn identity(dim: usize) -> Self {
        let mut factor = vec![0.0; dim * dim];
        for i in 0..dim {
            factor[i * dim + i] = 1.0;
        }
        CholeskyCorr { dim, factor }
    }

    /// 2x2 factor for correlation `rho`.
    pub fn from_rho(rho: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
        }
        Ok(CholeskyCorr {
            dim: 2,
            factor: vec![1.0, 0.0, rho, (1.0 - rho * rho).sqrt()],
        })
    }

    /// Cholesky-factorises a correlation matrix given row-major.
    pub fn from_corr_matrix(dim: usize, omega: &[f64]) -> Result<Self> {
        if omega.len() != dim * dim {
            return Err(Error::Domain("correlation matrix has wrong size".into()));
        }
        for i in 0..dim {
            if (omega[i * dim + i] - 1.0).abs() > Self::TOL {
                return Err(Error::Domain("correlation matrix must have unit diagonal".into()));
            }
            for j in 0..i {
                if (omega[i * dim + j] - omega[j * dim + i]).abs() > Self::TOL {
                    return Err(Error::Domain("correlation matrix must be symmetric".into()));
                }
            }
        }
        let l = cholesky(dim, omega)?;
        CholeskyCorr::new(dim, l)
    }

    pub(crate) fn from_factor_unchecked(dim: usize, factor: Vec<f64>) -> Self {
        CholeskyCorr { dim, factor }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.factor[i * self.dim + j]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        for i in 0..d {
            if !(self.get(i, i) > 0.0) {
                return Err(Error::Domain(format!("factor diagonal entry {i} is not positive")));
            }
            let mut norm = 0.0;
            for j in 0..d {
                let v = self.get(i, j);
                if j > i && v != 0.0 {
                    return Err(Error::Domain("factor must be lower triangular".into()));
                }
                if !v.is_finite() {
                    return Err(Error::Domain("factor has non-finite entries".into()));
                }
                norm += v * v;
            }
            if (norm - 1.0).abs() > Self::TOL {
                return Err(Error::Domain(format!("factor row {i} does not have unit norm ({norm})")));
            }
        }
        Ok(())
    }

    /// `Omega = L L^T`, row-major.
    pub fn corr_matrix(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let v: f64 = (0..=j).map(|m| self.get(i, m) * self.get(j, m)).sum();
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
        out
    }

    pub fn log_det_corr(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.get(i, i).ln()).sum::<f64>()
    }
}

/// Dense Cholesky decomposition of a symmetric positive-definite matrix.
pub(crate) fn cholesky(dim: usize, a: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for m in 0..j {
                s -= l[i * dim + m] * l[j * dim + m];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Domain("matrix is not positive definite".into()));
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Ok(l)
}

/// `V = diag(theta) Omega diag(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceDecomp {
    pub theta: Vec<f64>,
    pub corr: CholeskyCorr,
}

impl CovarianceDecomp {
    pub fn new(theta: Vec<f64>, corr: CholeskyCorr) -> Result<Self> {
        if theta.len() != corr.dim() {
            return Err(Error::Domain("scale vector and correlation factor disagree in dimension".into()));
        }
        if theta.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::Domain("scales must be positive and finite".into()));
        }
        Ok(CovarianceDecomp { theta, corr })
    }

    /// Splits a symmetric positive-definite covariance matrix into scales and
    /// a correlation factor.
    pub fn decompose(dim: usize, v: &[f64]) -> Result<Self> {
        if v.len() != dim * dim {
            return Err(Error::Domain("covariance matrix has wrong size".into()));
        }
        let theta: Vec<f64> = (0..dim).map(|i| v[i * dim + i].sqrt()).collect();
        if theta.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Domain("covariance diagonal must be positive".into()));
        }
        let mut omega = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                omega[i * dim + j] = if i == j { 1.0 } else { v[i * dim + j] / (theta[i] * theta[j]) };
            }
        }
        let corr = CholeskyCorr::from_corr_matrix(dim, &omega)?;
        CovarianceDecomp::new(theta, corr)
    }

    pub fn to_matrix(&self) -> Vec<f64> {
        let d = self.theta.len();
        let omega = self.corr.corr_matrix();
        let mut v = omega;
        for i in 0..d {
            for j in 0..d {
                v[i * d + j] *= self.theta[i] * self.theta[j];
            }
        }
        v
    }
}

/// `(eta - 1) log det Omega` and its gradient with respect to every entry of
/// the Cholesky factor (row-major; only the diagonal is non-zero).
pub fn lkj_corr_lpdf_grad(corr: &CholeskyCorr, eta: f64) -> Result<(f64, Vec<f64>)> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("LKJ shape must be positive, got {eta}")));
    }
    corr.validate()?;
    let d = corr.dim();
    let mut grad = vec![0.0; d * d];
    let mut lp = 0.0;
    for i in 0..d {
        let lii = corr.get(i, i);
        lp += 2.0 * (eta - 1.0) * lii.ln();
        grad[i * d + i] = 2.0 * (eta - 1.0) / lii;
    }
    Ok((lp, grad))
}

/// Bivariate normal log density and its partials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mvn2Grad {
    pub logpdf: f64,
    pub d_x: [f64; 2],
    pub d_mean: [f64; 2],
    pub d_theta: [f64; 2],
    /// Derivative with respect to the correlation `Omega_12`.
    pub d_rho: f64,
}

/// Bivariate normal through the Cholesky factor `diag(theta) L_Omega`; no
/// explicit inverse is formed.
pub fn mvn2_lpdf_grad(x: [f64; 2], mean: [f64; 2], decomp: &CovarianceDecomp) -> Result<Mvn2Grad> {
    if decomp.theta.len() != 2 {
        return Err(Error::Domain("mvn2 needs a 2-dimensional decomposition".into()));
    }
    decomp.corr.validate()?;
    let (t1, t2) = (decomp.theta[0], decomp.theta[1]);
    if !(t1 > 0.0 && t2 > 0.0) {
        return Err(Error::Domain("covariance decomposition is not positive definite".into()));
    }
    let rho = decomp.corr.get(1, 0);
    let s = decomp.corr.get(1, 1);
    let d1 = x[0] - mean[0];
    let d2 = x[1] - mean[1];
    let w1 = d1 / t1;
    let w2 = (d2 / t2 - rho * w1) / s;
    let logpdf = -2.0 * HALF_LOG_TWO_PI - t1.ln() - t2.ln() - s.ln() - 0.5 * (w1 * w1 + w2 * w2);

    // a = L^{-T} w = V^{-1} (x - mean)
    let a2 = w2 / (t2 * s);
    let a1 = (w1 - t2 * rho * a2) / t1;

    let d_t1 = -1.0 / t1 + w1 * w1 / t1 - w2 * rho * w1 / (s * t1);
    let d_t2 = -1.0 / t2 + w2 * d2 / (t2 * t2 * s);
    let s2 = s * s;
    let d_rho = rho / s2 + w1 * w2 / s - w2 * w2 * rho / s2;
    Ok(Mvn2Grad {
        logpdf,
        d_x: [-a1, -a2],
        d_mean: [a1, a2],
        d_theta: [d_t1, d_t2],
        d_rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn standard_normal_at_mode() {
        let g = normal_lpdf_grad(0.0, 0.0, 1.0).unwrap();
        assert!((g.logpdf + 0.918_938_5).abs() < 1e-7);
        assert_eq!(g.d_x, 0.0);
        let g = normal_lpdf_grad(1.0, 0.0, 1.0).unwrap();
        assert_eq!(g.d_x, -1.0);
    }

    #[test]
    fn normal_partials_match_finite_differences() {
        let (x, m, s) = (2.3, 1.1, 0.7);
        let g = normal_lpdf_grad(x, m, s).unwrap();
        let f = |x: f64, m: f64, s: f64| normal_lpdf_grad(x, m, s).unwrap().logpdf;
        assert!(rel_err(g.d_x, central(|v| f(v, m, s), x)) < 1e-6);
        assert!(rel_err(g.d_mean, central(|v| f(x, v, s), m)) < 1e-6);
        assert!(rel_err(g.d_sd, central(|v| f(x, m, v), s)) < 1e-6);
    }

    #[test]
    fn normal_rejects_nonpositive_sd() {
        assert!(normal_lpdf_grad(0.0, 0.0, 0.0).is_err());
        assert!(normal_lpdf_grad(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn sufficient_statistics_match_rowwise_sum() {
        let ys = [1.5, -0.3, 2.2, 0.9, 4.1];
        let n = ys.len() as f64;
        let ybar = ys.iter().sum::<f64>() / n;
        let ss: f64 = ys.iter().map(|y| (y - ybar).powi(2)).sum();
        let (m, s) = (1.2, 1.7);
        let suff = normal_suff_lpdf_grad(n, ybar, ss, m, s);
        let mut lp = 0.0;
        let mut dm = 0.0;
        let mut ds = 0.0;
        for y in ys {
            let g = normal_lpdf_grad(y, m, s).unwrap();
            lp += g.logpdf;
            dm += g.d_mean;
            ds += g.d_sd;
        }
        assert!((suff.logpdf - lp).abs() < 1e-12);
        assert!((suff.d_mean - dm).abs() < 1e-12);
        assert!((suff.d_sd - ds).abs() < 1e-12);
    }

    #[test]
    fn half_cauchy_closed_forms() {
        let g = half_cauchy_lpdf_grad(10.0, 10.0).unwrap();
        assert!((g.logpdf - (1.0 / (10.0 * PI)).ln()).abs() < 1e-12);
        assert!((g.logpdf + 3.4473).abs() < 1e-4);
        for s in [0.5, 2.5, 10.0, 37.0] {
            let g = half_cauchy_lpdf_grad(s, s).unwrap();
            assert!((g.d_x + 1.0 / s).abs() < 1e-12);
        }
        let g = half_cauchy_lpdf_grad(3.7, 10.0).unwrap();
        let fd = central(|v| half_cauchy_lpdf_grad(v, 10.0).unwrap().logpdf, 3.7);
        assert!(rel_err(g.d_x, fd) < 1e-6);
    }

    #[test]
    fn half_cauchy_outside_support() {
        assert!(!half_cauchy_lpdf_grad(0.0, 10.0).unwrap().in_support());
        assert!(!half_cauchy_lpdf_grad(-1.0, 10.0).unwrap().in_support());
    }

    #[test]
    fn uniform_cases() {
        assert!((uniform_lpdf(5.0, 0.0, 100000.0).unwrap() + 11.5129).abs() < 1e-4);
        assert_eq!(uniform_lpdf(-1.0, 0.0, 100000.0).unwrap(), f64::NEG_INFINITY);
        assert_eq!(uniform_lpdf(0.5, 0.0, 1.0).unwrap(), 0.0);
        assert!(uniform_lpdf(0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn lkj_two_by_two_closed_form() {
        let c = CholeskyCorr::from_rho(0.5).unwrap();
        let (lp, _) = lkj_corr_lpdf_grad(&c, 3.0).unwrap();
        assert!((lp - 2.0 * 0.75f64.ln()).abs() < 1e-12);
        assert!((lp + 0.575364).abs() < 1e-6);
    }

    #[test]
    fn lkj_eta_one_is_flat() {
        let a = CholeskyCorr::from_rho(0.9).unwrap();
        let b = CholeskyCorr::from_rho(-0.2).unwrap();
        let la = lkj_corr_lpdf_grad(&a, 1.0).unwrap().0;
        let lb = lkj_corr_lpdf_grad(&b, 1.0).unwrap().0;
        assert_eq!(la - lb, 0.0);
    }

    #[test]
    fn lkj_gradient_matches_finite_differences_on_diagonal() {
        let c = CholeskyCorr::from_rho(0.37).unwrap();
        let (_, g) = lkj_corr_lpdf_grad(&c, 3.0).unwrap();
        // perturb L_22 only; the density depends on the factor through its diagonal
        let f = |l22: f64| 2.0 * 2.0 * l22.ln();
        let fd = central(f, c.get(1, 1));
        assert!(rel_err(g[3], fd) < 1e-6);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn lkj_rejects_bad_factor() {
        let bad = CholeskyCorr::from_factor_unchecked(2, vec![1.0, 0.0, 0.5, 0.5]);
        assert!(lkj_corr_lpdf_grad(&bad, 2.0).is_err());
    }

    #[test]
    fn mvn2_standard_at_mode() {
        let d = CovarianceDecomp::new(vec![1.0, 1.0], CholeskyCorr::from_rho(0.0).unwrap()).unwrap();
        let g = mvn2_lpdf_grad([0.3, -0.2], [0.3, -0.2], &d).unwrap();
        assert!((g.logpdf + (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn mvn2_factorises_at_zero_correlation() {
        let d = CovarianceDecomp::new(vec![2.0, 0.5], CholeskyCorr::from_rho(0.0).unwrap()).unwrap();
        let g = mvn2_lpdf_grad([1.3, -0.4], [0.2, 0.1], &d).unwrap();
        let a = normal_lpdf_grad(1.3, 0.2, 2.0).unwrap().logpdf;
        let b = normal_lpdf_grad(-0.4, 0.1, 0.5).unwrap().logpdf;
        assert!((g.logpdf - (a + b)).abs() < 1e-12);
    }

    #[test]
    fn mvn2_matches_direct_quadratic_form() {
        let (t1, t2, rho) = (2.0, 0.5, 0.6);
        let d = CovarianceDecomp::new(vec![t1, t2], CholeskyCorr::from_rho(rho).unwrap()).unwrap();
        let x = [0.7, -1.1];
        let m = [-0.4, 0.25];
        let g = mvn2_lpdf_grad(x, m, &d).unwrap();
        // direct inverse of the 2x2 covariance
        let v11 = t1 * t1;
        let v22 = t2 * t2;
        let v12 = rho * t1 * t2;
        let det = v11 * v22 - v12 * v12;
        let (e1, e2) = (x[0] - m[0], x[1] - m[1]);
        let q = (v22 * e1 * e1 - 2.0 * v12 * e1 * e2 + v11 * e2 * e2) / det;
        let direct = -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * q;
        assert!((g.logpdf - direct).abs() < 1e-10);
    }

    #[test]
    fn mvn2_gradients_match_finite_differences() {
        let x = [0.7, -1.1];
        let m = [-0.4, 0.25];
        let (t1, t2, rho) = (1.3, 0.8, -0.45);
        let eval = |x: [f64; 2], m: [f64; 2], t1: f64, t2: f64, rho: f64| {
            let d = CovarianceDecomp::new(vec![t1, t2], CholeskyCorr::from_rho(rho).unwrap()).unwrap();
            mvn2_lpdf_grad(x, m, &d).unwrap().logpdf
        };
        let d = CovarianceDecomp::new(vec![t1, t2], CholeskyCorr::from_rho(rho).unwrap()).unwrap();
        let g = mvn2_lpdf_grad(x, m, &d).unwrap();
        assert!(rel_err(g.d_x[0], central(|v| eval([v, x[1]], m, t1, t2, rho), x[0])) < 1e-6);
        assert!(rel_err(g.d_x[1], central(|v| eval([x[0], v], m, t1, t2, rho), x[1])) < 1e-6);
        assert!(rel_err(g.d_mean[0], central(|v| eval(x, [v, m[1]], t1, t2, rho), m[0])) < 1e-6);
        assert!(rel_err(g.d_mean[1], central(|v| eval(x, [m[0], v], t1, t2, rho), m[1])) < 1e-6);
        assert!(rel_err(g.d_theta[0], central(|v| eval(x, m, v, t2, rho), t1)) < 1e-6);
        assert!(rel_err(g.d_theta[1], central(|v| eval(x, m, t1, v, rho), t2)) < 1e-6);
        assert!(rel_err(g.d_rho, central(|v| eval(x, m, t1, t2, v), rho)) < 1e-6);
    }

    #[test]
    fn covariance_decomposition_round_trip() {
        let v = [4.0, 1.2, 1.2, 0.9];
        let d = CovarianceDecomp::decompose(2, &v).unwrap();
        let back = d.to_matrix();
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(CovarianceDecomp::decompose(2, &[1.0, 2.0, 2.0, 1.0]).is_err());
    }
}
