use serde::{Deserialize, Serialize};

/// Convergence is accepted when split R-hat is below this value for every
/// reported parameter.
pub const RHAT_THRESHOLD: f64 = 1.1;

/// Per-parameter summary and convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// `None` when R-hat is undefined (zero within-chain variance, fewer than
    /// two chains or fewer than four iterations).
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    pub mcse: Option<f64>,
    /// Every draw has the same value.
    pub constant: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Halves every chain (dropping the middle draw of odd-length chains).
fn split<'a>(chains: &[&'a [f64]]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

fn usable(chains: &[&[f64]]) -> Option<usize> {
    let n = chains.first()?.len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return None;
    }
    Some(n)
}

/// Split-chain potential scale reduction factor.
///
/// Returns `None` for fewer than two chains, fewer than four draws per chain,
/// chains of unequal length, non-finite draws, or zero within-chain variance.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    usable(chains)?;
    if chains.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return None;
    }
    let halves = split(chains);
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let w = halves.iter().map(|c| sample_var(c)).sum::<f64>() / halves.len() as f64;
    if !(w > 0.0) {
        return None;
    }
    let b_over_n = sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Some((var_plus / w).sqrt())
}

/// Biased autocovariance at `lag` (denominator `n`).
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (x[i] - m) * (x[i + lag] - m);
    }
    s / n as f64
}

/// Effective sample size from split chains with Geyer's initial positive
/// sequence and its monotone refinement. Autocovariances are computed lag by
/// lag only as far as the truncation point requires.
pub fn ess(chains: &[&[f64]]) -> Option<f64> {
    if chains.is_empty() {
        return None;
    }
    usable(chains)?;
    if chains.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return None;
    }
    let halves = split(chains);
    let m = halves.len();
    let n = halves[0].len();
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let mean_acov = |lag: usize| -> f64 {
        halves
            .iter()
            .zip(&means)
            .map(|(c, mu)| autocov(c, *mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let w = mean_acov(0) * nf / (nf - 1.0);
    let var_plus = w * (nf - 1.0) / nf + if m > 1 { sample_var(&means) } else { 0.0 };
    if !(w > 0.0) || !(var_plus > 0.0) {
        return None;
    }

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (w - mean_acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut s = 1usize;
    while s + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (w - mean_acov(s + 1)) / var_plus;
        rho_odd = 1.0 - (w - mean_acov(s + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[s + 1] = rho_even;
            rho[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho_even > 0.0 && max_s + 1 < n {
        rho[max_s + 1] = rho_even;
    }
    // monotone sequence: pair sums may not increase
    let mut s = 1;
    while s + 3 <= max_s {
        if rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s] {
            rho[s + 1] = (rho[s - 1] + rho[s]) / 2.0;
            rho[s + 2] = rho[s + 1];
        }
        s += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_s + 1 < n { rho[max_s + 1] } else { 0.0 };
    let tau = -1.0 + 2.0 * rho[..=max_s.min(n - 1)].iter().sum::<f64>() + tail;
    let tau = tau.max(1.0 / total.log10());
    Some((total / tau).min(total * total.log10()))
}

/// Effective sample size and Monte Carlo standard error of the mean
/// (`sd / sqrt(ess)`).
pub fn ess_and_mcse(chains: &[&[f64]]) -> Option<(f64, f64)> {
    let e = ess(chains)?;
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let sd = sample_var(&all).sqrt();
    Some((e, sd / e.sqrt()))
}

/// Monte Carlo standard error of the posterior sd, by the delta method on the
/// squared deviations from the pooled mean: `mcse(s^2) / (2 s)`, with
/// `mcse(s^2)` computed from the effective sample size of the squares.
pub fn mcse_sd(chains: &[&[f64]]) -> Option<f64> {
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    if all.len() < 2 {
        return None;
    }
    let m = mean(&all);
    let sq: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|v| (v - m).powi(2)).collect()).collect();
    let refs: Vec<&[f64]> = sq.iter().map(|c| c.as_slice()).collect();
    let (_, mcse_var) = ess_and_mcse(&refs)?;
    let sd = sample_var(&all).sqrt();
    (sd > 0.0).then(|| mcse_var / (2.0 * sd))
}

pub(crate) fn diagnose(name: &str, chains: &[&[f64]]) -> ParamDiagnostics {
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let (m, sd) = if all.len() > 1 {
        (mean(&all), sample_var(&all).sqrt())
    } else if all.len() == 1 {
        (all[0], f64::NAN)
    } else {
        (f64::NAN, f64::NAN)
    };
    let constant = all.windows(2).all(|w| w[0] == w[1]);
    let em = ess_and_mcse(chains);
    ParamDiagnostics {
        name: name.to_string(),
        mean: m,
        sd,
        rhat: split_rhat(chains),
        ess: em.map(|v| v.0),
        mcse: em.map(|v| v.1),
        constant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                shift + z
            })
            .collect()
    }

    #[test]
    fn converged_chains_have_rhat_near_one() {
        let a = normals(1, 5000, 0.0);
        let b = normals(2, 5000, 0.0);
        let r = split_rhat(&[&a, &b]).unwrap();
        assert!((0.99..=1.01).contains(&r), "{r}");
    }

    #[test]
    fn separated_chains_fail() {
        let a = normals(1, 1000, 0.0);
        let b = normals(2, 1000, 5.0);
        assert!(split_rhat(&[&a, &b]).unwrap() > 1.1);
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let a = vec![1.0; 100];
        assert!(split_rhat(&[&a, &a]).is_none());
        assert!(ess(&[&a, &a]).is_none());
    }

    #[test]
    fn too_few_draws_or_chains() {
        let a = normals(3, 3, 0.0);
        assert!(split_rhat(&[&a, &a]).is_none());
        let b = normals(3, 100, 0.0);
        assert!(split_rhat(&[&b]).is_none());
    }

    #[test]
    fn iid_ess_is_near_n() {
        let a = normals(7, 4000, 0.0);
        let e = ess(&[&a]).unwrap();
        assert!((3200.0..=4800.0).contains(&e), "{e}");
    }

    #[test]
    fn ar1_ess() {
        let phi: f64 = 0.9;
        let eps = normals(11, 20_000, 0.0);
        let mut x = vec![0.0; eps.len()];
        for i in 1..eps.len() {
            x[i] = phi * x[i - 1] + eps[i];
        }
        let e = ess(&[&x]).unwrap();
        let expect = x.len() as f64 * (1.0 - phi) / (1.0 + phi);
        assert!(e > expect / 1.5 && e < expect * 1.5, "{e} vs {expect}");
    }

    #[test]
    fn mcse_of_sd_matches_the_iid_normal_limit() {
        let a = normals(11, 20000, 0.0);
        let b = normals(12, 20000, 0.0);
        let m = mcse_sd(&[&a, &b]).unwrap();
        // iid normal: sd(s) = sigma / sqrt(2 n)
        let expected = 1.0 / (2.0 * 40000.0f64).sqrt();
        assert!((m / expected - 1.0).abs() < 0.1, "{m} vs {expected}");
    }
}
