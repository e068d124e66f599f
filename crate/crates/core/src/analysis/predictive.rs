use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::quantiles::QuantileRow;
use crate::models::ModelFamily;
use crate::sampler::PosteriorDraws;
use crate::{Error, Result};

/// One posterior draw of the parent distribution: mean `(mu, tau)` and
/// covariance `V` stored as `[V11, V12, V22]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParentDraw {
    pub mean: [f64; 2],
    pub v: [f64; 3],
}

/// Lower Cholesky factor `[l11, l21, l22]` of a positive semi-definite 2x2
/// matrix. Zero variances are allowed; `None` if the matrix is not PSD.
pub fn psd_cholesky2(v: [f64; 3]) -> Option<[f64; 3]> {
    let [a, b, c] = v;
    if !v.iter().all(|x| x.is_finite()) {
        return None;
    }
    let tol = 1e-10 * a.abs().max(c.abs()).max(f64::MIN_POSITIVE);
    if a < -tol || c < -tol {
        return None;
    }
    let l11 = a.max(0.0).sqrt();
    let l21 = if l11 > 0.0 {
        b / l11
    } else if b.abs() <= tol {
        0.0
    } else {
        return None;
    };
    let rest = c - l21 * l21;
    if rest < -tol {
        return None;
    }
    Some([l11, l21, rest.max(0.0).sqrt()])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailProbability {
    pub parameter: String,
    pub threshold: f64,
    pub count_below: usize,
    pub count_at_or_above: usize,
    pub p_below: f64,
    pub p_at_or_above: f64,
}

/// Predictive draws for a new site and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveSummary {
    /// Empty for a single parent distribution, else e.g. the cell label.
    pub label: String,
    pub mu_name: Option<String>,
    pub tau_name: String,
    #[serde(skip)]
    pub mu_draws: Option<Vec<f64>>,
    #[serde(skip)]
    pub tau_draws: Vec<f64>,
    pub quantiles: Vec<QuantileRow>,
    pub tail_probabilities: Vec<TailProbability>,
    /// Posterior draws whose covariance was not positive semi-definite.
    pub rejected_non_psd: usize,
    pub seed: u64,
}

fn tail(parameter: &str, draws: &[f64], threshold: f64) -> TailProbability {
    let below = draws.iter().filter(|x| **x < threshold).count();
    let n = draws.len();
    TailProbability {
        parameter: parameter.to_string(),
        threshold,
        count_below: below,
        count_at_or_above: n - below,
        p_below: below as f64 / n as f64,
        p_at_or_above: (n - below) as f64 / n as f64,
    }
}

/// Draws `(mu_{K+1}, tau_{K+1}) ~ N(mean, V)` once per parent draw.
///
/// Both standard normals are drawn for every parent draw, so the stream is
/// aligned with the input whatever the covariance. Tail probabilities are
/// reported at 0 and at each of `thresholds`.
pub fn posterior_predictive_next_site(
    parents: &[ParentDraw],
    names: (Option<&str>, &str),
    seed: u64,
    thresholds: &[f64],
) -> Result<PredictiveSummary> {
    if parents.is_empty() {
        return Err(Error::Validation("no posterior draws for predictive inference".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mu = Vec::with_capacity(parents.len());
    let mut tau = Vec::with_capacity(parents.len());
    let mut rejected = 0;
    for p in parents {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        match psd_cholesky2(p.v) {
            Some([l11, l21, l22]) => {
                mu.push(p.mean[0] + l11 * z1);
                tau.push(p.mean[1] + l21 * z1 + l22 * z2);
            }
            None => rejected += 1,
        }
    }
    if tau.is_empty() {
        return Err(Error::Domain("every covariance draw was rejected as not positive semi-definite".into()));
    }
    if rejected > 0 {
        log::warn!("{rejected} covariance draws rejected as not positive semi-definite");
    }
    let (mu_name, tau_name) = names;
    let mut quantiles = Vec::new();
    let mut tails = Vec::new();
    if let Some(m) = mu_name {
        quantiles.push(QuantileRow::from_draws(m, &mu));
    }
    quantiles.push(QuantileRow::from_draws(tau_name, &tau));
    let mut levels = vec![0.0];
    levels.extend(thresholds.iter().copied().filter(|t| *t != 0.0));
    for t in levels {
        tails.push(tail(tau_name, &tau, t));
    }
    Ok(PredictiveSummary {
        label: String::new(),
        mu_name: mu_name.map(str::to_string),
        tau_name: tau_name.to_string(),
        mu_draws: mu_name.map(|_| mu),
        tau_draws: tau,
        quantiles,
        tail_probabilities: tails,
        rejected_non_psd: rejected,
        seed,
    })
}

fn col(draws: &PosteriorDraws, name: &str) -> Result<Vec<f64>> {
    draws
        .column(name)
        .ok_or_else(|| Error::Validation(format!("draws have no column `{name}`")))
}

/// Parent distributions of a fit, as `(label, mu name, tau name, draws)`.
/// Interactions fits give one entry per cell; the Ridge fit is evaluated at
/// covariates equal to zero (the standardised mean).
pub fn parent_draws(
    draws: &PosteriorDraws,
    family: ModelFamily,
) -> Result<Vec<(String, Option<String>, String, Vec<ParentDraw>)>> {
    match family {
        ModelFamily::RubinSummary => {
            let tau = col(draws, "tau")?;
            let s = col(draws, "sigma_tau")?;
            let p = tau
                .iter()
                .zip(&s)
                .map(|(t, s)| ParentDraw {
                    mean: [0.0, *t],
                    v: [0.0, 0.0, s * s],
                })
                .collect();
            Ok(vec![(String::new(), None, "tau_next".into(), p)])
        }
        ModelFamily::Interactions => {
            let mut out = Vec::new();
            for l in 1.. {
                let Some(tau) = draws.column(&format!("tau_cell[{l}]")) else {
                    break;
                };
                let mu = col(draws, &format!("mu_cell[{l}]"))?;
                let sm = col(draws, &format!("sigma_mu_cell[{l}]"))?;
                let st = col(draws, &format!("sigma_tau_cell[{l}]"))?;
                let p = (0..tau.len())
                    .map(|i| ParentDraw {
                        mean: [mu[i], tau[i]],
                        v: [sm[i] * sm[i], 0.0, st[i] * st[i]],
                    })
                    .collect();
                out.push((format!("cell {l}"), Some(format!("mu_next[{l}]")), format!("tau_next[{l}]"), p));
            }
            Ok(out)
        }
        _ => {
            let mu = col(draws, "mu")?;
            let tau = col(draws, "tau")?;
            let v11 = col(draws, "V[1,1]")?;
            let v12 = col(draws, "V[1,2]")?;
            let v22 = col(draws, "V[2,2]")?;
            let p = (0..tau.len())
                .map(|i| ParentDraw {
                    mean: [mu[i], tau[i]],
                    v: [v11[i], v12[i], v22[i]],
                })
                .collect();
            Ok(vec![(String::new(), Some("mu_next".into()), "tau_next".into(), p)])
        }
    }
}

/// Predictive summaries for every parent distribution of a fit. Each entry
/// uses its own seed derived from `seed` and its position.
pub fn predictive_for_fit(
    draws: &PosteriorDraws,
    family: ModelFamily,
    seed: u64,
    thresholds: &[f64],
) -> Result<Vec<PredictiveSummary>> {
    parent_draws(draws, family)?
        .into_iter()
        .enumerate()
        .map(|(i, (label, mu_name, tau_name, p))| {
            let mut s = posterior_predictive_next_site(&p, (mu_name.as_deref(), &tau_name), seed.wrapping_add(i as u64), thresholds)?;
            s.label = label;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_cases() {
        assert_eq!(psd_cholesky2([0.0, 0.0, 0.0]), Some([0.0, 0.0, 0.0]));
        assert_eq!(psd_cholesky2([4.0, 2.0, 2.0]), Some([2.0, 1.0, 1.0]));
        assert_eq!(psd_cholesky2([0.0, 0.0, 9.0]), Some([0.0, 0.0, 3.0]));
        assert!(psd_cholesky2([1.0, 2.0, 1.0]).is_none());
        assert!(psd_cholesky2([0.0, 1.0, 1.0]).is_none());
        assert!(psd_cholesky2([-1.0, 0.0, 1.0]).is_none());
    }

    #[test]
    fn zero_covariance_reproduces_parent() {
        let parents: Vec<ParentDraw> = (0..10)
            .map(|i| ParentDraw {
                mean: [1.0, i as f64 * 0.3],
                v: [0.0; 3],
            })
            .collect();
        let s = posterior_predictive_next_site(&parents, (Some("m"), "t"), 1, &[]).unwrap();
        for (d, p) in s.tau_draws.iter().zip(&parents) {
            assert_eq!(*d, p.mean[1]);
        }
    }

    #[test]
    fn non_psd_draws_are_counted() {
        let parents = vec![
            ParentDraw {
                mean: [0.0, 0.0],
                v: [1.0, 0.0, 1.0],
            },
            ParentDraw {
                mean: [0.0, 0.0],
                v: [1.0, 5.0, 1.0],
            },
        ];
        let s = posterior_predictive_next_site(&parents, (None, "t"), 1, &[]).unwrap();
        assert_eq!(s.rejected_non_psd, 1);
        assert_eq!(s.tau_draws.len(), 1);
    }
}
