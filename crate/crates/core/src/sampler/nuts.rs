use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::adapt::{DualAveraging, WindowedMetric};
use super::draws::{ChainStats, PosteriorDraws};
use super::{SamplerConfig, TargetDensity};
use crate::error::{Error, Result};

const MAX_DELTA_H: f64 = 1000.0;
const INIT_ATTEMPTS: usize = 100;

/// Result of comparing an analytic gradient with central finite differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub passed: bool,
    /// Coordinate with the largest scaled discrepancy.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
}

/// Compares the gradient of `target` at `x` with central differences
/// (step `1e-6 * max(1, |x_i|)`).
pub fn check_gradient<T: TargetDensity + ?Sized>(target: &T, x: &[f64]) -> GradientCheck {
    let d = target.dim();
    let mut grad = vec![0.0; d];
    let lp = target.log_density_grad(x, &mut grad);
    let mut scratch = vec![0.0; d];
    let mut xp = x.to_vec();
    let mut worst = (0usize, 0.0f64, 0.0f64, 0.0f64);
    let mut passed = lp.is_finite();
    for i in 0..d {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = target.log_density_grad(&xp, &mut scratch);
        xp[i] = x[i] - h;
        let dn = target.log_density_grad(&xp, &mut scratch);
        xp[i] = x[i];
        let fd = (up - dn) / (2.0 * h);
        let scale = 1.0f64.max(grad[i].abs()).max(fd.abs());
        let err = (grad[i] - fd).abs();
        let rel = err / scale;
        // the difference quotient loses about |lp| * 1e-16 / h to cancellation
        let tol = 1e-4 * scale + 1e-9 * lp.abs().max(1.0);
        if !(err <= tol) {
            passed = false;
        }
        if !(rel <= worst.3) {
            worst = (i, grad[i], fd, rel);
        }
    }
    GradientCheck {
        passed,
        worst_index: worst.0,
        analytic: worst.1,
        numeric: worst.2,
        max_rel_err: worst.3,
    }
}

#[derive(Clone)]
struct PhasePoint {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, T: ?Sized> {
    target: &'a T,
    inv_metric: Vec<f64>,
}

impl<T: TargetDensity + ?Sized> Hamiltonian<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn energy(&self, z: &PhasePoint) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn leapfrog(&self, z: &mut PhasePoint, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    fn sample_momentum(&self, rng: &mut ChaCha8Rng, p: &mut [f64]) {
        for (pi, m) in p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *pi = n / m.sqrt();
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Mutable state of one trajectory expansion.
struct Tree<'h, 'a, T: ?Sized> {
    ham: &'h Hamiltonian<'a, T>,
    eps: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Edge momenta of a subtree in trajectory order.
struct Edges {
    p_beg: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_end: Vec<f64>,
}

impl<T: TargetDensity + ?Sized> Tree<'_, '_, T> {
    /// Extends the trajectory from `z` by `2^depth` leapfrog steps in the
    /// direction of `sign`. Returns `None` on divergence or a U-turn inside
    /// the subtree; otherwise the subtree's proposal, log weight, momentum sum
    /// and edges.
    fn build(
        &mut self,
        z: &mut PhasePoint,
        depth: usize,
        sign: f64,
        rng: &mut ChaCha8Rng,
    ) -> Option<(PhasePoint, f64, Vec<f64>, Edges)> {
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - self.h0 > MAX_DELTA_H || !h.is_finite() {
                self.divergent = true;
            }
            let w = self.h0 - h;
            self.sum_metro_prob += if w > 0.0 { 1.0 } else { w.exp() };
            if self.divergent {
                return None;
            }
            let ps = self.ham.p_sharp(&z.p);
            let edges = Edges {
                p_beg: z.p.clone(),
                p_sharp_beg: ps.clone(),
                p_end: z.p.clone(),
                p_sharp_end: ps,
            };
            return Some((z.clone(), w, z.p.clone(), edges));
        }
        let (prop_init, lsw_init, rho_init, e_init) = self.build(z, depth - 1, sign, rng)?;
        let (prop_final, lsw_final, rho_final, e_final) = self.build(z, depth - 1, sign, rng)?;

        let lsw = log_sum_exp(lsw_init, lsw_final);
        let propose = if lsw_final > lsw {
            prop_final
        } else {
            let accept = (lsw_final - lsw).exp();
            if rng.random::<f64>() < accept {
                prop_final
            } else {
                prop_init
            }
        };
        let rho = add(&rho_init, &rho_final);
        let mut persist = no_u_turn(&e_init.p_sharp_beg, &e_final.p_sharp_end, &rho);
        let rho_ext = add(&rho_init, &e_final.p_beg);
        persist &= no_u_turn(&e_init.p_sharp_beg, &e_final.p_sharp_beg, &rho_ext);
        let rho_ext = add(&rho_final, &e_init.p_end);
        persist &= no_u_turn(&e_init.p_sharp_end, &e_final.p_sharp_end, &rho_ext);
        if !persist {
            return None;
        }
        let edges = Edges {
            p_beg: e_init.p_beg,
            p_sharp_beg: e_init.p_sharp_beg,
            p_end: e_final.p_end,
            p_sharp_end: e_final.p_sharp_end,
        };
        Some((propose, lsw, rho, edges))
    }
}

struct Transition {
    accept_stat: f64,
    depth: usize,
    n_leapfrog: usize,
    divergent: bool,
}

/// One NUTS transition from `z` (whose momentum is resampled). `z` is
/// replaced by the selected state.
fn transition<T: TargetDensity + ?Sized>(
    ham: &Hamiltonian<'_, T>,
    z: &mut PhasePoint,
    eps: f64,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> Transition {
    ham.sample_momentum(rng, &mut z.p);
    let h0 = ham.energy(z);
    let mut tree = Tree {
        ham,
        eps,
        h0,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let ps = ham.p_sharp(&z.p);
    // trajectory edges: backward (minus) and forward (plus) ends
    let mut z_minus = z.clone();
    let mut z_plus = z.clone();
    let mut bck = Edges {
        p_beg: z.p.clone(),
        p_sharp_beg: ps.clone(),
        p_end: z.p.clone(),
        p_sharp_end: ps.clone(),
    };
    let mut fwd = Edges {
        p_beg: z.p.clone(),
        p_sharp_beg: ps.clone(),
        p_end: z.p.clone(),
        p_sharp_end: ps,
    };
    let mut rho = z.p.clone();
    let mut sample = z.clone();
    let mut log_sum_weight = 0.0;
    let mut depth = 0;

    while depth < max_depth {
        let forward = rng.random::<f64>() > 0.5;
        let result = if forward {
            tree.build(&mut z_plus, depth, 1.0, rng)
        } else {
            tree.build(&mut z_minus, depth, -1.0, rng)
        };
        let Some((propose, lsw_sub, rho_sub, edges)) = result else {
            break;
        };
        depth += 1;
        if lsw_sub > log_sum_weight {
            sample = propose;
        } else {
            let accept = (lsw_sub - log_sum_weight).exp();
            if rng.random::<f64>() < accept {
                sample = propose;
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, lsw_sub);

        // Orient everything in time order: `bck` holds the edges of the
        // backward part, `fwd` those of the forward part, each as
        // (towards the origin, away from the origin).
        let (rho_bck, rho_fwd);
        if forward {
            // old trajectory is the backward part
            rho_bck = rho.clone();
            rho_fwd = rho_sub;
            bck = Edges {
                p_beg: bck.p_beg,
                p_sharp_beg: bck.p_sharp_beg,
                p_end: fwd.p_end.clone(),
                p_sharp_end: fwd.p_sharp_end.clone(),
            };
            fwd = edges;
        } else {
            rho_fwd = rho.clone();
            rho_bck = rho_sub;
            // the new subtree runs backwards in time: beg is nearest the origin
            fwd = Edges {
                p_beg: bck.p_beg.clone(),
                p_sharp_beg: bck.p_sharp_beg.clone(),
                p_end: fwd.p_end,
                p_sharp_end: fwd.p_sharp_end,
            };
            bck = Edges {
                p_beg: edges.p_end,
                p_sharp_beg: edges.p_sharp_end,
                p_end: edges.p_beg,
                p_sharp_end: edges.p_sharp_beg,
            };
        }
        rho = add(&rho_bck, &rho_fwd);
        // bck: [p_beg = earliest, p_end = latest] of backward part, fwd likewise
        let mut persist = no_u_turn(&bck.p_sharp_beg, &fwd.p_sharp_end, &rho);
        let rho_ext = add(&rho_bck, &fwd.p_beg);
        persist &= no_u_turn(&bck.p_sharp_beg, &fwd.p_sharp_beg, &rho_ext);
        let rho_ext = add(&rho_fwd, &bck.p_end);
        persist &= no_u_turn(&bck.p_sharp_end, &fwd.p_sharp_end, &rho_ext);
        if !persist {
            break;
        }
    }
    let n = tree.n_leapfrog.max(1);
    let out = Transition {
        accept_stat: tree.sum_metro_prob / n as f64,
        depth,
        n_leapfrog: tree.n_leapfrog,
        divergent: tree.divergent,
    };
    *z = sample;
    out
}

/// Doubles or halves the step size until a single leapfrog step crosses an
/// acceptance probability of 0.8.
fn init_step_size<T: TargetDensity + ?Sized>(
    ham: &Hamiltonian<'_, T>,
    z0: &PhasePoint,
    mut eps: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let log_08 = 0.8f64.ln();
    let mut z = z0.clone();
    ham.sample_momentum(rng, &mut z.p);
    let h0 = ham.energy(&z);
    ham.leapfrog(&mut z, eps);
    let delta = h0 - ham.energy(&z);
    let direction = if delta > log_08 { 1 } else { -1 };
    loop {
        let mut z = z0.clone();
        ham.sample_momentum(rng, &mut z.p);
        let h0 = ham.energy(&z);
        ham.leapfrog(&mut z, eps);
        let delta = h0 - ham.energy(&z);
        if direction == 1 && !(delta > log_08) {
            break;
        }
        if direction == -1 && !(delta < log_08) {
            break;
        }
        eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 || eps < 1e-12 {
            break;
        }
    }
    eps
}

fn initial_point<T: TargetDensity + ?Sized>(
    target: &T,
    radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PhasePoint> {
    let d = target.dim();
    let mut grad = vec![0.0; d];
    for _ in 0..INIT_ATTEMPTS {
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..radius)).collect();
        let logp = target.log_density_grad(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(PhasePoint {
                q,
                p: vec![0.0; d],
                grad: grad.clone(),
                logp,
            });
        }
    }
    Err(Error::Initialization(format!(
        "log density was not finite at any of {INIT_ATTEMPTS} random initial points"
    )))
}

fn run_chain<T: TargetDensity + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
) -> Result<(Vec<f64>, ChainStats)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let d = target.dim();
    let mut z = initial_point(target, config.init_radius, &mut rng)?;
    if config.gradient_check {
        let check = check_gradient(target, &z.q);
        if !check.passed {
            return Err(Error::GradientCheck(format!(
                "chain {}: coordinate {} analytic {} vs finite difference {} (relative error {:.3e})",
                chain + 1,
                check.worst_index,
                check.analytic,
                check.numeric,
                check.max_rel_err
            )));
        }
    }
    let mut ham = Hamiltonian {
        target,
        inv_metric: vec![1.0; d],
    };
    let mut eps = init_step_size(&ham, &z, 1.0, &mut rng);
    let mut da = DualAveraging::new(config.target_accept, eps);
    let mut metric = WindowedMetric::new(d, config.warmup);
    for _ in 0..config.warmup {
        let t = transition(&ham, &mut z, eps, config.max_depth, &mut rng);
        eps = da.update(t.accept_stat);
        if metric.observe(&z.q, &mut ham.inv_metric) {
            eps = init_step_size(&ham, &z, eps, &mut rng);
            da.restart(eps);
        }
    }
    if config.warmup > 0 {
        eps = da.final_step_size();
    }

    let names_len = target.param_names().len();
    let mut draws = Vec::with_capacity(config.iters * names_len);
    let mut stats = ChainStats {
        step_size: eps,
        ..ChainStats::default()
    };
    let mut accept_sum = 0.0;
    let mut depth_sum = 0usize;
    for _ in 0..config.iters {
        let t = transition(&ham, &mut z, eps, config.max_depth, &mut rng);
        accept_sum += t.accept_stat;
        depth_sum += t.depth;
        stats.n_leapfrog += t.n_leapfrog;
        if t.divergent {
            stats.divergences += 1;
        }
        if t.depth >= config.max_depth {
            stats.max_depth_hits += 1;
        }
        let row = target.constrain(&z.q);
        debug_assert_eq!(row.len(), names_len);
        draws.extend(row);
    }
    stats.mean_accept_stat = accept_sum / config.iters as f64;
    stats.mean_tree_depth = depth_sum as f64 / config.iters as f64;
    stats.inv_metric = ham.inv_metric;
    Ok((draws, stats))
}

/// Runs `config.chains` independent NUTS chains on `target` and returns the
/// constrained draws with diagnostics. Results depend only on the target,
/// the configuration and the seed; chain `c` uses stream `c` of the seed.
pub fn nuts_sample<T: TargetDensity + ?Sized>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let per_chain: Vec<Result<(Vec<f64>, ChainStats)>> = if config.parallel && config.chains > 1 {
        (0..config.chains)
            .into_par_iter()
            .map(|c| run_chain(target, config, c))
            .collect()
    } else {
        (0..config.chains).map(|c| run_chain(target, config, c)).collect()
    };
    let mut chains = Vec::with_capacity(config.chains);
    let mut stats = Vec::with_capacity(config.chains);
    for r in per_chain {
        let (d, s) = r?;
        chains.push(d);
        stats.push(s);
    }
    let draws = PosteriorDraws::new(target.param_names(), chains, config.seed, stats)?;
    if draws.verdict().divergence_flag {
        log::warn!(
            "{} of {} transitions diverged",
            draws.divergences(),
            draws.n_draws()
        );
    }
    Ok(draws)
}
