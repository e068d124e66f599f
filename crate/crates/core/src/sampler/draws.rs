use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::diagnostics::{diagnose, ParamDiagnostics, RHAT_THRESHOLD};
use crate::error::{Error, Result};

/// Per-chain sampler statistics from the sampling phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ChainStats {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub divergences: usize,
    pub mean_accept_stat: f64,
    pub mean_tree_depth: f64,
    pub max_depth_hits: usize,
    pub n_leapfrog: usize,
}

/// Overall convergence verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub max_rhat: Option<f64>,
    /// Parameters with R-hat at or above the threshold or undefined R-hat.
    pub failing: Vec<String>,
    pub message: String,
    /// More than 10% of post-warmup transitions diverged.
    pub divergence_flag: bool,
}

/// Draws on the constrained scale, stored per chain in row-major
/// `iters x params` layout, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorDraws {
    names: Vec<String>,
    n_iters: usize,
    chains: Vec<Vec<f64>>,
    diagnostics: Vec<ParamDiagnostics>,
    chain_stats: Vec<ChainStats>,
    seed: u64,
    verdict: Verdict,
}

impl PosteriorDraws {
    /// Assembles draws and computes diagnostics. `chains[c]` is row-major
    /// `n_iters x names.len()`.
    pub fn new(names: Vec<String>, chains: Vec<Vec<f64>>, seed: u64, chain_stats: Vec<ChainStats>) -> Result<Self> {
        let p = names.len();
        let n_iters = chains.first().map(|c| if p == 0 { 0 } else { c.len() / p }).unwrap_or(0);
        if chains.iter().any(|c| c.len() != n_iters * p) {
            return Err(Error::Validation("chains have inconsistent draw counts".into()));
        }
        let mut d = PosteriorDraws {
            names,
            n_iters,
            chains,
            diagnostics: Vec::new(),
            chain_stats,
            seed,
            verdict: Verdict {
                passed: false,
                max_rhat: None,
                failing: Vec::new(),
                message: String::new(),
                divergence_flag: false,
            },
        };
        d.diagnostics = (0..p)
            .map(|j| {
                let cols = d.chain_columns(j);
                let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                diagnose(&d.names[j], &refs)
            })
            .collect();
        d.verdict = d.compute_verdict();
        Ok(d)
    }

    fn compute_verdict(&self) -> Verdict {
        let total: usize = self.chains.len() * self.n_iters;
        let divergences: usize = self.chain_stats.iter().map(|s| s.divergences).sum();
        let divergence_flag = total > 0 && divergences as f64 > 0.1 * total as f64;
        if self.chains.len() < 2 || self.n_iters < 4 {
            return Verdict {
                passed: false,
                max_rhat: None,
                failing: Vec::new(),
                message: "diagnostics unavailable: need at least 2 chains and 4 iterations".into(),
                divergence_flag,
            };
        }
        let mut failing = Vec::new();
        let mut max_rhat: Option<f64> = None;
        for d in &self.diagnostics {
            if d.constant {
                continue;
            }
            match d.rhat {
                Some(r) => {
                    max_rhat = Some(max_rhat.map_or(r, |m: f64| m.max(r)));
                    if !(r < RHAT_THRESHOLD) {
                        failing.push(d.name.clone());
                    }
                }
                None => failing.push(d.name.clone()),
            }
        }
        let passed = failing.is_empty();
        let message = if passed {
            format!("all parameters have R-hat < {RHAT_THRESHOLD}")
        } else {
            format!("{} parameter(s) with R-hat >= {RHAT_THRESHOLD} or undefined", failing.len())
        };
        Verdict {
            passed,
            max_rhat,
            failing,
            message,
            divergence_flag,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_iters(&self) -> usize {
        self.n_iters
    }

    pub fn n_draws(&self) -> usize {
        self.n_iters * self.chains.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn diagnostics(&self) -> &[ParamDiagnostics] {
        &self.diagnostics
    }

    pub fn diagnostic(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.index_of(name).map(|j| &self.diagnostics[j])
    }

    pub fn chain_stats(&self) -> &[ChainStats] {
        &self.chain_stats
    }

    pub fn divergences(&self) -> usize {
        self.chain_stats.iter().map(|s| s.divergences).sum()
    }

    pub fn verdict(&self) -> &Verdict {
        &self.verdict
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Draws of parameter `j`, one vector per chain.
    pub fn chain_columns(&self, j: usize) -> Vec<Vec<f64>> {
        let p = self.names.len();
        self.chains
            .iter()
            .map(|c| (0..self.n_iters).map(|i| c[i * p + j]).collect())
            .collect()
    }

    /// All draws of the named parameter, chains concatenated in order.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.index_of(name)?;
        Some(self.chain_columns(j).into_iter().flatten().collect())
    }

    /// Draw `i` (chains concatenated) as a full parameter vector.
    pub fn draw(&self, i: usize) -> &[f64] {
        let p = self.names.len();
        let (c, it) = (i / self.n_iters, i % self.n_iters);
        &self.chains[c][it * p..(it + 1) * p]
    }

    /// Writes `chain,iter,<params...>` with one row per draw; values use the
    /// shortest representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "iter".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(csv_out)?;
        let p = self.names.len();
        for (c, chain) in self.chains.iter().enumerate() {
            for i in 0..self.n_iters {
                let mut rec = Vec::with_capacity(p + 2);
                rec.push((c + 1).to_string());
                rec.push((i + 1).to_string());
                rec.extend(chain[i * p..(i + 1) * p].iter().map(|v| format!("{v:?}")));
                w.write_record(&rec).map_err(csv_out)?;
            }
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }

    /// Reads a draws CSV written by [`PosteriorDraws::write_csv`] and
    /// recomputes diagnostics. Sampler statistics are not stored in the file.
    pub fn read_csv<R: Read>(reader: R, seed: u64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(csv_in)?.clone();
        if headers.get(0) != Some("chain") || headers.get(1) != Some("iter") {
            return Err(Error::Schema("draws file must start with `chain,iter` columns".into()));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::Schema("draws file has no parameter columns".into()));
        }
        let mut by_chain: HashMap<usize, Vec<(usize, Vec<f64>)>> = HashMap::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_in)?;
            if rec.len() != names.len() + 2 {
                return Err(Error::Validation(format!("draws row {} has the wrong width", row + 1)));
            }
            let int = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| Error::Validation(format!("draws row {}: bad index `{s}`", row + 1)))
            };
            let c = int(&rec[0])?;
            let it = int(&rec[1])?;
            let vals = rec
                .iter()
                .skip(2)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Validation(format!("draws row {}: `{v}` is not numeric", row + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            by_chain.entry(c).or_default().push((it, vals));
        }
        let mut keys: Vec<usize> = by_chain.keys().copied().collect();
        keys.sort_unstable();
        let mut chains = Vec::with_capacity(keys.len());
        for k in keys {
            let mut rows = by_chain.remove(&k).unwrap_or_default();
            rows.sort_by_key(|r| r.0);
            chains.push(rows.into_iter().flat_map(|r| r.1).collect::<Vec<f64>>());
        }
        PosteriorDraws::new(names, chains, seed, Vec::new())
    }

    /// A copy with additional derived quantities appended as parameters;
    /// `f` maps one draw to the new values.
    pub fn with_derived<F>(&self, new_names: &[String], f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let p = self.names.len();
        let q = new_names.len();
        let chains = self
            .chains
            .iter()
            .map(|c| {
                let mut out = Vec::with_capacity(self.n_iters * (p + q));
                for i in 0..self.n_iters {
                    let row = &c[i * p..(i + 1) * p];
                    out.extend_from_slice(row);
                    let extra = f(row);
                    debug_assert_eq!(extra.len(), q);
                    out.extend(extra);
                }
                out
            })
            .collect();
        let mut names = self.names.clone();
        names.extend(new_names.iter().cloned());
        PosteriorDraws::new(names, chains, self.seed, self.chain_stats.clone())
    }
}

fn csv_out(e: csv::Error) -> Error {
    Error::Csv {
        path: "<output>".into(),
        message: e.to_string(),
    }
}

fn csv_in(e: csv::Error) -> Error {
    Error::Csv {
        path: "<draws>".into(),
        message: e.to_string(),
    }
}
