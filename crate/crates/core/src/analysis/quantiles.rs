use std::io::Write;

use serde::Serialize;

use crate::{Error, Result};

/// Probability levels of the reported quantile columns.
pub const QUANTILE_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

pub const QUANTILE_HEADER: &str = "parameter,mean,2.5%,25%,50%,75%,97.5%";

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sorts a copy of `x` with NaNs last.
pub fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRow {
    pub parameter: String,
    pub mean: f64,
    /// Values at [`QUANTILE_LEVELS`].
    pub quantiles: [f64; 5],
}

impl QuantileRow {
    /// Summarises one parameter's draws. The mean is accumulated over the
    /// sorted draws so that the row does not depend on draw order.
    pub fn from_draws(parameter: impl Into<String>, draws: &[f64]) -> Self {
        let s = sorted_copy(draws);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        QuantileRow {
            parameter: parameter.into(),
            mean,
            quantiles: QUANTILE_LEVELS.map(|p| quantile_sorted(&s, p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileTable {
    pub rows: Vec<QuantileRow>,
}

fn row_rank(name: &str) -> (u8, usize, u8) {
    let base = name.split('[').next().unwrap_or(name);
    let index = name
        .split_once('[')
        .and_then(|(_, r)| r.trim_end_matches(']').split(',').next()?.parse::<usize>().ok())
        .unwrap_or(0);
    match base {
        "mu" | "tau" if !name.contains('[') => (0, 0, u8::from(base == "tau")),
        "mu_cell" | "tau_cell" => (1, index, u8::from(base == "tau_cell")),
        "sigma_tau" => (1, 0, 2),
        // site pairs interleaved: mu[1], tau[1], mu[2], ...
        "mu" | "tau" => (2, index, u8::from(base == "tau")),
        "sigma_y" => (3, index, 0),
        "Omega" => (4, 0, 0),
        "theta" => (5, 0, 0),
        "V" => (6, 0, 0),
        "sigma_mu_cell" | "sigma_tau_cell" => (7, index, u8::from(base == "sigma_tau_cell")),
        "beta_mu" => (8, 0, 0),
        "beta_tau" => (8, 0, 1),
        "mu_next" | "tau_next" => (10, index, u8::from(base == "tau_next")),
        _ => (9, 0, 0),
    }
}

/// Orders parameter names for reporting: parent means, site pairs, outcome
/// scales, correlation, scales, covariance, regression coefficients, then
/// predictive quantities. The sort is stable, so names sharing a rank keep
/// their input order.
pub fn report_order(names: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by_key(|&i| row_rank(&names[i]));
    idx
}

/// Builds the table from named columns of draws, in [`report_order`].
pub fn quantile_table(columns: &[(String, Vec<f64>)]) -> Result<QuantileTable> {
    if let Some((name, _)) = columns.iter().find(|(_, d)| d.is_empty()) {
        return Err(Error::Validation(format!("no draws for `{name}`")));
    }
    let names: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let rows = report_order(&names)
        .into_iter()
        .map(|i| QuantileRow::from_draws(&columns[i].0, &columns[i].1))
        .collect();
    Ok(QuantileTable { rows })
}

impl QuantileTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<quantile table>", e);
        writeln!(w, "{QUANTILE_HEADER}").map_err(io)?;
        for r in &self.rows {
            write!(w, "{},{:?}", csv_field(&r.parameter), r.mean).map_err(io)?;
            for q in r.quantiles {
                write!(w, ",{q:?}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "parameter": r.parameter,
                    "mean": r.mean,
                    "2.5%": r.quantiles[0],
                    "25%": r.quantiles[1],
                    "50%": r.quantiles[2],
                    "75%": r.quantiles[3],
                    "97.5%": r.quantiles[4],
                })
            })
            .collect();
        serde_json::Value::Array(rows)
    }

    pub fn row(&self, parameter: &str) -> Option<&QuantileRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_median() {
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile_sorted(&x, 0.5), 50.5);
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 100.0);
        assert!((quantile_sorted(&x, 0.025) - 3.475).abs() < 1e-12);
    }

    #[test]
    fn constant_draws() {
        let r = QuantileRow::from_draws("c", &[2.5; 17]);
        assert_eq!(r.mean, 2.5);
        assert!(r.quantiles.iter().all(|q| *q == 2.5));
    }

    #[test]
    fn ordering() {
        let names: Vec<String> = ["V[1,1]", "tau[2]", "mu", "theta[1]", "mu[2]", "tau", "mu[1]", "tau[1]", "sigma_y[1]", "tau_next", "Omega[1,2]"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let ordered: Vec<&str> = report_order(&names).into_iter().map(|i| names[i].as_str()).collect();
        assert_eq!(
            ordered,
            ["mu", "tau", "mu[1]", "tau[1]", "mu[2]", "tau[2]", "sigma_y[1]", "Omega[1,2]", "theta[1]", "V[1,1]", "tau_next"]
        );
    }

    #[test]
    fn csv_header() {
        let t = quantile_table(&[("tau".into(), vec![1.0, 2.0])]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("parameter,mean,2.5%,25%,50%,75%,97.5%\ntau,1.5,"));
    }
}
