use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::micro::{csv_err, header_index};
use super::{is_missing, order_site_labels};
use crate::error::{Error, Result};

/// Per-site treatment-effect estimates with standard errors, optionally with
/// control-mean estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryDataset {
    sites: Vec<String>,
    tau_hat: Vec<f64>,
    se_tau: Vec<f64>,
    mu: Option<(Vec<f64>, Vec<f64>)>,
}

impl SummaryDataset {
    pub fn new(
        sites: Vec<String>,
        tau_hat: Vec<f64>,
        se_tau: Vec<f64>,
        mu: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let k = sites.len();
        if tau_hat.len() != k || se_tau.len() != k {
            return Err(Error::Validation("summary columns have different lengths".into()));
        }
        if k < 2 {
            return Err(Error::Validation(format!("need at least 2 sites, found {k}")));
        }
        let order = order_site_labels(sites.iter().map(String::as_str));
        if order.len() != k {
            return Err(Error::Validation("duplicate site labels in summary data".into()));
        }
        check_se(&sites, &se_tau, "se_tau")?;
        if tau_hat.iter().any(|t| !t.is_finite()) {
            return Err(Error::Validation("tau_hat must be finite".into()));
        }
        if let Some((m, s)) = &mu {
            if m.len() != k || s.len() != k {
                return Err(Error::Validation("mu columns have different lengths".into()));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("mu_hat must be finite".into()));
            }
            check_se(&sites, s, "se_mu")?;
        }
        // reorder rows into canonical site order
        let pos: HashMap<&str, usize> = sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let perm: Vec<usize> = order.iter().map(|s| pos[s.as_str()]).collect();
        let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(SummaryDataset {
            tau_hat: pick(&tau_hat),
            se_tau: pick(&se_tau),
            mu: mu.map(|(m, s)| (pick(&m), pick(&s))),
            sites: order,
        })
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn tau_hat(&self) -> &[f64] {
        &self.tau_hat
    }

    pub fn se_tau(&self) -> &[f64] {
        &self.se_tau
    }

    pub fn mu_hat(&self) -> Option<&[f64]> {
        self.mu.as_ref().map(|(m, _)| m.as_slice())
    }

    pub fn se_mu(&self) -> Option<&[f64]> {
        self.mu.as_ref().map(|(_, s)| s.as_slice())
    }

    /// Whether the joint mean/effect summary model can be fitted.
    pub fn has_mu(&self) -> bool {
        self.mu.is_some()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["site", "tau_hat", "se_tau"];
        if self.has_mu() {
            header.extend(["mu_hat", "se_mu"]);
        }
        w.write_record(&header).map_err(csv_err("<output>"))?;
        for k in 0..self.n_sites() {
            let mut rec = vec![
                self.sites[k].clone(),
                format!("{:?}", self.tau_hat[k]),
                format!("{:?}", self.se_tau[k]),
            ];
            if let Some((m, s)) = &self.mu {
                rec.push(format!("{:?}", m[k]));
                rec.push(format!("{:?}", s[k]));
            }
            w.write_record(&rec).map_err(csv_err("<output>"))?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

fn check_se(sites: &[String], se: &[f64], what: &str) -> Result<()> {
    for (s, v) in sites.iter().zip(se) {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(Error::Validation(format!("{what} for site {s} must be positive, got {v}")));
        }
    }
    Ok(())
}

pub fn load_summaries(path: impl AsRef<Path>, outcome: Option<&str>) -> Result<SummaryDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_summaries(file, outcome, &path.display().to_string())
}

/// Parses a summary CSV with columns `site`, `tau_hat`, `se_tau` and
/// optionally `mu_hat`, `se_mu`. A file may hold several outcomes in an
/// `outcome` column; `outcome` then selects the rows to keep.
pub fn parse_summaries<R: Read>(reader: R, outcome: Option<&str>, path: &str) -> Result<SummaryDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let site_i = header_index(&headers, "site", path)?;
    let tau_i = header_index(&headers, "tau_hat", path)?;
    let se_i = header_index(&headers, "se_tau", path)?;
    let mu_i = headers.iter().position(|h| h == "mu_hat");
    let se_mu_i = headers.iter().position(|h| h == "se_mu");
    let outcome_i = headers.iter().position(|h| h == "outcome");
    let mu_cols = match (mu_i, se_mu_i) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => {
            return Err(Error::Validation(format!(
                "{path}: mu_hat and se_mu must be supplied together"
            )))
        }
    };

    let num = |v: &str, col: &str, row: usize| -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| Error::Validation(format!("{col} in row {row} is not numeric: `{v}`")))
    };

    let mut sites = Vec::new();
    let mut tau = Vec::new();
    let mut se = Vec::new();
    let mut mu = Vec::new();
    let mut se_mu = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = row + 1;
        let field = |i: usize| rec.get(i).unwrap_or("");
        if let (Some(oi), Some(want)) = (outcome_i, outcome) {
            if field(oi) != want {
                continue;
            }
        }
        let label = field(site_i);
        if label.is_empty() {
            return Err(Error::Validation(format!("row {row} has an empty site label")));
        }
        sites.push(label.to_string());
        tau.push(num(field(tau_i), "tau_hat", row)?);
        se.push(num(field(se_i), "se_tau", row)?);
        if let Some((a, b)) = mu_cols {
            let (m, s) = (field(a), field(b));
            if is_missing(m) || is_missing(s) {
                return Err(Error::Validation(format!(
                    "row {row}: mu_hat/se_mu must be present for every site or absent entirely"
                )));
            }
            mu.push(num(m, "mu_hat", row)?);
            se_mu.push(num(s, "se_mu", row)?);
        }
    }
    if outcome_i.is_some() && outcome.is_some() && sites.is_empty() {
        return Err(Error::Validation(format!(
            "{path}: no rows for outcome `{}`",
            outcome.unwrap_or_default()
        )));
    }
    SummaryDataset::new(sites, tau, se, mu_cols.map(|_| (mu, se_mu)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SummaryDataset> {
        parse_summaries(text.as_bytes(), None, "test.csv")
    }

    #[test]
    fn two_rows_without_mu() {
        let ds = parse("site,tau_hat,se_tau\n1,1,1\n2,3,1\n").unwrap();
        assert_eq!(ds.n_sites(), 2);
        assert!(!ds.has_mu());
    }

    #[test]
    fn zero_se_is_rejected() {
        assert!(matches!(
            parse("site,tau_hat,se_tau\n1,1,0\n2,3,1\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn full_columns_enable_mu_model() {
        let ds = parse("site,tau_hat,se_tau,mu_hat,se_mu\n1,1,1,10,2\n2,3,1,12,2\n").unwrap();
        assert!(ds.has_mu());
        assert_eq!(ds.mu_hat().unwrap(), &[10.0, 12.0]);
    }

    #[test]
    fn partial_mu_columns_are_rejected() {
        assert!(matches!(
            parse("site,tau_hat,se_tau,mu_hat\n1,1,1,10\n2,3,1,12\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse("site,tau_hat,se_tau,mu_hat,se_mu\n1,1,1,10,2\n2,3,1,,\n"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rows_are_put_in_site_order() {
        let ds = parse("site,tau_hat,se_tau\n10,5,1\n2,3,1\n").unwrap();
        assert_eq!(ds.sites(), &["2", "10"]);
        assert_eq!(ds.tau_hat(), &[3.0, 5.0]);
    }

    #[test]
    fn outcome_column_filters_rows() {
        let text = "outcome,site,tau_hat,se_tau\nprofit,1,1,1\nprofit,2,2,1\nrevenue,1,9,3\nrevenue,2,8,3\n";
        let ds = parse_summaries(text.as_bytes(), Some("revenue"), "t").unwrap();
        assert_eq!(ds.tau_hat(), &[9.0, 8.0]);
    }
}
