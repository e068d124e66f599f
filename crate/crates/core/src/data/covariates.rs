use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::Serialize;

use super::micro::{csv_err, header_index, MicroDataset};
use super::order_site_labels;
use crate::error::{Error, Result};

/// Site-level covariates, one row per site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteCovariateTable {
    sites: Vec<String>,
    names: Vec<String>,
    /// Row-major: `values[k][m]`.
    values: Vec<Vec<f64>>,
}

impl SiteCovariateTable {
    pub fn new(sites: Vec<String>, names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != sites.len() {
            return Err(Error::Validation("covariate table needs one row per site".into()));
        }
        if values.iter().any(|r| r.len() != names.len()) {
            return Err(Error::Validation("covariate rows have the wrong width".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("covariate values must be finite".into()));
        }
        let distinct = order_site_labels(sites.iter().map(String::as_str));
        if distinct.len() != sites.len() {
            return Err(Error::Validation("duplicate site labels in covariate table".into()));
        }
        Ok(SiteCovariateTable { sites, names, values })
    }

    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[m]).collect()
    }

    /// Reorders rows to match `sites`; every site must be present.
    pub fn align_to(&self, sites: &[String]) -> Result<Self> {
        let pos: HashMap<&str, usize> = self.sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut values = Vec::with_capacity(sites.len());
        for s in sites {
            let i = pos
                .get(s.as_str())
                .ok_or_else(|| Error::Validation(format!("site {s} has no row in the covariate table")))?;
            values.push(self.values[*i].clone());
        }
        SiteCovariateTable::new(sites.to_vec(), self.names.clone(), values)
    }

    /// Keeps the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::Schema(format!("site covariate `{n}` not found")))
            })
            .collect::<Result<_>>()?;
        let values = self.values.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect();
        SiteCovariateTable::new(self.sites.clone(), names.to_vec(), values)
    }

    /// Prepends a `control_mean` column holding each site's control-arm mean
    /// outcome. The table must already be aligned to `data`'s sites.
    pub fn with_control_mean(&self, data: &MicroDataset) -> Result<Self> {
        if self.sites != data.sites() {
            return Err(Error::Validation("covariate table is not aligned to the dataset".into()));
        }
        let stats = data.site_arm_stats();
        let mut names = vec!["control_mean".to_string()];
        names.extend(self.names.iter().cloned());
        let values = self
            .values
            .iter()
            .zip(&stats)
            .map(|(r, s)| {
                let mut row = vec![s[0].mean];
                row.extend_from_slice(r);
                row
            })
            .collect();
        SiteCovariateTable::new(self.sites.clone(), names, values)
    }

    /// True when every column has mean 0 and sample sd 1 within `tol`.
    pub fn is_standardized(&self, tol: f64) -> bool {
        (0..self.n_covariates()).all(|m| {
            let (mean, sd) = mean_sd(&self.column(m));
            mean.abs() < tol && (sd - 1.0).abs() < tol
        })
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Column means and sample sds used to z-score a covariate table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardizer {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn transform(&self, table: &SiteCovariateTable) -> Result<SiteCovariateTable> {
        self.check_names(table)?;
        let values = (0..table.n_sites())
            .map(|k| {
                table
                    .row(k)
                    .iter()
                    .enumerate()
                    .map(|(m, v)| (v - self.means[m]) / self.sds[m])
                    .collect()
            })
            .collect();
        SiteCovariateTable::new(table.sites.clone(), table.names.clone(), values)
    }

    pub fn inverse(&self, table: &SiteCovariateTable) -> Result<SiteCovariateTable> {
        self.check_names(table)?;
        let values = (0..table.n_sites())
            .map(|k| {
                table
                    .row(k)
                    .iter()
                    .enumerate()
                    .map(|(m, v)| v * self.sds[m] + self.means[m])
                    .collect()
            })
            .collect();
        SiteCovariateTable::new(table.sites.clone(), table.names.clone(), values)
    }

    fn check_names(&self, table: &SiteCovariateTable) -> Result<()> {
        if table.names != self.names {
            return Err(Error::Validation("standardizer columns do not match the table".into()));
        }
        Ok(())
    }
}

/// Z-scores every column with the sample sd (denominator `K - 1`).
pub fn standardize_columns(table: &SiteCovariateTable) -> Result<(SiteCovariateTable, Standardizer)> {
    if table.n_sites() < 2 {
        return Err(Error::Validation("standardisation needs at least two sites".into()));
    }
    let mut means = Vec::with_capacity(table.n_covariates());
    let mut sds = Vec::with_capacity(table.n_covariates());
    for m in 0..table.n_covariates() {
        let (mean, sd) = mean_sd(&table.column(m));
        if !(sd > 0.0) {
            return Err(Error::Validation(format!(
                "covariate `{}` has zero variance and cannot be standardised",
                table.names[m]
            )));
        }
        means.push(mean);
        sds.push(sd);
    }
    let st = Standardizer {
        names: table.names.clone(),
        means,
        sds,
    };
    Ok((st.transform(table)?, st))
}

pub fn load_site_covariates(path: impl AsRef<Path>) -> Result<SiteCovariateTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_site_covariates(file, &path.display().to_string())
}

/// Parses a site-covariate CSV: a `site` column plus one numeric column per
/// covariate. Rows are returned in canonical site order.
pub fn parse_site_covariates<R: Read>(reader: R, path: &str) -> Result<SiteCovariateTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let site_i = header_index(&headers, "site", path)?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != site_i)
        .map(|(_, h)| h.to_string())
        .collect();
    if names.is_empty() {
        return Err(Error::Schema(format!("{path}: no covariate columns")));
    }
    let mut sites = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = row + 1;
        let mut vals = Vec::with_capacity(names.len());
        for (i, h) in headers.iter().enumerate() {
            if i == site_i {
                continue;
            }
            let v = rec.get(i).unwrap_or("");
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Validation(format!("covariate `{h}` in row {row} is not numeric: `{v}`")))?;
            vals.push(x);
        }
        let label = rec.get(site_i).unwrap_or("");
        if label.is_empty() {
            return Err(Error::Validation(format!("row {row} has an empty site label")));
        }
        sites.push(label.to_string());
        values.push(vals);
    }
    let table = SiteCovariateTable::new(sites, names, values)?;
    let order = order_site_labels(table.sites.iter().map(String::as_str));
    table.align_to(&order)
}
