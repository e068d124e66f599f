use std::io::Read;
use std::path::Path;

use serde::Serialize;

use super::{is_missing, order_site_labels};
use crate::error::{Error, Result};

/// Column mapping for a microdata file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MicroSchema {
    pub site: String,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

impl MicroSchema {
    pub fn new(outcome: impl Into<String>) -> Self {
        MicroSchema {
            site: "site".into(),
            treatment: "treatment".into(),
            outcome: outcome.into(),
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.covariates = names.into_iter().map(Into::into).collect();
        self
    }
}

/// Row accounting from a load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped_missing_outcome: usize,
}

/// Count, mean and centred sum of squares of the outcome in one site arm
/// (or one site x cell x arm block).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ArmStats {
    pub n: f64,
    pub mean: f64,
    pub ss: f64,
}

impl ArmStats {
    pub(crate) fn push(&mut self, y: f64) {
        self.n += 1.0;
        let delta = y - self.mean;
        self.mean += delta / self.n;
        self.ss += delta * (y - self.mean);
    }

    /// Sample variance with denominator `n - 1`.
    pub fn variance(&self) -> f64 {
        if self.n > 1.0 {
            self.ss / (self.n - 1.0)
        } else {
            f64::NAN
        }
    }
}

/// Household rows from several sites.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroDataset {
    outcome_name: String,
    sites: Vec<String>,
    site: Vec<usize>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    covariate_names: Vec<String>,
    /// Column-major binary covariates.
    covariates: Vec<Vec<u8>>,
    report: LoadReport,
}

impl MicroDataset {
    /// Builds and validates a dataset from per-row values.
    pub fn new(
        outcome_name: impl Into<String>,
        site_labels: &[String],
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<u8>>,
    ) -> Result<Self> {
        Self::build(outcome_name.into(), site_labels, treatment, outcome, covariate_names, covariates, 2)
    }

    /// Like [`MicroDataset::new`] but accepts a single site. Only the
    /// no-pooling reduction checks use this.
    pub fn new_single_site_allowed(
        outcome_name: impl Into<String>,
        site_labels: &[String],
        treatment: Vec<u8>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        Self::build(outcome_name.into(), site_labels, treatment, outcome, Vec::new(), Vec::new(), 1)
    }

    fn build(
        outcome_name: String,
        site_labels: &[String],
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        covariate_names: Vec<String>,
        covariates: Vec<Vec<u8>>,
        min_sites: usize,
    ) -> Result<Self> {
        let n = site_labels.len();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Validation("row vectors have different lengths".into()));
        }
        if covariates.len() != covariate_names.len() || covariates.iter().any(|c| c.len() != n) {
            return Err(Error::Validation("covariate columns do not match row count".into()));
        }
        if let Some(bad) = treatment.iter().find(|t| **t > 1) {
            return Err(Error::Validation(format!("treatment must be 0 or 1, got {bad}")));
        }
        for (name, col) in covariate_names.iter().zip(&covariates) {
            if col.iter().any(|v| *v > 1) {
                return Err(Error::Validation(format!("covariate `{name}` is not binary")));
            }
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::Validation(format!("row {i} has a non-finite outcome")));
        }
        let sites = order_site_labels(site_labels.iter().map(String::as_str));
        if sites.len() < min_sites {
            return Err(Error::Validation(format!(
                "need at least {min_sites} sites, found {}",
                sites.len()
            )));
        }
        let lookup: std::collections::HashMap<&str, usize> =
            sites.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let site: Vec<usize> = site_labels.iter().map(|s| lookup[s.as_str()]).collect();
        let mut arms = vec![[0usize; 2]; sites.len()];
        for (k, t) in site.iter().zip(&treatment) {
            arms[*k][*t as usize] += 1;
        }
        for (k, a) in arms.iter().enumerate() {
            if a[0] == 0 {
                return Err(Error::Validation(format!("site {} lacks control arm", sites[k])));
            }
            if a[1] == 0 {
                return Err(Error::Validation(format!("site {} lacks treatment arm", sites[k])));
            }
        }
        Ok(MicroDataset {
            outcome_name,
            sites,
            site,
            treatment,
            outcome,
            covariate_names,
            covariates,
            report: LoadReport {
                rows_read: n,
                rows_kept: n,
                rows_dropped_missing_outcome: 0,
            },
        })
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    /// Site labels in index order.
    pub fn sites(&self) -> &[String] {
        &self.sites
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_rows(&self) -> usize {
        self.site.len()
    }

    pub fn site_index(&self) -> &[usize] {
        &self.site
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate(&self, name: &str) -> Option<&[u8]> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .map(|i| self.covariates[i].as_slice())
    }

    pub fn report(&self) -> LoadReport {
        self.report
    }

    /// Per site, control then treated sufficient statistics.
    pub fn site_arm_stats(&self) -> Vec<[ArmStats; 2]> {
        let mut out = vec![[ArmStats::default(); 2]; self.n_sites()];
        for i in 0..self.n_rows() {
            out[self.site[i]][self.treatment[i] as usize].push(self.outcome[i]);
        }
        out
    }

    /// Returns a copy with the outcome replaced, e.g. after standardisation.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n_rows() || outcome.iter().any(|y| !y.is_finite()) {
            return Err(Error::Validation("replacement outcome must be finite and row-aligned".into()));
        }
        let mut out = self.clone();
        out.outcome = outcome;
        Ok(out)
    }

    /// Mean and sample sd (denominator `n - 1`) of the outcome over all rows.
    pub fn outcome_moments(&self) -> (f64, f64) {
        let mut s = ArmStats::default();
        for y in &self.outcome {
            s.push(*y);
        }
        (s.mean, s.variance().sqrt())
    }

    /// Writes the dataset as CSV with the site, treatment, outcome and
    /// covariate columns. Values are written in shortest round-trip form.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["site".to_string(), "treatment".to_string(), self.outcome_name.clone()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header).map_err(csv_err("<output>"))?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                self.sites[self.site[i]].clone(),
                self.treatment[i].to_string(),
                format!("{:?}", self.outcome[i]),
            ];
            rec.extend(self.covariates.iter().map(|c| c[i].to_string()));
            w.write_record(&rec).map_err(csv_err("<output>"))?;
        }
        w.flush().map_err(|e| Error::io("<output>", e))?;
        Ok(())
    }
}

pub(crate) fn csv_err(path: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_string(),
        message: e.to_string(),
    }
}

pub(crate) fn header_index(headers: &csv::StringRecord, name: &str, path: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}` in {path}")))
}

pub(crate) fn parse_binary(value: &str, what: &str, row: usize) -> Result<u8> {
    match value {
        "0" => Ok(0),
        "1" => Ok(1),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 => Ok(0),
            Ok(v) if v == 1.0 => Ok(1),
            _ => Err(Error::Validation(format!(
                "{what} must be binary (0/1) but row {row} has `{other}`"
            ))),
        },
    }
}

/// Reads a microdata CSV from disk. See [`parse_microdata`].
pub fn load_microdata(path: impl AsRef<Path>, schema: &MicroSchema) -> Result<MicroDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_microdata(file, schema, &path.display().to_string())
}

/// Parses microdata CSV: a header row with the schema's site, treatment and
/// outcome columns plus any named binary covariates. Rows with a missing
/// outcome are dropped and counted.
pub fn parse_microdata<R: Read>(reader: R, schema: &MicroSchema, path: &str) -> Result<MicroDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let site_i = header_index(&headers, &schema.site, path)?;
    let treat_i = header_index(&headers, &schema.treatment, path)?;
    let out_i = header_index(&headers, &schema.outcome, path)?;
    let cov_i: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| header_index(&headers, c, path))
        .collect::<Result<_>>()?;

    let mut labels = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut covs: Vec<Vec<u8>> = vec![Vec::new(); cov_i.len()];
    let mut read = 0usize;
    let mut dropped = 0usize;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = row + 1;
        read += 1;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let y = field(out_i);
        if is_missing(y) {
            dropped += 1;
            continue;
        }
        let y: f64 = y.parse().map_err(|_| {
            Error::Validation(format!("outcome `{}` in row {row} is not numeric: `{y}`", schema.outcome))
        })?;
        if !y.is_finite() {
            return Err(Error::Validation(format!("outcome in row {row} is not finite")));
        }
        let label = field(site_i);
        if label.is_empty() {
            return Err(Error::Validation(format!("row {row} has an empty site label")));
        }
        labels.push(label.to_string());
        treatment.push(parse_binary(field(treat_i), "treatment", row)?);
        outcome.push(y);
        for (c, &i) in cov_i.iter().enumerate() {
            covs[c].push(parse_binary(field(i), &format!("covariate `{}`", schema.covariates[c]), row)?);
        }
    }
    let mut ds = MicroDataset::new(
        schema.outcome.clone(),
        &labels,
        treatment,
        outcome,
        schema.covariates.clone(),
        covs,
    )?;
    ds.report = LoadReport {
        rows_read: read,
        rows_kept: read - dropped,
        rows_dropped_missing_outcome: dropped,
    };
    Ok(ds)
}
