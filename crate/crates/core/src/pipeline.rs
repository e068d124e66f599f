//! Config-driven batch run: load, fit, analyze and write reports.
//!
//! Every output of a run is computed in memory, written to a staging
//! directory next to the output directory and moved into place only when
//! all writes succeeded, so a failed run leaves no partial outputs. Each
//! output directory carries `config.txt` (the normalized config) and
//! `manifest.json` (config hash, seed, version, per-fit verdicts and a
//! SHA-256 of every file).

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{analyze_fit, density_csv, ridge_coefficient_report, AnalysisReport};
use crate::config::RunConfig;
use crate::data::{
    build_interaction_cells, load_microdata, load_site_covariates, load_summaries, standardize_columns, CellOptions,
    MicroDataset, MicroSchema, SummaryDataset,
};
use crate::models::{ModelData, ModelFamily, ModelSpec};
use crate::oracle::summarise_micro;
use crate::sampler::{run_chains, PosteriorDraws};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_CONVERGENCE: i32 = 5;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Spec(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        Error::Csv { .. } | Error::Schema(_) | Error::Validation(_) | Error::Domain(_) => EXIT_DATA,
        _ => EXIT_OTHER,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRecord {
    pub outcome: String,
    pub family: ModelFamily,
    /// Ridge prior sd for `site_ridge` fits.
    pub penalty: Option<f64>,
    pub seed: u64,
    /// Directory of the fit's files, relative to the output directory.
    pub dir: String,
    pub converged: bool,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub all_converged: bool,
    pub allow_nonconverged: bool,
    pub fits: Vec<FitRecord>,
    /// Every other file of the output directory, sorted by path.
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub exit_code: i32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seed of one fit, derived from the run seed and the fit's identity so that
/// adding or reordering outcomes and families leaves other fits unchanged.
pub fn fit_seed(seed: u64, outcome: &str, family: ModelFamily, penalty: Option<f64>) -> u64 {
    let key = format!("{seed}\u{1f}{outcome}\u{1f}{family}\u{1f}{penalty:?}");
    let d = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

/// The config with every path made absolute, as recorded in `config.txt`.
fn normalized(config: &RunConfig) -> Result<RunConfig> {
    let mut c = config.clone();
    for p in [&mut c.summary_data, &mut c.microdata, &mut c.site_covariates].into_iter().flatten() {
        *p = absolute(p)?;
    }
    c.out_dir = absolute(&c.out_dir)?;
    c.sampler.seed = c.seed;
    Ok(c)
}

struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, path: String, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    fn json(&mut self, path: String, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
        bytes.push(b'\n');
        self.add(path, bytes);
        Ok(())
    }
}

/// Data for one outcome, loaded once and shared by the families.
struct OutcomeData {
    name: String,
    micro: Option<MicroDataset>,
    summary: Option<SummaryDataset>,
}

fn load_outcomes(config: &RunConfig) -> Result<Vec<OutcomeData>> {
    let names: Vec<Option<String>> = if config.outcomes.is_empty() {
        vec![None]
    } else {
        config.outcomes.iter().cloned().map(Some).collect()
    };
    let needs_summary = config
        .families
        .iter()
        .any(|f| matches!(f, ModelFamily::RubinSummary | ModelFamily::JointSummary));
    let mut out = Vec::new();
    for name in names {
        let micro = match (&config.microdata, &name) {
            (Some(path), Some(outcome)) => {
                let schema = MicroSchema::new(outcome.clone()).with_covariates(config.interaction_covariates.iter());
                Some(load_microdata(path, &schema)?)
            }
            _ => None,
        };
        let summary = match (&config.summary_data, &micro) {
            (Some(path), _) if needs_summary => Some(load_summaries(path, name.as_deref())?),
            (None, Some(m)) if needs_summary => Some(summarise_micro(m)?),
            _ => None,
        };
        let label = name.unwrap_or_else(|| {
            config
                .summary_data
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "outcome".into())
        });
        out.push(OutcomeData {
            name: label,
            micro,
            summary,
        });
    }
    Ok(out)
}

fn require<'a, T>(x: &'a Option<T>, what: &str, family: ModelFamily) -> Result<&'a T> {
    x.as_ref()
        .ok_or_else(|| Error::Config(vec![format!("{family}: no {what} available")]))
}

/// Microdata and regressors for the Ridge family. Site covariates are
/// standardized. The outcome is standardized too when configured, before
/// the control-arm means are computed, and the control-mean column then
/// enters the effect equation standardized.
fn ridge_data(config: &RunConfig, micro: &MicroDataset) -> Result<ModelData> {
    let path = config
        .site_covariates
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["site_ridge: needs site_covariates".into()]))?;
    let mut table = load_site_covariates(path)?.align_to(micro.sites())?;
    if !config.ridge_covariates.is_empty() {
        table = table.select(&config.ridge_covariates)?;
    }
    let data = if config.ridge_standardize_outcome {
        let (m, sd) = micro.outcome_moments();
        if !(sd > 0.0) {
            return Err(Error::Validation("outcome has zero variance; cannot standardize".into()));
        }
        micro.with_outcome(micro.outcome().iter().map(|y| (y - m) / sd).collect())?
    } else {
        micro.clone()
    };
    let (x_mu, _) = standardize_columns(&table)?;
    let x_tau = if config.ridge_control_mean {
        standardize_columns(&table.with_control_mean(&data)?)?.0
    } else {
        x_mu.clone()
    };
    Ok(ModelData::Ridge { data, x_mu, x_tau })
}

fn model_data(config: &RunConfig, family: ModelFamily, o: &OutcomeData) -> Result<ModelData> {
    Ok(match family {
        ModelFamily::RubinSummary => {
            let s = require(&o.summary, "summary data", family)?;
            ModelData::Summary(SummaryDataset::new(
                s.sites().to_vec(),
                s.tau_hat().to_vec(),
                s.se_tau().to_vec(),
                None,
            )?)
        }
        ModelFamily::JointSummary => {
            let s = require(&o.summary, "summary data", family)?;
            if !s.has_mu() {
                return Err(Error::Validation(format!(
                    "{family}: the summary data for `{}` has no mu_hat/se_mu columns",
                    o.name
                )));
            }
            ModelData::Summary(s.clone())
        }
        ModelFamily::FullDataJoint | ModelFamily::FullDataIndependent => {
            ModelData::Micro(require(&o.micro, "microdata", family)?.clone())
        }
        ModelFamily::Interactions => ModelData::Cells(build_interaction_cells(
            require(&o.micro, "microdata", family)?,
            &config.interaction_covariates,
            CellOptions {
                max_covariates: config.max_cell_covariates,
            },
        )?),
        ModelFamily::SiteRidge => ridge_data(config, require(&o.micro, "microdata", family)?)?,
    })
}

fn fit_files(out: &mut Outputs, dir: &str, config: &RunConfig, draws: &PosteriorDraws, report: &AnalysisReport) -> Result<()> {
    let mut buf = Vec::new();
    draws.write_csv(&mut buf)?;
    out.add(format!("{dir}/draws.csv"), buf);
    let mut buf = Vec::new();
    report.quantiles.write_csv(&mut buf)?;
    out.add(format!("{dir}/quantiles.csv"), buf);
    out.json(format!("{dir}/quantiles.json"), &report.quantiles.to_json())?;
    out.json(
        format!("{dir}/diagnostics.json"),
        &json!({
            "family": report.family,
            "outcome": report.outcome,
            "seed": report.seed,
            "verdict": draws.verdict(),
            "divergences": draws.divergences(),
            "chains": draws.chain_stats(),
            "parameters": draws.diagnostics(),
        }),
    )?;
    if config.pooling {
        out.json(
            format!("{dir}/pooling.json"),
            &json!({ "seed": report.seed, "sites": report.sites, "pooling": report.pooling }),
        )?;
    }
    if config.predictive {
        out.json(
            format!("{dir}/predictive.json"),
            &json!({ "seed": report.seed, "predictive": report.predictive }),
        )?;
    }
    if let Some(ols) = &report.ols {
        out.json(format!("{dir}/ols.json"), &json!({ "seed": report.seed, "ols": ols }))?;
    }
    if config.densities {
        out.add(format!("{dir}/densities.csv"), density_csv(&report.densities).into_bytes());
    }
    Ok(())
}

fn record(outcome: &str, family: ModelFamily, penalty: Option<f64>, seed: u64, dir: &str, d: &PosteriorDraws) -> FitRecord {
    FitRecord {
        outcome: outcome.to_string(),
        family,
        penalty,
        seed,
        dir: dir.to_string(),
        converged: d.verdict().passed,
        max_rhat: d.verdict().max_rhat,
        divergences: d.divergences(),
    }
}

fn safe_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn check_paths(config: &RunConfig) -> Result<()> {
    for p in [&config.summary_data, &config.microdata, &config.site_covariates].into_iter().flatten() {
        if !p.is_file() {
            return Err(Error::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            });
        }
    }
    let out = &config.out_dir;
    if out.exists() {
        let reusable = out.is_dir()
            && (out.join(MANIFEST_FILE).is_file()
                || std::fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_none());
        if !reusable {
            return Err(Error::Config(vec![format!(
                "out_dir {} exists and is not the output of a previous run",
                out.display()
            )]));
        }
    }
    Ok(())
}

fn write_all(out_dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let parent = out_dir.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    let result = (|| -> Result<()> {
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        for (rel, bytes) in files {
            let path = staging.join(rel);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        if out_dir.exists() {
            std::fs::remove_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        }
        std::fs::rename(&staging, out_dir).map_err(|e| Error::io(out_dir, e))
    })();
    if result.is_err() && staging.exists() {
        let _ = std::fs::remove_dir_all(&staging);
    }
    result
}

/// Runs every outcome x family fit of `config` and writes the reports.
///
/// Returns the manifest and the exit code: [`EXIT_CONVERGENCE`] when a fit
/// failed the R-hat gate and `allow_nonconverged` is off, else
/// [`EXIT_OK`]. Errors map to exit codes through [`exit_code`].
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineResult> {
    let mut errs = config.check();
    errs.extend(config.check_inputs());
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let config = normalized(config)?;
    check_paths(&config)?;
    let config_text = config.to_text();
    let outcomes = load_outcomes(&config)?;

    let mut out = Outputs { files: Vec::new() };
    let mut fits = Vec::new();
    for o in &outcomes {
        for &family in &config.families {
            let data = model_data(&config, family, o)?;
            let base_dir = format!("{}/{}", safe_component(&o.name), family);
            let spec = ModelSpec {
                family,
                priors: config.priors.clone(),
                parameterization: config.parameterization,
                interaction_covariates: config.interaction_covariates.clone(),
                ridge_covariates: config.ridge_covariates.clone(),
                ridge_control_mean: config.ridge_control_mean,
            };
            if family == ModelFamily::SiteRidge {
                let sweep = if config.ridge_sweep.is_empty() {
                    vec![config.priors.ridge_sd]
                } else {
                    config.ridge_sweep.clone()
                };
                let mut ridge_fits = Vec::new();
                for penalty in sweep {
                    let seed = fit_seed(config.seed, &o.name, family, Some(penalty));
                    let mut s = spec.clone();
                    s.priors.ridge_sd = penalty;
                    log::info!("fitting {family} to `{}` at ridge sd {penalty}", o.name);
                    let draws = run_chains(&s, &data, &config.sampler_with_seed(seed))?;
                    let report =
                        analyze_fit(family, &o.name, &data, &draws, seed, &config.predictive_thresholds)?;
                    let dir = format!("{base_dir}/ridge_sd_{penalty:?}");
                    fit_files(&mut out, &dir, &config, &draws, &report)?;
                    fits.push(record(&o.name, family, Some(penalty), seed, &dir, &draws));
                    ridge_fits.push((penalty, draws));
                }
                let pairs: Vec<(f64, &PosteriorDraws)> = ridge_fits.iter().map(|(p, d)| (*p, d)).collect();
                out.json(format!("{base_dir}/ridge.json"), &ridge_coefficient_report(&pairs))?;
            } else {
                let seed = fit_seed(config.seed, &o.name, family, None);
                log::info!("fitting {family} to `{}`", o.name);
                let draws = run_chains(&spec, &data, &config.sampler_with_seed(seed))?;
                let report = analyze_fit(family, &o.name, &data, &draws, seed, &config.predictive_thresholds)?;
                fit_files(&mut out, &base_dir, &config, &draws, &report)?;
                fits.push(record(&o.name, family, None, seed, &base_dir, &draws));
            }
        }
    }
    out.add(CONFIG_FILE.to_string(), config_text.clone().into_bytes());

    let mut files: Vec<FileRecord> = out
        .files
        .iter()
        .map(|(p, b)| FileRecord {
            path: p.clone(),
            sha256: sha256_hex(b),
        })
        .collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let all_converged = fits.iter().all(|f| f.converged);
    let manifest = Manifest {
        tool: "bhm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: sha256_hex(config_text.as_bytes()),
        seed: config.seed,
        all_converged,
        allow_nonconverged: config.allow_nonconverged,
        fits,
        files,
    };
    out.json(MANIFEST_FILE.to_string(), &manifest)?;
    write_all(&config.out_dir, &out.files)?;

    let exit_code = if all_converged || config.allow_nonconverged {
        EXIT_OK
    } else {
        EXIT_CONVERGENCE
    };
    Ok(PipelineResult {
        out_dir: config.out_dir.clone(),
        manifest,
        exit_code,
    })
}
