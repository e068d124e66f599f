//! Run configuration for the batch pipeline.
//!
//! The file format is flat `key = value` text; `key: value` is accepted too.
//! Blank lines and lines starting with `#` are ignored, keys may appear at
//! most once, and list values are comma-separated (an empty value is an empty
//! list). Relative paths are resolved against the directory of the config
//! file. Every key of [`CONFIG_KEYS`] is optional; missing keys take the
//! defaults of [`RunConfig::default`].

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::DEFAULT_RIDGE_SWEEP;
use crate::data::DEFAULT_MAX_CELL_COVARIATES;
use crate::models::{ModelFamily, Parameterization, PriorConfig};
use crate::sampler::SamplerConfig;
use crate::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "BHM_OUT_ROOT";

/// Output directory used when neither the config nor the environment names one.
pub const DEFAULT_OUT_DIR: &str = "bhm-output";

/// Every accepted key, in the order of the normalized text.
pub const CONFIG_KEYS: [&str; 31] = [
    "summary_data",
    "microdata",
    "site_covariates",
    "outcomes",
    "families",
    "hypermean_sd",
    "theta_scale",
    "lkj_eta",
    "sigma_y_upper",
    "ridge_sd",
    "parameterization",
    "chains",
    "warmup",
    "iters",
    "target_accept",
    "max_depth",
    "init_radius",
    "parallel_chains",
    "pooling",
    "predictive",
    "predictive_thresholds",
    "densities",
    "interaction_covariates",
    "max_cell_covariates",
    "ridge_sweep",
    "ridge_covariates",
    "ridge_control_mean",
    "ridge_standardize_outcome",
    "out_dir",
    "seed",
    "allow_nonconverged",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// Summary CSV (`site`, `tau_hat`, `se_tau` [, `mu_hat`, `se_mu`] [, `outcome`]).
    pub summary_data: Option<PathBuf>,
    /// Household microdata CSV.
    pub microdata: Option<PathBuf>,
    /// Site-level covariates for the Ridge family.
    pub site_covariates: Option<PathBuf>,
    /// Outcome columns of the microdata, or `outcome` values of the summary
    /// file. Empty means the single unnamed outcome of a summary file.
    pub outcomes: Vec<String>,
    pub families: Vec<ModelFamily>,
    pub priors: PriorConfig,
    pub parameterization: Parameterization,
    /// Sampler settings; its seed is ignored in favour of per-fit seeds
    /// derived from [`RunConfig::seed`].
    pub sampler: SamplerConfig,
    pub pooling: bool,
    pub predictive: bool,
    /// Extra thresholds for the predictive tail probabilities (0 is always
    /// reported).
    pub predictive_thresholds: Vec<f64>,
    pub densities: bool,
    pub interaction_covariates: Vec<String>,
    pub max_cell_covariates: usize,
    /// Ridge prior standard deviations to fit. Empty means one fit at
    /// `priors.ridge_sd`.
    pub ridge_sweep: Vec<f64>,
    /// Site covariates used by the Ridge family; empty means every column.
    pub ridge_covariates: Vec<String>,
    pub ridge_control_mean: bool,
    /// Standardize the outcome before the Ridge fit.
    pub ridge_standardize_outcome: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub allow_nonconverged: bool,
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

impl Default for RunConfig {
    fn default() -> Self {
        let sampler = SamplerConfig::default();
        RunConfig {
            summary_data: None,
            microdata: None,
            site_covariates: None,
            outcomes: Vec::new(),
            families: vec![ModelFamily::FullDataJoint],
            priors: PriorConfig::default(),
            parameterization: Parameterization::NonCentered,
            pooling: true,
            predictive: true,
            predictive_thresholds: Vec::new(),
            densities: true,
            interaction_covariates: Vec::new(),
            max_cell_covariates: DEFAULT_MAX_CELL_COVARIATES,
            ridge_sweep: DEFAULT_RIDGE_SWEEP.to_vec(),
            ridge_covariates: Vec::new(),
            ridge_control_mean: true,
            ridge_standardize_outcome: true,
            out_dir: default_out_dir(),
            seed: sampler.seed,
            allow_nonconverged: false,
            sampler,
        }
    }
}

fn split_line(line: &str) -> Option<(&str, &str)> {
    let i = line.find(['=', ':'])?;
    Some((line[..i].trim(), line[i + 1..].trim()))
}

fn list(value: &str) -> Vec<&str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one key from its text value. `base` resolves relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse::<T>().map_err(|_| format!("{key}: `{v}` is not a valid number"))
        }
        fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(format!("{key}: `{v}` is not a boolean")),
            }
        }
        fn nums(key: &str, v: &str) -> std::result::Result<Vec<f64>, String> {
            list(v).into_iter().map(|x| num::<f64>(key, x)).collect()
        }
        let path = |v: &str| -> Option<PathBuf> {
            if v.is_empty() {
                None
            } else {
                let p = PathBuf::from(v);
                Some(if p.is_absolute() { p } else { base.join(p) })
            }
        };
        let strings = |v: &str| list(v).into_iter().map(str::to_string).collect::<Vec<_>>();
        match key {
            "summary_data" => self.summary_data = path(value),
            "microdata" => self.microdata = path(value),
            "site_covariates" => self.site_covariates = path(value),
            "outcomes" => self.outcomes = strings(value),
            "families" => {
                self.families = list(value)
                    .into_iter()
                    .map(|f| f.parse::<ModelFamily>().map_err(|e| format!("families: {e}")))
                    .collect::<std::result::Result<_, _>>()?
            }
            "hypermean_sd" => self.priors.hypermean_sd = num(key, value)?,
            "theta_scale" => self.priors.theta_scale = num(key, value)?,
            "lkj_eta" => self.priors.lkj_eta = num(key, value)?,
            "sigma_y_upper" => self.priors.sigma_y_upper = num(key, value)?,
            "ridge_sd" => self.priors.ridge_sd = num(key, value)?,
            "parameterization" => {
                self.parameterization = value.parse().map_err(|e: Error| format!("parameterization: {e}"))?
            }
            "chains" => self.sampler.chains = num(key, value)?,
            "warmup" => self.sampler.warmup = num(key, value)?,
            "iters" => self.sampler.iters = num(key, value)?,
            "target_accept" => self.sampler.target_accept = num(key, value)?,
            "max_depth" => self.sampler.max_depth = num(key, value)?,
            "init_radius" => self.sampler.init_radius = num(key, value)?,
            "parallel_chains" => self.sampler.parallel = flag(key, value)?,
            "pooling" => self.pooling = flag(key, value)?,
            "predictive" => self.predictive = flag(key, value)?,
            "predictive_thresholds" => self.predictive_thresholds = nums(key, value)?,
            "densities" => self.densities = flag(key, value)?,
            "interaction_covariates" => self.interaction_covariates = strings(value),
            "max_cell_covariates" => self.max_cell_covariates = num(key, value)?,
            "ridge_sweep" => self.ridge_sweep = nums(key, value)?,
            "ridge_covariates" => self.ridge_covariates = strings(value),
            "ridge_control_mean" => self.ridge_control_mean = flag(key, value)?,
            "ridge_standardize_outcome" => self.ridge_standardize_outcome = flag(key, value)?,
            "out_dir" => {
                self.out_dir = path(value).ok_or_else(|| "out_dir: must not be empty".to_string())?
            }
            "seed" => {
                self.seed = num(key, value)?;
                self.sampler.seed = self.seed;
            }
            "allow_nonconverged" => self.allow_nonconverged = flag(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// The sampler settings with `seed`.
    pub fn sampler_with_seed(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            seed,
            ..self.sampler.clone()
        }
    }

    /// Value checks that do not touch the filesystem. Every problem is
    /// reported.
    pub fn check(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if let Err(Error::Config(e)) = self.sampler.validate() {
            errs.extend(e);
        }
        if let Err(Error::Config(e)) = self.priors.validate() {
            errs.extend(e);
        }
        if self.families.is_empty() {
            errs.push("families: at least one model family is required".into());
        }
        let mut seen = Vec::new();
        for f in &self.families {
            if seen.contains(f) {
                errs.push(format!("families: `{f}` listed twice"));
            }
            seen.push(*f);
        }
        if self.parameterization == Parameterization::Centered && self.families.contains(&ModelFamily::Interactions) {
            errs.push("parameterization: centered is not available for the interactions family".into());
        }
        if self.families.contains(&ModelFamily::Interactions) {
            if self.interaction_covariates.is_empty() {
                errs.push("interaction_covariates: required by the interactions family".into());
            }
            if self.interaction_covariates.len() > self.max_cell_covariates {
                errs.push(format!(
                    "interaction_covariates: {} covariates exceed max_cell_covariates = {}",
                    self.interaction_covariates.len(),
                    self.max_cell_covariates
                ));
            }
        }
        for p in &self.ridge_sweep {
            if !(*p > 0.0) || !p.is_finite() {
                errs.push(format!("ridge_sweep: penalties must be positive and finite, got {p}"));
            }
        }
        if self.predictive_thresholds.iter().any(|t| !t.is_finite()) {
            errs.push("predictive_thresholds: values must be finite".into());
        }
        let mut outcomes = self.outcomes.clone();
        outcomes.sort();
        if outcomes.windows(2).any(|w| w[0] == w[1]) {
            errs.push("outcomes: duplicate outcome names".into());
        }
        errs
    }

    /// Data requirements of the selected families, checked before a run.
    pub fn check_inputs(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for f in &self.families {
            match f {
                ModelFamily::RubinSummary | ModelFamily::JointSummary => {
                    if self.summary_data.is_none() && self.microdata.is_none() {
                        errs.push(format!("{f}: needs summary_data or microdata"));
                    }
                }
                ModelFamily::SiteRidge => {
                    if self.microdata.is_none() || self.site_covariates.is_none() {
                        errs.push(format!("{f}: needs microdata and site_covariates"));
                    }
                }
                _ => {
                    if self.microdata.is_none() {
                        errs.push(format!("{f}: needs microdata"));
                    }
                }
            }
        }
        if self.microdata.is_some() && self.outcomes.is_empty() {
            errs.push("outcomes: microdata needs at least one outcome column".into());
        }
        errs
    }

    /// The normalized config: every key in [`CONFIG_KEYS`] order with its
    /// effective value.
    pub fn to_text(&self) -> String {
        let s = &self.sampler;
        let p = &self.priors;
        let values: [String; 31] = [
            fmt_path(&self.summary_data),
            fmt_path(&self.microdata),
            fmt_path(&self.site_covariates),
            self.outcomes.join(", "),
            fmt_list(&self.families),
            fmt_f64(p.hypermean_sd),
            fmt_f64(p.theta_scale),
            fmt_f64(p.lkj_eta),
            fmt_f64(p.sigma_y_upper),
            fmt_f64(p.ridge_sd),
            self.parameterization.as_str().to_string(),
            s.chains.to_string(),
            s.warmup.to_string(),
            s.iters.to_string(),
            fmt_f64(s.target_accept),
            s.max_depth.to_string(),
            fmt_f64(s.init_radius),
            s.parallel.to_string(),
            self.pooling.to_string(),
            self.predictive.to_string(),
            self.predictive_thresholds.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", "),
            self.densities.to_string(),
            self.interaction_covariates.join(", "),
            self.max_cell_covariates.to_string(),
            self.ridge_sweep.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", "),
            self.ridge_covariates.join(", "),
            self.ridge_control_mean.to_string(),
            self.ridge_standardize_outcome.to_string(),
            self.out_dir.display().to_string(),
            self.seed.to_string(),
            self.allow_nonconverged.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            if v.is_empty() {
                out.push_str(&format!("{k} =\n"));
            } else {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

/// Parses config text. `base` resolves relative paths. Syntax and value
/// errors are collected and returned together.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig> {
    parse_config_with_overrides(text, base, &[])
}

/// Parses config text, then applies `overrides` (e.g. from command-line
/// flags) before validating, so an override wins over the file. Override
/// paths resolve against the working directory.
pub fn parse_config_with_overrides(text: &str, base: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    let mut errs = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = split_line(line) else {
            errs.push(format!("line {}: expected `key = value`", i + 1));
            continue;
        };
        if seen.iter().any(|k| k == key) {
            errs.push(format!("line {}: duplicate key `{key}`", i + 1));
            continue;
        }
        seen.push(key.to_string());
        if let Err(e) = config.set(key, value, base) {
            errs.push(format!("line {}: {e}", i + 1));
        }
    }
    for (key, value) in overrides {
        if let Err(e) = config.set(key, value, Path::new("")) {
            errs.push(format!("override: {e}"));
        }
    }
    errs.extend(config.check());
    if errs.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(errs))
    }
}

/// Reads `path` (or starts from the defaults when `None`) and applies
/// `overrides`.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            parse_config_with_overrides(&text, base, overrides)
        }
        None => parse_config_with_overrides("", Path::new(""), overrides),
    }
}

/// Reads and validates a config file, returning the config with every
/// default materialized.
pub fn validate_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    load_config(Some(path.as_ref()), &[])
}
