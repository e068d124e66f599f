use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bhm_core::config::{load_config, RunConfig};
use bhm_core::models::{ModelFamily, ModelSpec, Parameterization, PriorConfig};
use bhm_core::oracle::{sbc_run, simulate_hierarchical_data, CellTruth, Design, SbcConfig, SyntheticTruth};
use bhm_core::pipeline::{exit_code, run_pipeline, EXIT_OK, EXIT_OTHER};
use bhm_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bhm", version, about = "Bayesian hierarchical aggregation of multi-site randomized experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every configured outcome and family and write reports.
    Fit(RunArgs),
    /// Check a config file and print it with every default filled in.
    Validate(RunArgs),
    /// Simulation-based calibration of one model family.
    Sbc(SbcArgs),
    /// Generate a synthetic multi-site dataset with known parameters.
    Simulate(SimulateArgs),
}

/// Flags shared by `fit` and `validate`; each one overrides the config file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Model family; repeat for several.
    #[arg(long)]
    family: Vec<String>,
    /// Outcome name; repeat for several.
    #[arg(long)]
    outcome: Vec<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Exit 0 even when a fit fails the R-hat gate.
    #[arg(long)]
    allow_nonconverged: bool,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut put = |k: &str, v: String| o.push((k.to_string(), v));
        if let Some(v) = self.seed {
            put("seed", v.to_string());
        }
        if let Some(v) = self.chains {
            put("chains", v.to_string());
        }
        if let Some(v) = self.iters {
            put("iters", v.to_string());
        }
        if let Some(v) = self.warmup {
            put("warmup", v.to_string());
        }
        if !self.family.is_empty() {
            put("families", self.family.join(","));
        }
        if !self.outcome.is_empty() {
            put("outcomes", self.outcome.join(","));
        }
        if let Some(v) = &self.out_dir {
            put("out_dir", v.display().to_string());
        }
        if self.allow_nonconverged {
            put("allow_nonconverged", "true".into());
        }
        o
    }

    fn load(&self) -> Result<RunConfig> {
        load_config(self.config.as_deref(), &self.overrides())
    }
}

#[derive(Args)]
struct SbcArgs {
    #[arg(long, default_value = "rubin_summary")]
    family: String,
    #[arg(long, default_value = "non_centered")]
    parameterization: String,
    #[arg(long, default_value_t = 1000)]
    replications: usize,
    #[arg(long, default_value_t = 5)]
    sites: usize,
    #[arg(long, default_value_t = 50)]
    n_per_site: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    hypermean_sd: f64,
    #[arg(long, default_value_t = 2.0)]
    theta_scale: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma_y_upper: f64,
    /// Write the report here as JSON; it is printed otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// `micro` for household rows, `summary` for site estimates.
    #[arg(long, default_value = "micro")]
    design: String,
    #[arg(long, default_value_t = 7)]
    sites: usize,
    #[arg(long, default_value_t = 200)]
    n_per_site: usize,
    /// Standard error of every site estimate (summary design).
    #[arg(long, default_value_t = 1.0)]
    se: f64,
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_tau: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_y: f64,
    /// Add a binary household covariate of this name whose subgroup effect
    /// exceeds the rest by `--subgroup-contrast`.
    #[arg(long)]
    subgroup: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    subgroup_contrast: f64,
    #[arg(long, default_value_t = 0.5)]
    subgroup_prevalence: f64,
    #[arg(long, default_value_t = 20_161_018)]
    seed: u64,
    /// Directory for the data CSV and `truth.json`.
    #[arg(long)]
    out_dir: PathBuf,
}

fn report(err: &Error) -> u8 {
    eprintln!("error: {err}");
    exit_code(err) as u8
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn fit(args: &RunArgs) -> Result<i32> {
    let config = args.load()?;
    let result = run_pipeline(&config)?;
    for f in &result.manifest.fits {
        let rhat = f.max_rhat.map_or("n/a".to_string(), |r| format!("{r:.4}"));
        let status = if f.converged { "ok" } else { "NOT CONVERGED" };
        println!("{:<40} max R-hat {rhat:<8} divergences {:<6} {status}", f.dir, f.divergences);
    }
    println!("outputs in {}", result.out_dir.display());
    Ok(result.exit_code)
}

fn validate(args: &RunArgs) -> Result<i32> {
    let config = args.load()?;
    print!("{}", config.to_text());
    Ok(EXIT_OK)
}

fn sbc(args: &SbcArgs) -> Result<i32> {
    let family: ModelFamily = args.family.parse()?;
    let parameterization: Parameterization = args.parameterization.parse()?;
    let priors = PriorConfig {
        hypermean_sd: args.hypermean_sd,
        theta_scale: args.theta_scale,
        sigma_y_upper: args.sigma_y_upper,
        ..PriorConfig::default()
    };
    let spec = ModelSpec::new(family)
        .with_priors(priors)
        .with_parameterization(parameterization);
    let mut config = SbcConfig {
        replications: args.replications,
        sites: args.sites,
        n_per_site: args.n_per_site,
        ..SbcConfig::default()
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(c) = args.chains {
        config.sampler.chains = c;
    }
    if let Some(i) = args.iters {
        config.sampler.iters = i;
    }
    if let Some(w) = args.warmup {
        config.sampler.warmup = w;
    }
    let r = sbc_run(&spec, &config)?;
    let mut json = serde_json::to_vec_pretty(&r.to_json()).map_err(|e| Error::Other(e.to_string()))?;
    json.push(b'\n');
    match &args.out {
        Some(p) => write_file(p, &json)?,
        None => print!("{}", String::from_utf8_lossy(&json)),
    }
    for p in &r.parameters {
        eprintln!("{:<20} chi-square {:>8.2} p {:.4} {}", p.name, p.chi_square, p.p_value, if p.passed { "ok" } else { "FAIL" });
    }
    eprintln!(
        "excluded {}/{} ({:.1}%); {}",
        r.excluded,
        r.replications,
        100.0 * r.exclusion_rate,
        if r.passed { "calibrated" } else { "NOT CALIBRATED" }
    );
    Ok(if r.passed { EXIT_OK } else { EXIT_OTHER })
}

fn simulate(args: &SimulateArgs) -> Result<i32> {
    let mut truth = match args.design.as_str() {
        "micro" => SyntheticTruth::micro(
            args.sites,
            args.n_per_site,
            args.mu,
            args.tau,
            args.sigma_mu,
            args.sigma_tau,
            args.seed,
        ),
        "summary" => SyntheticTruth::summary(args.tau, args.sigma_tau, vec![args.se; args.sites], args.seed),
        other => return Err(Error::Config(vec![format!("design must be micro or summary, got `{other}`")])),
    };
    truth.sigma_y = vec![args.sigma_y; args.sites];
    if let Some(name) = &args.subgroup {
        if !matches!(truth.design, Design::Micro { .. }) {
            return Err(Error::Config(vec!["--subgroup needs the micro design".into()]));
        }
        truth.cells = Some(CellTruth {
            covariate: name.clone(),
            prevalence: args.subgroup_prevalence,
            mu_cell: [args.mu, args.mu],
            tau_cell: [args.tau, args.tau + args.subgroup_contrast],
            sigma_mu_cell: [args.sigma_mu, args.sigma_mu],
            sigma_tau_cell: [args.sigma_tau, args.sigma_tau],
        });
    }
    let sim = simulate_hierarchical_data(&truth)?;
    let mut buf = Vec::new();
    let data_file = match &sim.micro {
        Some(m) => {
            m.write_csv(&mut buf)?;
            "micro.csv"
        }
        None => {
            sim.summary.write_csv(&mut buf)?;
            "summary.csv"
        }
    };
    write_file(&args.out_dir.join(data_file), &buf)?;
    let values: serde_json::Map<String, serde_json::Value> = sim
        .truth_values()
        .into_iter()
        .map(|(k, v)| (k, serde_json::json!(v)))
        .collect();
    let json = serde_json::json!({ "truth": truth, "values": values });
    let mut bytes = serde_json::to_vec_pretty(&json).map_err(|e| Error::Other(e.to_string()))?;
    bytes.push(b'\n');
    write_file(&args.out_dir.join("truth.json"), &bytes)?;
    println!("wrote {} and truth.json to {}", data_file, args.out_dir.display());
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Validate(a) => validate(a),
        Command::Sbc(a) => sbc(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => ExitCode::from(report(&e)),
    }
}
