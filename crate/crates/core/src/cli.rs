//! Command-line front end: `fit`, `simulate`, `ampute`, `bench` and `impute`.
//!
//! Exit codes: 0 success (and converged, for `fit`), 2 fit finished without
//! converging, 1 runtime error, 64 usage or configuration error, 65 bad
//! input data.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bench::{run_study, StudyGrid, PAPER_REPLICATES};
use crate::config::{CmRule, FitConfig};
use crate::data::{format_dataset, load_dataset, write_dataset, Dataset, DEFAULT_MISSING_TOKEN};
use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::result::{impute_dataset, FitDocument, FitResult};
use crate::simulate::{ampute, generate_scenario, AmputationConfig, Family, Overlap, ScenarioConfig, TruthDocument};
use crate::tmix::distance_outliers;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;

#[derive(Debug, Parser)]
#[command(name = "mcnm", version, about = "Contaminated-normal mixture clustering for data with missing values")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a mixture and write the result document, labels, outlier flags and imputed data.
    Fit(FitArgs),
    /// Generate a labeled synthetic dataset and its truth file.
    Simulate(SimulateArgs),
    /// Remove values from a fully observed dataset under a MAR mechanism.
    Ampute(AmputeArgs),
    /// Run the replicated simulation study over a scenario grid.
    Bench(BenchArgs),
    /// Fill missing cells using a saved fit.
    Impute(ImputeArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// RNG seed; overrides the MCNM_SEED environment variable.
    #[arg(long, env = "MCNM_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Delimited input file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "mcnm")]
    pub model: ModelKind,
    /// Number of components.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub g: Option<u64>,
    /// Output directory for result.json, labels.csv, outliers.csv and imputed.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with fit settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_MISSING_TOKEN)]
    pub missing_token: String,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub n_starts: Option<usize>,
    #[arg(long)]
    pub alpha_min: Option<f64>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
    #[arg(long)]
    pub eta_min: Option<f64>,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Fix the t degrees of freedom instead of estimating them.
    #[arg(long)]
    pub nu_fixed: Option<f64>,
    /// Scale and η update used with missing cells: printed or exact.
    #[arg(long)]
    pub cm_rule: Option<CmRule>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub overlap: Option<Overlap>,
    #[arg(long)]
    pub d: Option<usize>,
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output data file.
    #[arg(long)]
    pub out: PathBuf,
    /// Truth file; defaults to the output path with a `.truth.json` suffix.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct AmputeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of rows that receive missing cells.
    #[arg(long)]
    pub prop: f64,
    /// TOML file with `patterns` and `weights` tables; defaults to ten slots.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = DEFAULT_MISSING_TOKEN)]
    pub missing_token: String,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// TOML file describing the grid; defaults to the 48-cell study.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Use the paper-scale replicate count.
    #[arg(long, conflicts_with = "replicates")]
    pub full_paper_scale: bool,
    /// TOML file with fit settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Result document written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = DEFAULT_MISSING_TOKEN)]
    pub missing_token: String,
}

impl TuningArgs {
    fn apply(&self, cfg: &mut FitConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(tol, max_iter, n_starts, alpha_min, alpha_max, eta_min, ridge, cm_rule);
        if self.nu_fixed.is_some() {
            cfg.nu_fixed = self.nu_fixed;
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_data_error() {
        EXIT_DATA
    } else if matches!(e, Error::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_ERROR
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Simulate(a) => cmd_simulate(a, out).map(|()| EXIT_OK),
        Command::Ampute(a) => cmd_ampute(a, out).map(|()| EXIT_OK),
        Command::Bench(a) => cmd_bench(a, out).map(|()| EXIT_OK),
        Command::Impute(a) => cmd_impute(a, out).map(|()| EXIT_OK),
    };
    outcome.unwrap_or_else(|e| {
        let _ = writeln!(err, "error: {e}");
        exit_code(&e)
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fit_config(file: Option<&Path>, seed: Option<u64>, tuning: &TuningArgs) -> Result<FitConfig> {
    let mut cfg = match file {
        Some(p) => FitConfig::from_file(p)?,
        None => FitConfig::default(),
    };
    tuning.apply(&mut cfg);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn column_file(header: &str, values: impl Iterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for v in values {
        s.push_str(&v);
        s.push('\n');
    }
    s
}

pub fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = fit_config(args.config.as_deref(), args.seed.seed, &args.tuning)?;
    if let Some(g) = args.g {
        cfg.g = g as usize;
    }
    cfg.validate()?;
    let ds = load_dataset(&args.data, &args.missing_token)?;
    let res = crate::fit(&ds, args.model, &cfg)?;
    create_dir(&args.out)?;
    res.to_document(&cfg).write(args.out.join("result.json"))?;
    write_text(
        &args.out.join("labels.csv"),
        &column_file("label", res.labels.iter().map(|l| l.to_string())),
    )?;
    let outliers = match args.model {
        ModelKind::Mcnm => column_file("outlier", res.outlier_flag.iter().map(|f| u8::from(*f).to_string())),
        ModelKind::Tmix => {
            let dist = distance_outliers(&res, cfg.outlier_quantile)?;
            column_file(
                "outlier,distance_outlier",
                res.outlier_flag
                    .iter()
                    .zip(&dist)
                    .map(|(a, b)| format!("{},{}", u8::from(*a), u8::from(*b))),
            )
        }
    };
    write_text(&args.out.join("outliers.csv"), &outliers)?;
    write_text(&args.out.join("imputed.csv"), &format_dataset(&res.imputed, &args.missing_token))?;
    print_summary(&res, out);
    Ok(if res.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn print_summary(res: &FitResult, out: &mut dyn Write) {
    let _ = writeln!(out, "model        {}", res.model.kind());
    let _ = writeln!(out, "components   {}", res.model.g());
    let _ = writeln!(out, "loglik       {:.6}", res.loglik);
    let _ = writeln!(out, "bic          {:.6}", res.bic);
    let _ = writeln!(out, "iterations   {}", res.n_iter);
    let _ = writeln!(out, "converged    {}", res.converged);
    let sizes: Vec<String> = res.cluster_sizes().iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "cluster sizes {}", sizes.join(" "));
    let _ = writeln!(out, "outliers     {}", res.outlier_flag.iter().filter(|&&f| f).count());
    if !res.flags.is_empty() {
        let _ = writeln!(out, "flags        {}", res.flags.join(" "));
    }
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<ScenarioConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(f) = args.family {
        cfg.family = f;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(o) = args.overlap {
        cfg.overlap = o;
    }
    if let Some(d) = args.d {
        cfg.d = d;
    }
    if let Some(s) = args.seed.seed {
        cfg.seed = s;
    }
    let ld = generate_scenario(&cfg)?;
    let columns = (1..=cfg.d).map(|j| format!("x{j}")).collect();
    write_dataset(&ld.data.clone().with_columns(columns)?, &args.out)?;
    let truth_path = args.truth.clone().unwrap_or_else(|| {
        let mut s = args.out.clone().into_os_string();
        s.push(".truth.json");
        PathBuf::from(s)
    });
    TruthDocument::from_labeled(&ld).write(&truth_path)?;
    let _ = writeln!(
        out,
        "wrote {} rows ({} outliers) to {}",
        cfg.n,
        ld.true_outlier.iter().filter(|&&o| o).count(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternFile {
    patterns: Vec<Vec<bool>>,
    weights: Vec<Vec<f64>>,
}

pub fn cmd_ampute(args: &AmputeArgs, out: &mut dyn Write) -> Result<()> {
    let ds: Dataset = load_dataset(&args.data, &args.missing_token)?;
    let seed = args.seed.seed.unwrap_or(0);
    let cfg = match &args.patterns {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file: PatternFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            AmputationConfig {
                prop_rows: args.prop,
                patterns: file.patterns,
                weights: file.weights,
                seed,
            }
        }
        None => AmputationConfig::default_for(ds.d(), args.prop, seed),
    };
    let amputed = ampute(&ds, &cfg)?;
    write_text(&args.out, &format_dataset(&amputed, &args.missing_token))?;
    let _ = writeln!(out, "{} of {} rows now have missing cells", amputed.incomplete_rows(), amputed.n());
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let mut grid = match &args.grid {
        Some(p) => StudyGrid::from_file(p)?,
        None => StudyGrid::default(),
    };
    if let Some(r) = args.replicates {
        grid.replicates = r;
    }
    if args.full_paper_scale {
        grid.replicates = PAPER_REPLICATES;
    }
    if let Some(s) = args.seed.seed {
        grid.base_seed = s;
    }
    let cfg = fit_config(args.config.as_deref(), None, &args.tuning)?;
    let report = run_study(&grid, &cfg)?;
    report.write(&args.out)?;
    let failures = report.runs.iter().filter(|r| r.error.is_some()).count();
    let _ = writeln!(
        out,
        "{} cells x {} replicates, {} runs, {} failed; reports in {}",
        grid.cells().len(),
        grid.replicates,
        report.runs.len(),
        failures,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_impute(args: &ImputeArgs, out: &mut dyn Write) -> Result<()> {
    let doc = FitDocument::read(&args.fit)?;
    let model = doc.fitted_model()?;
    let ds = load_dataset(&args.data, &args.missing_token)?;
    let filled = impute_dataset(&model, &ds, doc.config.ridge)?;
    write_text(&args.out, &format_dataset(&filled, &args.missing_token))?;
    let cells = ds.n() * ds.d() - ds.observed_count();
    let _ = writeln!(out, "filled {cells} missing cells");
    Ok(())
}
