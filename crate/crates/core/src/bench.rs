//! Replicated simulation study: generate, ampute, fit both mixtures, score.
//!
//! Each (cell, replicate) run gets its own seed derived from the base seed,
//! a key built from the cell's descriptors and the replicate index, so a
//! cell's numbers do not depend on which other cells are in the grid.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::FitConfig;
use crate::error::{Error, Result};
use crate::metrics::{adjusted_rand_index, outlier_rates, summarize, Summary};
use crate::model::ModelKind;
use crate::simulate::{ampute, generate_scenario, AmputationConfig, Family, Overlap, ScenarioConfig};
use crate::tmix::distance_outliers;

pub const PAPER_REPLICATES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyGrid {
    pub n_values: Vec<usize>,
    pub overlaps: Vec<Overlap>,
    pub families: Vec<Family>,
    pub missing_props: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Generator settings shared by every cell; family, n, overlap and seed
    /// are overwritten per run.
    pub scenario: ScenarioConfig,
}

impl Default for StudyGrid {
    fn default() -> Self {
        Self {
            n_values: vec![100, 500],
            overlaps: vec![Overlap::Far, Overlap::Close],
            families: Family::ALL.to_vec(),
            missing_props: vec![0.10, 0.50, 0.80],
            replicates: 5,
            base_seed: 0,
            scenario: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub family: Family,
    pub n: usize,
    pub overlap: Overlap,
    pub missing_prop: f64,
}

impl Cell {
    /// Stable identifier built from the descriptors only.
    pub fn key(&self) -> String {
        format!("{}/{}/{}/{}", self.family, self.n, self.overlap, self.missing_prop)
    }
}

impl StudyGrid {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.overlaps.is_empty() || self.families.is_empty() || self.missing_props.is_empty() {
            return Err(Error::Config("every grid axis needs at least one value".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.missing_props.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Config("missing proportions must lie in (0,1)".into()));
        }
        self.scenario.validate()
    }

    /// Cells in family, n, overlap, missing-proportion order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &family in &self.families {
            for &n in &self.n_values {
                for &overlap in &self.overlaps {
                    for &missing_prop in &self.missing_props {
                        cells.push(Cell {
                            family,
                            n,
                            overlap,
                            missing_prop,
                        });
                    }
                }
            }
        }
        cells
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn mix(acc: u64, value: u64) -> u64 {
    splitmix64(acc ^ splitmix64(value))
}

/// Seed of one run: splitmix64 folded over the base seed, an FNV-1a hash of
/// the cell key and the replicate index.
pub fn run_seed(base_seed: u64, cell: &Cell, replicate: usize) -> u64 {
    let key_hash = cell
        .key()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    mix(mix(splitmix64(base_seed), key_hash), replicate as u64)
}

/// Which outlier ground truth a rate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierScope {
    /// Families with substituted points.
    Paper,
    /// Bad points of the contaminated-normal generator.
    Extension,
    None,
}

impl OutlierScope {
    pub fn of(family: Family) -> Self {
        match family {
            Family::MnAtypical | Family::MnUniformNoise => OutlierScope::Paper,
            Family::Mcn => OutlierScope::Extension,
            Family::StudentT => OutlierScope::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutlierScope::Paper => "paper",
            OutlierScope::Extension => "extension",
            OutlierScope::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: Cell,
    pub replicate: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub ari: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub outlier_scope: OutlierScope,
    pub n_iter: Option<usize>,
    pub converged: Option<bool>,
    pub loglik: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: Cell,
    pub model: ModelKind,
    pub runs: usize,
    pub failures: usize,
    pub ari: Summary,
    pub tpr: Summary,
    pub fpr: Summary,
    pub outlier_scope: OutlierScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub grid: StudyGrid,
    pub fit_config: FitConfig,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

fn failed(cell: Cell, replicate: usize, seed: u64, model: ModelKind, message: String) -> RunRecord {
    RunRecord {
        cell,
        replicate,
        seed,
        model,
        ari: None,
        tpr: None,
        fpr: None,
        outlier_scope: OutlierScope::of(cell.family),
        n_iter: None,
        converged: None,
        loglik: None,
        error: Some(message),
    }
}

/// Runs one replicate of one cell; returns the MCNM record then the t record.
pub fn run_cell(grid: &StudyGrid, cell: Cell, replicate: usize, fit_cfg: &FitConfig) -> [RunRecord; 2] {
    let seed = run_seed(grid.base_seed, &cell, replicate);
    let scenario = ScenarioConfig {
        family: cell.family,
        n: cell.n,
        overlap: cell.overlap,
        seed,
        ..grid.scenario.clone()
    };
    let prepared = generate_scenario(&scenario).and_then(|ld| {
        let amp = AmputationConfig::default_for(scenario.d, cell.missing_prop, splitmix64(seed ^ 1));
        Ok((ampute(&ld.data, &amp)?, ld))
    });
    let (data, truth) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return [
                failed(cell, replicate, seed, ModelKind::Mcnm, msg.clone()),
                failed(cell, replicate, seed, ModelKind::Tmix, msg),
            ];
        }
    };
    let cfg = FitConfig {
        seed: splitmix64(seed ^ 2),
        ..fit_cfg.clone()
    };
    let scope = OutlierScope::of(cell.family);
    [ModelKind::Mcnm, ModelKind::Tmix].map(|kind| {
        let fitted = crate::fit(&data, kind, &cfg).and_then(|res| {
            let ari = adjusted_rand_index(&res.labels, &truth.true_labels)?;
            let (tpr, fpr) = if scope == OutlierScope::None {
                (None, None)
            } else {
                let predicted = match kind {
                    ModelKind::Mcnm => res.outlier_flag.clone(),
                    ModelKind::Tmix => distance_outliers(&res, cfg.outlier_quantile)?,
                };
                let rates = outlier_rates(&predicted, &truth.true_outlier)?;
                (rates.tpr, rates.fpr)
            };
            Ok(RunRecord {
                cell,
                replicate,
                seed,
                model: kind,
                ari: Some(ari),
                tpr,
                fpr,
                outlier_scope: scope,
                n_iter: Some(res.n_iter),
                converged: Some(res.converged),
                loglik: Some(res.loglik),
                error: None,
            })
        });
        fitted.unwrap_or_else(|e| failed(cell, replicate, seed, kind, e.to_string()))
    })
}

/// Runs every cell and replicate of `grid` with both mixtures.
pub fn run_study(grid: &StudyGrid, fit_cfg: &FitConfig) -> Result<StudyReport> {
    grid.validate()?;
    fit_cfg.validate()?;
    if fit_cfg.g != grid.scenario.g {
        return Err(Error::Config(format!(
            "the study fits G = {} components to match the generator, got g = {}",
            grid.scenario.g, fit_cfg.g
        )));
    }
    let tasks: Vec<(Cell, usize)> = grid
        .cells()
        .into_iter()
        .flat_map(|c| (0..grid.replicates).map(move |r| (c, r)))
        .collect();
    // collect keeps task order regardless of completion order
    let runs: Vec<RunRecord> = tasks
        .par_iter()
        .map(|&(cell, rep)| run_cell(grid, cell, rep, fit_cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summary = summarize_runs(&grid.cells(), &runs);
    Ok(StudyReport {
        grid: grid.clone(),
        fit_config: fit_cfg.clone(),
        runs,
        summary,
    })
}

pub fn summarize_runs(cells: &[Cell], runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for cell in cells {
        for model in [ModelKind::Mcnm, ModelKind::Tmix] {
            let group: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.model == model && r.cell.key() == cell.key())
                .collect();
            rows.push(SummaryRow {
                cell: *cell,
                model,
                runs: group.len(),
                failures: group.iter().filter(|r| r.error.is_some()).count(),
                ari: summarize(group.iter().map(|r| r.ari)),
                tpr: summarize(group.iter().map(|r| r.tpr)),
                fpr: summarize(group.iter().map(|r| r.fpr)),
                outlier_scope: OutlierScope::of(cell.family),
            });
        }
    }
    rows
}

impl StudyReport {
    /// Mean of a per-run metric over the runs accepted by `keep`.
    pub fn mean_of(&self, metric: impl Fn(&RunRecord) -> Option<f64>, keep: impl Fn(&RunRecord) -> bool) -> Summary {
        summarize(self.runs.iter().filter(|r| keep(r)).map(metric))
    }

    pub fn runs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "family", "n", "overlap", "missing_prop", "replicate", "seed", "model", "ari", "tpr", "fpr",
            "outlier_scope", "n_iter", "converged", "loglik", "error",
        ])
        .map_err(csv_error)?;
        for r in &self.runs {
            w.write_record([
                r.cell.family.to_string(),
                r.cell.n.to_string(),
                r.cell.overlap.to_string(),
                r.cell.missing_prop.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.model.to_string(),
                opt(r.ari),
                opt(r.tpr),
                opt(r.fpr),
                r.outlier_scope.as_str().to_string(),
                r.n_iter.map(|v| v.to_string()).unwrap_or_default(),
                r.converged.map(|v| v.to_string()).unwrap_or_default(),
                opt(r.loglik),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_error)?;
        }
        finish_csv(w)
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "family", "n", "overlap", "missing_prop", "model", "runs", "failures", "ari_mean", "ari_sd", "tpr_mean",
            "tpr_sd", "fpr_mean", "fpr_sd", "outlier_scope",
        ])
        .map_err(csv_error)?;
        for s in &self.summary {
            w.write_record([
                s.cell.family.to_string(),
                s.cell.n.to_string(),
                s.cell.overlap.to_string(),
                s.cell.missing_prop.to_string(),
                s.model.to_string(),
                s.runs.to_string(),
                s.failures.to_string(),
                opt(s.ari.mean),
                opt(s.ari.sd),
                opt(s.tpr.mean),
                opt(s.tpr.sd),
                opt(s.fpr.mean),
                opt(s.fpr.sd),
                s.outlier_scope.as_str().to_string(),
            ])
            .map_err(csv_error)?;
        }
        finish_csv(w)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Bar chart of mean ARI per cell, one bar per model.
    pub fn summary_svg(&self) -> String {
        let cells = self.grid.cells();
        let (bar, gap, height, top) = (6.0, 4.0, 200.0, 20.0);
        let width = 60.0 + cells.len() as f64 * (2.0 * bar + gap);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="10">"#,
            height + top + 30.0
        );
        let _ = writeln!(svg, r#"<text x="5" y="12">mean ARI per cell (blue: mcnm, orange: tmix)</text>"#);
        let _ = writeln!(
            svg,
            r#"<line x1="40" y1="{}" x2="{width}" y2="{}" stroke="black"/>"#,
            top + height,
            top + height
        );
        for (k, cell) in cells.iter().enumerate() {
            for (m, (model, color)) in [(ModelKind::Mcnm, "#1f77b4"), (ModelKind::Tmix, "#ff7f0e")].into_iter().enumerate() {
                let mean = self
                    .summary
                    .iter()
                    .find(|s| s.model == model && s.cell.key() == cell.key())
                    .and_then(|s| s.ari.mean)
                    .unwrap_or(0.0)
                    .clamp(0.0, 1.0);
                let h = mean * height;
                let x = 40.0 + k as f64 * (2.0 * bar + gap) + m as f64 * bar;
                let _ = writeln!(
                    svg,
                    r#"<rect x="{x}" y="{}" width="{bar}" height="{h}" fill="{color}"><title>{} {model}: {mean}</title></rect>"#,
                    top + height - h,
                    cell.key()
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }

    /// Writes runs.csv, summary.csv, summary.json and summary.svg into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("runs.csv", self.runs_csv()?),
            ("summary.csv", self.summary_csv()?),
            ("summary.json", self.to_json()),
            ("summary.svg", self.summary_svg()),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Document(e.to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Document(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
