//! Synthetic two-cluster scenarios and MAR amputation.
//!
//! Amputation follows the weighted-sum-score scheme of `mice::ampute`:
//! every row is given a candidate pattern, a weighted sum of its
//! to-remain-observed values is standardized within the pattern group and
//! mapped through a logistic function, and exactly `round(prop * n)` rows are
//! then drawn without replacement with those probabilities as weights.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    StudentT,
    Mcn,
    MnAtypical,
    MnUniformNoise,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::StudentT, Family::Mcn, Family::MnAtypical, Family::MnUniformNoise];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::StudentT => "student_t",
            Family::Mcn => "mcn",
            Family::MnAtypical => "mn_atypical",
            Family::MnUniformNoise => "mn_uniform_noise",
        }
    }

    /// Whether rows are replaced by a contamination mechanism.
    pub fn has_substitution(self) -> bool {
        matches!(self, Family::MnAtypical | Family::MnUniformNoise)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown family {s:?}")))
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Far,
    Close,
}

impl Overlap {
    pub fn as_str(self) -> &'static str {
        match self {
            Overlap::Far => "far",
            Overlap::Close => "close",
        }
    }
}

impl std::str::FromStr for Overlap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "far" => Ok(Overlap::Far),
            "close" => Ok(Overlap::Close),
            other => Err(Error::Config(format!("unknown overlap {other:?}"))),
        }
    }
}

impl std::fmt::Display for Overlap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Generator settings. Component g has mean `g * shift * (1, ..., 1)` and
/// identity scale; the shift depends on the overlap level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub family: Family,
    pub n: usize,
    pub overlap: Overlap,
    pub g: usize,
    pub d: usize,
    pub seed: u64,
    pub far_shift: f64,
    pub close_shift: f64,
    /// Degrees of freedom for the t family.
    pub nu: f64,
    pub mcn_alpha: f64,
    pub mcn_eta: f64,
    pub atypical_rate: f64,
    pub atypical_min_distance: f64,
    pub atypical_max_distance: f64,
    pub noise_rate: f64,
    /// Relative growth of the clean data's bounding box for uniform noise.
    pub noise_box_inflation: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            family: Family::Mcn,
            n: 100,
            overlap: Overlap::Far,
            g: 2,
            d: 2,
            seed: 0,
            far_shift: 7.0,
            close_shift: 3.0,
            nu: 4.0,
            mcn_alpha: 0.9,
            mcn_eta: 20.0,
            atypical_rate: 0.01,
            atypical_min_distance: 8.0,
            atypical_max_distance: 12.0,
            noise_rate: 0.05,
            noise_box_inflation: 0.5,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n == 0 || self.g == 0 || self.d == 0 {
            return bad("n, g and d must be positive");
        }
        if self.d > 50 {
            return bad("d above 50 is not supported");
        }
        if !(self.nu > 0.0) || !(self.mcn_alpha > 0.0 && self.mcn_alpha < 1.0) || !(self.mcn_eta >= 1.0) {
            return bad("nu must be positive, mcn_alpha in (0,1) and mcn_eta >= 1");
        }
        if !(0.0..=1.0).contains(&self.atypical_rate) || !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("substitution rates must lie in [0,1]");
        }
        if !(self.atypical_min_distance > 0.0 && self.atypical_min_distance <= self.atypical_max_distance) {
            return bad("atypical distance range is empty");
        }
        Ok(())
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        let shift = match self.overlap {
            Overlap::Far => self.far_shift,
            Overlap::Close => self.close_shift,
        };
        (0..self.g)
            .map(|g| DVector::from_element(self.d, g as f64 * shift))
            .collect()
    }
}

/// Parameters the data were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub scenario: ScenarioConfig,
    pub pi: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Scale matrix shared by all components (identity).
    pub sigma: Vec<Vec<f64>>,
    pub substituted_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub data: Dataset,
    pub true_labels: Vec<usize>,
    pub true_outlier: Vec<bool>,
    pub true_params: GeneratorParams,
}

fn standard_normal(rng: &mut impl Rng, d: usize) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn nearest_mean(x: &DVector<f64>, means: &[DVector<f64>]) -> (usize, f64) {
    means
        .iter()
        .enumerate()
        .map(|(g, m)| (g, (x - m).norm()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Draws one labeled dataset for `cfg`.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, d, g) = (cfg.n, cfg.d, cfg.g);
    let means = cfg.means();
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut outlier = vec![false; n];

    let chi = ChiSquared::new(cfg.nu).map_err(|e| Error::Config(e.to_string()))?;
    for i in 0..n {
        let label = rng.random_range(0..g);
        let z = standard_normal(&mut rng, d);
        let x = match cfg.family {
            Family::StudentT => {
                let w: f64 = chi.sample(&mut rng);
                &means[label] + z * (cfg.nu / w).sqrt()
            }
            Family::Mcn => {
                let bad = rng.random::<f64>() >= cfg.mcn_alpha;
                outlier[i] = bad;
                let scale = if bad { cfg.mcn_eta.sqrt() } else { 1.0 };
                &means[label] + z * scale
            }
            Family::MnAtypical | Family::MnUniformNoise => &means[label] + z,
        };
        rows.push(x);
        labels.push(label);
    }

    let mut substituted = Vec::new();
    match cfg.family {
        Family::MnAtypical => {
            let count = (cfg.atypical_rate * n as f64).round() as usize;
            let mut chosen = sample(&mut rng, n, count).into_vec();
            chosen.sort_unstable();
            for &i in &chosen {
                let x = draw_atypical(&mut rng, cfg, &means)?;
                labels[i] = nearest_mean(&x, &means).0;
                rows[i] = x;
                outlier[i] = true;
            }
            substituted = chosen;
        }
        Family::MnUniformNoise => {
            let count = (cfg.noise_rate * n as f64).round() as usize;
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for x in &rows {
                for j in 0..d {
                    lo[j] = lo[j].min(x[j]);
                    hi[j] = hi[j].max(x[j]);
                }
            }
            let half = 0.5 * cfg.noise_box_inflation;
            let mut chosen = sample(&mut rng, n, count).into_vec();
            chosen.sort_unstable();
            for &i in &chosen {
                let x = DVector::from_iterator(
                    d,
                    (0..d).map(|j| {
                        let w = hi[j] - lo[j];
                        rng.random_range((lo[j] - half * w)..=(hi[j] + half * w))
                    }),
                );
                labels[i] = nearest_mean(&x, &means).0;
                rows[i] = x;
                outlier[i] = true;
            }
            substituted = chosen;
        }
        Family::StudentT | Family::Mcn => {}
    }

    let values: Vec<f64> = rows.iter().flat_map(|x| x.iter().copied()).collect();
    let data = Dataset::complete(values, n, d)?;
    let identity = DMatrix::<f64>::identity(d, d);
    Ok(LabeledDataset {
        data,
        true_labels: labels,
        true_outlier: outlier,
        true_params: GeneratorParams {
            scenario: cfg.clone(),
            pi: vec![1.0 / g as f64; g],
            means: means.iter().map(|m| m.iter().copied().collect()).collect(),
            sigma: (0..d).map(|r| identity.row(r).iter().copied().collect()).collect(),
            substituted_rows: substituted,
        },
    })
}

/// A point whose distance to the nearest mean lies in the configured ring.
fn draw_atypical(rng: &mut impl Rng, cfg: &ScenarioConfig, means: &[DVector<f64>]) -> Result<DVector<f64>> {
    for _ in 0..100_000 {
        let center = &means[rng.random_range(0..means.len())];
        let dir = standard_normal(rng, cfg.d);
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let r = rng.random_range(cfg.atypical_min_distance..=cfg.atypical_max_distance);
        let x = center + dir * (r / norm);
        let nearest = nearest_mean(&x, means).1;
        if nearest >= cfg.atypical_min_distance && nearest <= cfg.atypical_max_distance {
            return Ok(x);
        }
    }
    Err(Error::Config("could not place an atypical point in the requested ring".into()))
}

/// Missingness patterns and MAR weights for amputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmputationConfig {
    /// Fraction of rows that receive missing cells.
    pub prop_rows: f64,
    /// One row per pattern; true marks a coordinate to be made missing.
    pub patterns: Vec<Vec<bool>>,
    /// Weighted-sum-score coefficients, one row per pattern.
    pub weights: Vec<Vec<f64>>,
    pub seed: u64,
}

impl AmputationConfig {
    /// Ten pattern slots. For d = 2 the slots cycle over the two
    /// single-coordinate patterns with increasing weights; for larger d the
    /// d single-coordinate patterns are padded with random two-coordinate
    /// patterns. For d = 1 no pattern keeps a coordinate observed, so the
    /// pattern list is empty and `validate` fails.
    pub fn default_for(d: usize, prop_rows: f64, seed: u64) -> Self {
        const SLOTS: usize = 10;
        let single = |j: usize| (0..d).map(|k| k == j).collect::<Vec<bool>>();
        let mut patterns: Vec<Vec<bool>> = Vec::new();
        let mut weights: Vec<Vec<f64>> = Vec::new();
        if d == 2 {
            for s in 0..SLOTS {
                let p = single(s % 2);
                let w = p.iter().map(|&m| if m { 0.0 } else { 1.0 + (s / 2) as f64 }).collect();
                patterns.push(p);
                weights.push(w);
            }
        } else if d > 2 {
            patterns.extend((0..d).map(single));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fa7_7e55);
            let mut attempts = 0;
            while patterns.len() < SLOTS && attempts < 1000 {
                attempts += 1;
                let pair = sample(&mut rng, d, 2).into_vec();
                let p: Vec<bool> = (0..d).map(|k| pair.contains(&k)).collect();
                if !patterns.contains(&p) {
                    patterns.push(p);
                }
            }
            weights = patterns
                .iter()
                .map(|p| p.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect())
                .collect();
        }
        Self {
            prop_rows,
            patterns,
            weights,
            seed,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.prop_rows > 0.0 && self.prop_rows < 1.0) {
            return Err(Error::Config(format!("prop_rows must lie in (0,1), got {}", self.prop_rows)));
        }
        if self.patterns.is_empty() {
            return Err(Error::Config("no missingness patterns".into()));
        }
        if self.weights.len() != self.patterns.len() {
            return Err(Error::Config("weights need one row per pattern".into()));
        }
        for (k, (p, w)) in self.patterns.iter().zip(&self.weights).enumerate() {
            if p.len() != d || w.len() != d {
                return Err(Error::Config(format!("pattern {k} does not have {d} entries")));
            }
            if p.iter().all(|&m| m) {
                return Err(Error::Config(format!("pattern {k} would remove every coordinate")));
            }
            if !p.iter().any(|&m| m) {
                return Err(Error::Config(format!("pattern {k} removes nothing")));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("pattern {k} has non-finite weights")));
            }
        }
        Ok(())
    }
}

/// Applies MAR amputation to a fully observed dataset.
pub fn ampute(ds: &Dataset, cfg: &AmputationConfig) -> Result<Dataset> {
    let (n, d) = (ds.n(), ds.d());
    cfg.validate(d)?;
    if !ds.is_complete() {
        return Err(Error::Validation("amputation expects fully observed data".into()));
    }
    let target = (cfg.prop_rows * n as f64).round() as usize;
    if target < 1 {
        log::warn!("prop_rows * n = {} rounds to zero rows; data left unchanged", cfg.prop_rows * n as f64);
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.patterns.len();
    let slot: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();

    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let p = &cfg.patterns[slot[i]];
            let w = &cfg.weights[slot[i]];
            (0..d).filter(|&j| !p[j]).map(|j| w[j] * ds.row(i)[j]).sum()
        })
        .collect();
    let mut prob = vec![0.0; n];
    for s in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| slot[i] == s).collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let mean = members.iter().map(|&i| scores[i]).sum::<f64>() / m;
        let sd = (members.iter().map(|&i| (scores[i] - mean).powi(2)).sum::<f64>() / m).sqrt();
        for &i in &members {
            let z = if sd > 0.0 { (scores[i] - mean) / sd } else { 0.0 };
            prob[i] = 1.0 / (1.0 + (-z).exp());
        }
    }

    // weighted sampling without replacement: keep the largest ln(u)/p keys
    let mut keys: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / prob[i].max(1e-300), i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut mask = ds.mask().to_vec();
    for &(_, i) in keys.iter().take(target.min(n)) {
        for (j, &missing) in cfg.patterns[slot[i]].iter().enumerate() {
            if missing {
                mask[i * d + j] = false;
            }
        }
    }
    ds.with_mask(mask)
}

pub fn ampute_labeled(ld: &LabeledDataset, cfg: &AmputationConfig) -> Result<LabeledDataset> {
    Ok(LabeledDataset {
        data: ampute(&ld.data, cfg)?,
        ..ld.clone()
    })
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub labels: Vec<usize>,
    pub outlier: Vec<bool>,
    pub params: GeneratorParams,
}

impl TruthDocument {
    pub fn from_labeled(ld: &LabeledDataset) -> Self {
        Self {
            labels: ld.true_labels.clone(),
            outlier: ld.true_outlier.clone(),
            params: ld.true_params.clone(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("truth serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Document(e.to_string()))
    }
}
