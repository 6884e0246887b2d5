//! Adjusted Rand index, outlier-detection rates and replicate aggregation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn comb2(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index between two labelings.
///
/// When the expected and maximum indices coincide (for example both
/// partitions are a single cluster, or n = 1) the index is 1 for identical
/// partitions and 0 otherwise.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + std::hash::Hash + Copy,
    B: Eq + std::hash::Hash + Copy,
{
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "partitions have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Contract("partitions are empty".into()));
    }
    let mut left: HashMap<A, usize> = HashMap::new();
    let mut right: HashMap<B, usize> = HashMap::new();
    let mut cells: HashMap<(A, B), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *left.entry(x).or_default() += 1;
        *right.entry(y).or_default() += 1;
        *cells.entry((x, y)).or_default() += 1;
    }
    // sort the counts so the floating-point sums do not depend on hash order
    let sorted_sum = |mut counts: Vec<usize>| {
        counts.sort_unstable();
        counts.into_iter().map(comb2).sum::<f64>()
    };
    let index = sorted_sum(cells.values().copied().collect());
    let sum_a = sorted_sum(left.values().copied().collect());
    let sum_b = sorted_sum(right.values().copied().collect());
    let expected = sum_a * sum_b / comb2(a.len()).max(f64::MIN_POSITIVE);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom.abs() < 1e-12 {
        let identical = cells.len() == left.len() && cells.len() == right.len();
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierRates {
    /// `tp / (tp + fn)`; absent when there are no true outliers.
    pub tpr: Option<f64>,
    /// `fp / (fp + tn)`; absent when every point is a true outlier.
    pub fpr: Option<f64>,
    pub counts: ConfusionCounts,
}

pub fn outlier_rates(predicted: &[bool], truth: &[bool]) -> Result<OutlierRates> {
    if predicted.len() != truth.len() {
        return Err(Error::Contract(format!(
            "prediction and truth lengths differ ({} vs {})",
            predicted.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(OutlierRates {
        tpr: ratio(c.tp, c.tp + c.fn_),
        fpr: ratio(c.fp, c.fp + c.tn),
        counts: c,
    })
}

/// Mean and sample standard deviation of the present values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    let count = present.len();
    if count == 0 {
        return Summary {
            count,
            mean: None,
            sd: None,
        };
    }
    let mean = present.iter().sum::<f64>() / count as f64;
    let sd = (count > 1).then(|| {
        (present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    });
    Summary {
        count,
        mean: Some(mean),
        sd,
    }
}
