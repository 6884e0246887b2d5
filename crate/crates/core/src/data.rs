//! Datasets with per-cell missingness, delimited-text ingestion and the
//! observed/missing index bookkeeping used by the E-step.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Token written for missing cells.
pub const DEFAULT_MISSING_TOKEN: &str = "NA";

/// An n×d numeric table with a parallel observed-mask. Missing cells hold
/// NaN and are never read by the fitters.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: Vec<f64>,
    mask: Vec<bool>,
    n: usize,
    d: usize,
    columns: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major values and mask (true = observed).
    pub fn new(mut values: Vec<f64>, mask: Vec<bool>, n: usize, d: usize) -> Result<Self> {
        if values.len() != n * d || mask.len() != n * d {
            return Err(Error::Validation(format!(
                "expected {} cells for a {n}x{d} table, got {} values and {} mask entries",
                n * d,
                values.len(),
                mask.len()
            )));
        }
        if n == 0 {
            return Err(Error::Validation("dataset has zero rows".into()));
        }
        if d == 0 {
            return Err(Error::Validation("dataset has zero columns".into()));
        }
        for i in 0..n {
            let row = &mask[i * d..(i + 1) * d];
            if !row.iter().any(|&m| m) {
                return Err(Error::Validation(format!("row {} has no observed cells", i + 1)));
            }
            for j in 0..d {
                let k = i * d + j;
                if mask[k] {
                    if !values[k].is_finite() {
                        return Err(Error::Validation(format!(
                            "row {}, column {} is observed but not finite",
                            i + 1,
                            j + 1
                        )));
                    }
                } else {
                    values[k] = f64::NAN;
                }
            }
        }
        let columns = (1..=d).map(|j| format!("x{j}")).collect();
        Ok(Self {
            values,
            mask,
            n,
            d,
            columns,
        })
    }

    /// A fully observed dataset.
    pub fn complete(values: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(values, mask, n, d)
    }

    /// Builds from rows of optional cells.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * d);
        let mut mask = Vec::with_capacity(n * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Validation(format!(
                    "row {} has {} cells, expected {d}",
                    i + 1,
                    row.len()
                )));
            }
            for cell in row {
                values.push(cell.unwrap_or(f64::NAN));
                mask.push(cell.is_some());
            }
        }
        Self::new(values, mask, n, d)
    }

    pub fn with_columns(mut self, columns: Vec<String>) -> Result<Self> {
        if columns.len() != self.d {
            return Err(Error::Validation(format!(
                "{} column names for {} columns",
                columns.len(),
                self.d
            )));
        }
        self.columns = columns;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.d + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.d + j;
        self.mask[k].then(|| self.values[k])
    }

    /// Raw row slice; missing cells are NaN.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        &self.mask[i * self.d..(i + 1) * self.d]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Rows with at least one missing cell.
    pub fn incomplete_rows(&self) -> usize {
        (0..self.n).filter(|&i| self.mask_row(i).iter().any(|&m| !m)).count()
    }

    /// Observed sub-vector of row `i`, in ascending coordinate order.
    pub fn observed_values(&self, i: usize) -> DVector<f64> {
        let row = self.row(i);
        let mask = self.mask_row(i);
        DVector::from_iterator(
            mask.iter().filter(|&&m| m).count(),
            row.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v),
        )
    }

    /// Copy with a new mask; cells that become missing are cleared.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.mask.len() {
            return Err(Error::Validation("mask shape differs from dataset".into()));
        }
        if mask.iter().zip(&self.mask).any(|(&new, &old)| new && !old) {
            return Err(Error::Validation("cannot reveal a missing cell".into()));
        }
        let ds = Self::new(self.values.clone(), mask, self.n, self.d)?;
        ds.with_columns(self.columns.clone())
    }

    /// Copy where every missing cell is replaced by `fill(i, j)`.
    pub fn filled(&self, mut fill: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = self.values.clone();
        for i in 0..self.n {
            for j in 0..self.d {
                if !self.is_observed(i, j) {
                    values[i * self.d + j] = fill(i, j);
                }
            }
        }
        Self::complete(values, self.n, self.d)?.with_columns(self.columns.clone())
    }

    /// Subset of rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * self.d);
        let mut mask = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            values.extend_from_slice(self.row(i));
            mask.extend_from_slice(self.mask_row(i));
        }
        Self::new(values, mask, rows.len(), self.d)?.with_columns(self.columns.clone())
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.d == other.d
            && self.columns == other.columns
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| !m || a.to_bits() == b.to_bits())
    }
}

/// Observed and missing coordinates of one row (0-based, ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationView {
    pub row: usize,
    pub observed_idx: Vec<usize>,
    pub missing_idx: Vec<usize>,
    pub d_obs: usize,
}

pub fn observation_views(ds: &Dataset) -> Vec<ObservationView> {
    (0..ds.n())
        .map(|i| {
            let (observed_idx, missing_idx): (Vec<usize>, Vec<usize>) =
                (0..ds.d()).partition(|&j| ds.is_observed(i, j));
            ObservationView {
                row: i,
                d_obs: observed_idx.len(),
                observed_idx,
                missing_idx,
            }
        })
        .collect()
}

/// One distinct missingness pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub observed_idx: Vec<usize>,
    pub missing_idx: Vec<usize>,
    pub rows: Vec<usize>,
}

/// Rows grouped by missingness pattern, in order of first appearance.
#[derive(Debug, Clone)]
pub struct PatternTable {
    pub patterns: Vec<Pattern>,
    pub row_pattern: Vec<usize>,
}

impl PatternTable {
    pub fn new(ds: &Dataset) -> Self {
        let mut index: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut patterns: Vec<Pattern> = Vec::new();
        let mut row_pattern = Vec::with_capacity(ds.n());
        for view in observation_views(ds) {
            let key = ds.mask_row(view.row).to_vec();
            let p = *index.entry(key).or_insert_with(|| {
                patterns.push(Pattern {
                    observed_idx: view.observed_idx.clone(),
                    missing_idx: view.missing_idx.clone(),
                    rows: Vec::new(),
                });
                patterns.len() - 1
            });
            patterns[p].rows.push(view.row);
            row_pattern.push(p);
        }
        Self {
            patterns,
            row_pattern,
        }
    }

    pub fn pattern_of(&self, row: usize) -> &Pattern {
        &self.patterns[self.row_pattern[row]]
    }
}

fn detect_delimiter(first_line: &str) -> u8 {
    if first_line.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Parses delimited text (comma or tab, detected from the header line).
/// Cells equal to `missing_token` or empty are missing.
pub fn parse_dataset(text: &str, missing_token: &str) -> Result<Dataset> {
    let first = text.lines().next().unwrap_or("");
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(first))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let d = columns.len();
    if d == 0 || (d == 1 && columns[0].is_empty()) {
        return Err(Error::Validation("missing header row".into()));
    }
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut n = 0;
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != d {
            return Err(Error::Parse {
                row,
                column: record.len().min(d) + 1,
                message: format!("expected {d} fields, found {}", record.len()),
            });
        }
        let mut any_observed = false;
        for (c, cell) in record.iter().enumerate() {
            if cell.is_empty() || cell == missing_token {
                values.push(f64::NAN);
                mask.push(false);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("cannot parse {cell:?} as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: c + 1,
                        message: format!("non-finite value {cell:?}"),
                    });
                }
                values.push(v);
                mask.push(true);
                any_observed = true;
            }
        }
        if !any_observed {
            return Err(Error::Validation(format!("row {row} has every cell missing")));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Validation("dataset has zero rows".into()));
    }
    Dataset::new(values, mask, n, d)?.with_columns(columns)
}

pub fn load_dataset(path: impl AsRef<Path>, missing_token: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, missing_token)
}

/// Renders as comma-delimited text with a header. Values use the shortest
/// representation that parses back to the same bits.
pub fn format_dataset(ds: &Dataset, missing_token: &str) -> String {
    let mut out = String::new();
    out.push_str(&ds.columns().join(","));
    out.push('\n');
    for i in 0..ds.n() {
        let cells: Vec<String> = (0..ds.d())
            .map(|j| match ds.get(i, j) {
                Some(v) => format!("{v}"),
                None => missing_token.to_string(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(format_dataset(ds, DEFAULT_MISSING_TOKEN).as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn complete_file() {
        let ds = parse_dataset("a,b\n1,2\n3,4\n5,6\n", "NA").unwrap();
        assert_eq!((ds.n(), ds.d()), (3, 2));
        assert!(ds.mask().iter().all(|&m| m));
        assert_eq!(ds.columns(), ["a", "b"]);
    }

    #[test]
    fn missing_token_and_empty_cells() {
        let ds = parse_dataset("a,b,c\n1.5,NA,2\n,3,4\n", "NA").unwrap();
        assert_eq!(ds.mask_row(0), [true, false, true]);
        assert_eq!(ds.mask_row(1), [false, true, true]);
        assert_eq!(ds.get(0, 0), Some(1.5));
        assert_eq!(ds.get(0, 1), None);
    }

    #[test]
    fn tab_delimited() {
        let ds = parse_dataset("a\tb\n1\t?\n", "?").unwrap();
        assert_eq!(ds.mask_row(0), [true, false]);
    }

    #[test]
    fn all_missing_row_is_rejected() {
        let err = parse_dataset("a,b\n1,2\nNA,NA\n", "NA").unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains("row 2"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_rows_rejected() {
        assert!(matches!(parse_dataset("a,b\n", "NA"), Err(Error::Validation(_))));
    }

    #[test]
    fn unparseable_cell_names_position() {
        match parse_dataset("a,b\n1,2\n3,abc\n", "NA").unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn views() {
        let ds = Dataset::from_rows(&[
            vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)],
            vec![Some(1.0), None, Some(3.0), None],
        ])
        .unwrap();
        let v = observation_views(&ds);
        assert_eq!(v[0].observed_idx, [0, 1, 2, 3]);
        assert!(v[0].missing_idx.is_empty());
        assert_eq!(v[0].d_obs, 4);
        assert_eq!(v[1].observed_idx, [0, 2]);
        assert_eq!(v[1].missing_idx, [1, 3]);
        assert_eq!(v.iter().map(|x| x.d_obs).sum::<usize>(), ds.observed_count());
    }

    #[test]
    fn mask_three_columns() {
        let ds = Dataset::from_rows(&[vec![Some(1.0), None, Some(3.0)]]).unwrap();
        let v = &observation_views(&ds)[0];
        assert_eq!((v.observed_idx.clone(), v.missing_idx.clone(), v.d_obs), (vec![0, 2], vec![1], 2));
    }

    #[test]
    fn complete_views_sum() {
        let ds = Dataset::complete((0..20).map(f64::from).collect(), 5, 4).unwrap();
        assert_eq!(observation_views(&ds).iter().map(|v| v.d_obs).sum::<usize>(), 20);
    }

    #[test]
    fn pattern_table_groups_rows() {
        let ds = Dataset::from_rows(&[
            vec![Some(1.0), None],
            vec![Some(1.0), Some(2.0)],
            vec![Some(3.0), None],
        ])
        .unwrap();
        let t = PatternTable::new(&ds);
        assert_eq!(t.patterns.len(), 2);
        assert_eq!(t.patterns[0].rows, [0, 2]);
        assert_eq!(t.row_pattern, [0, 1, 0]);
    }

    proptest! {
        #[test]
        fn write_then_load_is_bit_exact(
            cells in prop::collection::vec(prop::option::weighted(0.7, -1e12f64..1e12), 3 * 4),
        ) {
            let mut rows: Vec<Vec<Option<f64>>> = cells.chunks(3).map(<[_]>::to_vec).collect();
            for row in rows.iter_mut() {
                if row.iter().all(Option::is_none) {
                    row[0] = Some(0.25);
                }
            }
            let ds = Dataset::from_rows(&rows).unwrap();
            let back = parse_dataset(&format_dataset(&ds, "NA"), "NA").unwrap();
            prop_assert_eq!(back.mask(), ds.mask());
            for i in 0..ds.n() {
                for j in 0..ds.d() {
                    prop_assert_eq!(ds.get(i, j).map(f64::to_bits), back.get(i, j).map(f64::to_bits));
                }
            }
        }
    }
}
