//! Partially observed datasets: observation patterns, masked samples, CSV
//! round trips, and synthetic corruption mechanisms.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{key_uniform, stream_rng};

/// The set of observed coordinate indices of one sample, kept strictly
/// increasing and within the ambient dimension.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservedPattern {
    dim: usize,
    observed: Vec<usize>,
}

impl ObservedPattern {
    /// Builds a pattern from observed indices; they must be strictly
    /// increasing, unique, and less than `dim`.
    pub fn new(dim: usize, observed: Vec<usize>) -> Result<Self> {
        for (k, &j) in observed.iter().enumerate() {
            if j >= dim {
                return Err(Error::invalid(format!(
                    "pattern index {j} out of range for dimension {dim}"
                )));
            }
            if k > 0 && observed[k - 1] >= j {
                return Err(Error::invalid(
                    "pattern indices must be strictly increasing",
                ));
            }
        }
        Ok(Self { dim, observed })
    }

    /// Builds a pattern from a boolean mask (`true` = observed).
    pub fn from_mask(mask: &[bool]) -> Self {
        let observed = mask
            .iter()
            .enumerate()
            .filter_map(|(j, &o)| o.then_some(j))
            .collect();
        Self {
            dim: mask.len(),
            observed,
        }
    }

    /// The fully observed pattern.
    pub fn full(dim: usize) -> Self {
        Self {
            dim,
            observed: (0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Observed coordinate indices, strictly increasing.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Missing coordinate indices, strictly increasing.
    pub fn missing(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim - self.observed.len());
        let mut it = self.observed.iter().peekable();
        for j in 0..self.dim {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                out.push(j);
            }
        }
        out
    }

    pub fn n_observed(&self) -> usize {
        self.observed.len()
    }

    pub fn n_missing(&self) -> usize {
        self.dim - self.observed.len()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.len() == self.dim
    }

    /// True when no coordinate is observed.
    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn is_observed(&self, j: usize) -> bool {
        self.observed.binary_search(&j).is_ok()
    }
}

/// One sample: values of the observed coordinates plus the pattern that
/// names them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedSample {
    pub pattern: ObservedPattern,
    /// Observed values, aligned with `pattern.observed()`.
    pub values: Vec<f64>,
}

impl MaskedSample {
    pub fn new(pattern: ObservedPattern, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.n_observed() {
            return Err(Error::invalid(format!(
                "sample has {} values for {} observed coordinates",
                values.len(),
                pattern.n_observed()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observed values must be finite"));
        }
        Ok(Self { pattern, values })
    }

    /// Full-dimension vector with zeros at the missing coordinates.
    pub fn zero_filled(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.pattern.dim());
        self.scatter_into(out.as_slice_mut().expect("contiguous"));
        out
    }

    /// Writes the observed values into a full-dimension buffer, leaving the
    /// other entries untouched.
    pub fn scatter_into(&self, out: &mut [f64]) {
        for (&j, &v) in self.pattern.observed().iter().zip(&self.values) {
            out[j] = v;
        }
    }
}

/// A collection of masked samples over one ambient dimension.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskedDataset {
    pub dim: usize,
    /// Column names when the data came from (or goes to) a CSV header.
    pub columns: Option<Vec<String>>,
    pub samples: Vec<MaskedSample>,
}

impl MaskedDataset {
    pub fn new(dim: usize, samples: Vec<MaskedSample>) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.pattern.dim() != dim) {
            return Err(Error::invalid(format!(
                "sample with dimension {} in dataset of dimension {dim}",
                s.pattern.dim()
            )));
        }
        Ok(Self {
            dim,
            columns: None,
            samples,
        })
    }

    /// Wraps a fully observed matrix (rows are samples).
    pub fn from_full(data: ArrayView2<f64>) -> Result<Self> {
        let dim = data.ncols();
        let samples = data
            .rows()
            .into_iter()
            .map(|r| MaskedSample::new(ObservedPattern::full(dim), r.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, samples)
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Fraction of missing entries over the whole dataset.
    pub fn missing_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let missing: usize = self.samples.iter().map(|s| s.pattern.n_missing()).sum();
        missing as f64 / (self.samples.len() * self.dim) as f64
    }
}

/// Expands a masked dataset to a dense matrix with zeros in place of every
/// missing entry. This is exactly the input representation the zero-filling
/// baseline and the amortizer network consume.
pub fn zero_fill(dataset: &MaskedDataset) -> Array2<f64> {
    let mut out = Array2::zeros((dataset.n(), dataset.dim));
    for (mut row, sample) in out.rows_mut().into_iter().zip(&dataset.samples) {
        sample.scatter_into(row.as_slice_mut().expect("contiguous"));
    }
    out
}

/// Evaluates the probability of realizing a given observation pattern at a
/// given complete sample. Only ratios matter: the corruption sampler
/// self-normalizes over patterns.
pub type PropensityFn = dyn Fn(&ObservedPattern, &[f64]) -> f64;

/// Missingness mechanism used by [`corrupt`].
pub enum PropensitySpec<'a> {
    /// Every coordinate of every sample goes missing independently with
    /// probability `p`, regardless of the values.
    Mcar { p: f64 },
    /// Pattern probability may depend on the complete sample. The evaluator
    /// returns a nonnegative weight for each (pattern, x) pair; patterns are
    /// realized with probability proportional to it.
    Mnar { evaluator: &'a PropensityFn },
}

/// What [`corrupt`] produced: the masked dataset plus a count of rows that
/// were dropped because corruption left no coordinate observed.
pub struct CorruptionOutcome {
    pub dataset: MaskedDataset,
    pub dropped_all_missing: usize,
}

/// Maximum pattern proposals per sample before MNAR corruption gives up.
const MNAR_ATTEMPT_BUDGET: usize = 1_000_000;

/// Applies a missingness mechanism to complete data (rows are samples).
///
/// Masks are drawn from counter-keyed streams: MCAR flips one coin per
/// (sample, coordinate) pair, so any sub-rectangle of the data is corrupted
/// identically no matter what surrounds it. MNAR proposes patterns uniformly
/// and accepts with probability proportional to the evaluator, which
/// realizes patterns with the evaluator's relative weights exactly. Rows left
/// with no observed coordinate are dropped and counted.
pub fn corrupt(
    data: ArrayView2<f64>,
    spec: &PropensitySpec,
    seed: u64,
) -> Result<CorruptionOutcome> {
    let (n, dim) = (data.nrows(), data.ncols());
    if dim == 0 {
        return Err(Error::invalid("corrupt: data has no columns"));
    }
    if let PropensitySpec::Mcar { p } = spec {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::invalid(
                "corrupt: MCAR probability must be in [0, 1]",
            ));
        }
    }
    let mut samples = Vec::with_capacity(n);
    let mut dropped = 0usize;
    let mut mask = vec![false; dim];
    for i in 0..n {
        let row = data.row(i);
        match spec {
            PropensitySpec::Mcar { p } => {
                for (j, m) in mask.iter_mut().enumerate() {
                    *m = key_uniform(seed, "mask", &[i as u64, j as u64]) >= *p;
                }
            }
            PropensitySpec::Mnar { evaluator } => {
                let x = row.as_slice().expect("contiguous row");
                let mut accepted = false;
                let mut rng = stream_rng(seed, "mnar", &[i as u64]);
                for _ in 0..MNAR_ATTEMPT_BUDGET {
                    for m in mask.iter_mut() {
                        *m = rng.random::<f64>() < 0.5;
                    }
                    let pattern = ObservedPattern::from_mask(&mask);
                    let w = evaluator(&pattern, x);
                    if !(0.0..=1.0).contains(&w) {
                        return Err(Error::invalid(
                            "MNAR evaluator must return probabilities in [0, 1]",
                        ));
                    }
                    if rng.random::<f64>() < w {
                        accepted = true;
                        break;
                    }
                }
                if !accepted {
                    return Err(Error::RejectionBudget {
                        attempts: MNAR_ATTEMPT_BUDGET,
                        accepted: samples.len(),
                        target: n,
                    });
                }
            }
        }
        let pattern = ObservedPattern::from_mask(&mask);
        if pattern.is_empty() {
            dropped += 1;
            continue;
        }
        let values = pattern.observed().iter().map(|&j| row[j]).collect();
        samples.push(MaskedSample::new(pattern, values)?);
    }
    Ok(CorruptionOutcome {
        dataset: MaskedDataset {
            dim,
            columns: None,
            samples,
        },
        dropped_all_missing: dropped,
    })
}

/// Cell spellings treated as missing when reading CSV files (matched
/// case-insensitively after trimming).
pub const MISSING_TOKENS: [&str; 3] = ["", "na", "nan"];

/// Reads a masked dataset from a CSV file with a header row. Empty cells and
/// the tokens in [`MISSING_TOKENS`] mark missing entries.
pub fn load_csv(path: impl AsRef<Path>) -> Result<MaskedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path.as_ref())?;
    let columns: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let dim = columns.len();
    if dim == 0 {
        return Err(Error::invalid("load_csv: no columns"));
    }
    let mut samples = Vec::new();
    for (ri, record) in reader.records().enumerate() {
        let record = record?;
        let mut mask = vec![false; dim];
        let mut row = vec![0.0f64; dim];
        for (j, field) in record.iter().enumerate() {
            let token = field.trim();
            if MISSING_TOKENS.contains(&token.to_ascii_lowercase().as_str()) {
                continue;
            }
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                row: ri + 2, // 1-based, counting the header
                col: j + 1,
                msg: format!("cannot parse {token:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: ri + 2,
                    col: j + 1,
                    msg: "non-finite value".into(),
                });
            }
            mask[j] = true;
            row[j] = v;
        }
        let pattern = ObservedPattern::from_mask(&mask);
        let values = pattern.observed().iter().map(|&j| row[j]).collect();
        samples.push(MaskedSample::new(pattern, values)?);
    }
    let mut ds = MaskedDataset::new(dim, samples)?;
    ds.columns = Some(columns);
    Ok(ds)
}

/// Writes a masked dataset as CSV with empty cells at missing entries.
pub fn write_csv(dataset: &MaskedDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let columns = column_names(dataset.dim, dataset.columns.as_deref());
    writer.write_record(&columns)?;
    let mut cells = vec![String::new(); dataset.dim];
    for sample in &dataset.samples {
        for c in cells.iter_mut() {
            c.clear();
        }
        for (&j, v) in sample.pattern.observed().iter().zip(&sample.values) {
            cells[j] = format_float(*v);
        }
        writer.write_record(&cells)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes a complete matrix as CSV (rows are samples).
pub fn write_full_csv(
    data: ArrayView2<f64>,
    columns: Option<&[String]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(&column_names(data.ncols(), columns))?;
    for row in data.rows() {
        let cells: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        writer.write_record(&cells)?;
    }
    writer.flush()?;
    Ok(())
}

/// Standardizes each column to zero mean and unit sample standard deviation
/// using the observed entries only. Columns whose observed spread is zero
/// are left centered but unscaled. Returns the per-column (mean, std) pairs.
pub fn standardize(dataset: &mut MaskedDataset) -> Vec<(f64, f64)> {
    let dim = dataset.dim;
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); dim];
    for s in &dataset.samples {
        for (&j, &v) in s.pattern.observed().iter().zip(&s.values) {
            sums[j].0 += v;
            sums[j].2 += 1;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .map(|&(sum, _, c)| if c > 0 { sum / c as f64 } else { 0.0 })
        .collect();
    for s in &dataset.samples {
        for (&j, &v) in s.pattern.observed().iter().zip(&s.values) {
            let d = v - means[j];
            sums[j].1 += d * d;
        }
    }
    let stds: Vec<f64> = sums
        .iter()
        .map(|&(_, ss, c)| {
            if c > 1 {
                let sd = (ss / (c as f64 - 1.0)).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            } else {
                1.0
            }
        })
        .collect();
    for s in dataset.samples.iter_mut() {
        for (k, &j) in s.pattern.observed().iter().enumerate() {
            s.values[k] = (s.values[k] - means[j]) / stds[j];
        }
    }
    means.into_iter().zip(stds).collect()
}

/// Empirical frequency of each realized pattern, keyed by observed indices.
pub fn pattern_frequencies(dataset: &MaskedDataset) -> BTreeMap<Vec<usize>, usize> {
    let mut freq = BTreeMap::new();
    for s in &dataset.samples {
        *freq.entry(s.pattern.observed().to_vec()).or_insert(0) += 1;
    }
    freq
}

fn column_names(dim: usize, columns: Option<&[String]>) -> Vec<String> {
    match columns {
        Some(c) if c.len() == dim => c.to_vec(),
        _ => (0..dim).map(|j| format!("x{j}")).collect(),
    }
}

/// Shortest round-trippable decimal rendering of a float.
fn format_float(v: f64) -> String {
    let mut buf = ryu_format(v);
    // Trim a trailing ".0" so integers print compactly.
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // `{}` on f64 is the shortest representation that round-trips.
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pattern_validation_rejects_bad_indices() {
        assert!(ObservedPattern::new(3, vec![0, 2]).is_ok());
        assert!(ObservedPattern::new(3, vec![3]).is_err());
        assert!(ObservedPattern::new(3, vec![1, 1]).is_err());
        assert!(ObservedPattern::new(3, vec![2, 0]).is_err());
    }

    #[test]
    fn pattern_complement_partitions_coordinates() {
        let p = ObservedPattern::new(5, vec![1, 3]).unwrap();
        assert_eq!(p.missing(), vec![0, 2, 4]);
        assert_eq!(p.n_observed() + p.n_missing(), 5);
        assert!(p.is_observed(3) && !p.is_observed(4));
    }

    #[test]
    fn zero_fill_places_values_and_zeros() {
        let pattern = ObservedPattern::new(3, vec![0, 2]).unwrap();
        let sample = MaskedSample::new(pattern, vec![1.5, -2.0]).unwrap();
        let ds = MaskedDataset::new(3, vec![sample]).unwrap();
        let full = zero_fill(&ds);
        assert_eq!(full, array![[1.5, 0.0, -2.0]]);
    }

    #[test]
    fn mcar_is_deterministic_in_the_seed_and_respects_extremes() {
        let data = Array2::from_shape_fn((50, 4), |(i, j)| (i * 4 + j) as f64);
        let a = corrupt(data.view(), &PropensitySpec::Mcar { p: 0.4 }, 9).unwrap();
        let b = corrupt(data.view(), &PropensitySpec::Mcar { p: 0.4 }, 9).unwrap();
        assert_eq!(a.dataset.samples, b.dataset.samples);

        let none = corrupt(data.view(), &PropensitySpec::Mcar { p: 0.0 }, 9).unwrap();
        assert!(none
            .dataset
            .samples
            .iter()
            .all(|s| s.pattern.is_fully_observed()));
        assert_eq!(none.dropped_all_missing, 0);

        let all = corrupt(data.view(), &PropensitySpec::Mcar { p: 1.0 }, 9).unwrap();
        assert_eq!(all.dataset.n(), 0);
        assert_eq!(all.dropped_all_missing, 50);
    }

    #[test]
    fn mcar_missing_rate_matches_p() {
        let data = Array2::zeros((4000, 4));
        let out = corrupt(data.view(), &PropensitySpec::Mcar { p: 0.3 }, 123).unwrap();
        // Count over all rows, including dropped ones.
        let observed: usize = out
            .dataset
            .samples
            .iter()
            .map(|s| s.pattern.n_observed())
            .sum();
        let total = 4000 * 4;
        let missing_rate = 1.0 - observed as f64 / total as f64;
        assert!(
            (missing_rate - 0.3).abs() < 0.02,
            "empirical missing rate {missing_rate}"
        );
    }

    #[test]
    fn mnar_with_constant_weights_matches_mcar_frequencies() {
        // Evaluator that ignores x and weights patterns like MCAR(p) does:
        // the realized pattern law must then match the MCAR product law.
        let p = 0.35f64;
        let d = 3usize;
        let eval = move |pattern: &ObservedPattern, _x: &[f64]| -> f64 {
            let k = pattern.n_observed() as f64;
            (1.0 - p).powf(k) * p.powf(d as f64 - k)
        };
        let data = Array2::zeros((8000, d));
        let out = corrupt(data.view(), &PropensitySpec::Mnar { evaluator: &eval }, 77).unwrap();
        let freq = pattern_frequencies(&out.dataset);

        // Chi-square over the 2^d patterns (the all-missing cell uses the
        // dropped-row count).
        let n = 8000f64;
        let mut chi2 = 0.0;
        let mut cells = 0;
        for bits in 0..(1u32 << d) {
            let observed: Vec<usize> = (0..d).filter(|&j| bits & (1 << j) != 0).collect();
            let k = observed.len() as f64;
            let expect = n * (1.0 - p).powf(k) * p.powf(d as f64 - k);
            let got = if observed.is_empty() {
                out.dropped_all_missing as f64
            } else {
                *freq.get(&observed).unwrap_or(&0) as f64
            };
            chi2 += (got - expect).powi(2) / expect;
            cells += 1;
        }
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let dist = ChiSquared::new((cells - 1) as f64).unwrap();
        let p_value = 1.0 - dist.cdf(chi2);
        assert!(p_value > 0.01, "chi2 {chi2}, p {p_value}");
    }

    #[test]
    fn csv_round_trip_preserves_patterns_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("masked.csv");
        let p1 = ObservedPattern::new(3, vec![0, 2]).unwrap();
        let p2 = ObservedPattern::new(3, vec![1]).unwrap();
        let ds = MaskedDataset::new(
            3,
            vec![
                MaskedSample::new(p1, vec![1.25, -0.5]).unwrap(),
                MaskedSample::new(p2, vec![3.0]).unwrap(),
            ],
        )
        .unwrap();
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.dim, 3);
        assert_eq!(back.samples, ds.samples);
    }

    #[test]
    fn load_csv_understands_missing_tokens_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.csv");
        std::fs::write(&path, "a,b,c\n1.0,NA,nan\n,2.5,0.125\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.samples[0].pattern.observed(), &[0]);
        assert_eq!(ds.samples[1].pattern.observed(), &[1, 2]);
        assert_eq!(ds.samples[1].values, vec![2.5, 0.125]);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b\n1.0,zebra\n").unwrap();
        match load_csv(&bad) {
            Err(Error::Parse { row, col, .. }) => {
                assert_eq!((row, col), (2, 2));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn standardize_uses_observed_entries_only() {
        let p_full = ObservedPattern::full(2);
        let p_first = ObservedPattern::new(2, vec![0]).unwrap();
        let mut ds = MaskedDataset::new(
            2,
            vec![
                MaskedSample::new(p_full.clone(), vec![1.0, 10.0]).unwrap(),
                MaskedSample::new(p_full, vec![3.0, 30.0]).unwrap(),
                MaskedSample::new(p_first, vec![5.0]).unwrap(),
            ],
        )
        .unwrap();
        let stats = standardize(&mut ds);
        // Column 0: observed entries 1, 3, 5 -> mean 3, sd 2.
        assert!((stats[0].0 - 3.0).abs() < 1e-12);
        assert!((stats[0].1 - 2.0).abs() < 1e-12);
        // Column 1: observed entries 10, 30 -> mean 20.
        assert!((stats[1].0 - 20.0).abs() < 1e-12);
        assert_eq!(ds.samples[0].values[0], -1.0);
        assert_eq!(ds.samples[2].values[0], 1.0);
    }
}
