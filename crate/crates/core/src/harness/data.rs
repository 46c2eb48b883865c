//! Synthetic two-blob data and a plain columnar file format.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::model::{Batch, Matrix};
use crate::rng::{self, Domain};

/// Minority fraction of the reference training split (60031 / 153849).
pub const DEFAULT_CLASS_RATIO: f64 = 60031.0 / 153849.0;
/// Train, validation and test fractions.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

/// Label of the minority class; the majority class is `1`.
pub const MINORITY_CLASS: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Batch,
    pub valid: Batch,
    pub test: Batch,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train.features().cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    /// Fraction of samples in the minority class.
    pub class_ratio: f64,
    /// Distance between the two class means.
    pub separation: f64,
}

fn split_sizes(n: usize) -> [usize; 3] {
    let train = (n as f64 * SPLIT_FRACTIONS[0]).round() as usize;
    let valid = (n as f64 * SPLIT_FRACTIONS[1]).round() as usize;
    [train, valid, n - train - valid]
}

/// Two isotropic unit-variance Gaussian blobs whose means sit at
/// `±separation/2` along the all-ones direction. Every split holds
/// `round(size * class_ratio)` minority samples, so each split has the
/// requested ratio up to rounding.
pub fn synth_dataset(spec: SynthSpec, seed: u64) -> Result<Dataset> {
    let SynthSpec {
        n,
        dim,
        class_ratio,
        separation,
    } = spec;
    if dim == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(class_ratio > 0.0 && class_ratio < 1.0) {
        return Err(invalid(format!("class ratio must lie in (0, 1), got {class_ratio}")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(invalid("separation must be finite and nonnegative"));
    }
    let sizes = split_sizes(n);
    let minority: Vec<usize> = sizes.iter().map(|&s| (s as f64 * class_ratio).round() as usize).collect();
    if sizes.iter().zip(&minority).any(|(&s, &m)| m == 0 || m == s) {
        return Err(invalid(format!(
            "n = {n} is too small to place both classes in every split at ratio {class_ratio}"
        )));
    }

    let offset = separation / 2.0 / (dim as f64).sqrt();
    let mut splits = Vec::with_capacity(3);
    for (k, (&size, &n_min)) in sizes.iter().zip(&minority).enumerate() {
        let mut data_rng = rng::stream(seed, Domain::Data, &[k as u64]);
        let mut labels: Vec<usize> = (0..size).map(|i| if i < n_min { MINORITY_CLASS } else { 1 - MINORITY_CLASS }).collect();
        labels.shuffle(&mut rng::stream(seed, Domain::Shuffle, &[k as u64]));
        let mut features = Matrix::zeros(size, dim);
        for (i, &y) in labels.iter().enumerate() {
            let sign = if y == MINORITY_CLASS { -1.0 } else { 1.0 };
            for v in features.row_mut(i) {
                let z: f64 = StandardNormal.sample(&mut data_rng);
                *v = sign * offset + z;
            }
        }
        splits.push(Batch::new(features, labels, None)?);
    }
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    Ok(Dataset { train, valid, test })
}

/// Parse `label,f0,f1,...` text: a header line, then one sample per line.
pub fn parse_columnar(text: &str) -> Result<(Matrix, Vec<usize>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "label" {
        return Err(Error::Parse(format!("header must start with `label` and name at least one feature: {header}")));
    }
    let width = cols.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!("line {}: expected {} fields, found {}", no + 1, cols.len(), fields.len())));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad label `{}`", no + 1, fields[0])))?;
        if label > 1 {
            return Err(Error::Parse(format!("line {}: labels must be 0 or 1", no + 1)));
        }
        labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| Error::Parse(format!("line {}: bad value `{f}`", no + 1)))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("line {}: non-finite value", no + 1)));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse("dataset has no samples".into()));
    }
    Ok((Matrix::from_vec(labels.len(), width, values)?, labels))
}

/// Stratified 80/10/10 split of labelled rows.
pub fn split_dataset(features: &Matrix, labels: &[usize], seed: u64) -> Result<Dataset> {
    let mut buckets: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        buckets[y.min(1)].push(i);
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (c, bucket) in buckets.iter_mut().enumerate() {
        bucket.shuffle(&mut rng::stream(seed, Domain::Shuffle, &[100 + c as u64]));
        let sizes = split_sizes(bucket.len());
        let mut start = 0;
        for (part, size) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&bucket[start..start + size]);
            start += size;
        }
    }
    let has = |part: &[usize], class: usize| part.iter().any(|&i| labels[i] == class);
    if parts.iter().any(|p| !has(p, 0) || !has(p, 1)) {
        return Err(invalid("dataset too small: every split needs both classes"));
    }
    let mut batches = Vec::with_capacity(3);
    for (k, mut idx) in parts.into_iter().enumerate() {
        idx.shuffle(&mut rng::stream(seed, Domain::Shuffle, &[200 + k as u64]));
        let rows = features.select_rows(&idx);
        batches.push(Batch::new(rows, idx.iter().map(|&i| labels[i]).collect(), None)?);
    }
    let test = batches.pop().unwrap();
    let valid = batches.pop().unwrap();
    let train = batches.pop().unwrap();
    Ok(Dataset { train, valid, test })
}

pub fn load_columnar(path: &Path, seed: u64) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let (features, labels) = parse_columnar(&text)?;
    split_dataset(&features, &labels, seed)
}

/// Write a split back out in the columnar format.
pub fn to_columnar(batch: &Batch) -> String {
    let d = batch.features().cols();
    let mut out = String::from("label");
    for j in 0..d {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (x, y) in batch.features().iter_rows().zip(batch.labels()) {
        out.push_str(&y.to_string());
        for v in x {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> SynthSpec {
        SynthSpec {
            n,
            dim: 4,
            class_ratio: DEFAULT_CLASS_RATIO,
            separation: 2.0,
        }
    }

    fn minority(b: &Batch) -> usize {
        b.labels().iter().filter(|&&y| y == MINORITY_CLASS).count()
    }

    #[test]
    fn split_sizes_and_ratio() {
        let d = synth_dataset(spec(1000), 3).unwrap();
        assert_eq!((d.train.len(), d.valid.len(), d.test.len()), (800, 100, 100));
        let expected = 800.0 * DEFAULT_CLASS_RATIO;
        assert!((minority(&d.train) as f64 - expected).abs() <= 1.0);
        assert_eq!(d.input_dim(), 4);
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(synth_dataset(spec(500), 9).unwrap(), synth_dataset(spec(500), 9).unwrap());
        assert_ne!(synth_dataset(spec(500), 9).unwrap(), synth_dataset(spec(500), 10).unwrap());
    }

    #[test]
    fn class_means_sit_at_half_separation() {
        let d = synth_dataset(SynthSpec { n: 20000, ..spec(0) }, 1).unwrap();
        let b = &d.train;
        let mut sums = [0.0; 2];
        let mut counts = [0.0; 2];
        for (x, &y) in b.features().iter_rows().zip(b.labels()) {
            sums[y] += x.iter().sum::<f64>() / 2.0; // projection onto ones/sqrt(4)
            counts[y] += 1.0;
        }
        assert!((sums[1] / counts[1] - 1.0).abs() < 0.05);
        assert!((sums[0] / counts[0] + 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_tiny_or_degenerate_requests() {
        assert!(synth_dataset(spec(5), 0).is_err());
        assert!(synth_dataset(SynthSpec { class_ratio: 0.0, ..spec(100) }, 0).is_err());
        assert!(synth_dataset(SynthSpec { dim: 0, ..spec(100) }, 0).is_err());
    }

    #[test]
    fn columnar_round_trip_and_errors() {
        let d = synth_dataset(spec(200), 4).unwrap();
        let (x, y) = parse_columnar(&to_columnar(&d.train)).unwrap();
        assert_eq!(&x, d.train.features());
        assert_eq!(y, d.train.labels());
        assert!(parse_columnar("").is_err());
        assert!(parse_columnar("y,f0\n1,2\n").is_err());
        assert!(parse_columnar("label,f0\n1,2,3\n").is_err());
        assert!(parse_columnar("label,f0\n2,0.5\n").is_err());
        assert!(parse_columnar("label,f0\n1,abc\n").is_err());
    }

    #[test]
    fn stratified_split_keeps_classes() {
        let d = synth_dataset(spec(1000), 4).unwrap();
        let s = split_dataset(d.train.features(), d.train.labels(), 1).unwrap();
        assert_eq!(s.train.len() + s.valid.len() + s.test.len(), 800);
        for b in [&s.train, &s.valid, &s.test] {
            let r = minority(b) as f64 / b.len() as f64;
            assert!((r - DEFAULT_CLASS_RATIO).abs() < 0.02, "{r}");
        }
    }
}
