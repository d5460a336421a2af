//! Synthetic two-class data, client partitioning and CSV shard files.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use hefl_core::model::Dataset;
use hefl_core::random::RandomSource;

/// Gaussian blobs with unit variance whose means sit `separation` apart
/// along the diagonal direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub feature_dim: usize,
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_per_class: 800,
            test_per_class: 200,
            feature_dim: 8,
            separation: 2.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.train_per_class > 0 && self.test_per_class > 0 && self.feature_dim > 0,
            "dataset sizes must be positive"
        );
        ensure!(
            self.separation.is_finite() && self.separation >= 0.0,
            "separation must be a non-negative number"
        );
        Ok(())
    }
}

fn blobs(spec: &SyntheticSpec, per_class: usize, r: &mut RandomSource) -> Result<Dataset> {
    let d = spec.feature_dim;
    let offset = spec.separation / 2.0 / (d as f64).sqrt();
    let mut features = Vec::with_capacity(2 * per_class * d);
    let mut labels = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let y = (i % 2) as u8;
        let centre = if y == 1 { offset } else { -offset };
        features.extend((0..d).map(|_| centre + r.gaussian()));
        labels.push(y);
    }
    Ok(Dataset::new(features, d, labels)?)
}

/// Returns `(train, test)`, classes interleaved.
pub fn generate_dataset(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut r = RandomSource::new(seed);
    let train = blobs(spec, spec.train_per_class, &mut r)?;
    let test = blobs(spec, spec.test_per_class, &mut r)?;
    Ok((train, test))
}

/// Shuffles the rows, then cuts `c` contiguous shares whose sizes differ by
/// at most one.
pub fn partition(data: &Dataset, c: usize, seed: u64) -> Result<Vec<Dataset>> {
    ensure!(c > 0, "need at least one share");
    if c > data.len() {
        bail!("cannot split {} rows among {c} clients", data.len());
    }
    let base = data.len() / c;
    let extra = data.len() % c;
    let sizes: Vec<usize> = (0..c).map(|i| base + usize::from(i < extra)).collect();
    Ok(cut(data, &sizes, seed))
}

/// Like [`partition`] but with share sizes proportional to `weights`
/// (largest-remainder rounding, every share non-empty).
pub fn partition_weighted(data: &Dataset, weights: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    let c = weights.len();
    ensure!(c > 0, "need at least one share");
    ensure!(
        weights.iter().all(|w| w.is_finite() && *w > 0.0),
        "share weights must be positive"
    );
    if c > data.len() {
        bail!("cannot split {} rows among {c} clients", data.len());
    }
    let total: f64 = weights.iter().sum();
    let spare = data.len() - c;
    let exact: Vec<f64> = weights.iter().map(|w| w / total * spare as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = spare - sizes.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        sizes[i] += 1;
    }
    sizes.iter_mut().for_each(|s| *s += 1);
    Ok(cut(data, &sizes, seed))
}

fn cut(data: &Dataset, sizes: &[usize], seed: u64) -> Vec<Dataset> {
    let mut rows: Vec<usize> = (0..data.len()).collect();
    RandomSource::new(seed).shuffle(&mut rows);
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let share = data.select(&rows[start..start + s]);
            start += s;
            share
        })
        .collect()
}

/// Writes `f0,...,f{d-1},label` rows with a header.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = (0..data.width()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|x| x.to_string()).collect();
        rec.push(data.labels()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let width = r.headers()?.len().checked_sub(1).filter(|w| *w > 0);
    let Some(width) = width else {
        bail!(
            "{}: need at least one feature column and a label",
            path.display()
        );
    };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for field in rec.iter().take(width) {
            features.push(field.trim().parse::<f64>().with_context(|| {
                format!(
                    "{}: row {}: bad feature `{field}`",
                    path.display(),
                    line + 1
                )
            })?);
        }
        let label: u8 = rec[width].trim().parse()?;
        ensure!(
            label <= 1,
            "{}: row {}: label must be 0 or 1",
            path.display(),
            line + 1
        );
        labels.push(label);
    }
    Ok(Dataset::new(features, width, labels)?)
}
