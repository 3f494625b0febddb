//! Datasets, synthetic generators, split protocols and CSV ingestion.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    data: Vec<f64>,
    p: usize,
}

impl Features {
    pub fn new(data: Vec<f64>, p: usize) -> Result<Self> {
        if p == 0 || !data.len().is_multiple_of(p) {
            return Err(Error::InvalidN(format!("{} values do not form rows of width {p}", data.len())));
        }
        Ok(Self { data, p })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidN("ragged feature rows".into()));
        }
        Self::new(rows.concat(), p)
    }

    /// Single-feature matrix.
    pub fn column(values: Vec<f64>) -> Self {
        Self { data: values, p: 1 }
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { data, p: self.p }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Real(Vec<f64>),
    Labels { labels: Vec<usize>, k: usize },
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Real(v) => v.len(),
            Target::Labels { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            Target::Real(v) => Target::Real(idx.iter().map(|&i| v[i]).collect()),
            Target::Labels { labels, k } => {
                Target::Labels { labels: idx.iter().map(|&i| labels[i]).collect(), k: *k }
            }
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            Target::Real(v) => Some(v),
            Target::Labels { .. } => None,
        }
    }

    pub fn as_labels(&self) -> Option<(&[usize], usize)> {
        match self {
            Target::Labels { labels, k } => Some((labels, *k)),
            Target::Real(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Features,
    pub target: Target,
    pub columns: Vec<String>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(features: Features, target: Target, columns: Vec<String>, provenance: impl Into<String>) -> Result<Self> {
        if features.n() != target.len() {
            return Err(Error::LengthMismatch(features.n(), target.len()));
        }
        if features.n() == 0 {
            return Err(Error::InvalidN("dataset has no rows".into()));
        }
        if let Some(i) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: i / features.p() + 1,
                column: columns.get(i % features.p()).cloned().unwrap_or_default(),
                message: "non-finite feature".into(),
            });
        }
        if let Target::Real(y) = &target {
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse { row: i + 1, column: "target".into(), message: "non-finite target".into() });
            }
        }
        Ok(Self { features, target, columns, provenance: provenance.into() })
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn p(&self) -> usize {
        self.features.p()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(idx),
            target: self.target.select(idx),
            columns: self.columns.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.target.as_real()
    }

    /// Write as CSV with a header; the target is the last column named `y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = self.columns.clone();
        header.push("y".into());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(match &self.target {
                Target::Real(y) => y[i].to_string(),
                Target::Labels { labels, .. } => labels[i].to_string(),
            });
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Z-score transform, fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(x: &Features) -> Self {
        let (n, p) = (x.n(), x.p());
        let mut mean = vec![0.0; p];
        for r in x.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; p];
        for r in x.rows() {
            for j in 0..p {
                var[j] += (r[j] - mean[j]).powi(2) / n as f64;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    pub fn identity(p: usize) -> Self {
        Self { mean: vec![0.0; p], scale: vec![1.0; p] }
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn transform(&self, x: &Features) -> Features {
        let data = x.rows().flat_map(|r| self.transform_row(r)).collect();
        Features { data, p: x.p() }
    }
}

/// How the second parameter of `N(2 sin X, .)` in the bimodal generator is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseConvention {
    #[default]
    Sd,
    Var,
}

impl NoiseConvention {
    fn sd(self, value: f64) -> f64 {
        match self {
            NoiseConvention::Sd => value,
            NoiseConvention::Var => value.sqrt(),
        }
    }
}

/// Ground truth of the bimodal generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BimodalTruth {
    pub convention: NoiseConvention,
}

impl BimodalTruth {
    pub fn mean(&self, x: f64) -> f64 {
        2.0 * x.sin()
    }

    /// Noise sd at `x`: low in the two dense outer regions, high in the middle.
    pub fn sd(&self, x: f64) -> f64 {
        if (1.5..8.0).contains(&x) {
            self.convention.sd(2.1)
        } else {
            self.convention.sd(0.1)
        }
    }

    pub fn sample_y(&self, x: f64, rng: &mut impl Rng) -> f64 {
        Normal::new(self.mean(x), self.sd(x)).expect("positive sd").sample(rng)
    }
}

/// Number of points per outer region, `floor(0.425 n)`.
pub fn bimodal_outer_count(n: usize) -> usize {
    (0.425 * n as f64 + 1e-9).floor() as usize
}

pub fn generate_bimodal_dgp(n: usize, seed: u64) -> Result<Dataset> {
    generate_bimodal_dgp_with(n, seed, NoiseConvention::Sd)
}

/// Two dense low-noise outer regions `U(0, 1.5)` and `U(8, 10)` with `floor(0.425 n)` points
/// each, the remainder from `6.5 Beta(8, 8) + 1.5` with high noise.
pub fn generate_bimodal_dgp_with(n: usize, seed: u64, convention: NoiseConvention) -> Result<Dataset> {
    if n < 8 {
        return Err(Error::InvalidN(format!("bimodal generator needs n >= 8, got {n}")));
    }
    let truth = BimodalTruth { convention };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = bimodal_outer_count(n);
    let beta = Beta::new(8.0, 8.0).expect("valid beta");
    let mut xs = Vec::with_capacity(n);
    for _ in 0..outer {
        xs.push(rng.gen_range(0.0..1.5));
    }
    for _ in 0..outer {
        xs.push(rng.gen_range(8.0..10.0));
    }
    for _ in 0..n - 2 * outer {
        xs.push(beta.sample(&mut rng) * (8.0 - 1.5) + 1.5);
    }
    let ys = xs.iter().map(|&x| truth.sample_y(x, &mut rng)).collect();
    Dataset::new(Features::column(xs), Target::Real(ys), vec!["x".into()], format!("bimodal(n={n},seed={seed})"))
}

/// Isotropic Gaussian clusters with equal class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsTruth {
    pub centers: Vec<[f64; 2]>,
    pub spread: f64,
}

impl BlobsTruth {
    /// Standard layout: centers evenly spaced on a circle of radius 2.
    pub fn circle(k: usize, spread: f64) -> Self {
        let centers = (0..k)
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                [2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect();
        Self { centers, spread }
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// True class posterior `P(y | x)`.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .centers
            .iter()
            .map(|c| -((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (2.0 * self.spread * self.spread))
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsDataset {
    pub data: Dataset,
    pub truth: BlobsTruth,
}

pub fn generate_blobs_classification(n: usize, k_classes: usize, spread: f64, seed: u64) -> Result<BlobsDataset> {
    generate_blobs_with(n, BlobsTruth::circle(k_classes, spread), seed)
}

pub fn generate_blobs_with(n: usize, truth: BlobsTruth, seed: u64) -> Result<BlobsDataset> {
    let k = truth.k();
    if k == 0 || n < k {
        return Err(Error::InvalidN(format!("need n >= k_classes >= 1, got n={n}, k={k}")));
    }
    if !(truth.spread.is_finite() && truth.spread > 0.0) {
        return Err(Error::Config(format!("spread must be positive, got {}", truth.spread)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, truth.spread).expect("positive spread");
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.gen_range(0..k);
        let c = truth.centers[y];
        data.push(c[0] + noise.sample(&mut rng));
        data.push(c[1] + noise.sample(&mut rng));
        labels.push(y);
    }
    let ds = Dataset::new(
        Features::new(data, 2)?,
        Target::Labels { labels, k },
        vec!["x0".into(), "x1".into()],
        format!("blobs(n={n},k={k},spread={},seed={seed})", truth.spread),
    )?;
    Ok(BlobsDataset { data: ds, truth })
}

/// Disjoint train/calibration/test index sets (calibration optionally split in two).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub cal1: Vec<usize>,
    pub cal2: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitIndices {
    /// Full calibration set (`cal1` followed by `cal2`).
    pub fn cal(&self) -> Vec<usize> {
        self.cal1.iter().chain(&self.cal2).copied().collect()
    }
}

/// Uniform random partition into train/cal/test by `ratios`.
///
/// Train and calibration sizes are `floor(n r)`; test receives the remainder.
/// The calibration part is returned whole in `cal1`; see [`split_calibration`].
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (rt, rc, rs) = ratios;
    if [rt, rc, rs].iter().any(|r| !r.is_finite() || *r < 0.0) || (rt + rc + rs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be non-negative and sum to 1: {ratios:?}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * rt + 1e-9).floor() as usize;
    let n_cal = (((n as f64) * rc + 1e-9).floor() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_cal);
    let cal = idx.split_off(n_train);
    Ok(SplitIndices { train: idx, cal1: cal, cal2: Vec::new(), test, seed })
}

/// Size of the threshold-calibration part: 30% of the calibration set, capped at 1000
/// once the set exceeds 3000 points.
pub fn cal2_size(n_cal: usize) -> usize {
    if n_cal <= 3000 {
        (0.3 * n_cal as f64).round() as usize
    } else {
        1000
    }
}

/// Split calibration indices into (model-fitting part, threshold part).
pub fn split_calibration(cal: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    split_calibration_sized(cal, cal2_size(cal.len()), seed)
}

/// Shuffle `cal` and put `n2` indices (at most all of them) in the second part.
pub fn split_calibration_sized(cal: &[usize], n2: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx = cal.to_vec();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15));
    let cal2 = idx.split_off(idx.len() - n2.min(idx.len()));
    (idx, cal2)
}

/// Read a numeric CSV with a header row.
pub fn load_csv(path: &Path, target_column: &str, label_mode: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| csv_io(path, e))?;
    let headers: Vec<String> =
        rdr.headers().map_err(|e| csv_io(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    let t = headers.iter().position(|h| h == target_column).ok_or_else(|| Error::MissingColumn(target_column.into()))?;
    if headers.len() < 2 {
        return Err(Error::Config("CSV needs at least one feature column besides the target".into()));
    }
    let columns: Vec<String> = headers.iter().enumerate().filter(|(j, _)| *j != t).map(|(_, h)| h.clone()).collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, column: String::new(), message: e.to_string() })?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
                row,
                column: headers[j].clone(),
                message: format!("not a finite number: {cell:?}"),
            })?;
            if j == t {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    let target = if label_mode {
        let mut labels = Vec::with_capacity(y.len());
        for (i, v) in y.iter().enumerate() {
            if *v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Parse {
                    row: i + 1,
                    column: target_column.into(),
                    message: format!("label must be a non-negative integer, got {v}"),
                });
            }
            labels.push(*v as usize);
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Target::Labels { labels, k }
    } else {
        Target::Real(y)
    };
    let p = columns.len();
    Dataset::new(Features::new(x, p)?, target, columns, path.display().to_string())
}

/// Externally computed base-model predictions, row-aligned with a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub g: Option<Vec<f64>>,
    pub q_lo: Option<Vec<f64>>,
    pub q_hi: Option<Vec<f64>>,
    pub rows: usize,
}

impl Predictions {
    pub fn align_with(&self, ds: &Dataset) -> Result<()> {
        if self.rows != ds.n() {
            return Err(Error::RowCountMismatch { expected: ds.n(), got: self.rows });
        }
        Ok(())
    }
}

/// Read a predictions CSV with any subset of the columns `g`, `q_lo`, `q_hi`.
pub fn load_predictions(path: &Path) -> Result<Predictions> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| csv_io(path, e))?;
    let headers: Vec<String> =
        rdr.headers().map_err(|e| csv_io(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    let pos = |name: &str| headers.iter().position(|h| h == name);
    let cols = [pos("g"), pos("q_lo"), pos("q_hi")];
    if cols.iter().all(Option::is_none) {
        return Err(Error::MissingColumn("g|q_lo|q_hi".into()));
    }
    let mut out: [Vec<f64>; 3] = Default::default();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, column: String::new(), message: e.to_string() })?;
        for (c, j) in cols.iter().enumerate() {
            if let Some(j) = *j {
                let cell = rec.get(j).unwrap_or("");
                let v: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Parse {
                    row,
                    column: headers[j].clone(),
                    message: format!("not a finite number: {cell:?}"),
                })?;
                out[c].push(v);
            }
        }
        rows += 1;
    }
    let [g, q_lo, q_hi] = out;
    let keep = |v: Vec<f64>, c: Option<usize>| c.map(|_| v);
    Ok(Predictions { g: keep(g, cols[0]), q_lo: keep(q_lo, cols[1]), q_hi: keep(q_hi, cols[2]), rows })
}
