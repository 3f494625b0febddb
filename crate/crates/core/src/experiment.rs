//! Seeded multi-run benchmark: configuration, execution, aggregation and output.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    cqr_interval, cqr_r_interval, cqr_r_score, default_min_count, mondrian_calibrate, mondrian_interval,
    reg_split_interval, weighted_interval,
};
use crate::conformal::{conformal_quantile, NominalLevel};
use crate::data::{
    generate_blobs_classification, generate_bimodal_dgp_with, load_csv, load_predictions, split_dataset, Dataset,
    Features, NoiseConvention, Predictions, Target,
};
use crate::epic::{
    epic_calibrate, epic_interval, ClassMode, EpicClassifier, PredictionBand, PredictionSet, SplitRule,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::predictive::{LabelPredictiveConfig, LabelPredictiveKind, PredictiveConfig, PredictiveKind};
use crate::scores::{
    aps_score, cqr_score, fit_base_predictor, residual_score, uncross, weighted_residual_score, BasePredictor,
    KnnClassifier, LabelScore, LookupPredictor, PredictorConfig, PredictorKind, ScoreFunction,
};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "EPIC_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Bimodal {
        n: usize,
        #[serde(default)]
        convention: NoiseConvention,
    },
    Blobs {
        n: usize,
        classes: usize,
        spread: f64,
    },
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        label_mode: bool,
        #[serde(default)]
        predictions: Option<PathBuf>,
    },
}

impl DatasetSpec {
    fn is_classification(&self) -> bool {
        match self {
            DatasetSpec::Blobs { .. } => true,
            DatasetSpec::Csv { label_mode, .. } => *label_mode,
            DatasetSpec::Bimodal { .. } => false,
        }
    }

    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Bimodal { n, .. } => format!("bimodal_n{n}"),
            DatasetSpec::Blobs { n, classes, .. } => format!("blobs_n{n}_k{classes}"),
            DatasetSpec::Csv { path, .. } => {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into())
            }
        }
    }

    /// Generate (or load) the data for one run.
    pub fn materialize(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Bimodal { n, convention } => generate_bimodal_dgp_with(*n, seed, *convention),
            DatasetSpec::Blobs { n, classes, spread } => {
                generate_blobs_classification(*n, *classes, *spread, seed).map(|b| b.data)
            }
            DatasetSpec::Csv { path, target, label_mode, .. } => load_csv(path, target, *label_mode),
        }
    }
}

/// A method of the benchmark, parsed from its registered name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    RegSplit,
    Weighted,
    Mondrian,
    Cqr,
    CqrR,
    Epic(PredictiveKind),
    EpicCqr(PredictiveKind),
    Aps,
    EpicAps(ClassMode),
}

fn short(kind: PredictiveKind) -> &'static str {
    match kind {
        PredictiveKind::GpExact => "gp",
        PredictiveKind::MdnDropout => "mdn",
        PredictiveKind::BartLite => "bart",
        PredictiveKind::KnnEmpirical => "knn",
    }
}

impl Method {
    pub fn registry() -> Vec<Method> {
        let mut v = vec![Method::RegSplit, Method::Weighted, Method::Mondrian, Method::Cqr, Method::CqrR];
        v.extend(PredictiveKind::ALL.map(Method::Epic));
        v.extend(PredictiveKind::ALL.map(Method::EpicCqr));
        v.push(Method::Aps);
        v.push(Method::EpicAps(ClassMode::Labels(LabelPredictiveKind::KnnFrequency)));
        v.push(Method::EpicAps(ClassMode::Labels(LabelPredictiveKind::DropoutSoftmax)));
        v.extend(PredictiveKind::ALL.map(|k| Method::EpicAps(ClassMode::Continuous(k))));
        v
    }

    pub fn name(self) -> String {
        match self {
            Method::RegSplit => "reg_split".into(),
            Method::Weighted => "weighted".into(),
            Method::Mondrian => "mondrian".into(),
            Method::Cqr => "cqr".into(),
            Method::CqrR => "cqr_r".into(),
            Method::Epic(k) => format!("epic_{}", short(k)),
            Method::EpicCqr(k) => format!("epic_cqr_{}", short(k)),
            Method::Aps => "aps".into(),
            Method::EpicAps(ClassMode::Labels(LabelPredictiveKind::KnnFrequency)) => "epic_aps_knn".into(),
            Method::EpicAps(ClassMode::Labels(LabelPredictiveKind::DropoutSoftmax)) => "epic_aps_dropout".into(),
            Method::EpicAps(ClassMode::Continuous(k)) => format!("epic_aps_cont_{}", short(k)),
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Self::registry().into_iter().find(|m| m.name() == name).ok_or_else(|| {
            let known: Vec<String> = Self::registry().into_iter().map(Method::name).collect();
            Error::Config(format!("unknown method {name:?}; known: {}", known.join(", ")))
        })
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Method::Aps | Method::EpicAps(_))
    }
}

fn default_alpha() -> f64 {
    0.1
}

fn default_runs() -> usize {
    50
}

fn default_ratios() -> [f64; 3] {
    [0.4, 0.4, 0.2]
}

fn default_bins() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub methods: Vec<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Train, calibration and test fractions.
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub base: PredictorConfig,
    #[serde(default)]
    pub predictive: PredictiveConfig,
    #[serde(default)]
    pub labels: LabelPredictiveConfig,
    #[serde(default)]
    pub split_rule: SplitRule,
    #[serde(default = "default_bins")]
    pub mondrian_bins: usize,
    /// Output location; not part of the report or its hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, methods: &[&str]) -> Self {
        Self {
            dataset,
            methods: methods.iter().map(|m| m.to_string()).collect(),
            alpha: default_alpha(),
            n_runs: default_runs(),
            seed: 0,
            ratios: default_ratios(),
            base: PredictorConfig::default(),
            predictive: PredictiveConfig::default(),
            labels: LabelPredictiveConfig::default(),
            split_rule: SplitRule::Standard,
            mondrian_bins: default_bins(),
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Check everything that can be checked without running.
    pub fn validate(&self) -> Result<Vec<Method>> {
        let alpha = NominalLevel::new(self.alpha)?;
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods given".into()));
        }
        if self.ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (self.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!("ratios must be non-negative and sum to 1, got {:?}", self.ratios)));
        }
        if self.mondrian_bins == 0 {
            return Err(Error::Config("mondrian_bins must be >= 1".into()));
        }
        self.split_rule.cal2_size(10)?;
        let _ = alpha;
        let class = self.dataset.is_classification();
        let methods = self.methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?;
        for m in &methods {
            if m.is_classification() != class {
                return Err(Error::Config(format!(
                    "method {} does not apply to a {} dataset",
                    m.name(),
                    if class { "classification" } else { "regression" }
                )));
            }
        }
        let mut seen = methods.iter().map(|m| m.name()).collect::<Vec<_>>();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate method".into()));
        }
        Ok(methods)
    }

    /// Canonical JSON (sorted keys) of the configuration, excluding the output path.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        splitmix(self.seed ^ (run as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub method: String,
    pub error: String,
}

/// Everything produced by one run, including the per-point regions.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run: usize,
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<RunFailure>,
    pub bands: Vec<(String, Vec<PredictionBand>)>,
    pub sets: Vec<(String, Vec<PredictionSet>)>,
    pub test_x: Features,
    pub test_target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub dataset: String,
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<RunFailure>,
}

impl ExperimentReport {
    pub fn to_canonical_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&serde_json::to_value(self)?)?;
        s.push('\n');
        Ok(s)
    }
}

/// Worker count from [`THREADS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_threads(cfg, worker_count())
}

/// Run all configured runs on a pool of `threads` workers. Each run's seed is
/// fixed up front and results are collected in run order, so the output does
/// not depend on the worker count.
pub fn run_experiment_threads(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    let methods = cfg.validate()?;
    let config_hash = cfg.hash()?;
    let shared = SharedData::load(&cfg.dataset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outputs: Vec<RunOutput> =
        pool.install(|| (0..cfg.n_runs).into_par_iter().map(|r| execute_run(cfg, &methods, &shared, r, false)).collect());
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for o in outputs {
        reports.extend(o.reports);
        failures.extend(o.failures);
    }
    Ok(ExperimentReport { config_hash, config: cfg.clone(), dataset: cfg.dataset.name(), reports, failures })
}

/// Execute a single run and keep its per-point regions.
pub fn run_single(cfg: &ExperimentConfig, run: usize) -> Result<RunOutput> {
    let methods = cfg.validate()?;
    let shared = SharedData::load(&cfg.dataset)?;
    Ok(execute_run(cfg, &methods, &shared, run, true))
}

/// Data loaded once for all runs (files); synthetic data is generated per run.
struct SharedData {
    dataset: Option<Dataset>,
    predictions: Option<Predictions>,
}

impl SharedData {
    fn load(spec: &DatasetSpec) -> Result<Self> {
        match spec {
            DatasetSpec::Csv { predictions, .. } => {
                let ds = spec.materialize(0)?;
                let preds = predictions.as_deref().map(load_predictions).transpose()?;
                if let Some(p) = &preds {
                    p.align_with(&ds)?;
                }
                Ok(Self { dataset: Some(ds), predictions: preds })
            }
            _ => Ok(Self { dataset: None, predictions: None }),
        }
    }
}

fn execute_run(cfg: &ExperimentConfig, methods: &[Method], shared: &SharedData, run: usize, keep: bool) -> RunOutput {
    let seed = cfg.run_seed(run);
    let mut out = RunOutput {
        run,
        seed,
        reports: Vec::new(),
        failures: Vec::new(),
        bands: Vec::new(),
        sets: Vec::new(),
        test_x: Features::column(vec![]),
        test_target: Target::Real(vec![]),
    };
    let fail_all = |out: &mut RunOutput, e: &Error| {
        for m in methods {
            out.failures.push(RunFailure { run, seed, method: m.name(), error: e.to_string() });
        }
    };
    let ds = match &shared.dataset {
        Some(d) => d.clone(),
        None => match cfg.dataset.materialize(seed) {
            Ok(d) => d,
            Err(e) => {
                fail_all(&mut out, &e);
                return out;
            }
        },
    };
    let [rt, rc, rs] = cfg.ratios;
    let split = match split_dataset(ds.n(), (rt, rc, rs), seed) {
        Ok(s) => s,
        Err(e) => {
            fail_all(&mut out, &e);
            return out;
        }
    };
    let ctx = RunContext::new(cfg, &ds, shared.predictions.as_ref(), &split.train, &split.cal1, &split.test, seed);
    let alpha = NominalLevel::new(cfg.alpha).expect("validated");
    for (mi, &m) in methods.iter().enumerate() {
        let mseed = splitmix(seed.wrapping_add(1 + mi as u64));
        let result = if m.is_classification() {
            ctx.class_method(m, mseed).and_then(|(sets, n2)| {
                let (labels, _) = ctx.test.target.as_labels().expect("label target");
                let r = MetricsReport::classification(&m.name(), &sets, labels, alpha, n2)?;
                if keep {
                    out.sets.push((m.name(), sets));
                }
                Ok(r)
            })
        } else {
            ctx.regression_method(m, mseed).and_then(|(bands, n2)| {
                let r = MetricsReport::regression(&m.name(), &bands, ctx.test.y().expect("real target"), alpha, n2)?;
                if keep {
                    out.bands.push((m.name(), bands));
                }
                Ok(r)
            })
        };
        match result {
            Ok(mut r) => {
                r.run = run;
                r.seed = seed;
                out.reports.push(r);
            }
            Err(e) => out.failures.push(RunFailure { run, seed, method: m.name(), error: e.to_string() }),
        }
    }
    if keep {
        out.test_x = ctx.test.features.clone();
        out.test_target = ctx.test.target.clone();
    }
    out
}

struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    alpha: NominalLevel,
    full: &'a Dataset,
    preds: Option<&'a Predictions>,
    train: Dataset,
    cal: Dataset,
    test: Dataset,
    cal_idx: &'a [usize],
    test_idx: &'a [usize],
    seed: u64,
    g: OnceCell<Result<BasePredictor>>,
    mad: OnceCell<Result<BasePredictor>>,
    quantiles: OnceCell<Result<(BasePredictor, BasePredictor)>>,
    classifier: OnceCell<Result<KnnClassifier>>,
}

fn cached<T: Clone>(cell: &OnceCell<Result<T>>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    match cell.get_or_init(f) {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::Config(format!("base model: {e}"))),
    }
}

impl<'a> RunContext<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        full: &'a Dataset,
        preds: Option<&'a Predictions>,
        train: &'a [usize],
        cal: &'a [usize],
        test: &'a [usize],
        seed: u64,
    ) -> Self {
        Self {
            cfg,
            alpha: NominalLevel::new(cfg.alpha).expect("validated"),
            full,
            preds,
            train: full.subset(train),
            cal: full.subset(cal),
            test: full.subset(test),
            cal_idx: cal,
            test_idx: test,
            seed,
            g: OnceCell::new(),
            mad: OnceCell::new(),
            quantiles: OnceCell::new(),
            classifier: OnceCell::new(),
        }
    }

    fn base_cfg(&self) -> PredictorConfig {
        PredictorConfig { seed: splitmix(self.seed ^ 0xA5A5), ..self.cfg.base.clone() }
    }

    fn external(&self, col: impl Fn(&Predictions) -> Option<&Vec<f64>>) -> Option<Result<BasePredictor>> {
        let v = self.preds.and_then(col)?;
        Some(LookupPredictor::new(&self.full.features, v).map(BasePredictor::Lookup))
    }

    fn g(&self) -> Result<BasePredictor> {
        cached(&self.g, || {
            if let Some(p) = self.external(|p| p.g.as_ref()) {
                return p;
            }
            let y = self.train.y().expect("real target");
            fit_base_predictor(&self.base_cfg(), &self.train.features, y).map(BasePredictor::from)
        })
    }

    /// Spread model: the base learner fit to training absolute residuals.
    fn mad(&self) -> Result<BasePredictor> {
        let g = self.g()?;
        cached(&self.mad, || {
            let y = self.train.y().expect("real target");
            let r: Vec<f64> = self.train.features.rows().zip(y).map(|(x, &v)| residual_score(g.predict(x), v)).collect();
            let cfg = PredictorConfig { seed: splitmix(self.seed ^ 0x5A5A), ..self.cfg.base.clone() };
            let cfg = match cfg.kind {
                PredictorKind::KnnQuantile => cfg.with_kind(PredictorKind::KnnMean, 0.5),
                PredictorKind::MlpPinball => cfg.with_kind(PredictorKind::MlpMean, 0.5),
                _ => cfg,
            };
            fit_base_predictor(&cfg, &self.train.features, &r).map(BasePredictor::from)
        })
    }

    fn quantiles(&self) -> Result<(BasePredictor, BasePredictor)> {
        cached(&self.quantiles, || {
            if let (Some(lo), Some(hi)) = (self.external(|p| p.q_lo.as_ref()), self.external(|p| p.q_hi.as_ref())) {
                return Ok((lo?, hi?));
            }
            let a = self.alpha.alpha();
            let kind = match self.cfg.base.kind {
                PredictorKind::KnnMean | PredictorKind::KnnQuantile => PredictorKind::KnnQuantile,
                PredictorKind::MlpMean | PredictorKind::MlpPinball => PredictorKind::MlpPinball,
            };
            let y = self.train.y().expect("real target");
            let base = self.base_cfg();
            let lo = fit_base_predictor(&base.with_kind(kind, a / 2.0), &self.train.features, y)?;
            let hi = fit_base_predictor(&base.with_kind(kind, 1.0 - a / 2.0), &self.train.features, y)?;
            Ok((lo.into(), hi.into()))
        })
    }

    fn classifier(&self) -> Result<KnnClassifier> {
        cached(&self.classifier, || {
            let (labels, k) = self.train.target.as_labels().expect("label target");
            KnnClassifier::fit(&self.train.features, labels, k, self.cfg.base.k)
        })
    }

    fn regression_method(&self, m: Method, seed: u64) -> Result<(Vec<PredictionBand>, usize)> {
        let xc = &self.cal.features;
        let yc = self.cal.y().expect("real target");
        let xt = &self.test.features;
        let n_cal = yc.len();
        let per_test = |f: &dyn Fn(&[f64]) -> PredictionBand| xt.rows().map(f).collect::<Vec<_>>();
        let _ = (self.cal_idx, self.test_idx);
        match m {
            Method::RegSplit => {
                let g = self.g()?;
                let s: Vec<f64> = xc.rows().zip(yc).map(|(x, &y)| residual_score(g.predict(x), y)).collect();
                let t = conformal_quantile(&s, self.alpha)?;
                Ok((per_test(&|x| reg_split_interval(g.predict(x), t)), n_cal))
            }
            Method::Weighted => {
                let (g, mad) = (self.g()?, self.mad()?);
                let s: Vec<f64> =
                    xc.rows().zip(yc).map(|(x, &y)| weighted_residual_score(g.predict(x), mad.predict(x), y)).collect();
                let t = conformal_quantile(&s, self.alpha)?;
                Ok((per_test(&|x| weighted_interval(g.predict(x), mad.predict(x), t)), n_cal))
            }
            Method::Mondrian => {
                let (g, mad) = (self.g()?, self.mad()?);
                let s: Vec<f64> = xc.rows().zip(yc).map(|(x, &y)| residual_score(g.predict(x), y)).collect();
                let d: Vec<f64> = xc.rows().map(|x| mad.predict(x)).collect();
                let bins = mondrian_calibrate(&d, &s, self.alpha, self.cfg.mondrian_bins, default_min_count(self.alpha))?;
                Ok((per_test(&|x| mondrian_interval(g.predict(x), &bins, mad.predict(x))), n_cal))
            }
            Method::Cqr | Method::CqrR => {
                let (lo, hi) = self.quantiles()?;
                let s: Vec<f64> = xc
                    .rows()
                    .zip(yc)
                    .map(|(x, &y)| {
                        let (a, b) = uncross(lo.predict(x), hi.predict(x));
                        if m == Method::Cqr {
                            cqr_score(a, b, y)
                        } else {
                            cqr_r_score(a, b, y)
                        }
                    })
                    .collect();
                let t = conformal_quantile(&s, self.alpha)?;
                let band = |x: &[f64]| {
                    if m == Method::Cqr {
                        cqr_interval(lo.predict(x), hi.predict(x), t)
                    } else {
                        cqr_r_interval(lo.predict(x), hi.predict(x), t)
                    }
                };
                Ok((per_test(&band), n_cal))
            }
            Method::Epic(kind) | Method::EpicCqr(kind) => {
                let score = if let Method::Epic(_) = m {
                    ScoreFunction::Residual { g: self.g()? }
                } else {
                    let (q_lo, q_hi) = self.quantiles()?;
                    ScoreFunction::Cqr { q_lo, q_hi }
                };
                let p = epic_calibrate(score, kind, xc, yc, self.alpha, self.cfg.split_rule, &self.cfg.predictive, seed)?;
                let bands = xt.rows().map(|x| epic_interval(&p, x)).collect::<Result<Vec<_>>>()?;
                Ok((bands, p.n_cal2))
            }
            Method::Aps | Method::EpicAps(_) => Err(Error::Config(format!("{} is a classification method", m.name()))),
        }
    }

    fn class_method(&self, m: Method, seed: u64) -> Result<(Vec<PredictionSet>, usize)> {
        let clf = self.classifier()?;
        let (lc, _) = self.cal.target.as_labels().expect("label target");
        let xc = &self.cal.features;
        let xt = &self.test.features;
        match m {
            Method::Aps => {
                let s = xc
                    .rows()
                    .zip(lc)
                    .map(|(x, &y)| aps_score(&clf.predict_proba(x), y))
                    .collect::<Result<Vec<_>>>()?;
                let t = conformal_quantile(&s, self.alpha)?;
                let sets = xt
                    .rows()
                    .map(|x| {
                        let p = clf.predict_proba(x);
                        let s_prime = (0..p.len()).map(|y| aps_score(&p, y)).collect::<Result<Vec<_>>>()?;
                        Ok(PredictionSet { labels: (0..p.len()).filter(|&y| s_prime[y] <= t).collect(), s_prime })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((sets, lc.len()))
            }
            Method::EpicAps(mode) => {
                let e = EpicClassifier::calibrate(
                    clf,
                    LabelScore::Aps,
                    mode,
                    xc,
                    lc,
                    self.alpha,
                    self.cfg.split_rule,
                    &self.cfg.labels,
                    &self.cfg.predictive,
                    seed,
                )?;
                let sets = xt.rows().map(|x| e.predict_set(x)).collect::<Result<Vec<_>>>()?;
                Ok((sets, e.n_cal2))
            }
            _ => Err(Error::Config(format!("{} is a regression method", m.name()))),
        }
    }
}

/// Which direction of a metric is better, for bolding.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Better {
    Lower,
    Higher,
    Near(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    /// Twice the sample standard deviation over runs (0 for a single run).
    pub two_sd: f64,
    pub n: usize,
    pub single_run: bool,
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config_hash: String,
    pub dataset: String,
    pub alpha: f64,
    pub cells: Vec<AggregateCell>,
    /// Failed runs per method; failed runs are excluded from the cells.
    pub failed_runs: BTreeMap<String, usize>,
}

impl AggregateReport {
    pub fn cell(&self, method: &str, metric: &str) -> Option<&AggregateCell> {
        self.cells.iter().find(|c| c.method == method && c.metric == metric)
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&serde_json::to_value(self)?)?;
        s.push('\n');
        Ok(s)
    }
}

const METRICS: [&str; 6] = ["amc", "aisl", "mean_il", "pearson_rho", "ssc", "mean_set_size"];

fn metric_value(r: &MetricsReport, metric: &str) -> Option<f64> {
    match metric {
        "amc" => Some(r.amc),
        "aisl" => r.aisl,
        "mean_il" => r.mean_il,
        "pearson_rho" => r.pearson_rho,
        "ssc" => r.ssc,
        "mean_set_size" => r.mean_set_size,
        _ => None,
    }
}

fn direction(metric: &str, alpha: f64) -> Better {
    match metric {
        "amc" => Better::Near(1.0 - alpha),
        "ssc" => Better::Higher,
        _ => Better::Lower,
    }
}

/// Mean and twice the standard deviation per method and metric, with bolding:
/// a cell is bold when its `mean +- 2 sd / sqrt(n)` interval overlaps that of
/// the best mean for the metric.
pub fn aggregate(reports: &[ExperimentReport]) -> Result<AggregateReport> {
    let first = reports.first().ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
    for r in reports {
        if r.config_hash != first.config_hash {
            return Err(Error::HashMismatch(first.config_hash.clone(), r.config_hash.clone()));
        }
    }
    let alpha = first.config.alpha;
    let mut by_method: BTreeMap<String, Vec<&MetricsReport>> = BTreeMap::new();
    let mut failed_runs: BTreeMap<String, usize> = BTreeMap::new();
    for r in reports {
        for m in &r.reports {
            by_method.entry(m.method.clone()).or_default().push(m);
        }
        for f in &r.failures {
            *failed_runs.entry(f.method.clone()).or_default() += 1;
        }
    }
    let mut cells = Vec::new();
    for metric in METRICS {
        let mut row: Vec<(AggregateCell, f64)> = Vec::new();
        for (method, rs) in &by_method {
            let mut runs: Vec<(usize, f64)> =
                rs.iter().filter_map(|r| metric_value(r, metric).map(|v| (r.run, v))).collect();
            if runs.is_empty() {
                continue;
            }
            runs.sort_by_key(|p| p.0);
            let v: Vec<f64> = runs.iter().map(|p| p.1).collect();
            let n = v.len();
            let mean = crate::stats::mean(&v);
            let sd = if n > 1 { crate::stats::std_dev(&v) } else { 0.0 };
            let half = 2.0 * sd / (n as f64).sqrt();
            row.push((
                AggregateCell {
                    method: method.clone(),
                    metric: metric.into(),
                    mean,
                    two_sd: 2.0 * sd,
                    n,
                    single_run: n == 1,
                    bold: false,
                },
                half,
            ));
        }
        if row.is_empty() {
            continue;
        }
        let key = |c: &AggregateCell| match direction(metric, alpha) {
            Better::Lower => c.mean,
            Better::Higher => -c.mean,
            Better::Near(t) => (c.mean - t).abs(),
        };
        let (best, best_half) = row
            .iter()
            .min_by(|a, b| key(&a.0).total_cmp(&key(&b.0)))
            .map(|(c, h)| (key(c), *h))
            .expect("non-empty");
        for (c, half) in &mut row {
            c.bold = key(c) - *half <= best + best_half;
        }
        cells.extend(row.into_iter().map(|(c, _)| c));
    }
    Ok(AggregateReport { config_hash: first.config_hash.clone(), dataset: first.dataset.clone(), alpha, cells, failed_runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const REPORT_COLUMNS: [&str; 14] = [
    "config_hash",
    "method",
    "run",
    "seed",
    "alpha",
    "n_test",
    "amc",
    "aisl",
    "mean_il",
    "pearson_rho",
    "ssc",
    "mean_set_size",
    "n_degenerate",
    "n_cal2",
];

/// One row per method and run.
pub fn reports_to_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    for r in &report.reports {
        w.write_record([
            report.config_hash.clone(),
            r.method.clone(),
            r.run.to_string(),
            r.seed.to_string(),
            r.alpha.alpha().to_string(),
            r.n_test.to_string(),
            r.amc.to_string(),
            opt(r.aisl),
            opt(r.mean_il),
            opt(r.pearson_rho),
            opt(r.ssc),
            opt(r.mean_set_size),
            r.n_degenerate.to_string(),
            r.n_cal2.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

/// Parse the table written by [`reports_to_csv`] back into metric records.
pub fn reports_from_csv(text: &str) -> Result<Vec<MetricsReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, column: String::new(), message: e.to_string() })?;
        let cell = |j: usize| rec.get(j).unwrap_or("").trim();
        let bad = |j: usize, m: String| Error::Parse { row, column: REPORT_COLUMNS[j].into(), message: m };
        let num = |j: usize| cell(j).parse::<f64>().map_err(|e| bad(j, e.to_string()));
        let int = |j: usize| cell(j).parse::<u64>().map_err(|e| bad(j, e.to_string()));
        let optn = |j: usize| if cell(j).is_empty() { Ok(None) } else { num(j).map(Some) };
        out.push(MetricsReport {
            method: cell(1).to_string(),
            run: int(2)? as usize,
            seed: int(3)?,
            alpha: NominalLevel::new(num(4)?)?,
            n_test: int(5)? as usize,
            amc: num(6)?,
            aisl: optn(7)?,
            mean_il: optn(8)?,
            pearson_rho: optn(9)?,
            ssc: optn(10)?,
            mean_set_size: optn(11)?,
            n_degenerate: int(12)? as usize,
            n_cal2: int(13)? as usize,
        });
    }
    Ok(out)
}

pub fn aggregate_to_csv(report: &AggregateReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(["method", "metric", "mean", "two_sd", "n", "single_run", "bold"]).map_err(csv_err)?;
    for c in &report.cells {
        w.write_record([
            c.method.clone(),
            c.metric.clone(),
            c.mean.to_string(),
            c.two_sd.to_string(),
            c.n.to_string(),
            c.single_run.to_string(),
            c.bold.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

pub fn emit_report(report: &ExperimentReport, format: OutputFormat, path: &Path) -> Result<()> {
    let text = match format {
        OutputFormat::Json => report.to_canonical_json()?,
        OutputFormat::Csv => reports_to_csv(report)?,
    };
    write_file(path, text.as_bytes())
}

pub fn emit_aggregate(report: &AggregateReport, format: OutputFormat, path: &Path) -> Result<()> {
    let text = match format {
        OutputFormat::Json => report.to_canonical_json()?,
        OutputFormat::Csv => aggregate_to_csv(report)?,
    };
    write_file(path, text.as_bytes())
}

/// Per-point band table `(x0.., lo, hi, y, covered)` of one method in one run.
pub fn band_dump_csv(out: &RunOutput, method: &str) -> Result<String> {
    let (_, bands) = out
        .bands
        .iter()
        .find(|(m, _)| m == method)
        .ok_or_else(|| Error::Config(format!("no bands for method {method:?} (failed or not a regression method)")))?;
    let ys = out.test_target.as_real().ok_or(Error::NotAScoreModel)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let mut header: Vec<String> = (0..out.test_x.p()).map(|j| format!("x{j}")).collect();
    header.extend(["lo", "hi", "y", "covered"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for ((x, b), y) in out.test_x.rows().zip(bands).zip(ys) {
        let mut rec: Vec<String> = x.iter().map(f64::to_string).collect();
        rec.extend([b.lo.to_string(), b.hi.to_string(), y.to_string(), u8::from(b.contains(*y)).to_string()]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

pub fn emit_bands(out: &RunOutput, method: &str, path: &Path) -> Result<()> {
    write_file(path, band_dump_csv(out, method)?.as_bytes())
}
