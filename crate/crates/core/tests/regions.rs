use proptest::prelude::*;

use epicscore::baselines::reg_split_interval;
use epicscore::data::{generate_bimodal_dgp, generate_blobs_classification, split_dataset, Dataset};
use epicscore::epic::{
    epic_calibrate, epic_interval, epic_score, ClassMode, EpicClassifier, EpicPipeline, PredictionBand, SplitRule,
};
use epicscore::metrics::{aisl, mean_interval_length};
use epicscore::predictive::{LabelPredictiveConfig, LabelPredictiveKind, PredictiveConfig, PredictiveKind};
use epicscore::scores::{fit_base_predictor, KnnClassifier, LabelScore, PredictorConfig, ScoreFunction};
use epicscore::{conformal_quantile, NominalLevel};

fn level(a: f64) -> NominalLevel {
    NominalLevel::new(a).unwrap()
}

fn parts(n: usize, seed: u64) -> (Dataset, Dataset, Dataset) {
    let ds = generate_bimodal_dgp(n, seed).unwrap();
    let s = split_dataset(n, (0.4, 0.4, 0.2), seed).unwrap();
    (ds.subset(&s.train), ds.subset(&s.cal()), ds.subset(&s.test))
}

fn residual(train: &Dataset) -> ScoreFunction {
    let g = fit_base_predictor(&PredictorConfig::default(), &train.features, train.y().unwrap()).unwrap();
    ScoreFunction::Residual { g: g.into() }
}

fn cqr(train: &Dataset) -> ScoreFunction {
    let fit = |q| {
        let cfg = PredictorConfig::knn_quantile(30, q);
        fit_base_predictor(&cfg, &train.features, train.y().unwrap()).unwrap().into()
    };
    ScoreFunction::Cqr { q_lo: fit(0.05), q_hi: fit(0.95) }
}

fn pipeline(score: ScoreFunction, kind: PredictiveKind, cal: &Dataset, a: f64) -> EpicPipeline {
    let cfg = PredictiveConfig::default();
    epic_calibrate(score, kind, &cal.features, cal.y().unwrap(), level(a), SplitRule::Standard, &cfg, 3).unwrap()
}

/// `{y : s'(x, y) <= t}` scanned on a grid agrees with the closed-form band.
fn assert_band_matches_level_set(p: &EpicPipeline, test: &Dataset) {
    let t = p.calibration.threshold;
    for x in test.features.rows().take(25) {
        let band = epic_interval(p, x).unwrap();
        let center = 0.5 * (band.lo + band.hi);
        for i in -600..=600 {
            let y = center + 0.01 * i as f64;
            if (y - band.lo).abs() < 1e-6 || (y - band.hi).abs() < 1e-6 {
                continue;
            }
            let inside = epic_score(p, x, y).unwrap() <= t;
            assert_eq!(inside, band.contains(y), "x={x:?} y={y} band={band:?}");
        }
    }
}

#[test]
fn residual_band_is_the_level_set_of_s_prime() {
    let (train, cal, test) = parts(1500, 1);
    for kind in [PredictiveKind::KnnEmpirical, PredictiveKind::GpExact] {
        assert_band_matches_level_set(&pipeline(residual(&train), kind, &cal, 0.1), &test);
    }
}

#[test]
fn cqr_band_is_the_level_set_of_s_prime() {
    let (train, cal, test) = parts(1500, 2);
    for kind in [PredictiveKind::KnnEmpirical, PredictiveKind::GpExact] {
        assert_band_matches_level_set(&pipeline(cqr(&train), kind, &cal, 0.1), &test);
    }
}

fn nested(inner: &PredictionBand, outer: &PredictionBand) -> bool {
    outer.degenerate || (outer.lo <= inner.lo + 1e-9 && inner.hi <= outer.hi + 1e-9)
}

#[test]
fn smaller_alpha_gives_wider_bands() {
    let (train, cal, test) = parts(1500, 4);
    for kind in [PredictiveKind::KnnEmpirical, PredictiveKind::BartLite] {
        let wide = pipeline(residual(&train), kind, &cal, 0.05);
        let narrow = pipeline(residual(&train), kind, &cal, 0.2);
        for x in test.features.rows() {
            let (w, n) = (epic_interval(&wide, x).unwrap(), epic_interval(&narrow, x).unwrap());
            assert!(nested(&n, &w), "{kind:?} at {x:?}: {n:?} not inside {w:?}");
        }
    }
}

#[test]
fn smaller_alpha_gives_larger_sets() {
    let blobs = generate_blobs_classification(1500, 5, 1.2, 6).unwrap().data;
    let s = split_dataset(1500, (0.4, 0.4, 0.2), 6).unwrap();
    let (train, cal, test) = (blobs.subset(&s.train), blobs.subset(&s.cal()), blobs.subset(&s.test));
    let (tl, k) = train.target.as_labels().unwrap();
    let (cl, _) = cal.target.as_labels().unwrap();
    let base = KnnClassifier::fit(&train.features, tl, k, 15).unwrap();
    let modes =
        [ClassMode::Labels(LabelPredictiveKind::KnnFrequency), ClassMode::Continuous(PredictiveKind::KnnEmpirical)];
    for mode in modes {
        let fit = |a| {
            let (lc, pc) = (LabelPredictiveConfig::default(), PredictiveConfig::default());
            let rule = SplitRule::Standard;
            EpicClassifier::calibrate(base.clone(), LabelScore::Aps, mode, &cal.features, cl, level(a), rule, &lc, &pc, 6)
                .unwrap()
        };
        let (big, small) = (fit(0.05), fit(0.2));
        for x in test.features.rows() {
            let (b, s) = (big.predict_set(x).unwrap(), small.predict_set(x).unwrap());
            assert!(s.labels.iter().all(|y| b.contains(*y)), "{mode:?}: {:?} not inside {:?}", s.labels, b.labels);
        }
    }
}

#[test]
fn reg_split_width_is_constant() {
    let (train, cal, test) = parts(1000, 7);
    let g = fit_base_predictor(&PredictorConfig::default(), &train.features, train.y().unwrap()).unwrap();
    let s: Vec<f64> = cal.features.rows().zip(cal.y().unwrap()).map(|(x, y)| (y - g.predict(x)).abs()).collect();
    let t = conformal_quantile(&s, level(0.1)).unwrap();
    for x in test.features.rows() {
        assert!((reg_split_interval(g.predict(x), t).width() - 2.0 * t).abs() < 1e-12);
    }
}

fn band_strategy() -> impl Strategy<Value = (f64, f64, f64)> {
    (-10.0f64..10.0, 0.0f64..5.0, -15.0f64..15.0).prop_map(|(lo, w, y)| (lo, lo + w, y))
}

proptest! {
    #[test]
    fn aisl_dominates_mean_length(cases in prop::collection::vec(band_strategy(), 1..40), a in 0.01f64..0.5) {
        let bands: Vec<PredictionBand> = cases.iter().map(|&(lo, hi, _)| PredictionBand::new(lo, hi)).collect();
        let ys: Vec<f64> = cases.iter().map(|c| c.2).collect();
        let score = aisl(&bands, &ys, level(a)).unwrap();
        let il = mean_interval_length(&bands);
        let all_covered = bands.iter().zip(&ys).all(|(b, &y)| b.lo <= y && y <= b.hi);
        prop_assert!(score >= il - 1e-12);
        prop_assert_eq!((score - il).abs() < 1e-12, all_covered);
    }

    #[test]
    fn stretching_toward_a_miss_lowers_aisl((lo, hi, y) in band_strategy(), frac in 0.01f64..1.0, a in 0.01f64..0.5) {
        prop_assume!(y < lo - 1e-6 || y > hi + 1e-6);
        let before = aisl(&[PredictionBand::new(lo, hi)], &[y], level(a)).unwrap();
        let stretched = if y > hi {
            PredictionBand::new(lo, hi + frac * (y - hi))
        } else {
            PredictionBand::new(lo - frac * (lo - y), hi)
        };
        let after = aisl(&[stretched], &[y], level(a)).unwrap();
        prop_assert!(after < before, "{before} -> {after}");
    }
}
