use proptest::prelude::*;

use epicscore::data::{
    bimodal_outer_count, generate_bimodal_dgp, generate_blobs_classification, split_dataset, BlobsTruth,
};
use epicscore::scores::KnnClassifier;

#[test]
fn bimodal_support_and_outer_fraction() {
    let ds = generate_bimodal_dgp(1000, 4).unwrap();
    let x = ds.features.as_slice();
    assert!(x.iter().all(|v| (0.0..=10.0).contains(v)));
    let outer = x.iter().filter(|&&v| !(1.5..8.0).contains(&v)).count();
    assert_eq!(outer, 2 * bimodal_outer_count(1000));
    assert_eq!(outer, 850);
}

#[test]
fn bimodal_csv_is_byte_identical_for_equal_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    generate_bimodal_dgp(500, 11).unwrap().write_csv(&a).unwrap();
    generate_bimodal_dgp(500, 11).unwrap().write_csv(&b).unwrap();
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn tight_blobs_are_separable_by_one_nn() {
    let train = generate_blobs_classification(600, 4, 0.01, 1).unwrap().data;
    let test = generate_blobs_classification(400, 4, 0.01, 2).unwrap().data;
    let (labels, k) = train.target.as_labels().unwrap();
    let clf = KnnClassifier::fit(&train.features, labels, k, 1).unwrap();
    let (truth, _) = test.target.as_labels().unwrap();
    let correct = test
        .features
        .rows()
        .zip(truth)
        .filter(|(x, &y)| {
            let p = clf.predict_proba(x);
            (0..k).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap() == y
        })
        .count();
    assert_eq!(correct, 400);
}

/// `1 - integral of max_k pi_k f_k(x)` on a fine grid.
fn bayes_error_by_integration(truth: &BlobsTruth) -> f64 {
    let (lo, hi, m) = (-6.0, 6.0, 600);
    let h = (hi - lo) / m as f64;
    let s2 = truth.spread * truth.spread;
    let k = truth.k() as f64;
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            let best = truth
                .centers
                .iter()
                .map(|c| {
                    let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                    (-d2 / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
                })
                .fold(0.0, f64::max);
            acc += best / k * h * h;
        }
    }
    1.0 - acc
}

#[test]
fn blobs_bayes_error_matches_integration() {
    let blobs = generate_blobs_classification(3000, 3, 1.0, 21).unwrap();
    let (labels, _) = blobs.data.target.as_labels().unwrap();
    let errors = blobs
        .data
        .features
        .rows()
        .zip(labels)
        .filter(|(x, &y)| {
            let p = blobs.truth.posterior(x);
            (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap() != y
        })
        .count();
    let empirical = errors as f64 / 3000.0;
    let oracle = bayes_error_by_integration(&blobs.truth);
    assert!(oracle > 0.05 && oracle < 0.5, "{oracle}");
    assert!((empirical - oracle).abs() <= 0.02, "empirical {empirical} vs integrated {oracle}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_is_a_partition(n in 1usize..3000, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let (rt, rc) = (a, (1.0 - a) * b);
        let rs = 1.0 - rt - rc;
        let s = split_dataset(n, (rt, rc, rs), seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.cal()).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.train.len(), ((n as f64) * rt + 1e-9).floor() as usize);
        prop_assert!(s.cal1.len() <= ((n as f64) * rc + 1e-9).floor() as usize);
        prop_assert_eq!(split_dataset(n, (rt, rc, rs), seed).unwrap(), s);
    }
}
