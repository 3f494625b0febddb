//! Brute-force nearest-neighbour index over (already scaled) feature rows.

use serde::{Deserialize, Serialize};

use crate::data::Features;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnIndex {
    points: Features,
}

impl KnnIndex {
    pub fn new(points: Features) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.n()
    }

    pub fn is_empty(&self) -> bool {
        self.points.n() == 0
    }

    pub fn p(&self) -> usize {
        self.points.p()
    }

    /// Indices of the `k` nearest rows by Euclidean distance, closest first.
    /// Equal distances are ordered by row index.
    pub fn neighbors(&self, q: &[f64], k: usize) -> Vec<usize> {
        let n = self.points.n();
        let k = k.min(n);
        if k == 0 {
            return Vec::new();
        }
        let mut d: Vec<(f64, usize)> = self
            .points
            .rows()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_unstable_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }
}
