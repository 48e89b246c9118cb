//! Multi-class AdaBoost (SAMME) over decision stumps.

use serde::{Deserialize, Serialize};

/// Axis-aligned split: `row[feature] <= threshold` goes left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

impl Stump {
    pub fn predict(&self, row: &[f64]) -> usize {
        if row[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub n_classes: usize,
    /// `(stump, weight)` in boosting order.
    pub stumps: Vec<(Stump, f64)>,
}

impl AdaBoostModel {
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut votes = vec![0.0; self.n_classes];
        for (s, a) in &self.stumps {
            votes[s.predict(row)] += a;
        }
        let mut best = 0;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = i;
            }
        }
        best
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Weighted-error-minimising stump. Ties keep the first feature/threshold.
fn best_stump(x: &[Vec<f64>], y: &[usize], w: &[f64], k: usize) -> Stump {
    let d = x.first().map_or(0, Vec::len);
    let mut total = vec![0.0; k];
    for (&t, &wi) in y.iter().zip(w) {
        total[t] += wi;
    }
    let majority = argmax(&total);
    let mut best = (f64::INFINITY, Stump { feature: 0, threshold: f64::INFINITY, left: majority, right: majority });
    best.0 = total.iter().sum::<f64>() - total[majority];
    for f in 0..d {
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left = vec![0.0; k];
        for pos in 0..order.len().saturating_sub(1) {
            let i = order[pos];
            left[y[i]] += w[i];
            let (v, next) = (x[i][f], x[order[pos + 1]][f]);
            if v == next {
                continue;
            }
            let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let (lc, rc) = (argmax(&left), argmax(&right));
            let err = left.iter().sum::<f64>() - left[lc] + right.iter().sum::<f64>() - right[rc];
            if err < best.0 - 1e-12 {
                best = (err, Stump { feature: f, threshold: (v + next) / 2.0, left: lc, right: rc });
            }
        }
    }
    best.1
}

/// SAMME boosting with `n_estimators` rounds and shrinkage `learning_rate`.
pub fn fit_adaboost(x: &[Vec<f64>], y: &[usize], n_classes: usize, n_estimators: usize, learning_rate: f64) -> AdaBoostModel {
    let n = x.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();
    let k = n_classes as f64;
    for _ in 0..n_estimators {
        let s = best_stump(x, y, &w, n_classes);
        let wrong: Vec<bool> = x.iter().zip(y).map(|(r, &t)| s.predict(r) != t).collect();
        let total: f64 = w.iter().sum();
        let err = wrong.iter().zip(&w).filter(|(m, _)| **m).map(|(_, wi)| wi).sum::<f64>() / total;
        if err <= 0.0 {
            // A perfect stump: keep it and stop.
            stumps.push((s, 1.0));
            break;
        }
        if err >= 1.0 - 1.0 / k {
            if stumps.is_empty() {
                stumps.push((s, 1.0));
            }
            break;
        }
        let alpha = learning_rate * (((1.0 - err) / err).ln() + (k - 1.0).ln());
        stumps.push((s, alpha));
        for (wi, m) in w.iter_mut().zip(&wrong) {
            if *m {
                *wi *= alpha.exp();
            }
        }
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= sum);
    }
    AdaBoostModel { n_classes, stumps }
}
