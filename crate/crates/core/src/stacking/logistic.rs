//! Multinomial logistic regression with an L2 penalty, fitted by L-BFGS.
//!
//! Objective: ½‖W‖² + C · Σᵢ cross-entropy(softmax(W xᵢ + b), yᵢ), intercept
//! unpenalised. It is minimised after dividing by C·N.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub n_features: usize,
    pub n_classes: usize,
    /// `n_classes × n_features`, row-major.
    pub coef: Vec<f64>,
    pub intercept: Vec<f64>,
}

impl LogisticModel {
    pub fn decision(&self, row: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|k| {
                let w = &self.coef[k * self.n_features..(k + 1) * self.n_features];
                self.intercept[k] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let z = self.decision(row);
        let mut best = 0;
        for (i, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = i;
            }
        }
        best
    }
}

fn objective(theta: &[f64], grad: &mut [f64], x: &[Vec<f64>], y: &[usize], k: usize, c_reg: f64) -> f64 {
    let d = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    let (w, b) = theta.split_at(k * d);
    grad.fill(0.0);
    let mut loss = 0.0;
    let mut z = vec![0.0; k];
    for (row, &t) in x.iter().zip(y) {
        for c in 0..k {
            z[c] = b[c] + w[c * d..(c + 1) * d].iter().zip(row).map(|(p, q)| p * q).sum::<f64>();
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - z[t];
        for c in 0..k {
            let r = (z[c] - log_z).exp() - f64::from(u8::from(c == t));
            for (g, xv) in grad[c * d..(c + 1) * d].iter_mut().zip(row) {
                *g += r * xv;
            }
            grad[k * d + c] += r;
        }
    }
    let pen = 1.0 / (c_reg * n);
    grad.iter_mut().for_each(|g| *g /= n);
    for i in 0..k * d {
        grad[i] += pen * w[i];
    }
    loss / n + 0.5 * pen * w.iter().map(|v| v * v).sum::<f64>()
}

const HISTORY: usize = 10;
const MAX_ITER: usize = 1000;
const GRAD_TOL: f64 = 1e-9;

/// Limited-memory BFGS with Armijo backtracking.
fn lbfgs(mut f: impl FnMut(&[f64], &mut [f64]) -> f64, mut x: Vec<f64>) -> Vec<f64> {
    let dim = x.len();
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let mut g_new = vec![0.0; dim];
    for _ in 0..MAX_ITER {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < GRAD_TOL {
            break;
        }
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / dot(&g, &g).sqrt().max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let beta = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - beta) * si);
        }
        let dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let slope = dot(&g, &dir);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            continue;
        }
        let mut step = 1.0;
        let mut x_new;
        let mut f_new;
        loop {
            x_new = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect::<Vec<_>>();
            f_new = f(&x_new, &mut g_new);
            if f_new <= fx + 1e-4 * step * slope || step < 1e-20 {
                break;
            }
            step *= 0.5;
        }
        if f_new > fx {
            break;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let converged = (fx - f_new).abs() <= 1e-15 * fx.abs().max(1.0);
        if dot(&s, &y) > 1e-12 {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = x_new;
        fx = f_new;
        std::mem::swap(&mut g, &mut g_new);
        if converged {
            break;
        }
    }
    x
}

/// Fits on rows `x` with class indices `y` in `0..n_classes`.
pub fn fit_logistic(x: &[Vec<f64>], y: &[usize], n_classes: usize, c_reg: f64) -> LogisticModel {
    let d = x.first().map_or(0, Vec::len);
    let theta = lbfgs(|t, g| objective(t, g, x, y, n_classes, c_reg), vec![0.0; n_classes * (d + 1)]);
    let (coef, intercept) = theta.split_at(n_classes * d);
    LogisticModel {
        n_features: d,
        n_classes,
        coef: coef.to_vec(),
        intercept: intercept.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let x = vec![vec![0.2, 1.0], vec![-0.5, 0.3], vec![1.5, -0.7], vec![0.1, 0.1]];
        let y = vec![0, 1, 2, 1];
        let theta: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut g = vec![0.0; 9];
        objective(&theta, &mut g, &x, &y, 3, 0.5);
        let mut scratch = vec![0.0; 9];
        for i in 0..9 {
            let mut t = theta.clone();
            t[i] += 1e-6;
            let up = objective(&t, &mut scratch, &x, &y, 3, 0.5);
            t[i] -= 2e-6;
            let down = objective(&t, &mut scratch, &x, &y, 3, 0.5);
            assert!(((up - down) / 2e-6 - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_data_fits_perfectly() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 3) as f64, 1.0 - (i % 3) as f64 * 0.5]).collect();
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let m = fit_logistic(&x, &y, 3, 100.0);
        assert!(x.iter().zip(&y).all(|(r, &t)| m.predict(r) == t));
    }

    #[test]
    fn stationary_point_reached() {
        let x = vec![vec![0.2, 1.0], vec![-0.5, 0.3], vec![1.5, -0.7], vec![0.1, 0.1], vec![0.9, 0.4]];
        let y = vec![0, 1, 2, 1, 0];
        let m = fit_logistic(&x, &y, 3, 1.0);
        let mut theta = m.coef.clone();
        theta.extend(&m.intercept);
        let mut g = vec![0.0; theta.len()];
        objective(&theta, &mut g, &x, &y, 3, 1.0);
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
    }
}
