use serde::{Deserialize, Serialize};

use super::{
    require_both_classes, Classifier, Dataset, Hyperparameters, MlError, ModelKind, ModelState, Result, TrainedModel,
};

/// KKT violation tolerance of the dual solver.
pub const SMO_TOLERANCE: f64 = 1e-3;
pub const SMO_MAX_ITER: usize = 100_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// RBF width on standardized features.
    pub gamma: f64,
}

/// Per-feature z-scoring with training statistics. Constant features keep
/// unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.sd)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-gamma * d2).exp()
}

/// Soft-margin RBF SVM with Platt-calibrated probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svm {
    pub scaler: Standardizer,
    pub gamma: f64,
    /// Standardized support vectors and their `alpha_i * y_i`.
    pub support: Vec<Vec<f64>>,
    pub coef: Vec<f64>,
    pub rho: f64,
    /// Sigmoid `1 / (1 + exp(a f + b))` on decision values.
    pub platt_a: f64,
    pub platt_b: f64,
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
}

/// Dual solver with maximal-gain second-order working-set selection.
fn smo(k: &[Vec<f64>], y: &[f64], c: f64) -> Result<Solution> {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let mut iter = 0;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = -y[t] * g[t];
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && v > gmax {
                gmax = v;
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        if i != usize::MAX {
            for t in 0..n {
                let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
                if !in_low {
                    continue;
                }
                let v = y[t] * g[t];
                gmax2 = gmax2.max(v);
                let grad_diff = gmax + v;
                if grad_diff > 0.0 {
                    let quad = k[i][i] + k[t][t] - 2.0 * k[i][t];
                    let obj = -grad_diff * grad_diff / if quad > 0.0 { quad } else { TAU };
                    if obj < best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax + gmax2 < SMO_TOLERANCE {
            break;
        }
        iter += 1;
        if iter > SMO_MAX_ITER {
            return Err(MlError::NoConvergence(SMO_MAX_ITER));
        }

        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for (t, gt) in g.iter_mut().enumerate() {
            *gt += q(i, t) * di + q(j, t) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * g[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { 0.5 * (ub + lb) };
    Ok(Solution { alpha, rho })
}

fn sigmoid_neg(f_apb: f64) -> f64 {
    // 1 / (1 + exp(fApB)), evaluated without overflow
    if f_apb >= 0.0 {
        let e = (-f_apb).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + f_apb.exp())
    }
}

/// Platt sigmoid fit by Newton's method with backtracking, using the
/// smoothed targets of the original method.
fn platt(dec: &[f64], y: &[f64]) -> (f64, f64) {
    let prior1 = y.iter().filter(|&&v| v > 0.0).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v > 0.0 { hi } else { lo }).collect();
    let nll = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = nll(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let p = sigmoid_neg(f * a + b);
            let d2 = p * (1.0 - p);
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < 1e-10 {
            break;
        }
    }
    (a, b)
}

impl Svm {
    pub fn fit(x: &[Vec<f64>], labels: &[u8], params: &SvmParams) -> Result<Self> {
        require_both_classes(labels, 1)?;
        let scaler = Standardizer::fit(x);
        let z: Vec<Vec<f64>> = x.iter().map(|r| scaler.transform(r)).collect();
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let k: Vec<Vec<f64>> = crate::par::map_slice(&z, |a| z.iter().map(|b| rbf(a, b, params.gamma)).collect());
        let sol = smo(&k, &y, params.c)?;
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for (i, &a) in sol.alpha.iter().enumerate() {
            if a > 0.0 {
                support.push(z[i].clone());
                coef.push(a * y[i]);
            }
        }
        let mut svm = Svm { scaler, gamma: params.gamma, support, coef, rho: sol.rho, platt_a: 0.0, platt_b: 0.0 };
        let dec: Vec<f64> = (0..z.len())
            .map(|i| sol.alpha.iter().zip(&y).zip(&k[i]).map(|((a, yi), kij)| a * yi * kij).sum::<f64>() - sol.rho)
            .collect();
        (svm.platt_a, svm.platt_b) = platt(&dec, &y);
        Ok(svm)
    }

    /// Signed distance-like score; positive means class 1.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let z = self.scaler.transform(x);
        self.support.iter().zip(&self.coef).map(|(s, c)| c * rbf(s, &z, self.gamma)).sum::<f64>() - self.rho
    }
}

impl Classifier for Svm {
    fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid_neg(self.decision(x) * self.platt_a + self.platt_b)
    }

    fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.decision(x) > 0.0)
    }
}

/// SVM on the whole dataset, without cross-validation.
pub fn train_svm(data: &Dataset, params: &SvmParams) -> Result<TrainedModel> {
    require_both_classes(&data.labels(), 2)?;
    let svm = Svm::fit(&data.rows(), &data.labels(), params)?;
    Ok(TrainedModel {
        kind: ModelKind::Svm,
        mode: data.mode,
        feature_names: data.feature_names.clone(),
        hyperparameters: Hyperparameters::Svm(params.clone()),
        state: ModelState::Svm(svm),
        oof_proba: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn blobs(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = Rng::new(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..2 * n {
            let label = (i % 2) as u8;
            let mut row: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            row[0] += if label == 1 { 3.0 } else { -3.0 };
            x.push(row);
            y.push(label);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs() {
        let (x, y) = blobs(30, 4, 1);
        let m = Svm::fit(&x, &y, &SvmParams { c: 1.0, gamma: 0.25 }).unwrap();
        assert!(x.iter().zip(&y).all(|(r, &l)| m.predict(r) == l));
        for (r, &l) in x.iter().zip(&y) {
            let p = m.predict_proba(r);
            assert!((0.0..=1.0).contains(&p));
            assert_eq!(u8::from(p >= 0.5), l);
        }
    }

    #[test]
    fn label_flip_negates() {
        let (x, y) = blobs(15, 3, 2);
        let flipped: Vec<u8> = y.iter().map(|l| 1 - l).collect();
        let p = SvmParams { c: 1.0, gamma: 1.0 / 3.0 };
        let a = Svm::fit(&x, &y, &p).unwrap();
        let b = Svm::fit(&x, &flipped, &p).unwrap();
        for r in &x {
            assert!((a.decision(r) + b.decision(r)).abs() < 1e-2, "{} {}", a.decision(r), b.decision(r));
        }
    }

    #[test]
    fn affine_invariance() {
        let (x, y) = blobs(15, 3, 3);
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 4.0 * v - 7.0).collect()).collect();
        let p = SvmParams { c: 10.0, gamma: 0.3 };
        let a = Svm::fit(&x, &y, &p).unwrap();
        let b = Svm::fit(&scaled, &y, &p).unwrap();
        for (r, s) in x.iter().zip(&scaled) {
            assert!((a.decision(r) - b.decision(s)).abs() < 1e-6);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert_eq!(Svm::fit(&x, &[1, 1], &SvmParams { c: 1.0, gamma: 1.0 }).unwrap_err(), MlError::SingleClass);
    }
}
