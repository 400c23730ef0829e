//! Interventional Shapley attribution for any [`Classifier`].
//!
//! The value of a coalition `S` is the model output averaged over
//! background rows, with the explained instance's values patched in on `S`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ml::Classifier;
use crate::par;
use crate::rng::Rng;

pub const MAX_EXACT_FEATURES: usize = 15;
pub const MIN_PERMUTATIONS: usize = 100;
pub const MAX_BACKGROUND: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("exact enumeration supports at most {max} features, got {got}")]
    TooManyFeatures { got: usize, max: usize },
    #[error("background set is empty")]
    EmptyBackground,
    #[error("need at least {MIN_PERMUTATIONS} permutations, got {0}")]
    TooFewPermutations(usize),
    #[error("instance has {got} features, background has {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("no attribution reports to rank")]
    NoReports,
}

type Result<T> = std::result::Result<T, AttributionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub phi: Vec<f64>,
    /// Mean model output over the background.
    pub base_value: f64,
    /// Model output on the instance.
    pub prediction: f64,
    pub instance: Vec<f64>,
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_permutations: Option<usize>,
}

impl AttributionReport {
    /// `Σφ + base − f(x)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() + self.base_value - self.prediction
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub index: usize,
    pub mean_abs_phi: f64,
}

fn check(instance: &[f64], background: &[Vec<f64>]) -> Result<()> {
    let first = background.first().ok_or(AttributionError::EmptyBackground)?;
    if let Some(bad) = background.iter().map(Vec::len).chain([instance.len()]).find(|&w| w != first.len()) {
        return Err(AttributionError::WidthMismatch { expected: first.len(), got: bad });
    }
    Ok(())
}

fn mean_output<M: Classifier + ?Sized>(model: &M, rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| model.predict_proba(r)).sum::<f64>() / rows.len() as f64
}

/// Shapley values by enumerating all `2^d` coalitions.
pub fn shapley_exact<M: Classifier + ?Sized>(
    model: &M,
    instance: &[f64],
    background: &[Vec<f64>],
) -> Result<AttributionReport> {
    check(instance, background)?;
    let d = instance.len();
    if d > MAX_EXACT_FEATURES {
        return Err(AttributionError::TooManyFeatures { got: d, max: MAX_EXACT_FEATURES });
    }
    let value: Vec<f64> = par::map_range(1usize << d, |mask| {
        let mut total = 0.0;
        let mut z = vec![0.0; d];
        for b in background {
            for j in 0..d {
                z[j] = if mask >> j & 1 == 1 { instance[j] } else { b[j] };
            }
            total += model.predict_proba(&z);
        }
        total / background.len() as f64
    });
    // weight[s] = s! (d - s - 1)! / d!
    let weight: Vec<f64> = (0..d)
        .map(|s| {
            let mut w = 1.0 / d as f64;
            for k in 1..=s {
                w *= k as f64 / (d - k) as f64;
            }
            w
        })
        .collect();
    let phi = (0..d)
        .map(|i| {
            (0..1usize << d)
                .filter(|m| m >> i & 1 == 0)
                .map(|m| weight[m.count_ones() as usize] * (value[m | 1 << i] - value[m]))
                .sum()
        })
        .collect();
    Ok(AttributionReport {
        phi,
        base_value: value[0],
        prediction: model.predict_proba(instance),
        instance: instance.to_vec(),
        estimator: Estimator::Exact,
        n_permutations: None,
    })
}

/// Permutation-sampling estimate. Permutation `p` draws its feature order
/// and background row from `Rng::derive(seed, p)`.
pub fn shapley_mc<M: Classifier + ?Sized>(
    model: &M,
    instance: &[f64],
    background: &[Vec<f64>],
    n_permutations: usize,
    seed: u64,
) -> Result<AttributionReport> {
    check(instance, background)?;
    if n_permutations < MIN_PERMUTATIONS {
        return Err(AttributionError::TooFewPermutations(n_permutations));
    }
    let d = instance.len();
    let contributions = par::map_range(n_permutations, |p| {
        let mut rng = Rng::derive(seed, p as u64);
        let mut order: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut order);
        let mut z = background[rng.below(background.len())].clone();
        let mut prev = model.predict_proba(&z);
        let mut out = vec![0.0; d];
        for &j in &order {
            z[j] = instance[j];
            let cur = model.predict_proba(&z);
            out[j] = cur - prev;
            prev = cur;
        }
        out
    });
    let mut phi = vec![0.0; d];
    for c in &contributions {
        for (acc, v) in phi.iter_mut().zip(c) {
            *acc += v;
        }
    }
    for v in &mut phi {
        *v /= n_permutations as f64;
    }
    Ok(AttributionReport {
        phi,
        base_value: mean_output(model, background),
        prediction: model.predict_proba(instance),
        instance: instance.to_vec(),
        estimator: Estimator::Mc,
        n_permutations: Some(n_permutations),
    })
}

/// Features by mean `|φ|` across reports, descending; ties keep index order.
pub fn rank_features(reports: &[AttributionReport]) -> Result<Vec<RankedFeature>> {
    let first = reports.first().ok_or(AttributionError::NoReports)?;
    let d = first.phi.len();
    if let Some(r) = reports.iter().find(|r| r.phi.len() != d) {
        return Err(AttributionError::WidthMismatch { expected: d, got: r.phi.len() });
    }
    let mut ranked: Vec<RankedFeature> = (0..d)
        .map(|index| RankedFeature {
            index,
            mean_abs_phi: reports.iter().map(|r| r.phi[index].abs()).sum::<f64>() / reports.len() as f64,
        })
        .collect();
    ranked.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then(a.index.cmp(&b.index)));
    Ok(ranked)
}

/// Up to [`MAX_BACKGROUND`] rows drawn without replacement, in their
/// original order.
pub fn background_sample(rows: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    if rows.len() <= MAX_BACKGROUND {
        return rows.to_vec();
    }
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    let mut rng = Rng::new(seed);
    for i in 0..MAX_BACKGROUND {
        let j = i + rng.below(rows.len() - i);
        idx.swap(i, j);
    }
    let mut chosen = idx[..MAX_BACKGROUND].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| rows[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg() -> Vec<Vec<f64>> {
        (0..6).map(|i| vec![i as f64 * 0.1, 1.0 - i as f64 * 0.1, 0.5]).collect()
    }

    #[test]
    fn constant_model() {
        let f = |_: &[f64]| 0.3;
        let r = shapley_exact(&f, &[1.0, 2.0, 3.0], &bg()).unwrap();
        assert!(r.phi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_feature_model() {
        let f = |x: &[f64]| x[0];
        let b = bg();
        let r = shapley_exact(&f, &[0.9, 0.0, 0.0], &b).unwrap();
        let m = b.iter().map(|r| r[0]).sum::<f64>() / b.len() as f64;
        assert!((r.phi[0] - (0.9 - m)).abs() < 1e-12);
        assert_eq!(&r.phi[1..], &[0.0, 0.0]);
        assert!(r.efficiency_gap().abs() < 1e-12);
    }

    #[test]
    fn symmetric_features() {
        let f = |x: &[f64]| (x[0] + x[1]) * x[2] / 4.0;
        let b = vec![vec![0.0, 0.0, 1.0]];
        let r = shapley_exact(&f, &[1.0, 1.0, 1.0], &b).unwrap();
        assert!((r.phi[0] - r.phi[1]).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let f = |_: &[f64]| 0.0;
        assert_eq!(shapley_exact(&f, &[0.0], &[]).unwrap_err(), AttributionError::EmptyBackground);
        let wide = vec![vec![0.0; 16]];
        assert!(matches!(shapley_exact(&f, &[0.0; 16], &wide), Err(AttributionError::TooManyFeatures { .. })));
        assert_eq!(shapley_mc(&f, &[0.0], &[vec![0.0]], 10, 0).unwrap_err(), AttributionError::TooFewPermutations(10));
        assert_eq!(rank_features(&[]).unwrap_err(), AttributionError::NoReports);
    }

    #[test]
    fn ranking_order_free() {
        let f = |x: &[f64]| 0.2 * x[0] + 0.5 * x[1] + 0.2 * x[2];
        let b = bg();
        let r1 = shapley_exact(&f, &[1.0, 0.0, 1.0], &b).unwrap();
        let r2 = shapley_exact(&f, &[0.0, 2.0, 0.0], &b).unwrap();
        let a = rank_features(&[r1.clone(), r2.clone()]).unwrap();
        let c = rank_features(&[r2, r1]).unwrap();
        assert_eq!(a, c);
        assert_eq!(a[0].index, 1);
    }

    #[test]
    fn background_size() {
        let rows: Vec<Vec<f64>> = (0..120).map(|i| vec![i as f64]).collect();
        let s = background_sample(&rows, 3);
        assert_eq!(s.len(), 50);
        assert!(s.windows(2).all(|w| w[0][0] < w[1][0]));
        assert_eq!(s, background_sample(&rows, 3));
    }
}
