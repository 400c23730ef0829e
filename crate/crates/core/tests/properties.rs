use proptest::prelude::*;

use vitalsig_core::attribution::shapley_exact;
use vitalsig_core::dataio::{self, RoiTrace, ThermalTraceSet};
use vitalsig_core::hrv::{time_domain, NnSeries};
use vitalsig_core::ml::{Classifier, DecisionTree, RandomForest, RfParams, TreeParams};
use vitalsig_core::rng::Rng;
use vitalsig_core::rppg::{clean_hr, pos_bvp, HrSeries};
use vitalsig_core::stats::{pearson, t_cdf};
use vitalsig_core::synthgen::{synth_rppg, SynthSpec};
use vitalsig_core::thermal::{relative_matrix, segment_delta};

fn hr_series(values: Vec<Option<f64>>) -> HrSeries {
    HrSeries {
        window_s: 6.0,
        hop_s: 1.0,
        duration_s: values.len() as f64 + 5.0,
        times_s: (0..values.len()).map(|i| i as f64 + 3.0).collect(),
        values,
        per_patch: None,
    }
}

fn nn(intervals: &[f64]) -> NnSeries {
    let mut t = 0.0;
    let timestamps_s = intervals
        .iter()
        .map(|i| {
            t += i / 1000.0;
            t
        })
        .collect();
    NnSeries { intervals_ms: intervals.to_vec(), timestamps_s }
}

fn warp(x: &[Vec<f64>], feature: usize, f: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let mut r = r.clone();
            r[feature] = f(r[feature]);
            r
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_is_idempotent_and_jump_free(values in prop::collection::vec(prop::option::weighted(0.9, 40.0..200.0f64), 1..80)) {
        prop_assume!(values.iter().any(Option::is_some));
        let once = clean_hr(&hr_series(values), 25.0).unwrap();
        let twice = clean_hr(&once, 25.0).unwrap();
        prop_assert_eq!(&once, &twice);
        let v: Vec<f64> = once.valid().map(|(_, v)| v).collect();
        prop_assert!(!v.is_empty());
        prop_assert!(v.windows(2).all(|w| (w[1] - w[0]).abs() <= 25.0));
    }

    #[test]
    fn time_domain_translation_invariant(
        intervals in prop::collection::vec(600.0..1100.0f64, 3..60),
        c in -200.0..400.0f64,
    ) {
        let shifted: Vec<f64> = intervals.iter().map(|v| v + c).collect();
        let a = time_domain(&nn(&intervals)).unwrap();
        let b = time_domain(&nn(&shifted)).unwrap();
        prop_assert!((a.rmssd - b.rmssd).abs() < 1e-9);
        prop_assert!((a.sdnn - b.sdnn).abs() < 1e-9);
        prop_assert_eq!(a.pnn50, b.pnn50);
        prop_assert!(a.sdnn >= 0.0 && a.rmssd >= 0.0 && (0.0..=100.0).contains(&a.pnn50));
    }

    #[test]
    fn t_cdf_symmetric_and_monotone(x in 0.0..20.0f64, df in 1.0..200.0f64) {
        prop_assert!((t_cdf(-x, df) - (1.0 - t_cdf(x, df))).abs() < 1e-12);
        prop_assert!(t_cdf(x + 0.1, df) >= t_cdf(x, df));
        prop_assert_eq!(t_cdf(0.0, df), 0.5);
    }

    #[test]
    fn pearson_affine_invariant(
        pairs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 4..40),
        a in 0.1..10.0f64,
        b in -100.0..100.0f64,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let Ok(r) = pearson(&x, &y) else { return Ok(()) };
        let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r2 = pearson(&scaled, &y).unwrap();
        prop_assert!((r.statistic - r2.statistic).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r.statistic));
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn thermal_offset_invariant(offset in -5.0..5.0f64, steps in prop::collection::vec(-1.0..1.0f64, 1..6)) {
        let n = 2400;
        let rois: Vec<RoiTrace> = steps
            .iter()
            .enumerate()
            .map(|(i, s)| RoiTrace {
                roi_id: i as i64,
                samples: (0..n).map(|k| 34.0 + if k >= n / 2 { *s } else { 0.0 } + 0.01 * (k as f64 * 0.3).sin()).collect(),
            })
            .collect();
        let base = ThermalTraceSet { fps: 10.0, rois, invalid_rois: vec![] };
        let mut moved = base.clone();
        for r in &mut moved.rois {
            r.samples.iter_mut().for_each(|v| *v += offset);
        }
        let a = segment_delta(&base).unwrap();
        let b = segment_delta(&moved).unwrap();
        for (k, v) in &a {
            prop_assert!((v - b[k]).abs() < 1e-9);
        }
        let m = relative_matrix(&a);
        for i in 0..m.roi_ids.len() {
            prop_assert_eq!(m.values[i][i], 0.0);
            for j in 0..m.roi_ids.len() {
                prop_assert_eq!(m.values[i][j], -m.values[j][i]);
            }
        }
    }

    /// A tree fit on every row sees each value it is later asked about, so
    /// any strictly increasing warp of one feature leaves its output unchanged.
    #[test]
    fn tree_monotone_transform_invariant(
        rows in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 3), any::<bool>()), 12..30),
        feature in 0usize..3,
    ) {
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r.1)).collect();
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let warped = warp(&x, feature, |v| v.powi(3) + 2.0 * v);
        let all: Vec<usize> = (0..x.len()).collect();
        let params = TreeParams { max_depth: None, min_leaf: 1, max_features: None };
        let a = DecisionTree::fit(&x, &y, &all, &params, &mut Rng::new(1));
        let b = DecisionTree::fit(&warped, &y, &all, &params, &mut Rng::new(1));
        for (u, w) in x.iter().zip(&warped) {
            prop_assert_eq!(a.predict_proba(u), b.predict_proba(w));
        }
    }

    #[test]
    fn forest_affine_transform_invariant(
        rows in prop::collection::vec((prop::collection::vec(-3.0..3.0f64, 3), any::<bool>()), 12..30),
        feature in 0usize..3,
    ) {
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r.1)).collect();
        prop_assume!(y.contains(&0) && y.contains(&1));
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let warped = warp(&x, feature, |v| 4.0 * v);
        let params = RfParams { n_trees: 15, max_depth: Some(4), min_leaf: 1, seed: 7 };
        let a = RandomForest::fit(&x, &y, &params).unwrap();
        let b = RandomForest::fit(&warped, &y, &params).unwrap();
        for (u, w) in x.iter().zip(&warped) {
            prop_assert!((a.predict_proba(u) - b.predict_proba(w)).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_shapley_efficiency(
        weights in prop::collection::vec(-1.0..1.0f64, 2..7),
        bg_seed in prop::collection::vec(-1.0..1.0f64, 12),
    ) {
        let d = weights.len();
        let background: Vec<Vec<f64>> = bg_seed.chunks(2).map(|c| (0..d).map(|j| c[j % 2] * (j as f64 + 1.0)).collect()).collect();
        let w = weights.clone();
        let model = move |x: &[f64]| {
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            1.0 / (1.0 + (-z).exp())
        };
        let instance: Vec<f64> = (0..d).map(|j| 0.5 - j as f64 * 0.2).collect();
        let rep = shapley_exact(&model, &instance, &background).unwrap();
        prop_assert!(rep.efficiency_gap().abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pos_invariant_to_channel_gain(gain in prop::array::uniform3(0.2..3.0f64), seed in 0u64..1000) {
        let spec = SynthSpec { seed, duration_s: 20.0, noise_sigma: 0.5, n_patches: 3, ..Default::default() };
        let (set, _) = synth_rppg(&spec).unwrap();
        let mut scaled = set.clone();
        for p in &mut scaled.patches {
            for s in &mut p.samples {
                for c in 0..3 {
                    s[c] *= gain[c];
                }
            }
        }
        let a = pos_bvp(&set).unwrap();
        let b = pos_bvp(&scaled).unwrap();
        for (u, v) in a.waveforms.iter().zip(&b.waveforms) {
            prop_assert!(u.iter().zip(v).all(|(p, q)| (p - q).abs() < 1e-9));
            prop_assert!((u.iter().sum::<f64>() / u.len() as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn rgb_csv_round_trip(seed in 0u64..1000) {
        let spec = SynthSpec { seed, duration_s: 8.0, noise_sigma: 1.0, n_patches: 2, ..Default::default() };
        let (set, _) = synth_rppg(&spec).unwrap();
        let text = dataio::format_rgb_traces(&set);
        let back = dataio::parse_rgb_traces(&text).unwrap();
        prop_assert_eq!(dataio::format_rgb_traces(&back), text);
        prop_assert_eq!(back.n_frames(), (spec.fps * spec.duration_s).round() as usize);
    }
}
