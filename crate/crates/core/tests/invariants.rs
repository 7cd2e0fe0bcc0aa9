use gazeload::dataset::{make_windows, split, InputMode, SplitMode, WindowConfig, WindowedDataset, HIGH, LOW};
use gazeload::eval::EvalReport;
use gazeload::forest::gini;
use gazeload::mlp::{MlpConfig, MlpModel, RunLengthPredictor};
use gazeload::preprocess::{fill_gaps, lowpass_denoise, minmax_normalize};
use proptest::prelude::*;

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 2..300)
}

proptest! {
    #[test]
    fn minmax_lands_in_unit_interval(x in signal()) {
        let y = minmax_normalize(&x).unwrap();
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        if hi > lo {
            prop_assert!(y.iter().any(|&v| v == 0.0) && y.iter().any(|&v| v == 1.0));
        }
    }

    #[test]
    fn lowpass_keeps_length_and_mean(x in signal(), cutoff in 0.5f64..50.0) {
        let y = lowpass_denoise(&x, 200.0, cutoff).unwrap();
        prop_assert_eq!(y.len(), x.len());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((mean(&x) - mean(&y)).abs() < 1e-9);
    }

    #[test]
    fn gap_filling_keeps_valid_samples(
        values in prop::collection::vec(2.0f64..6.0, 1..200),
        drop in prop::collection::vec(any::<bool>(), 200),
        max_gap_ms in 0i64..200,
    ) {
        let n = values.len();
        let valid: Vec<bool> = drop[..n].iter().map(|d| !d).collect();
        let t: Vec<i64> = (0..n as i64).map(|i| i * 5000).collect();
        let (out, usable) = fill_gaps(&values, &valid, &t, max_gap_ms * 1000);
        let (lo, hi) = (2.0, 6.0);
        for i in 0..n {
            if valid[i] {
                prop_assert!(usable[i]);
                prop_assert_eq!(out[i], values[i]);
            } else if usable[i] {
                prop_assert!((lo..=hi).contains(&out[i]));
            }
        }
    }

    #[test]
    fn flattened_rows_are_channel_slices(n in 1usize..400, w in 1usize..60, s_frac in 0.0f64..1.0) {
        let s = 1 + ((w - 1) as f64 * s_frac) as usize;
        let cfg = WindowConfig { window_len: w, stride: s, input_mode: InputMode::Flatten };
        let dur: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let pupil: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        match make_windows(&dur, &pupil, HIGH, "P", &cfg) {
            Ok(d) => {
                prop_assert_eq!(d.len(), cfg.window_count(n));
                for (k, row) in d.rows().enumerate() {
                    prop_assert_eq!(&row[..w], &dur[k * s..k * s + w]);
                    prop_assert_eq!(&row[w..], &pupil[k * s..k * s + w]);
                }
            }
            Err(_) => prop_assert!(n < w),
        }
    }

    #[test]
    fn split_partitions_rows(
        labels in prop::collection::vec(0u8..2, 4..120),
        fraction in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let n = labels.len();
        let inputs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let groups: Vec<String> = (0..n).map(|i| format!("P{}", i % 7)).collect();
        let d = WindowedDataset::from_parts(1, InputMode::Flatten, inputs, labels.clone(), groups).unwrap();
        let (train, test) = split(&d, SplitMode::WindowRandom, fraction, seed).unwrap();
        let mut ids: Vec<f64> = train.inputs().iter().chain(test.inputs()).copied().collect();
        ids.sort_by(f64::total_cmp);
        prop_assert_eq!(ids, d.inputs().to_vec());
        for class in [LOW, HIGH] {
            let total = labels.iter().filter(|&&l| l == class).count();
            let in_test = test.labels().iter().filter(|&&l| l == class).count();
            prop_assert_eq!(in_test, (total as f64 * fraction).round() as usize);
        }
    }

    #[test]
    fn gini_is_bounded(labels in prop::collection::vec(0u8..2, 1..100)) {
        let g = gini(&labels).unwrap();
        prop_assert!((0.0..=0.5).contains(&g));
    }

    #[test]
    fn metrics_are_consistent(tp in 0usize..200, fp in 0usize..200, fn_ in 0usize..200, tn in 0usize..200) {
        prop_assume!(tp + fp + fn_ + tn > 0);
        let r = EvalReport::from_counts("M", "d", tp, fp, fn_, tn).unwrap();
        for m in [r.accuracy, r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert_eq!(r.total(), tp + fp + fn_ + tn);
        prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-12);
        prop_assert!(r.f1 >= r.precision.min(r.recall) - 1e-12 || r.degenerate.any());
    }

    #[test]
    fn mlp_outputs_are_probabilities(seed in any::<u64>(), x in prop::collection::vec(-100.0f64..100.0, 6)) {
        let cfg = MlpConfig { hidden_sizes: vec![5, 3], seed, ..MlpConfig::default() };
        let m = MlpModel::init(&cfg, 6).unwrap();
        let p = m.forward(&x).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
        let rl = RunLengthPredictor::new(m);
        prop_assert!((rl.forward(&x).unwrap() - p).abs() < 1e-12);
    }
}
