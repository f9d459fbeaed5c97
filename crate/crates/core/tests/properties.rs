use attn_align::rpe_bias::{bucket_for_offset, bucket_index, NUM_BUCKETS};
use attn_align::softmax_stats::{row_stats, softmax_slice};
use proptest::prelude::*;

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..200)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn softmax_is_shift_invariant(v in logits(), shift in -500.0f64..500.0, tau in 0.05f64..4.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let a = softmax_slice(&v, tau).unwrap();
        let b = softmax_slice(&shifted, tau).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn argmax_does_not_depend_on_tau(v in logits(), tau in 0.05f64..4.0) {
        let p = softmax_slice(&v, tau).unwrap();
        let top = argmax(&v);
        // ties are allowed; the winning probability must belong to a maximal logit
        prop_assert_eq!(v[argmax(&p)], v[top]);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sharper_temperature_concentrates(v in logits(), t1 in 0.05f64..4.0, t2 in 0.05f64..4.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let s_lo = row_stats(&v, lo);
        let s_hi = row_stats(&v, hi);
        prop_assert!(s_lo.p_max >= s_hi.p_max - 1e-12);
        prop_assert!(s_lo.entropy <= s_hi.entropy + 1e-9);
    }

    #[test]
    fn entropy_and_max_prob_are_bounded(v in logits(), tau in 0.05f64..4.0) {
        let s = row_stats(&v, tau);
        let n = v.len() as f64;
        prop_assert!(s.entropy >= -1e-12);
        prop_assert!(s.entropy <= n.ln() + 1e-9);
        prop_assert!(s.p_max >= 1.0 / n - 1e-12 && s.p_max <= 1.0 + 1e-12);
    }

    #[test]
    fn buckets_depend_only_on_offset(m in 0usize..5000, n in 0usize..5000, k in 0usize..5000) {
        prop_assert_eq!(bucket_index(m + k, n + k), bucket_index(m, n));
        prop_assert_eq!(bucket_index(m, n), bucket_for_offset(m as i64 - n as i64));
    }

    #[test]
    fn buckets_grow_with_distance(d in 0i64..20_000) {
        let ahead = bucket_for_offset(d);
        prop_assert!(ahead < 16);
        prop_assert!(ahead <= bucket_for_offset(d + 1));
        if d >= 1 {
            let behind = bucket_for_offset(-d);
            prop_assert!(behind > 16 && behind < NUM_BUCKETS);
            prop_assert!(behind <= bucket_for_offset(-d - 1));
        }
    }
}
