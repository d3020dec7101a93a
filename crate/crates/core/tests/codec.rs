use num_rational::Ratio;
use proptest::prelude::*;
use rand::Rng;

use progfed_core::compression::{lq_decode, lq_encode, topk_indices, Codec, Stage};
use progfed_core::rng;

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 1..200)
}

#[test]
fn quantization_error_never_exceeds_half_a_level() {
    let mut rng = rng::stream(11, 2000, 0);
    let mut worst: f64 = 0.0;
    for trial in 0..100_000 {
        let bits = rng.random_range(1..=16);
        let n = rng.random_range(1..=16);
        let scale = 10f64.powi(rng.random_range(-6..=6));
        let x: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let q = lq_encode(&x, bits).unwrap();
        let y = lq_decode(&q);
        let step = (q.max - q.min) / ((1u64 << bits) - 1) as f64;
        let bound = 0.5 * step * (1.0 + 1e-9) + 1e-15 * scale;
        for (a, b) in x.iter().zip(&y) {
            let err = (a - b).abs();
            assert!(
                err <= bound,
                "trial {trial}: |{a} - {b}| = {err} > {bound} ({bits} bits)"
            );
            if step > 0.0 {
                worst = worst.max(err / step);
            }
        }
    }
    assert!(worst <= 0.5 + 1e-9, "worst error {worst} levels");
}

#[test]
fn composed_ratio_is_the_product_of_stage_ratios() {
    for bits in 1..=32u32 {
        for percent in [1u32, 5, 10, 25, 50, 100] {
            let codec = Codec::new(vec![Stage::Quantize { bits }, Stage::Sparsify { percent }]).unwrap();
            assert_eq!(
                codec.ratio(),
                Ratio::new(bits as u128, 32) * Ratio::new(percent as u128, 100)
            );
            assert_eq!(codec.to_string().parse::<Codec>().unwrap(), codec);
        }
    }
}

#[test]
fn rejects_out_of_range_parameters() {
    for bad in ["lq0", "lq33", "sp0", "sp101", "lq8+lq4", "zip", ""] {
        assert!(bad.parse::<Codec>().is_err(), "{bad} accepted");
    }
}

proptest! {
    #[test]
    fn identity_roundtrip_is_exact(x in values()) {
        let msg = Codec::identity().encode(&x).unwrap();
        prop_assert_eq!(msg.decode(), x);
    }

    #[test]
    fn full_precision_quantization_is_near_exact(x in values()) {
        let q = lq_encode(&x, 32).unwrap();
        let step = (q.max - q.min) / u32::MAX as f64;
        for (a, b) in x.iter().zip(lq_decode(&q)) {
            prop_assert!((a - b).abs() <= step + 1e-9);
        }
    }

    #[test]
    fn topk_keeps_the_largest_magnitudes(x in values(), percent in 1u32..=100) {
        let kept = topk_indices(&x, percent);
        let k = (percent as usize * x.len()).div_ceil(100);
        prop_assert_eq!(kept.len(), k);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        let smallest_kept = kept.iter().map(|&i| x[i as usize].abs()).fold(f64::INFINITY, f64::min);
        for (i, v) in x.iter().enumerate() {
            if kept.binary_search(&(i as u32)).is_err() {
                prop_assert!(v.abs() <= smallest_kept);
            }
        }
    }

    #[test]
    fn sparsified_decode_zeroes_dropped_entries(x in values(), percent in 1u32..=100) {
        let y = Codec::sp(percent).unwrap().encode(&x).unwrap().decode();
        let kept = topk_indices(&x, percent);
        prop_assert_eq!(y.len(), x.len());
        for (i, (a, b)) in x.iter().zip(&y).enumerate() {
            if kept.binary_search(&(i as u32)).is_ok() {
                prop_assert_eq!(a, b);
            } else {
                prop_assert_eq!(*b, 0.0);
            }
        }
    }

    #[test]
    fn composed_codec_quantizes_only_kept_values(x in values(), bits in 1u32..=16, percent in 1u32..=100) {
        let codec = Codec::new(vec![Stage::Quantize { bits }, Stage::Sparsify { percent }]).unwrap();
        let y = codec.encode(&x).unwrap().decode();
        let kept = topk_indices(&x, percent);
        let kept_vals: Vec<f64> = kept.iter().map(|&i| x[i as usize]).collect();
        let q = lq_decode(&lq_encode(&kept_vals, bits).unwrap());
        let mut expect = vec![0.0; x.len()];
        for (&i, v) in kept.iter().zip(q) {
            expect[i as usize] = v;
        }
        prop_assert_eq!(y, expect);
    }

    #[test]
    fn segments_decode_independently(x in values(), cut in 0usize..200, bits in 1u32..=8) {
        let cut = cut.min(x.len());
        let codec = Codec::lq(bits).unwrap();
        let msgs = codec.encode_segments(&x, &[cut, x.len() - cut]).unwrap();
        prop_assert_eq!(msgs.len(), 2);
        let joined: Vec<f64> = msgs.iter().flat_map(|m| m.decode()).collect();
        let mut expect = codec.encode(&x[..cut]).unwrap().decode();
        expect.extend(codec.encode(&x[cut..]).unwrap().decode());
        prop_assert_eq!(joined, expect);
    }

    #[test]
    fn decoding_is_deterministic(x in values(), bits in 1u32..=16, percent in 1u32..=100) {
        let codec = Codec::new(vec![Stage::Sparsify { percent }, Stage::Quantize { bits }]).unwrap();
        prop_assert_eq!(codec.encode(&x).unwrap(), codec.encode(&x).unwrap());
    }
}
