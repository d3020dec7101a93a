use num_rational::Ratio;
use proptest::prelude::*;

use progfed_core::metrics::{cost_to_target, format_bytes, parse_bytes, round_cost, Bytes};
use progfed_core::progressive::make_schedule;

proptest! {
    #[test]
    fn cost_to_target_is_monotone_in_the_fraction(
        metrics in prop::collection::vec(0.0f64..1.0, 1..60),
        best in 0.1f64..1.0,
        f1 in 0.01f64..=1.0,
        f2 in 0.01f64..=1.0,
    ) {
        let series: Vec<(usize, f64)> = metrics.iter().copied().enumerate().collect();
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let a = cost_to_target(&series, best, lo).unwrap();
        let b = cost_to_target(&series, best, hi).unwrap();
        match (a, b) {
            (Some(x), Some(y)) => prop_assert!(x <= y),
            (None, Some(_)) => prop_assert!(false, "lower target missed while higher reached"),
            _ => {}
        }
        if let Some(c) = a {
            prop_assert!(series[c].1 >= lo * best);
            prop_assert!(series[..c].iter().all(|&(_, m)| m < lo * best));
        }
    }

    #[test]
    fn byte_counts_print_and_parse_exactly(
        raw in 0u128..1_000_000_000,
        bits in 1u128..=32,
        percent in 1u128..=100,
    ) {
        let b: Bytes = Ratio::from_integer(raw) * Ratio::new(bits, 32) * Ratio::new(percent, 100);
        let text = format_bytes(&b);
        prop_assert_eq!(parse_bytes(&text).unwrap(), b);
    }

    #[test]
    fn round_cost_is_linear(
        flops in 0u128..1_000_000,
        clients in 1usize..50,
        steps in 1usize..20,
        shipped in 0usize..100_000,
        bits in 1u128..=32,
    ) {
        let r = Ratio::new(bits, 32);
        let one = round_cost(flops, 1, steps, shipped, Ratio::from_integer(1), r);
        let many = round_cost(flops, clients, steps, shipped, Ratio::from_integer(1), r);
        prop_assert_eq!(many.flops, one.flops * clients as u128);
        prop_assert_eq!(many.bytes_down, one.bytes_down * clients as u128);
        prop_assert_eq!(many.bytes_up, one.bytes_up * clients as u128);
        prop_assert_eq!(one.bytes_down, Ratio::from_integer(4 * shipped as u128));
    }

    #[test]
    fn explicit_schedules_are_respected(lengths in prop::collection::vec(1usize..50, 1..6)) {
        let total = lengths.iter().sum();
        let sched = make_schedule(total, lengths.len(), Some(&lengths), &[]).unwrap();
        let mut t = 1;
        for (i, &len) in lengths.iter().enumerate() {
            prop_assert_eq!(sched.stage_start(i + 1), t);
            for _ in 0..len {
                prop_assert_eq!(sched.active_stage(t).unwrap(), i + 1);
                t += 1;
            }
        }
        prop_assert!(sched.active_stage(total + 1).is_err());
        prop_assert!(sched.active_stage(0).is_err());
    }
}

#[test]
fn schedule_rejects_bad_inputs() {
    assert!(make_schedule(5, 3, None, &[]).is_err());
    assert!(make_schedule(10, 0, None, &[]).is_err());
    assert!(make_schedule(10, 2, Some(&[3, 3]), &[]).is_err());
    assert!(make_schedule(10, 2, Some(&[10, 0]), &[]).is_err());
    assert!(make_schedule(10, 2, None, &[0, 5]).is_ok());
    assert!(make_schedule(10, 2, None, &[5, 0]).is_err());
}
