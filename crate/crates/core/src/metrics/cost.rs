use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::compression::CostRatio;
use crate::error::{Error, Result};
use crate::nn::Graph;

/// Byte counts are kept as exact rationals; codec ratios are multiples of
/// 1/32 and 1/100, so every value has a finite decimal expansion.
pub type Bytes = Ratio<u128>;

const FLOAT_BYTES: u128 = 4;

/// FLOPs of one training step (forward plus a backward pass costing twice
/// the forward).
pub fn training_step_flops(graph: &Graph, batch: usize) -> u128 {
    3 * graph.forward_flops(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundCost {
    pub flops: u128,
    pub bytes_down: Bytes,
    pub bytes_up: Bytes,
}

impl RoundCost {
    pub fn bytes(&self) -> Bytes {
        self.bytes_down + self.bytes_up
    }
}

/// Cost of one round in which `clients` clients each run `steps` training
/// steps of `step_flops` and exchange `shipped` scalars in each direction.
pub fn round_cost(
    step_flops: u128,
    clients: usize,
    steps: usize,
    shipped: usize,
    down_ratio: CostRatio,
    up_ratio: CostRatio,
) -> RoundCost {
    let k = clients as u128;
    let raw = Ratio::from_integer(k * FLOAT_BYTES * shipped as u128);
    RoundCost {
        flops: k * steps as u128 * step_flops,
        bytes_down: raw * down_ratio,
        bytes_up: raw * up_ratio,
    }
}

/// Per-round costs with running totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    rounds: Vec<RoundCost>,
    total: RoundCost,
}

impl CostLedger {
    pub fn record(&mut self, cost: RoundCost) {
        self.total.flops += cost.flops;
        self.total.bytes_down += cost.bytes_down;
        self.total.bytes_up += cost.bytes_up;
        self.rounds.push(cost);
    }

    pub fn rounds(&self) -> &[RoundCost] {
        &self.rounds
    }

    pub fn total(&self) -> RoundCost {
        self.total
    }

    /// Cumulative totals after each round.
    pub fn cumulative(&self) -> Vec<RoundCost> {
        let mut acc = RoundCost::default();
        self.rounds
            .iter()
            .map(|c| {
                acc.flops += c.flops;
                acc.bytes_down += c.bytes_down;
                acc.bytes_up += c.bytes_up;
                acc
            })
            .collect()
    }
}

/// Exact decimal rendering of a byte count, e.g. `1234.5625`.
pub fn format_bytes(b: &Bytes) -> String {
    let int = b.to_integer();
    let mut rem = b.fract();
    if rem.is_zero() {
        return int.to_string();
    }
    let mut out = format!("{int}.");
    // Denominators divide 2^a·5^b, so this terminates; the cap only guards
    // against ratios built elsewhere.
    for _ in 0..64 {
        if rem.is_zero() {
            break;
        }
        rem *= Ratio::from_integer(10);
        out.push(char::from_digit(rem.to_integer() as u32, 10).expect("single digit"));
        rem = rem.fract();
    }
    out
}

/// Parses the output of [`format_bytes`] back into an exact value.
pub fn parse_bytes(s: &str) -> Result<Bytes> {
    let bad = || Error::InvalidArgument(format!("invalid byte count '{s}'"));
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() || !int.bytes().all(|c| c.is_ascii_digit()) || !frac.bytes().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let whole: u128 = int.parse().map_err(|_| bad())?;
    if frac.is_empty() {
        return Ok(Ratio::from_integer(whole));
    }
    let den = 10u128.checked_pow(frac.len() as u32).ok_or_else(bad)?;
    let num: u128 = frac.parse().map_err(|_| bad())?;
    Ok(Ratio::from_integer(whole) + Ratio::new(num, den))
}

/// Smallest cumulative cost at which `metric ≥ fraction · baseline_best`,
/// scanning a series ordered by cost. `None` when the target is never met.
pub fn cost_to_target<C: Copy>(series: &[(C, f64)], baseline_best: f64, fraction: f64) -> Result<Option<C>> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("cost series is empty".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target fraction {fraction} outside (0, 1]"
        )));
    }
    let target = fraction * baseline_best;
    Ok(series.iter().find(|(_, m)| *m >= target).map(|(c, _)| *c))
}

/// Lossy conversion for plotting and summaries.
pub fn bytes_f64(b: &Bytes) -> f64 {
    b.to_f64().unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::compression::Codec;
    use crate::nn::{Graph, LayerKind};

    #[test]
    fn dense_training_step() {
        let (g, _) = Graph::sequential(vec![4], &[LayerKind::dense(4, 3)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.forward_flops(2), 48);
        assert_eq!(training_step_flops(&g, 2), 144);
        assert_eq!(training_step_flops(&g, 0), 0);
    }

    #[test]
    fn relu_counts_per_element() {
        let (g, _) = Graph::sequential(vec![10], &[LayerKind::Relu], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.forward_flops(1), 10);
    }

    #[test]
    fn lq8_uplink_is_a_quarter() {
        let one = Ratio::from_integer(1);
        let plain = round_cost(10, 5, 3, 1000, one, one);
        let lq = round_cost(10, 5, 3, 1000, one, "lq8".parse::<Codec>().unwrap().ratio());
        assert_eq!(lq.bytes_up * Ratio::from_integer(4), plain.bytes_up);
        assert_eq!(plain.bytes_down, Ratio::from_integer(20_000));
        assert_eq!(plain.flops, 150);
    }

    #[test]
    fn ledger_sums() {
        let mut l = CostLedger::default();
        for i in 1..=4u128 {
            l.record(RoundCost {
                flops: i,
                bytes_down: Ratio::from_integer(i),
                bytes_up: Ratio::new(i, 16),
            });
        }
        assert_eq!(l.total().flops, 10);
        assert_eq!(l.cumulative().last().copied(), Some(l.total()));
        assert_eq!(format_bytes(&l.total().bytes_up), "0.625");
    }

    #[test]
    fn byte_format_round_trip() {
        for r in [
            Ratio::new(3u128, 16),
            Ratio::from_integer(12),
            Ratio::new(1, 40),
            Ratio::new(12345, 32),
        ] {
            assert_eq!(parse_bytes(&format_bytes(&r)).unwrap(), r);
        }
        assert!(parse_bytes("1.2.3").is_err());
        assert!(parse_bytes("-1").is_err());
    }

    #[test]
    fn first_crossing() {
        let s = [(10u128, 0.5), (20, 0.9)];
        assert_eq!(cost_to_target(&s, 1.0, 0.9).unwrap(), Some(20));
        assert_eq!(cost_to_target(&s, 1.0, 0.95).unwrap(), None);
        assert_eq!(cost_to_target(&s, 1.0, 0.5).unwrap(), Some(10));
        assert!(cost_to_target::<u128>(&[], 1.0, 0.5).is_err());
        assert!(cost_to_target(&s, 1.0, 0.0).is_err());
    }
}
