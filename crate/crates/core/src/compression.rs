//! Message codecs: linear quantization, magnitude top-k sparsification and
//! chains of the two, plus the cost ratio each chain is charged.
//!
//! A chain is written as `lq8`, `sp25`, `lq8+sp25` or `none`. Encoding always
//! sparsifies first and quantizes the surviving values, whatever order the
//! stages are written in; the accounted cost ratio is a product and does not
//! depend on the order either.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact cost ratio relative to sending every value as a 32-bit float.
pub type CostRatio = Ratio<u128>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Identity,
    /// Linear quantization to `bits` bits per value.
    Quantize {
        bits: u32,
    },
    /// Keep the `percent`% largest-magnitude values.
    Sparsify {
        percent: u32,
    },
}

impl Stage {
    pub fn ratio(self) -> CostRatio {
        match self {
            Stage::Identity => Ratio::from_integer(1),
            Stage::Quantize { bits } => Ratio::new(bits as u128, 32),
            Stage::Sparsify { percent } => Ratio::new(percent as u128, 100),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Identity => f.write_str("none"),
            Stage::Quantize { bits } => write!(f, "lq{bits}"),
            Stage::Sparsify { percent } => write!(f, "sp{percent}"),
        }
    }
}

/// A chain of codec stages. The empty chain is the identity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Codec {
    stages: Vec<Stage>,
}

impl Codec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let mut quant = 0;
        for st in &stages {
            match *st {
                Stage::Identity => {}
                Stage::Quantize { bits } => {
                    if !(1..=32).contains(&bits) {
                        return Err(Error::Codec(format!("quantization bits {bits} outside [1, 32]")));
                    }
                    quant += 1;
                }
                Stage::Sparsify { percent } => {
                    if !(1..=100).contains(&percent) {
                        return Err(Error::Codec(format!("sparsity percent {percent} outside [1, 100]")));
                    }
                }
            }
        }
        if quant > 1 {
            return Err(Error::Codec("at most one quantization stage per chain".into()));
        }
        let stages = stages.into_iter().filter(|s| *s != Stage::Identity).collect();
        Ok(Self { stages })
    }

    pub fn lq(bits: u32) -> Result<Self> {
        Self::new(vec![Stage::Quantize { bits }])
    }

    pub fn sp(percent: u32) -> Result<Self> {
        Self::new(vec![Stage::Sparsify { percent }])
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn is_identity(&self) -> bool {
        self.stages.is_empty()
    }

    fn bits(&self) -> u32 {
        self.stages
            .iter()
            .find_map(|s| match s {
                Stage::Quantize { bits } => Some(*bits),
                _ => None,
            })
            .unwrap_or(32)
    }

    fn keep_fraction(&self) -> CostRatio {
        self.stages
            .iter()
            .filter(|s| matches!(s, Stage::Sparsify { .. }))
            .map(|s| s.ratio())
            .product()
    }

    /// Product of the stage ratios: `lq8+sp25` costs exactly 1/16.
    pub fn ratio(&self) -> CostRatio {
        self.stages.iter().map(|s| s.ratio()).product()
    }

    /// Cost ratio under the chosen accounting. With `index_overhead`, every
    /// value kept by a sparsifier is charged an extra 32-bit index.
    pub fn accounted_ratio(&self, index_overhead: bool) -> CostRatio {
        let sparse = self.stages.iter().any(|s| matches!(s, Stage::Sparsify { .. }));
        if index_overhead && sparse {
            self.keep_fraction() * Ratio::new(self.bits() as u128 + 32, 32)
        } else {
            self.ratio()
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Message> {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Codec(format!("non-finite value {} at index {i}", x[i])));
        }
        let mut values = x.to_vec();
        let mut index_layers = Vec::new();
        for st in &self.stages {
            if let Stage::Sparsify { percent } = *st {
                let kept = topk_indices(&values, percent);
                values = kept.iter().map(|&i| values[i as usize]).collect();
                index_layers.push((values.len(), kept));
            }
        }
        let mut payload = match self.stages.iter().find(|s| matches!(s, Stage::Quantize { .. })) {
            Some(Stage::Quantize { bits }) => Payload::Quantized(lq_encode(&values, *bits)?),
            _ => Payload::Raw(values),
        };
        // Wrap innermost first so decode peels sparsifiers outermost-first.
        let mut lens: Vec<usize> = index_layers.iter().map(|(n, _)| *n).collect();
        lens.insert(0, x.len());
        for (depth, (_, indices)) in index_layers.into_iter().enumerate().rev() {
            payload = Payload::Sparse {
                len: lens[depth],
                indices,
                inner: Box::new(payload),
            };
        }
        Ok(Message {
            payload,
            len: x.len(),
            ratio: self.ratio(),
        })
    }

    /// Encodes consecutive segments of `x` independently.
    pub fn encode_segments(&self, x: &[f64], lens: &[usize]) -> Result<Vec<Message>> {
        if lens.iter().sum::<usize>() != x.len() {
            return Err(Error::Codec(format!(
                "segment lengths sum to {}, vector has {}",
                lens.iter().sum::<usize>(),
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(lens.len());
        let mut start = 0;
        for &n in lens {
            out.push(self.encode(&x[start..start + n])?);
            start += n;
        }
        Ok(out)
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.stages.is_empty() {
            return f.write_str("none");
        }
        for (i, st) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{st}")?;
        }
        Ok(())
    }
}

impl FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let mut stages = Vec::new();
        for part in lower.split('+') {
            let part = part.trim();
            let parse_num = |digits: &str| {
                digits
                    .parse::<u32>()
                    .map_err(|_| Error::Codec(format!("bad codec stage '{part}' in '{s}'")))
            };
            let st = if part == "none" || part == "identity" {
                Stage::Identity
            } else if let Some(d) = part.strip_prefix("lq") {
                Stage::Quantize { bits: parse_num(d)? }
            } else if let Some(d) = part.strip_prefix("sp") {
                Stage::Sparsify { percent: parse_num(d)? }
            } else {
                return Err(Error::Codec(format!("unknown codec stage '{part}' in '{s}'")));
            };
            stages.push(st);
        }
        Codec::new(stages)
    }
}

impl Serialize for Codec {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Codec {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Quantized values: per-message range and one level index per value.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub min: f64,
    pub max: f64,
    pub bits: u32,
    pub indices: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Raw(Vec<f64>),
    Quantized(Quantized),
    Sparse {
        len: usize,
        /// Kept coordinates, ascending.
        indices: Vec<u32>,
        inner: Box<Payload>,
    },
}

impl Payload {
    fn decode(&self) -> Vec<f64> {
        match self {
            Payload::Raw(v) => v.clone(),
            Payload::Quantized(q) => lq_decode(q),
            Payload::Sparse { len, indices, inner } => {
                let vals = inner.decode();
                let mut out = vec![0.0; *len];
                for (&i, v) in indices.iter().zip(vals) {
                    out[i as usize] = v;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub payload: Payload,
    pub len: usize,
    /// Accounted cost as a fraction of the uncompressed float cost.
    pub ratio: CostRatio,
}

impl Message {
    pub fn decode(&self) -> Vec<f64> {
        self.payload.decode()
    }
}

fn levels(bits: u32) -> f64 {
    ((1u64 << bits) - 1) as f64
}

/// Per-message linear quantization to `2^bits` evenly spaced levels between
/// the minimum and maximum value, rounding to the nearest level with ties to
/// the even index.
pub fn lq_encode(x: &[f64], bits: u32) -> Result<Quantized> {
    if !(1..=32).contains(&bits) {
        return Err(Error::Codec(format!("quantization bits {bits} outside [1, 32]")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Codec("cannot quantize non-finite values".into()));
    }
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() {
        return Ok(Quantized {
            min: 0.0,
            max: 0.0,
            bits,
            indices: Vec::new(),
        });
    }
    let range = max - min;
    if !range.is_finite() {
        return Err(Error::Codec(format!("value range [{min}, {max}] overflows")));
    }
    let top = levels(bits);
    let indices = if range == 0.0 {
        vec![0; x.len()]
    } else {
        x.iter()
            .map(|&v| ((v - min) / range * top).round_ties_even().clamp(0.0, top) as u32)
            .collect()
    };
    Ok(Quantized {
        min,
        max,
        bits,
        indices,
    })
}

pub fn lq_decode(q: &Quantized) -> Vec<f64> {
    let top = levels(q.bits);
    let range = q.max - q.min;
    q.indices
        .iter()
        .map(|&i| {
            if range == 0.0 {
                q.min
            } else {
                q.min + range * (i as f64 / top)
            }
        })
        .collect()
}

/// Indices (ascending) of the `ceil(percent·n/100)` largest-magnitude
/// values; equal magnitudes prefer the lower index.
pub fn topk_indices(x: &[f64], percent: u32) -> Vec<u32> {
    let n = x.len();
    let k = (percent as usize * n).div_ceil(100).min(n);
    let mut order: Vec<u32> = (0..n as u32).collect();
    if k < n {
        let by_rank = |a: &u32, b: &u32| x[*b as usize].abs().total_cmp(&x[*a as usize].abs()).then(a.cmp(b));
        if k > 0 {
            order.select_nth_unstable_by(k - 1, by_rank);
        }
        order.truncate(k);
        order.sort_unstable();
    }
    order
}
